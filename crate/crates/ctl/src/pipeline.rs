//! Pipeline stages. Each stage reads its inputs from, and writes its
//! artifacts to, one output directory, so any suffix of the pipeline can be
//! rerun from persisted intermediates.

use std::collections::BTreeSet;
use std::fmt;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::{Duration, TimeZone, Utc};
use pel_core::corpus::{self, Dictionary, Post, Term, TermGroup};
use pel_core::evalkit::{self, EvaluationKind, EvaluationRecord, EvaluationTask, EvaluatorKind, Facet, Level};
use pel_core::lexicon::{self, DyadTable, LexiconClass, LexiconEntry};
use pel_core::model::{AnnotationStore, Phase, Snapshot};
use pel_core::quality::{self, FilterDecision};
use pel_core::reliability::{self, KappaTable};
use pel_core::tasker::{self, AssessmentSet, Clock, SteppingClock, Tasker, TaskerConfig};
use serde::{Deserialize, Serialize};

use crate::sim::{self, CrowdOutcome, SimProfile};

pub mod artifacts {
    pub const POSTS: &str = "posts.jsonl";
    pub const INGEST_WARNINGS: &str = "ingest_warnings.txt";
    pub const TERMS: &str = "terms.csv";
    pub const TERM_GROUPS: &str = "term_groups.csv";
    pub const ZIPF: &str = "zipf.txt";
    pub const ASSESSMENT_SEED: &str = "assessment_seed.csv";
    pub const ANNOTATIONS: &str = "annotations.jsonl";
    pub const WORKERS: &str = "workers.csv";
    pub const CURVES: &str = "curves.csv";
    pub const FILTER_REPORT: &str = "filter_report.csv";
    pub const LEXICON: &str = "lexicon.csv";
    pub const KAPPA: &str = "kappa_report.csv";
    pub const KAPPA_SUBSTRATA: &str = "kappa_substrata.csv";
    pub const KAPPA_NOTICES: &str = "kappa_notices.txt";
    pub const EVALUATION_TASKS: &str = "evaluation_tasks.csv";
    pub const EVALUATIONS: &str = "evaluations.csv";
    pub const VALIDITY_REPORT: &str = "validity_report.csv";
    pub const INTENSIFIER_REPORT: &str = "intensifier_report.csv";
    pub const REPORT: &str = "report.md";
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Config,
    Ingest,
    Preprocess,
    Simulate,
    Serve,
    Filter,
    Lexicon,
    Kappa,
    Evaluate,
    Report,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Config => "config",
            Stage::Ingest => "ingest",
            Stage::Preprocess => "preprocess",
            Stage::Simulate => "simulate",
            Stage::Serve => "serve",
            Stage::Filter => "filter",
            Stage::Lexicon => "lexicon",
            Stage::Kappa => "kappa",
            Stage::Evaluate => "evaluate",
            Stage::Report => "report",
        })
    }
}

#[derive(Debug, thiserror::Error)]
#[error("{stage} stage: {message}")]
pub struct PipelineError {
    pub stage: Stage,
    pub message: String,
}

pub type Result<T, E = PipelineError> = std::result::Result<T, E>;

trait StageContext<T> {
    fn stage(self, stage: Stage) -> Result<T>;
    fn stage_with(self, stage: Stage, what: impl fmt::Display) -> Result<T>;
}

impl<T, E: fmt::Display> StageContext<T> for std::result::Result<T, E> {
    fn stage(self, stage: Stage) -> Result<T> {
        self.map_err(|e| PipelineError { stage, message: e.to_string() })
    }

    fn stage_with(self, stage: Stage, what: impl fmt::Display) -> Result<T> {
        self.map_err(|e| PipelineError { stage, message: format!("{what}: {e}") })
    }
}

fn fail<T>(stage: Stage, message: impl Into<String>) -> Result<T> {
    Err(PipelineError { stage, message: message.into() })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusConfig {
    pub input: PathBuf,
    pub keyword: String,
    pub dictionary: PathBuf,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            input: PathBuf::from("data/sample_posts.jsonl"),
            keyword: "brexit".into(),
            dictionary: PathBuf::from("data/dictionary.txt"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterConfig {
    /// Fixed threshold step; the optimum when absent.
    pub threshold: Option<u32>,
    pub min_annotations: u32,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig { threshold: None, min_annotations: quality::DEFAULT_MIN_ANNOTATIONS }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LexiconConfig {
    /// Extra `first,second,name` combination-dyad names.
    pub dyads: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvaluationConfig {
    /// Run simulated evaluators as part of the full pipeline.
    pub simulate: bool,
    pub per_stratum: usize,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        EvaluationConfig { simulate: false, per_stratum: evalkit::VALIDITY_PER_STRATUM }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    #[serde(flatten)]
    pub tasker: TaskerConfig,
    pub corpus: CorpusConfig,
    pub simulation: SimProfile,
    pub filter: FilterConfig,
    pub lexicon: LexiconConfig,
    pub evaluation: EvaluationConfig,
}

impl PipelineConfig {
    /// Parse TOML; relative paths resolve against `base`.
    pub fn from_toml(text: &str, base: &Path) -> Result<Self> {
        let mut cfg: PipelineConfig = toml::from_str(text).stage(Stage::Config)?;
        cfg.resolve(base);
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).stage_with(Stage::Config, path.display())?;
        Self::from_toml(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.corpus.input);
        fix(&mut self.corpus.dictionary);
        if let Some(d) = self.lexicon.dyads.as_mut() {
            fix(d);
        }
    }

    /// Override every seed.
    pub fn set_seed(&mut self, seed: u64) {
        self.tasker.seed = seed;
        self.simulation.seed = seed;
    }

    pub fn validate(&self) -> Result<()> {
        if self.corpus.keyword.trim().is_empty() {
            return fail(Stage::Config, "corpus.keyword is empty");
        }
        for (what, p) in [("corpus.input", &self.corpus.input), ("corpus.dictionary", &self.corpus.dictionary)] {
            if !p.is_file() {
                return fail(Stage::Config, format!("{what} `{}` does not exist", p.display()));
            }
        }
        if let Some(x) = self.filter.threshold {
            if !(1..=quality::THRESHOLD_STEPS).contains(&x) {
                return fail(Stage::Config, format!("filter.threshold {x} is outside 1..=10"));
            }
        }
        if !(0.0..=1.0).contains(&self.tasker.gate_threshold) {
            return fail(Stage::Config, "gate_threshold must be in [0, 1]");
        }
        self.simulation.validate().stage(Stage::Config)
    }

    pub fn dyad_table(&self, stage: Stage) -> Result<DyadTable> {
        let mut table = DyadTable::default();
        if let Some(path) = &self.lexicon.dyads {
            let file = File::open(path).stage_with(stage, path.display())?;
            table.extend_from_csv(file).stage_with(stage, path.display())?;
        }
        Ok(table)
    }
}

fn create(out: &Path, name: &str, stage: Stage) -> Result<BufWriter<File>> {
    fs::create_dir_all(out).stage_with(stage, out.display())?;
    let path = out.join(name);
    File::create(&path).map(BufWriter::new).stage_with(stage, path.display())
}

fn open(out: &Path, name: &str, stage: Stage) -> Result<BufReader<File>> {
    let path = out.join(name);
    File::open(&path)
        .map(BufReader::new)
        .stage_with(stage, format!("{} (run the earlier stages first)", path.display()))
}

fn finish(mut w: BufWriter<File>, stage: Stage) -> Result<()> {
    w.flush().stage(stage)
}

pub fn pipeline_clock() -> Box<dyn Clock> {
    Box::new(SteppingClock::new(Utc.with_ymd_and_hms(2017, 1, 1, 0, 0, 0).unwrap(), Duration::seconds(7)))
}

#[derive(Debug, Clone, Default)]
pub struct IngestSummary {
    pub posts: usize,
    pub warnings: usize,
}

pub fn ingest(cfg: &PipelineConfig, out: &Path) -> Result<IngestSummary> {
    let s = Stage::Ingest;
    let input = File::open(&cfg.corpus.input).stage_with(s, cfg.corpus.input.display())?;
    let ingested = corpus::ingest_posts(BufReader::new(input), &cfg.corpus.keyword).stage(s)?;
    let mut w = create(out, artifacts::POSTS, s)?;
    for p in &ingested.posts {
        serde_json::to_writer(&mut w, p).stage(s)?;
        writeln!(w).stage(s)?;
    }
    finish(w, s)?;
    let mut w = create(out, artifacts::INGEST_WARNINGS, s)?;
    for warning in &ingested.warnings {
        writeln!(w, "line {}: {}", warning.line, warning.message).stage(s)?;
    }
    finish(w, s)?;
    Ok(IngestSummary { posts: ingested.posts.len(), warnings: ingested.warnings.len() })
}

#[derive(Debug, Clone, Default)]
pub struct PreprocessSummary {
    pub distinct_terms: usize,
    pub valid_terms: usize,
    pub groups: usize,
    pub zipf: Option<f64>,
}

pub fn preprocess(cfg: &PipelineConfig, out: &Path) -> Result<PreprocessSummary> {
    let s = Stage::Preprocess;
    let dictionary = Dictionary::load(&cfg.corpus.dictionary).stage_with(s, cfg.corpus.dictionary.display())?;
    let posts: Vec<Post> = {
        let reader = open(out, artifacts::POSTS, s)?;
        let mut posts = Vec::new();
        for (i, line) in std::io::BufRead::lines(reader).enumerate() {
            let line = line.stage(s)?;
            posts.push(serde_json::from_str(&line).stage_with(s, format!("{} line {}", artifacts::POSTS, i + 1))?);
        }
        posts
    };
    let terms = corpus::count_terms(&posts);
    let distinct_terms = terms.len();
    let (valid, invalid) = corpus::validate_terms(terms, &dictionary);

    let mut all: Vec<&Term> = valid.iter().chain(&invalid).collect();
    all.sort_by(|a, b| a.surface.cmp(&b.surface));
    let mut w = csv::Writer::from_writer(create(out, artifacts::TERMS, s)?);
    for t in all {
        w.serialize(t).stage(s)?;
    }
    w.flush().stage(s)?;

    let groups = corpus::group_by_stem(&valid);
    if out.join(artifacts::ASSESSMENT_SEED).exists() {
        fs::remove_file(out.join(artifacts::ASSESSMENT_SEED)).stage(s)?;
    }
    let w = create(out, artifacts::TERM_GROUPS, s)?;
    corpus::write_groups_csv(&groups, w).stage(s)?;

    let freqs: Vec<f64> = valid.iter().map(|t| t.frequency as f64).collect();
    let zipf = corpus::zipf_fit(&freqs);
    let mut w = create(out, artifacts::ZIPF, s)?;
    match &zipf {
        Ok(a) => writeln!(w, "zipf_exponent={a:.4}\nterms={}", freqs.len()),
        Err(e) => writeln!(w, "zipf_exponent=\nnote={e}"),
    }
    .stage(s)?;
    finish(w, s)?;
    Ok(PreprocessSummary { distinct_terms, valid_terms: valid.len(), groups: groups.len(), zipf: zipf.ok() })
}

pub fn load_groups(out: &Path, stage: Stage) -> Result<Vec<TermGroup>> {
    corpus::read_groups_csv(open(out, artifacts::TERM_GROUPS, stage)?).stage_with(stage, artifacts::TERM_GROUPS)
}

/// The assessment seed in `out`, generated from the group designs when
/// absent.
pub fn assessment_set(cfg: &PipelineConfig, groups: &[TermGroup], out: &Path, stage: Stage) -> Result<AssessmentSet> {
    let path = out.join(artifacts::ASSESSMENT_SEED);
    let seed = if path.exists() {
        tasker::read_seed_csv(open(out, artifacts::ASSESSMENT_SEED, stage)?).stage(stage)?
    } else {
        let seed = sim::assessment_seed(groups, cfg.tasker.assessment_size, cfg.simulation.seed).stage(stage)?;
        tasker::write_seed_csv(&seed, create(out, artifacts::ASSESSMENT_SEED, stage)?).stage(stage)?;
        seed
    };
    AssessmentSet::from_seed(&seed, cfg.tasker.assessment_size, cfg.tasker.seed).stage(stage)
}

pub fn build_tasker(
    cfg: &PipelineConfig,
    groups: Vec<TermGroup>,
    assessment: AssessmentSet,
    store: AnnotationStore,
    stage: Stage,
) -> Result<Tasker> {
    Tasker::new(cfg.tasker.clone(), groups, assessment, store, pipeline_clock()).stage(stage)
}

pub fn simulate(cfg: &PipelineConfig, out: &Path) -> Result<CrowdOutcome> {
    let s = Stage::Simulate;
    let groups = load_groups(out, s)?;
    let assessment = assessment_set(cfg, &groups, out, s)?;
    let store = AnnotationStore::in_memory(groups.iter().map(|g| g.id.clone()));
    let mut tasker = build_tasker(cfg, groups, assessment, store, s)?;
    let outcome = sim::simulate_crowd(&cfg.simulation, &mut tasker).stage(s)?;
    tasker.snapshot().write_log(create(out, artifacts::ANNOTATIONS, s)?).stage(s)?;
    let mut w = csv::Writer::from_writer(create(out, artifacts::WORKERS, s)?);
    w.write_record(["worker_id", "role", "gate_passed"]).stage(s)?;
    for (id, role) in &outcome.roles {
        let role = match role {
            sim::Role::Honest => "honest",
            sim::Role::Spammer => "spammer",
        };
        w.write_record([id.as_str(), role, &outcome.passed_gate.contains(id).to_string()]).stage(s)?;
    }
    w.flush().stage(s)?;
    Ok(outcome)
}

pub fn load_snapshot(out: &Path, stage: Stage) -> Result<Snapshot> {
    Snapshot::read_log(open(out, artifacts::ANNOTATIONS, stage)?).stage_with(stage, artifacts::ANNOTATIONS)
}

/// Filter at the configured threshold, or the optimum. Writes the curves
/// and the per-worker report.
pub fn filter(cfg: &PipelineConfig, out: &Path) -> Result<FilterDecision> {
    let s = Stage::Filter;
    let snapshot = load_snapshot(out, s)?;
    let (alpha, beta) = quality::exclusion_curves(&snapshot).stage(s)?;
    quality::write_curves(&alpha, &beta, create(out, artifacts::CURVES, s)?).stage(s)?;
    let x = cfg.filter.threshold.unwrap_or_else(|| quality::informative_threshold(&alpha, &beta));
    let decision = quality::filter_workers(&snapshot, x, cfg.filter.min_annotations).stage(s)?;
    decision.write_report(create(out, artifacts::FILTER_REPORT, s)?).stage(s)?;
    Ok(decision)
}

#[derive(Deserialize)]
struct ReportRow {
    worker_id: String,
    excluded: bool,
}

pub fn load_excluded(out: &Path, stage: Stage) -> Result<BTreeSet<String>> {
    let mut excluded = BTreeSet::new();
    for row in csv::Reader::from_reader(open(out, artifacts::FILTER_REPORT, stage)?).deserialize::<ReportRow>() {
        let row = row.stage_with(stage, artifacts::FILTER_REPORT)?;
        if row.excluded {
            excluded.insert(row.worker_id);
        }
    }
    Ok(excluded)
}

pub fn build_lexicon(cfg: &PipelineConfig, out: &Path) -> Result<lexicon::Aggregation> {
    let s = Stage::Lexicon;
    let groups = load_groups(out, s)?;
    let snapshot = load_snapshot(out, s)?.excluding(&load_excluded(out, s)?);
    let aggregation = lexicon::aggregate(&snapshot, &groups, &cfg.dyad_table(s)?).stage(s)?;
    lexicon::export_csv(&aggregation.entries, create(out, artifacts::LEXICON, s)?).stage(s)?;
    Ok(aggregation)
}

pub fn load_lexicon(path: &Path, dyads: &DyadTable, stage: Stage) -> Result<Vec<LexiconEntry>> {
    let file = File::open(path).stage_with(stage, path.display())?;
    lexicon::read_csv(BufReader::new(file), dyads).stage_with(stage, path.display())
}

/// Kappa table for a lexicon CSV. The sub-strata and notices land next to
/// `report`.
pub fn kappa(cfg: &PipelineConfig, lexicon_path: &Path, report: &Path) -> Result<KappaTable> {
    let s = Stage::Kappa;
    let entries = load_lexicon(lexicon_path, &cfg.dyad_table(s)?, s)?;
    let table = reliability::kappa_by_stratum(&entries);
    let dir = report.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).stage_with(s, dir.display())?;
    let w = File::create(report).map(BufWriter::new).stage_with(s, report.display())?;
    table.write_csv(w).stage(s)?;
    table.write_substrata_csv(create(dir, artifacts::KAPPA_SUBSTRATA, s)?).stage(s)?;
    let mut w = create(dir, artifacts::KAPPA_NOTICES, s)?;
    writeln!(
        w,
        "emotional_k pools items by emotion count after dropping non-emotion annotations; per original total see {}",
        artifacts::KAPPA_SUBSTRATA
    )
    .stage(s)?;
    for n in &table.notices {
        writeln!(w, "{n}").stage(s)?;
    }
    for (total, count) in &table.outside_strata {
        writeln!(w, "{count} entries with {total} annotations fall outside the 2..=6 strata").stage(s)?;
    }
    finish(w, s)?;
    Ok(table)
}

/// Draw the validity and intensifier sets and write them as tasks.
pub fn eval_sample(cfg: &PipelineConfig, out: &Path) -> Result<Vec<EvaluationTask>> {
    let s = Stage::Evaluate;
    let entries = load_lexicon(&out.join(artifacts::LEXICON), &cfg.dyad_table(s)?, s)?;
    let validity = evalkit::sample_validity_set(&entries, cfg.evaluation.per_stratum, cfg.tasker.seed).stage(s)?;
    let intensifiers = evalkit::sample_intensifier_set(&entries);
    let mut tasks = evalkit::make_tasks(&entries, &validity, EvaluationKind::Validity);
    tasks.extend(evalkit::make_tasks(&entries, &intensifiers, EvaluationKind::IntensifierCheck));
    let mut w = csv::Writer::from_writer(create(out, artifacts::EVALUATION_TASKS, s)?);
    for t in &tasks {
        w.serialize(t).stage(s)?;
    }
    w.flush().stage(s)?;
    Ok(tasks)
}

pub fn load_evaluation_tasks(out: &Path, stage: Stage) -> Result<Vec<EvaluationTask>> {
    csv::Reader::from_reader(open(out, artifacts::EVALUATION_TASKS, stage)?)
        .deserialize()
        .collect::<std::result::Result<Vec<_>, _>>()
        .stage_with(stage, artifacts::EVALUATION_TASKS)
}

/// Run simulated evaluators over the sampled tasks through the tasker.
pub fn eval_simulate(cfg: &PipelineConfig, out: &Path) -> Result<Vec<EvaluationRecord>> {
    let s = Stage::Evaluate;
    let groups = load_groups(out, s)?;
    let entries = load_lexicon(&out.join(artifacts::LEXICON), &cfg.dyad_table(s)?, s)?;
    let tasks = load_evaluation_tasks(out, s)?;
    let store = AnnotationStore::in_memory(groups.iter().map(|g| g.id.clone()));
    let mut tasker = build_tasker(cfg, groups, AssessmentSet::default(), store, s)?;
    tasker.set_evaluation_tasks(tasks);
    sim::simulate_evaluators(&mut tasker, &entries, cfg.simulation.seed).stage(s)?;
    let records = tasker.evaluations().to_vec();
    evalkit::write_records(&records, create(out, artifacts::EVALUATIONS, s)?).stage(s)?;
    Ok(records)
}

pub fn load_evaluations(path: &Path, stage: Stage) -> Result<Vec<EvaluationRecord>> {
    let file = File::open(path).stage_with(stage, path.display())?;
    evalkit::read_records(BufReader::new(file)).stage_with(stage, path.display())
}

pub fn eval_report(
    cfg: &PipelineConfig,
    out: &Path,
    records: &Path,
    facet: Option<Facet>,
    dest: &Path,
) -> Result<evalkit::ValidityReport> {
    let s = Stage::Evaluate;
    let entries = load_lexicon(&out.join(artifacts::LEXICON), &cfg.dyad_table(s)?, s)?;
    let records = load_evaluations(records, s)?;
    let report = evalkit::validity_report(&records, &entries);
    let w = File::create(dest).map(BufWriter::new).stage_with(s, dest.display())?;
    report.write_csv(facet, w).stage(s)?;
    Ok(report)
}

pub fn eval_intensifiers(records: &Path, dest: &Path) -> Result<evalkit::IntensifierReport> {
    let s = Stage::Evaluate;
    let records = load_evaluations(records, s)?;
    let report = evalkit::intensifier_report(&records).stage(s)?;
    let w = File::create(dest).map(BufWriter::new).stage_with(s, dest.display())?;
    report.write_csv(w).stage(s)?;
    Ok(report)
}

fn pct(n: usize, d: usize) -> String {
    if d == 0 {
        "n/a".into()
    } else {
        format!("{:.2}%", 100.0 * n as f64 / d as f64)
    }
}

fn k(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |v| format!("{v:.3}"))
}

/// Summarise the artifacts in `out` as Markdown.
pub fn report(cfg: &PipelineConfig, out: &Path) -> Result<String> {
    let s = Stage::Report;
    let read = |name: &str| fs::read_to_string(out.join(name)).stage_with(s, name);
    let mut r = String::new();
    let line = |r: &mut String, text: String| {
        r.push_str(&text);
        r.push('\n');
    };
    line(&mut r, "# Lexicon build report\n".into());

    let posts = read(artifacts::POSTS)?.lines().count();
    let warnings = read(artifacts::INGEST_WARNINGS)?.lines().count();
    line(&mut r, "## Corpus\n".into());
    line(&mut r, format!("- posts matching `{}`: {posts}", cfg.corpus.keyword));
    line(&mut r, format!("- skipped records: {warnings}"));
    let terms: Vec<Term> = csv::Reader::from_reader(open(out, artifacts::TERMS, s)?)
        .deserialize()
        .collect::<std::result::Result<_, _>>()
        .stage_with(s, artifacts::TERMS)?;
    let valid = terms.iter().filter(|t| t.valid).count();
    line(&mut r, format!("- distinct terms: {} ({valid} in dictionary)", terms.len()));
    let groups = load_groups(out, s)?;
    line(&mut r, format!("- term groups: {}", groups.len()));
    let zipf = read(artifacts::ZIPF)?;
    let exponent =
        zipf.lines().find_map(|l| l.strip_prefix("zipf_exponent=")).filter(|v| !v.is_empty()).unwrap_or("n/a");
    line(&mut r, format!("- Zipf exponent: {exponent}\n"));

    let snapshot = load_snapshot(out, s)?;
    let count = |p: Phase| snapshot.annotations().iter().filter(|a| a.phase == p).count();
    let excluded = load_excluded(out, s)?;
    let gated = snapshot.profiles().len();
    line(&mut r, "## Crowd\n".into());
    line(&mut r, format!("- workers: {gated}"));
    line(&mut r, format!("- assessment annotations: {}", count(Phase::Assessment)));
    line(&mut r, format!("- acquisition annotations: {}", count(Phase::Acquisition)));
    let curves = read(artifacts::CURVES)?;
    let filter_x = {
        let snapshot_curves = quality::exclusion_curves(&snapshot).stage(s)?;
        cfg.filter.threshold.unwrap_or_else(|| quality::informative_threshold(&snapshot_curves.0, &snapshot_curves.1))
    };
    line(
        &mut r,
        format!("- filter threshold: x = {filter_x} (mu >= {:.1} in both phases)", f64::from(filter_x) / 10.0),
    );
    line(&mut r, format!("- excluded workers: {} of {gated}", excluded.len()));
    let retained = snapshot
        .annotations()
        .iter()
        .filter(|a| a.phase == Phase::Acquisition && !excluded.contains(&a.worker_id))
        .count();
    line(&mut r, format!("- retained acquisition annotations: {retained}\n"));
    line(&mut r, "Exclusion curves:\n".into());
    line(&mut r, "| x | f_assessment | f_acquisition |\n|---|---|---|".into());
    for row in curves.lines().skip(1) {
        line(&mut r, format!("| {} |", row.replace(',', " | ")));
    }
    line(&mut r, String::new());

    let entries = load_lexicon(&out.join(artifacts::LEXICON), &cfg.dyad_table(s)?, s)?;
    let n = entries.len();
    let by = |c: LexiconClass| entries.iter().filter(|e| e.main_class == c).count();
    line(&mut r, "## Lexicon\n".into());
    line(&mut r, format!("- entries: {n}"));
    for c in [LexiconClass::Emotion, LexiconClass::Intensifying, LexiconClass::None, LexiconClass::Agreement] {
        line(&mut r, format!("- {c}: {} ({})", by(c), pct(by(c), n)));
    }
    let subclass = entries.iter().filter(|e| e.agreement.subclass_agreement).count();
    let emotional = entries.iter().filter(|e| e.agreement.emotional_agreement).count();
    line(&mut r, format!("- subclass agreement: {subclass} ({})", pct(subclass, n)));
    line(&mut r, format!("- emotional agreement: {emotional} ({})", pct(emotional, n)));
    let dyads = entries.iter().filter(|e| e.dyad.as_ref().is_some_and(|d| d.name.is_some())).count();
    line(&mut r, format!("- named dyads: {dyads}\n"));

    let table = reliability::kappa_by_stratum(&entries);
    line(&mut r, "## Fleiss kappa\n".into());
    line(&mut r, "| annotations | subclass k | emotional k | items |\n|---|---|---|---|".into());
    for row in &table.rows {
        line(
            &mut r,
            format!("| {} | {} | {} | {} |", row.stratum, k(row.subclass_k), k(row.emotional_k), row.item_count),
        );
    }
    for notice in &table.notices {
        line(&mut r, format!("\n{notice}"));
    }
    line(&mut r, String::new());

    let records_path = out.join(artifacts::EVALUATIONS);
    if records_path.exists() {
        let records = load_evaluations(&records_path, s)?;
        let validity = evalkit::validity_report(&records, &entries);
        line(&mut r, "## Evaluation\n".into());
        line(&mut r, "| facet | bucket | evaluator | mean | n |\n|---|---|---|---|---|".into());
        for row in validity.facet(Facet::Count) {
            line(
                &mut r,
                format!(
                    "| count | {} | {} | {:.3} | {} |",
                    row.bucket.label(),
                    row.evaluator_kind.as_str(),
                    row.mean,
                    row.n
                ),
            );
        }
        if let Ok(intens) = evalkit::intensifier_report(&records) {
            line(&mut r, String::new());
            for kind in [EvaluatorKind::Expert, EvaluatorKind::Crowd] {
                for level in [Level::Low, Level::Mid, Level::High] {
                    if let Some(f) = intens.fraction(kind, level) {
                        line(
                            &mut r,
                            format!(
                                "- intensifiers valid ({}, {} agreement): {:.2}%",
                                kind.as_str(),
                                level.as_str(),
                                100.0 * f
                            ),
                        );
                    }
                }
            }
        }
        let annotators: BTreeSet<String> = snapshot.profiles().keys().cloned().collect();
        let overlap = evalkit::annotator_overlap(&records, &annotators);
        line(&mut r, format!("- evaluators who also annotated: {}", overlap.len()));
    }
    let mut w = create(out, artifacts::REPORT, s)?;
    w.write_all(r.as_bytes()).stage(s)?;
    finish(w, s)?;
    Ok(r)
}

#[derive(Debug, Clone, Default)]
pub struct PipelineSummary {
    pub ingest: IngestSummary,
    pub preprocess: PreprocessSummary,
    pub annotations: usize,
    pub excluded_workers: usize,
    pub optimal_x: u32,
    pub entries: usize,
}

/// Every stage from ingestion to the report, with a simulated crowd.
pub fn run_pipeline(cfg: &PipelineConfig, out: &Path) -> Result<PipelineSummary> {
    cfg.validate()?;
    let ingest = ingest(cfg, out)?;
    let preprocess = preprocess(cfg, out)?;
    let crowd = simulate(cfg, out)?;
    let decision = filter(cfg, out)?;
    let aggregation = build_lexicon(cfg, out)?;
    kappa(cfg, &out.join(artifacts::LEXICON), &out.join(artifacts::KAPPA))?;
    if cfg.evaluation.simulate {
        eval_sample(cfg, out)?;
        eval_simulate(cfg, out)?;
        let records = out.join(artifacts::EVALUATIONS);
        eval_report(cfg, out, &records, None, &out.join(artifacts::VALIDITY_REPORT))?;
        eval_intensifiers(&records, &out.join(artifacts::INTENSIFIER_REPORT))?;
    }
    report(cfg, out)?;
    Ok(PipelineSummary {
        ingest,
        preprocess,
        annotations: crowd.annotations,
        excluded_workers: decision.excluded_workers.len(),
        optimal_x: decision.optimal_x,
        entries: aggregation.entries.len(),
    })
}
