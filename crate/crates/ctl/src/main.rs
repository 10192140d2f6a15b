use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use pel_core::evalkit::Facet;
use pel_core::model::AnnotationStore;
use pel_core::tasker::{SystemClock, Tasker};
use pel_ctl::pipeline::{self, artifacts, PipelineConfig, Stage};
use pel_server::AppState;

#[derive(Parser)]
#[command(name = "pelctl", version, about = "Build an emotion lexicon from social-media posts and crowd annotations")]
struct Cli {
    /// TOML configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override every configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory for all artifacts.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every stage with a simulated crowd.
    Run,
    /// Read posts and keep those mentioning the keyword.
    Ingest {
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        keyword: Option<String>,
    },
    /// Tokenize, validate against the dictionary and group by stem.
    Preprocess {
        #[arg(long)]
        dictionary: Option<PathBuf>,
    },
    /// Serve annotation and evaluation tasks over HTTP.
    Serve {
        #[arg(long)]
        port: Option<u16>,
        #[arg(long, default_value = "127.0.0.1")]
        bind: String,
    },
    /// Annotate the term groups with a synthetic crowd.
    Simulate(SimArgs),
    /// Sweep thresholds and exclude dishonest workers.
    Filter {
        #[arg(long)]
        threshold: Option<u32>,
    },
    /// Aggregate retained annotations into the lexicon CSV.
    Lexicon,
    /// Fleiss kappa per annotation-count stratum.
    Kappa {
        #[arg(long)]
        lexicon: Option<PathBuf>,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Evaluation sampling and reports.
    #[command(subcommand)]
    Eval(EvalCommand),
    /// Summarise all artifacts as Markdown.
    Report,
}

#[derive(Args)]
struct SimArgs {
    #[arg(long)]
    honest: Option<usize>,
    #[arg(long)]
    spammers: Option<usize>,
    #[arg(long)]
    tasks: Option<u32>,
}

#[derive(Subcommand)]
enum EvalCommand {
    /// Draw the validity and intensifier task sets.
    Sample {
        #[arg(long)]
        per_stratum: Option<usize>,
    },
    /// Answer the sampled tasks with simulated evaluators.
    Simulate,
    /// Mean validity scores by facet.
    Report {
        #[arg(long)]
        facet: Option<String>,
        #[arg(long)]
        records: Option<PathBuf>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Intensifier validity by agreement level.
    Intensifiers {
        #[arg(long)]
        records: Option<PathBuf>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.set_seed(seed);
    }
    Ok(cfg)
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let mut cfg = load_config(&cli)?;
    let out = cli.out.as_path();
    match cli.command {
        Command::Run => {
            let s = pipeline::run_pipeline(&cfg, out)?;
            println!(
                "{} posts, {} term groups, {} annotations; excluded {} workers at x = {}; {} lexicon entries",
                s.ingest.posts, s.preprocess.groups, s.annotations, s.excluded_workers, s.optimal_x, s.entries
            );
            println!("artifacts in {}", out.display());
        }
        Command::Ingest { input, keyword } => {
            if let Some(input) = input {
                cfg.corpus.input = input;
            }
            if let Some(keyword) = keyword {
                cfg.corpus.keyword = keyword;
            }
            let s = pipeline::ingest(&cfg, out)?;
            println!("{} posts kept, {} records skipped", s.posts, s.warnings);
        }
        Command::Preprocess { dictionary } => {
            if let Some(d) = dictionary {
                cfg.corpus.dictionary = d;
            }
            let s = pipeline::preprocess(&cfg, out)?;
            let zipf = s.zipf.map_or_else(|| "n/a".to_string(), |a| format!("{a:.3}"));
            println!(
                "{} distinct terms, {} valid, {} groups, Zipf exponent {zipf}",
                s.distinct_terms, s.valid_terms, s.groups
            );
        }
        Command::Serve { port, bind } => serve(&cfg, out, port.unwrap_or(cfg.tasker.port), &bind)?,
        Command::Simulate(args) => {
            if let Some(n) = args.honest {
                cfg.simulation.honest_count = n;
            }
            if let Some(n) = args.spammers {
                cfg.simulation.spammer_count = n;
            }
            if let Some(n) = args.tasks {
                cfg.simulation.tasks_per_worker = n;
            }
            let o = pipeline::simulate(&cfg, out)?;
            println!(
                "{} workers, {} passed the gate, {} annotations",
                o.roles.len(),
                o.passed_gate.len(),
                o.annotations
            );
        }
        Command::Filter { threshold } => {
            if threshold.is_some() {
                cfg.filter.threshold = threshold;
            }
            let d = pipeline::filter(&cfg, out)?;
            println!(
                "x = {} (mu >= {:.1}): excluded {} of {} workers, {} acquisition annotations retained",
                d.optimal_x,
                d.threshold,
                d.excluded_workers.len(),
                d.rows.len(),
                d.retained_annotation_count
            );
        }
        Command::Lexicon => {
            let a = pipeline::build_lexicon(&cfg, out)?;
            println!("{} entries, {} groups without retained annotations", a.entries.len(), a.omitted_groups);
        }
        Command::Kappa { lexicon, report } => {
            let lexicon = lexicon.unwrap_or_else(|| out.join(artifacts::LEXICON));
            let report = report.unwrap_or_else(|| out.join(artifacts::KAPPA));
            let table = pipeline::kappa(&cfg, &lexicon, &report)?;
            for n in &table.notices {
                eprintln!("{n}");
            }
            println!("{} strata written to {}", table.rows.len(), report.display());
        }
        Command::Eval(cmd) => eval(&mut cfg, out, cmd)?,
        Command::Report => print!("{}", pipeline::report(&cfg, out)?),
    }
    Ok(())
}

fn eval(cfg: &mut PipelineConfig, out: &Path, cmd: EvalCommand) -> Result<()> {
    match cmd {
        EvalCommand::Sample { per_stratum } => {
            if let Some(n) = per_stratum {
                cfg.evaluation.per_stratum = n;
            }
            let tasks = pipeline::eval_sample(cfg, out)?;
            println!("{} evaluation tasks", tasks.len());
        }
        EvalCommand::Simulate => {
            let records = pipeline::eval_simulate(cfg, out)?;
            println!("{} judgments", records.len());
        }
        EvalCommand::Report { facet, records, output } => {
            let facet = match facet.as_deref() {
                None => None,
                Some(f) => Some(
                    Facet::parse(f)
                        .with_context(|| format!("unknown facet `{f}`; use count, percent, subclass or agreement"))?,
                ),
            };
            let records = records.unwrap_or_else(|| out.join(artifacts::EVALUATIONS));
            let output = output.unwrap_or_else(|| out.join(artifacts::VALIDITY_REPORT));
            let report = pipeline::eval_report(cfg, out, &records, facet, &output)?;
            println!("{} rows written to {} ({} records skipped)", report.rows.len(), output.display(), report.skipped);
        }
        EvalCommand::Intensifiers { records, output } => {
            let records = records.unwrap_or_else(|| out.join(artifacts::EVALUATIONS));
            let output = output.unwrap_or_else(|| out.join(artifacts::INTENSIFIER_REPORT));
            let report = pipeline::eval_intensifiers(&records, &output)?;
            println!("{} levels written to {}", report.rows.len(), output.display());
        }
    }
    Ok(())
}

fn serve(cfg: &PipelineConfig, out: &Path, port: u16, bind: &str) -> Result<()> {
    let groups = pipeline::load_groups(out, Stage::Serve)?;
    if groups.is_empty() {
        bail!("no term groups in {}; run preprocess first", out.display());
    }
    let assessment = pipeline::assessment_set(cfg, &groups, out, Stage::Serve)?;
    let store = AnnotationStore::open(out.join(artifacts::ANNOTATIONS), groups.iter().map(|g| g.id.clone()))
        .context("opening the annotation log")?;
    let mut tasker = Tasker::new(cfg.tasker.clone(), groups, assessment, store, Box::new(SystemClock))?;
    if out.join(artifacts::EVALUATION_TASKS).exists() {
        tasker.set_evaluation_tasks(pipeline::load_evaluation_tasks(out, Stage::Serve)?);
    }
    tasker.attach_evaluation_log(out.join(artifacts::EVALUATIONS))?;
    let state = AppState::new(tasker)
        .with_dyads(cfg.dyad_table(Stage::Serve)?)
        .with_threshold(cfg.filter.threshold)
        .with_min_annotations(cfg.filter.min_annotations);
    let addr = format!("{bind}:{port}");
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind(&addr).await.with_context(|| format!("binding {addr}"))?;
        eprintln!("serving on http://{}", listener.local_addr()?);
        pel_server::serve(listener, Arc::new(state)).await?;
        Ok(())
    })
}
