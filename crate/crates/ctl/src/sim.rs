//! Synthetic crowd driven through the real tasker: honest workers follow
//! per-group designer distributions under a max-fraction budget, spammers
//! repeat one emotion.

use std::collections::{BTreeMap, BTreeSet};

use pel_core::corpus::TermGroup;
use pel_core::evalkit::{EvaluationKind, EvaluatorKind, Judgment};
use pel_core::lexicon::LexiconEntry;
use pel_core::tasker::{worker_rng, NextTask, SeedAnnotation, TaskKind, Tasker, TaskerError};
use pel_core::{MainClass, Subclass, SubclassCounts};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimProfile {
    pub honest_count: usize,
    pub spammer_count: usize,
    /// Honest workers keep every subclass share strictly below this.
    pub honest_max_fraction: f64,
    /// Spammers give their one subclass at least this often.
    pub spammer_rate: f64,
    pub seed: u64,
    /// Acquisition tasks each worker attempts, before the cap.
    pub tasks_per_worker: u32,
    /// Chance an honest worker picks a group's designed dominant subclass.
    pub honest_accuracy: f64,
}

impl Default for SimProfile {
    fn default() -> Self {
        SimProfile {
            honest_count: 160,
            spammer_count: 40,
            honest_max_fraction: 0.4,
            spammer_rate: 0.95,
            seed: 0,
            tasks_per_worker: 30,
            honest_accuracy: 0.6,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("invalid profile: {0}")]
    Profile(String),
    #[error("not enough term groups: {0}")]
    TooFewGroups(String),
    #[error(transparent)]
    Tasker(#[from] TaskerError),
}

impl SimProfile {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::Profile(m.to_string()));
        if !(0.0 < self.honest_max_fraction && self.honest_max_fraction <= 0.4) {
            return bad("honest_max_fraction must be in (0, 0.4]");
        }
        if !(0.9..=1.0).contains(&self.spammer_rate) {
            return bad("spammer_rate must be in [0.9, 1]");
        }
        if self.spammer_rate <= self.honest_max_fraction {
            return bad("spammer_rate must exceed honest_max_fraction");
        }
        if !(0.0..=1.0).contains(&self.honest_accuracy) {
            return bad("honest_accuracy must be in [0, 1]");
        }
        Ok(())
    }
}

/// The label distribution a group was designed with.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GroupDesign {
    pub main_class: MainClass,
    pub dominant: Subclass,
    pub secondary: Subclass,
}

pub fn design(group_id: &str, seed: u64) -> GroupDesign {
    let mut rng = worker_rng(seed ^ 0x5eed_d351_6e00_0000, group_id);
    let main_class = match rng.gen_range(0..100) {
        0..=59 => MainClass::Emotion,
        60..=71 => MainClass::Intensifying,
        _ => MainClass::None,
    };
    let within: Vec<Subclass> = main_class.subclasses().collect();
    let dominant = *within.choose(&mut rng).expect("classes are non-empty");
    let secondary = if main_class == MainClass::Emotion {
        *Subclass::EMOTIONS.choose(&mut rng).expect("eight emotions")
    } else {
        *Subclass::ALL.choose(&mut rng).expect("eleven subclasses")
    };
    GroupDesign { main_class, dominant, secondary }
}

/// Seed annotations for an assessment set of `size` groups, about 80%
/// emotion, 10% intensifying and 10% none by design. Each chosen group gets
/// three labels of its dominant subclass.
pub fn assessment_seed(groups: &[TermGroup], size: usize, seed: u64) -> Result<Vec<SeedAnnotation>, SimError> {
    let mut by_class: BTreeMap<MainClass, Vec<&str>> = BTreeMap::new();
    for g in groups {
        by_class.entry(design(&g.id, seed).main_class).or_default().push(&g.id);
    }
    let intensifying = size / 10;
    let none = size / 10;
    let quotas = [
        (MainClass::Emotion, size - intensifying - none),
        (MainClass::Intensifying, intensifying),
        (MainClass::None, none),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for (class, quota) in quotas {
        let pool = by_class.get(&class).map(Vec::as_slice).unwrap_or_default();
        if pool.len() < quota {
            return Err(SimError::TooFewGroups(format!(
                "{quota} {class} groups wanted for assessment, {} designed",
                pool.len()
            )));
        }
        let mut chosen: Vec<&str> = pool.choose_multiple(&mut rng, quota).copied().collect();
        chosen.sort_unstable();
        for g in chosen {
            let dominant = design(g, seed).dominant;
            out.extend((0..3).map(|_| SeedAnnotation { group_id: g.to_string(), subclass: dominant }));
        }
    }
    out.sort_by(|a, b| a.group_id.cmp(&b.group_id));
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Honest,
    Spammer,
}

/// Largest count a subclass may reach while staying strictly below
/// `fraction` of `planned`.
fn budget(fraction: f64, planned: u32) -> u32 {
    let strict = ((fraction * f64::from(planned)).ceil() as u32).saturating_sub(1);
    strict.max(planned.div_ceil(Subclass::COUNT as u32)).max(1)
}

struct SimWorker {
    id: String,
    role: Role,
    rng: ChaCha8Rng,
    spam_label: Subclass,
    planned: [u32; 2],
    counts: [SubclassCounts; 2],
    deviations_left: [u32; 2],
    acquired: u32,
}

impl SimWorker {
    fn phase(kind: TaskKind) -> usize {
        usize::from(kind == TaskKind::Acquisition)
    }

    /// Least-used subclass under budget, preferring `preferred` and then
    /// members of `class`.
    fn budgeted(&mut self, phase: usize, preferred: Subclass, class: MainClass, fraction: f64) -> Subclass {
        let cap = budget(fraction, self.planned[phase]);
        let counts = &self.counts[phase];
        if counts.get(preferred) < cap {
            return preferred;
        }
        let pick = |candidates: &mut dyn Iterator<Item = Subclass>| {
            candidates.filter(|&s| counts.get(s) < cap).min_by_key(|&s| (counts.get(s), s.position()))
        };
        pick(&mut class.subclasses()).or_else(|| pick(&mut Subclass::ALL.into_iter())).unwrap_or(preferred)
    }

    fn answer(&mut self, kind: TaskKind, group: &str, truth: Option<MainClass>, profile: &SimProfile) -> Subclass {
        let phase = Self::phase(kind);
        let label = match (self.role, truth) {
            (Role::Honest, Some(class)) => {
                let within: Vec<Subclass> = class.subclasses().collect();
                let preferred = *within.choose(&mut self.rng).expect("non-empty");
                self.budgeted(phase, preferred, class, profile.honest_max_fraction)
            }
            (Role::Honest, None) => {
                let d = design(group, profile.seed);
                let roll: f64 = self.rng.gen();
                let preferred = if roll < profile.honest_accuracy {
                    d.dominant
                } else if roll < profile.honest_accuracy + (1.0 - profile.honest_accuracy) / 2.0 {
                    d.secondary
                } else {
                    *Subclass::ALL.choose(&mut self.rng).expect("non-empty")
                };
                self.budgeted(phase, preferred, preferred.main_class(), profile.honest_max_fraction)
            }
            (Role::Spammer, Some(class)) => {
                if class != MainClass::Emotion && self.deviations_left[phase] > 0 {
                    self.deviations_left[phase] -= 1;
                    class.subclasses().next().expect("non-empty")
                } else {
                    self.spam_label
                }
            }
            (Role::Spammer, None) => {
                if self.deviations_left[phase] > 0 && self.rng.gen::<f64>() >= profile.spammer_rate {
                    self.deviations_left[phase] -= 1;
                    let others: Vec<Subclass> = Subclass::ALL.into_iter().filter(|&s| s != self.spam_label).collect();
                    *others.choose(&mut self.rng).expect("ten others")
                } else {
                    self.spam_label
                }
            }
        };
        self.counts[phase].increment(label);
        label
    }
}

#[derive(Debug, Clone, Default)]
pub struct CrowdOutcome {
    pub roles: BTreeMap<String, Role>,
    pub passed_gate: BTreeSet<String>,
    pub annotations: usize,
}

impl CrowdOutcome {
    pub fn workers(&self, role: Role) -> BTreeSet<String> {
        self.roles.iter().filter(|(_, &r)| r == role).map(|(id, _)| id.clone()).collect()
    }
}

/// Register the profile's workers and drive them round-robin through
/// assessment and acquisition until each stops.
pub fn simulate_crowd(profile: &SimProfile, tasker: &mut Tasker) -> Result<CrowdOutcome, SimError> {
    profile.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(profile.seed);
    let mut roles: Vec<Role> = std::iter::repeat_n(Role::Honest, profile.honest_count)
        .chain(std::iter::repeat_n(Role::Spammer, profile.spammer_count))
        .collect();
    roles.shuffle(&mut rng);

    let truth: BTreeMap<String, MainClass> =
        tasker.assessment_set().items().iter().map(|i| (i.group_id.clone(), i.dominant_main_class)).collect();
    let pool = tasker.groups().count() - truth.len();
    let acquisition_plan = profile.tasks_per_worker.min(tasker.config().cap).min(pool as u32);

    let mut workers: Vec<SimWorker> = Vec::with_capacity(roles.len());
    for (i, role) in roles.iter().enumerate() {
        let id = format!("worker{i:04}");
        let status = tasker.register(&id, None);
        let mut wrng = worker_rng(profile.seed, &id);
        let spam_label = *Subclass::EMOTIONS.choose(&mut wrng).expect("eight emotions");
        let planned = [status.assessment_required as u32, acquisition_plan];
        let slack = |t: u32| ((1.0 - profile.spammer_rate) * f64::from(t) + 1e-9).floor() as u32;
        workers.push(SimWorker {
            id,
            role: *role,
            rng: wrng,
            spam_label,
            planned,
            counts: Default::default(),
            deviations_left: [slack(planned[0]), slack(planned[1])],
            acquired: 0,
        });
    }

    let mut outcome =
        CrowdOutcome { roles: workers.iter().map(|w| (w.id.clone(), w.role)).collect(), ..Default::default() };
    let mut active: Vec<usize> = (0..workers.len()).collect();
    while !active.is_empty() {
        let mut still = Vec::with_capacity(active.len());
        for &i in &active {
            let w = &mut workers[i];
            if w.acquired >= acquisition_plan {
                continue;
            }
            let NextTask::Assigned(task) = tasker.next_task(&w.id)? else { continue };
            let label = w.answer(
                task.kind,
                &task.group_id,
                truth.get(&task.group_id).copied().filter(|_| task.kind == TaskKind::Assessment),
                profile,
            );
            tasker.submit(&w.id, &task.group_id, label)?;
            outcome.annotations += 1;
            if task.kind == TaskKind::Acquisition {
                w.acquired += 1;
            }
            still.push(i);
        }
        active = still;
    }
    for w in &workers {
        if tasker.status(&w.id)?.gate == pel_core::tasker::GateStatus::Pass {
            outcome.passed_gate.insert(w.id.clone());
        }
    }
    Ok(outcome)
}

/// Register two expert and four crowd evaluator accounts and have each
/// judge every loaded evaluation task. Validity scores rise with the
/// entry's majority share; intensifier judgments with its intensifying
/// share.
pub fn simulate_evaluators(tasker: &mut Tasker, entries: &[LexiconEntry], seed: u64) -> Result<usize, SimError> {
    let by_id: BTreeMap<&str, &LexiconEntry> = entries.iter().map(|e| (e.group_id.as_str(), e)).collect();
    let accounts: Vec<(String, EvaluatorKind)> = (0..EvaluatorKind::Expert.evaluators_per_group())
        .map(|i| (format!("expert{i}"), EvaluatorKind::Expert))
        .chain((0..EvaluatorKind::Crowd.evaluators_per_group()).map(|i| (format!("crowd{i}"), EvaluatorKind::Crowd)))
        .collect();
    let mut judged = 0;
    for (id, kind) in &accounts {
        tasker.register(id, Some(*kind));
        let mut rng = worker_rng(seed, id);
        while let NextTask::Assigned(task) = tasker.next_evaluation(id)? {
            let eval = task.evaluation.as_ref().expect("evaluation task");
            let entry = by_id.get(task.group_id.as_str());
            let judgment = match eval.kind {
                EvaluationKind::Validity => {
                    let share = entry.map_or(0.5, |e| f64::from(e.majority_count()) / f64::from(e.total));
                    let noise = rng.gen_range(-1i32..=1);
                    let score = (1.0 + 4.0 * share).round() as i32 + noise;
                    Judgment::Score(score.clamp(1, 5) as u8)
                }
                EvaluationKind::IntensifierCheck => {
                    let share = entry.map_or(0.0, |e| f64::from(e.intensifying_count()) / f64::from(e.total));
                    Judgment::IntensifierValid(rng.gen_bool((0.2 + 0.7 * share).min(1.0)))
                }
            };
            tasker.evaluate(id, &task.group_id, judgment)?;
            judged += 1;
        }
    }
    Ok(judged)
}
