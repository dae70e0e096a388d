use std::collections::BTreeSet;
use std::fmt;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::config::LoraPlusConfig;
use super::stage::{train_stage, TrainLog};
use crate::corpus::{Corpus, DatasetKey, GraphFamily};
use crate::error::{Error, Result};
use crate::model::{Checkpoint, Token, Transformer, BOS};
use crate::rng::keyed_rng;

/// Output labels of the three curriculum positions.
pub const STAGE_LABELS: [&str; 3] = ["G-Micro", "G-Mid", "GKG-LLM"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StagePlan {
    pub name: String,
    /// Label of the checkpoint this stage produces.
    pub label: String,
    pub families: BTreeSet<GraphFamily>,
    #[serde(default)]
    pub include_counter: bool,
}

impl StagePlan {
    /// Families whose training records enter this stage.
    pub fn training_families(&self) -> BTreeSet<GraphFamily> {
        let mut f = self.families.clone();
        if self.include_counter {
            f.insert(GraphFamily::Counter);
        }
        f
    }
}

fn stage_name(family: GraphFamily) -> &'static str {
    match family {
        GraphFamily::Kg => "KG empowerment",
        GraphFamily::Ekg => "EKG enhancement",
        GraphFamily::Ckg => "CKG generalization",
        GraphFamily::Counter => "counter task",
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurriculumPlan {
    pub stages: Vec<StagePlan>,
}

impl Default for CurriculumPlan {
    fn default() -> Self {
        Self::from_families(&GraphFamily::GRAPHS)
    }
}

impl CurriculumPlan {
    fn from_families(order: &[GraphFamily]) -> Self {
        let last = order.len() - 1;
        Self {
            stages: order
                .iter()
                .enumerate()
                .map(|(i, &f)| StagePlan {
                    name: stage_name(f).into(),
                    label: STAGE_LABELS[i].into(),
                    families: BTreeSet::from([f]),
                    include_counter: i == last,
                })
                .collect(),
        }
    }

    /// A three-stage plan from an order such as `"E-K-C"`. The counter task
    /// joins the last stage.
    pub fn from_order(order: &str) -> Result<Self> {
        let families = order
            .split('-')
            .map(|p| {
                let mut chars = p.trim().chars();
                match (chars.next(), chars.next()) {
                    (Some(c), None) => GraphFamily::from_letter(c)
                        .filter(|f| *f != GraphFamily::Counter)
                        .ok_or_else(|| Error::Config(format!("unknown stage letter `{p}` in `{order}`"))),
                    _ => Err(Error::Config(format!("bad stage `{p}` in order `{order}`"))),
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let distinct: BTreeSet<_> = families.iter().collect();
        if families.len() != 3 || distinct.len() != 3 {
            return Err(Error::Config(format!(
                "stage order `{order}` must name K, E and C once each"
            )));
        }
        Ok(Self::from_families(&families))
    }

    /// One stage over every family at once.
    pub fn integrated() -> Self {
        Self {
            stages: vec![StagePlan {
                name: "integrated".into(),
                label: "Integrated-SFT".into(),
                families: GraphFamily::GRAPHS.into_iter().collect(),
                include_counter: true,
            }],
        }
    }

    /// All six orders of the three graph families.
    pub fn permutations() -> Vec<Self> {
        const ORDERS: [&str; 6] = ["K-E-C", "K-C-E", "E-K-C", "E-C-K", "C-K-E", "C-E-K"];
        ORDERS.iter().map(|o| Self::from_order(o).expect("valid order")).collect()
    }

    /// `"K-E-C"` style label.
    pub fn order_label(&self) -> String {
        self.stages
            .iter()
            .map(|s| s.families.iter().map(|f| f.letter()).collect::<String>())
            .collect::<Vec<_>>()
            .join("-")
    }

    pub fn validate(&self) -> Result<()> {
        if self.stages.is_empty() {
            return Err(Error::Config("curriculum has no stages".into()));
        }
        let mut labels = BTreeSet::new();
        for s in &self.stages {
            if s.families.is_empty() {
                return Err(Error::Config(format!("stage `{}` covers no family", s.name)));
            }
            if !labels.insert(&s.label) {
                return Err(Error::Config(format!("duplicate stage label `{}`", s.label)));
            }
        }
        Ok(())
    }
}

impl fmt::Display for CurriculumPlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.order_label())
    }
}

/// Stage checkpoints in order, their logs, and the largest logit gap seen
/// at a stage handoff.
#[derive(Debug, Clone)]
pub struct CurriculumRun {
    pub checkpoints: Vec<Checkpoint>,
    pub logs: Vec<TrainLog>,
    pub handoff_max_diff: f64,
}

impl CurriculumRun {
    pub fn last(&self) -> &Checkpoint {
        self.checkpoints.last().expect("at least one stage")
    }
}

/// Fixed token sequences for comparing forward passes.
pub fn probe_inputs(max_seq_len: usize, seed: u64) -> Vec<Vec<Token>> {
    let mut rng = keyed_rng(seed, "probe", "inputs");
    (0..4)
        .map(|_| {
            let len = rng.random_range(2..=max_seq_len.min(24));
            std::iter::once(BOS)
                .chain((1..len).map(|_| rng.random_range(32..127)))
                .collect()
        })
        .collect()
}

/// Largest absolute logit difference between two models over `probes`.
pub fn max_logit_diff(a: &Transformer<f32>, b: &Transformer<f32>, probes: &[Vec<Token>]) -> Result<f64> {
    let mut worst = 0.0f64;
    for p in probes {
        let la: Array2<f32> = a.forward(p)?;
        let lb = b.forward(p)?;
        for (x, y) in la.iter().zip(&lb) {
            worst = worst.max((x - y).abs() as f64);
        }
    }
    Ok(worst)
}

/// Train the stages of `plan` in order, each starting from the previous
/// stage's merged checkpoint.
pub fn run_curriculum(
    base: &Checkpoint,
    plan: &CurriculumPlan,
    corpus: &Corpus,
    config: &LoraPlusConfig,
) -> Result<CurriculumRun> {
    run_curriculum_with(base, plan, corpus, config, |_, _| Ok(()))
}

/// [`run_curriculum`] calling `on_stage` after every finished stage, before
/// the next one starts.
pub fn run_curriculum_with(
    base: &Checkpoint,
    plan: &CurriculumPlan,
    corpus: &Corpus,
    config: &LoraPlusConfig,
    mut on_stage: impl FnMut(&Checkpoint, &TrainLog) -> Result<()>,
) -> Result<CurriculumRun> {
    plan.validate()?;
    config.validate()?;
    let held_out = corpus.held_out_ids();
    let probes = probe_inputs(base.config().max_seq_len, config.seed);
    let mut current = base.clone();
    let mut previous: Option<Checkpoint> = None;
    let mut run = CurriculumRun {
        checkpoints: Vec::new(),
        logs: Vec::new(),
        handoff_max_diff: 0.0,
    };
    for stage in &plan.stages {
        let records = corpus.train_records(&stage.training_families())?;
        if records.is_empty() {
            return Err(Error::Stage {
                stage: stage.name.clone(),
                reason: "no training records match the stage families".into(),
            });
        }
        for r in &records {
            let from_held_out = DatasetKey::from_record_id(&r.id)
                .and_then(|k| corpus.descriptor(&k))
                .is_some_and(|d| d.held_out);
            if from_held_out || held_out.contains(r.id.as_str()) {
                return Err(Error::Partition(format!(
                    "record {} of a held-out dataset in stage `{}`",
                    r.id, stage.name
                )));
            }
        }
        if let Some(prev) = &previous {
            run.handoff_max_diff = run
                .handoff_max_diff
                .max(max_logit_diff(&prev.model, &current.model, &probes)?);
        }
        let (next, log) = train_stage(&current, &records, &stage.label, config)?;
        on_stage(&next, &log)?;
        previous = Some(next.clone());
        run.checkpoints.push(next.clone());
        run.logs.push(log);
        current = next;
    }
    Ok(run)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_plan_layout() {
        let p = CurriculumPlan::default();
        assert_eq!(p.order_label(), "K-E-C");
        let labels: Vec<_> = p.stages.iter().map(|s| s.label.as_str()).collect();
        assert_eq!(labels, STAGE_LABELS);
        assert!(p.stages[2].include_counter && !p.stages[0].include_counter);
        assert_eq!(CurriculumPlan::from_order("K-E-C").unwrap(), p);
    }

    #[test]
    fn orders() {
        let p = CurriculumPlan::from_order("E-K-C").unwrap();
        assert_eq!(p.stages[0].families, BTreeSet::from([GraphFamily::Ekg]));
        assert_eq!(p.stages[0].label, "G-Micro");
        for bad in ["K-K-C", "K-E", "K-E-N", "KE-C", ""] {
            assert!(CurriculumPlan::from_order(bad).is_err(), "{bad}");
        }
        let labels: BTreeSet<_> = CurriculumPlan::permutations().iter().map(|p| p.order_label()).collect();
        assert_eq!(labels.len(), 6);
    }

    #[test]
    fn toml_round_trip() {
        let p = CurriculumPlan::default();
        let text = toml::to_string(&p).unwrap();
        assert_eq!(toml::from_str::<CurriculumPlan>(&text).unwrap(), p);
    }
}
