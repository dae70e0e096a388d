use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::config::LoraPlusConfig;
use super::curriculum::{run_curriculum, CurriculumPlan, CurriculumRun};
use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::harness::{evaluate, CheckpointGenerator, EvalConfig, EvalRun};
use crate::metrics::MetricReport;
use crate::model::Checkpoint;

/// Default data fractions of the scale sweep.
pub const DEFAULT_FRACTIONS: [f64; 6] = [0.1, 0.2, 0.4, 0.6, 0.8, 1.0];

/// Result of one trained and evaluated sweep cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub key: String,
    pub chain: Vec<String>,
    pub final_hash: String,
    pub report: MetricReport,
}

/// Run `plan` from `base` and evaluate its last checkpoint on `corpus`.
pub fn train_and_evaluate(
    base: &Checkpoint,
    plan: &CurriculumPlan,
    corpus: &Corpus,
    config: &LoraPlusConfig,
    eval: &EvalConfig,
) -> Result<(CurriculumRun, EvalRun)> {
    let run = run_curriculum(base, plan, corpus, config)?;
    let eval_run = evaluate(&mut CheckpointGenerator::new(run.last()), corpus, eval)?;
    Ok((run, eval_run))
}

fn cell(key: String, run: &CurriculumRun, eval_run: EvalRun) -> SweepCell {
    SweepCell {
        key,
        chain: run.checkpoints.iter().map(Checkpoint::content_hash).collect(),
        final_hash: eval_run.checkpoint_hash,
        report: eval_run.report,
    }
}

/// All six stage orders, keyed `"K-E-C"` style, in a fixed order.
pub fn sweep_order(
    base: &Checkpoint,
    corpus: &Corpus,
    config: &LoraPlusConfig,
    eval: &EvalConfig,
) -> Result<Vec<SweepCell>> {
    CurriculumPlan::permutations()
        .iter()
        .map(|plan| {
            let (run, e) = train_and_evaluate(base, plan, corpus, config, eval)?;
            Ok(cell(plan.order_label(), &run, e))
        })
        .collect()
}

/// The default curriculum on per-task subsamples of the training data.
pub fn sweep_scale(
    base: &Checkpoint,
    corpus: &Corpus,
    fractions: &[f64],
    config: &LoraPlusConfig,
    eval: &EvalConfig,
) -> Result<Vec<SweepCell>> {
    if fractions.is_empty() {
        return Err(Error::InvalidArgument("no fractions".into()));
    }
    let plan = CurriculumPlan::default();
    fractions
        .iter()
        .map(|&p| {
            let sub = corpus.with_sampled_train(p, corpus.seed)?;
            let (run, e) = train_and_evaluate(base, &plan, &sub, config, eval)?;
            Ok(cell(format!("{p}"), &run, e))
        })
        .collect()
}

/// Grid of `η_A` columns and `λ = η_B / η_A` rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EtaGrid {
    pub eta_a: Vec<f64>,
    pub lambda: Vec<f64>,
}

impl EtaGrid {
    /// The published layout: four `η_A` values and four multiples.
    pub fn standard() -> Self {
        Self {
            eta_a: vec![5e-5, 1e-4, 2e-4, 4e-4],
            lambda: vec![5.0, 10.0, 20.0, 40.0],
        }
    }

    /// Multiply every `η_A` by `factor`, keeping the multiples.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            eta_a: self.eta_a.iter().map(|e| e * factor).collect(),
            lambda: self.lambda.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.eta_a.is_empty() || self.lambda.is_empty() {
            return Err(Error::InvalidArgument("empty eta grid".into()));
        }
        if self.eta_a.iter().chain(&self.lambda).any(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(Error::InvalidArgument("eta grid values must be positive".into()));
        }
        if self.lambda.iter().any(|&l| l < 1.0) {
            return Err(Error::InvalidArgument("lambda below 1 makes eta_b < eta_a".into()));
        }
        Ok(())
    }
}

impl FromStr for EtaGrid {
    type Err = Error;

    /// `eta_a=1e-4,2e-4;lambda=10,20`
    fn from_str(s: &str) -> Result<Self> {
        let mut eta_a = None;
        let mut lambda = None;
        for part in s.split(';').filter(|p| !p.trim().is_empty()) {
            let (name, values) = part
                .split_once('=')
                .ok_or_else(|| Error::InvalidArgument(format!("grid part `{part}` lacks `=`")))?;
            let values = values
                .split(',')
                .map(|v| {
                    v.trim()
                        .parse::<f64>()
                        .map_err(|e| Error::InvalidArgument(format!("grid value `{v}`: {e}")))
                })
                .collect::<Result<Vec<_>>>()?;
            match name.trim() {
                "eta_a" => eta_a = Some(values),
                "lambda" => lambda = Some(values),
                other => return Err(Error::InvalidArgument(format!("unknown grid axis `{other}`"))),
            }
        }
        let grid = Self {
            eta_a: eta_a.ok_or_else(|| Error::InvalidArgument("grid lacks eta_a".into()))?,
            lambda: lambda.ok_or_else(|| Error::InvalidArgument("grid lacks lambda".into()))?,
        };
        grid.validate()?;
        Ok(grid)
    }
}

/// Overall scores, `scores[row][col]` for `lambda[row]` and `eta_a[col]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EtaTable {
    pub eta_a: Vec<f64>,
    pub lambda: Vec<f64>,
    pub scores: Vec<Vec<f64>>,
}

impl EtaTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("lambda\\eta_a");
        for e in &self.eta_a {
            let _ = write!(out, ",{e:e}");
        }
        out.push('\n');
        for (l, row) in self.lambda.iter().zip(&self.scores) {
            let _ = write!(out, "{l}");
            for s in row {
                let _ = write!(out, ",{s:.4}");
            }
            out.push('\n');
        }
        out
    }
}

/// The default curriculum for every `(η_A, λ)` cell.
pub fn sweep_eta(
    base: &Checkpoint,
    corpus: &Corpus,
    grid: &EtaGrid,
    config: &LoraPlusConfig,
    eval: &EvalConfig,
) -> Result<EtaTable> {
    grid.validate()?;
    let plan = CurriculumPlan::default();
    let scores = grid
        .lambda
        .iter()
        .map(|&l| {
            grid.eta_a
                .iter()
                .map(|&e| {
                    let cfg = config.clone().with_ratio(e, l);
                    let (_, run) = train_and_evaluate(base, &plan, corpus, &cfg, eval)?;
                    Ok(run.report.overall)
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EtaTable {
        eta_a: grid.eta_a.clone(),
        lambda: grid.lambda.clone(),
        scores,
    })
}
