use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Learning-rate schedule over the steps of one stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Schedule {
    Constant,
    /// `η_t = η₀·(1 − t/T)` for step `t` in `0..T`.
    #[default]
    LinearDecay,
}

impl Schedule {
    pub fn factor(self, step: usize, total: usize) -> f64 {
        match self {
            Schedule::Constant => 1.0,
            Schedule::LinearDecay => 1.0 - step as f64 / total.max(1) as f64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerKind {
    /// Plain split-rate gradient descent.
    #[default]
    Sgd,
    /// Adam moments (β₁ = 0.9, β₂ = 0.999) with the same split rates.
    Adam,
}

fn default_batch_size() -> usize {
    8
}

fn default_grad_clip() -> f64 {
    1.0
}

fn default_epochs() -> usize {
    1
}

/// Dual-rate low-rank optimizer settings. Give `eta_b` directly or as
/// `lambda · eta_a`; with neither, `eta_b = eta_a`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoraPlusConfig {
    pub eta_a: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta_b: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    /// Global-norm clip; `0` disables clipping.
    #[serde(default = "default_grad_clip")]
    pub grad_clip: f64,
    #[serde(default)]
    pub schedule: Schedule,
    #[serde(default = "default_epochs")]
    pub epochs_per_stage: usize,
    /// Caps the steps of each stage.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_steps: Option<usize>,
    #[serde(default)]
    pub optimizer: OptimizerKind,
    #[serde(default)]
    pub seed: u64,
}

impl Default for LoraPlusConfig {
    fn default() -> Self {
        Self {
            eta_a: 4e-4,
            eta_b: None,
            lambda: Some(10.0),
            batch_size: default_batch_size(),
            grad_clip: default_grad_clip(),
            schedule: Schedule::default(),
            epochs_per_stage: default_epochs(),
            max_steps: None,
            optimizer: OptimizerKind::default(),
            seed: 0,
        }
    }
}

impl LoraPlusConfig {
    /// Rates given as `η_A` and the ratio `λ = η_B / η_A`.
    pub fn with_ratio(mut self, eta_a: f64, lambda: f64) -> Self {
        self.eta_a = eta_a;
        self.eta_b = None;
        self.lambda = Some(lambda);
        self
    }

    /// One rate for both factors.
    pub fn single_rate(mut self, eta: f64) -> Self {
        self.eta_a = eta;
        self.eta_b = Some(eta);
        self.lambda = None;
        self
    }

    pub fn eta_b(&self) -> f64 {
        match (self.eta_b, self.lambda) {
            (Some(b), _) => b,
            (None, Some(l)) => l * self.eta_a,
            (None, None) => self.eta_a,
        }
    }

    pub fn clip_norm(&self) -> Option<f64> {
        (self.grad_clip > 0.0).then_some(self.grad_clip)
    }

    /// Rates for step `step` of a stage with `total` steps.
    pub fn rates_at(&self, step: usize, total: usize) -> (f64, f64) {
        let f = self.schedule.factor(step, total);
        (self.eta_a * f, self.eta_b() * f)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.eta_a > 0.0 && self.eta_a.is_finite()) {
            return bad(format!("eta_a must be positive, got {}", self.eta_a));
        }
        if self.eta_b.is_some() && self.lambda.is_some() {
            return bad("give eta_b or lambda, not both".into());
        }
        let eta_b = self.eta_b();
        if !(eta_b > 0.0 && eta_b.is_finite()) {
            return bad(format!("eta_b must be positive, got {eta_b}"));
        }
        if eta_b < self.eta_a {
            return bad(format!("eta_b {eta_b} is below eta_a {}", self.eta_a));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if self.epochs_per_stage == 0 {
            return bad("epochs_per_stage must be positive".into());
        }
        if !(self.grad_clip >= 0.0 && self.grad_clip.is_finite()) {
            return bad(format!("grad_clip must be non-negative, got {}", self.grad_clip));
        }
        Ok(())
    }
}
