use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::config::LoraPlusConfig;
use super::step::{clip_global_norm, Optimizer};
use crate::corpus::{render_prompt, GkgRecord};
use crate::error::{Error, Result};
use crate::model::{encode_example, Checkpoint, Example};
use crate::rng::{keyed_rng, keyed_u64};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub stage: String,
    pub loss: f64,
    pub eta_a: f64,
    pub eta_b: f64,
    pub grad_norm: f64,
}

/// Per-step losses and rates of one stage.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainLog {
    pub stage: String,
    pub steps: Vec<StepRecord>,
    pub seconds: f64,
}

impl TrainLog {
    pub fn to_jsonl(&self) -> String {
        self.steps
            .iter()
            .map(|s| serde_json::to_string(s).expect("step serializes") + "\n")
            .collect()
    }

    pub fn first_loss(&self) -> Option<f64> {
        self.steps.first().map(|s| s.loss)
    }

    pub fn last_loss(&self) -> Option<f64> {
        self.steps.last().map(|s| s.loss)
    }
}

/// Encode records as `[BOS] prompt [SEP] output [EOS]` training examples.
pub fn encode_records(records: &[GkgRecord], max_seq_len: usize) -> Vec<Example> {
    records
        .iter()
        .map(|r| encode_example(&render_prompt(r), &r.output, max_seq_len))
        .collect()
}

/// Record indices of every batch of a stage, in training order.
pub fn stage_batches(n: usize, stage: &str, config: &LoraPlusConfig) -> Vec<Vec<usize>> {
    let mut batches = Vec::new();
    for epoch in 0..config.epochs_per_stage {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut keyed_rng(config.seed, "shuffle", &format!("{stage}#{epoch}")));
        batches.extend(order.chunks(config.batch_size).map(<[usize]>::to_vec));
    }
    if let Some(cap) = config.max_steps {
        batches.truncate(cap);
    }
    batches
}

/// Train the adapters of `start` on `records`, then fold them into the base
/// weights. The result is labelled `stage` and points back at `start`.
pub fn train_stage(
    start: &Checkpoint,
    records: &[GkgRecord],
    stage: &str,
    config: &LoraPlusConfig,
) -> Result<(Checkpoint, TrainLog)> {
    config.validate()?;
    if records.is_empty() {
        return Err(Error::Stage {
            stage: stage.into(),
            reason: "no training records".into(),
        });
    }
    start.model.check_shapes()?;
    let clock = Instant::now();
    let examples = encode_records(records, start.config().max_seq_len);
    let batches = stage_batches(examples.len(), stage, config);
    let total = batches.len();

    let mut model = start.model.clone();
    let mut optimizer = Optimizer::new(config.optimizer, &model);
    let mut steps = Vec::with_capacity(total);
    for (step, idx) in batches.iter().enumerate() {
        let batch: Vec<Example> = idx.iter().map(|&i| examples[i].clone()).collect();
        let (loss, mut grads) = model.gradients(&batch).map_err(|e| Error::Stage {
            stage: stage.into(),
            reason: format!("step {step}: {e}"),
        })?;
        let grad_norm = match config.clip_norm() {
            Some(max) => clip_global_norm(&mut grads, max),
            None => grads.global_norm(),
        };
        let (eta_a, eta_b) = config.rates_at(step, total);
        optimizer.apply(&mut model, &grads, eta_a as f32, eta_b as f32)?;
        steps.push(StepRecord {
            step,
            stage: stage.into(),
            loss: loss as f64,
            eta_a,
            eta_b,
            grad_norm,
        });
    }
    if total > 0 {
        model.merge_adapters(keyed_u64(config.seed, "merge", stage));
    }
    let log = TrainLog {
        stage: stage.into(),
        steps,
        seconds: clock.elapsed().as_secs_f64(),
    };
    Ok((start.child(stage, model), log))
}
