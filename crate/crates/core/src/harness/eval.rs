use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::corpus::{render_prompt, Corpus, DatasetKey, GkgRecord, PromptStrategy};
use crate::error::{Error, Result};
use crate::metrics::{aggregate, score_dataset, MetricReport, PredictionRecord};
use crate::model::{detokenize, encode_prompt, Checkpoint};

/// Anything that maps a test record to an output string.
pub trait Generator {
    /// Identifies the generator in an [`EvalRun`] (a checkpoint hash for
    /// models).
    fn id(&self) -> String;

    fn generate(&mut self, record: &GkgRecord, max_new: usize) -> Result<String>;
}

/// Greedy decoding of a checkpoint.
pub struct CheckpointGenerator<'a> {
    checkpoint: &'a Checkpoint,
    hash: String,
}

impl<'a> CheckpointGenerator<'a> {
    pub fn new(checkpoint: &'a Checkpoint) -> Self {
        Self {
            checkpoint,
            hash: checkpoint.content_hash(),
        }
    }
}

impl Generator for CheckpointGenerator<'_> {
    fn id(&self) -> String {
        self.hash.clone()
    }

    fn generate(&mut self, record: &GkgRecord, max_new: usize) -> Result<String> {
        let max_len = self.checkpoint.config().max_seq_len;
        let prompt = encode_prompt(&render_prompt(record), max_len, 0);
        let out = self.checkpoint.model.greedy_decode(&prompt.tokens, max_new)?;
        Ok(detokenize(&out))
    }
}

/// Returns the gold output.
pub struct GoldGenerator;

impl Generator for GoldGenerator {
    fn id(&self) -> String {
        "gold".into()
    }

    fn generate(&mut self, record: &GkgRecord, _: usize) -> Result<String> {
        Ok(record.output.clone())
    }
}

/// Returns an empty string.
pub struct EmptyGenerator;

impl Generator for EmptyGenerator {
    fn id(&self) -> String {
        "empty".into()
    }

    fn generate(&mut self, _: &GkgRecord, _: usize) -> Result<String> {
        Ok(String::new())
    }
}

fn default_max_new() -> usize {
    64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    #[serde(default = "default_max_new")]
    pub max_new: usize,
    /// Per-dataset overrides keyed `"task.dataset"`.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub max_new_per_dataset: BTreeMap<String, usize>,
    /// Restrict evaluation to these datasets; empty means all.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub datasets: Vec<String>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            max_new: default_max_new(),
            max_new_per_dataset: BTreeMap::new(),
            datasets: Vec::new(),
        }
    }
}

impl EvalConfig {
    pub fn max_new_for(&self, key: &DatasetKey) -> usize {
        self.max_new_per_dataset
            .get(&key.to_string())
            .copied()
            .unwrap_or(self.max_new)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRun {
    pub checkpoint_hash: String,
    pub corpus_id: String,
    pub strategy: PromptStrategy,
    pub predictions: Vec<PredictionRecord>,
    pub report: MetricReport,
    /// Scores after cutting every prediction at its first line break.
    pub first_line_report: MetricReport,
    /// Wall-clock seconds per dataset.
    pub timing: BTreeMap<String, f64>,
}

fn first_line(p: &PredictionRecord) -> PredictionRecord {
    PredictionRecord {
        predicted: p.predicted.lines().next().unwrap_or("").to_string(),
        ..p.clone()
    }
}

/// Generate a prediction for every test record of the selected datasets,
/// score them per dataset and aggregate.
pub fn evaluate(generator: &mut dyn Generator, corpus: &Corpus, config: &EvalConfig) -> Result<EvalRun> {
    let selected: Vec<&crate::corpus::DatasetSplit> = if config.datasets.is_empty() {
        corpus.datasets.iter().collect()
    } else {
        config
            .datasets
            .iter()
            .map(|name| {
                let key: DatasetKey = name.parse()?;
                corpus
                    .dataset(&key)
                    .ok_or_else(|| Error::Eval(format!("no descriptor for dataset {name}")))
            })
            .collect::<Result<_>>()?
    };
    let mut predictions = Vec::new();
    let mut scores = Vec::new();
    let mut first_scores = Vec::new();
    let mut timing = BTreeMap::new();
    for ds in selected {
        if ds.test.is_empty() {
            continue;
        }
        let key = ds.descriptor.key();
        let max_new = config.max_new_for(&key);
        let clock = Instant::now();
        let preds = ds
            .test
            .iter()
            .map(|r| {
                Ok(PredictionRecord {
                    record_id: r.id.clone(),
                    gold: r.output.clone(),
                    predicted: generator.generate(r, max_new)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        timing.insert(key.to_string(), clock.elapsed().as_secs_f64());
        scores.push(score_dataset(&preds, &ds.descriptor)?);
        let cut: Vec<_> = preds.iter().map(first_line).collect();
        first_scores.push(score_dataset(&cut, &ds.descriptor)?);
        predictions.extend(preds);
    }
    if scores.is_empty() {
        return Err(Error::Eval("no test records selected".into()));
    }
    Ok(EvalRun {
        checkpoint_hash: generator.id(),
        corpus_id: corpus.content_hash(),
        strategy: corpus.strategy,
        predictions,
        report: aggregate(scores)?,
        first_line_report: aggregate(first_scores)?,
        timing,
    })
}
