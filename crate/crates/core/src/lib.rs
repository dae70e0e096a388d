//! Workbench for unified graph-construction instruction tuning.
//!
//! The crate is split along the pipeline:
//!
//! * [`corpus`] turns tab-separated sub-task data into unified instruction
//!   records, assigns instructions and few-shot demonstrations, and can
//!   generate a synthetic toy corpus.
//! * [`model`] is a small byte-level decoder-only transformer with low-rank
//!   adapters, exact cross-entropy loss, hand-written backpropagation and
//!   greedy decoding.
//! * [`trainer`] holds the dual-rate low-rank optimizer, stage training, the
//!   three-stage curriculum and the sweep drivers.
//! * [`metrics`] implements set-based micro-F1 and LCS-based ROUGE-L plus
//!   per-family aggregation.
//! * [`harness`] decodes test splits, scores them and renders reports.

pub mod corpus;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod trainer;

pub use corpus::{
    Corpus, DatasetKey, DatasetSplit, GkgRecord, GraphFamily, InstructionPool, Manifest,
    MetricKind, PromptStrategy, ShotMode, TaskDescriptor,
};
pub use error::{Error, Result};
pub use harness::{EvalRun, Generator};
pub use metrics::{MetricReport, PredictionRecord, StructuredItems};
pub use model::{AdapterRole, Checkpoint, LoraAdapter, ModelConfig, Transformer};
pub use trainer::{CurriculumPlan, LoraPlusConfig, TrainLog};
