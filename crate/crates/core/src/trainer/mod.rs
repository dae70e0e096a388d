//! Dual-rate low-rank optimizer, stage training, the curriculum and the
//! experiment sweeps.

mod config;
mod curriculum;
mod stage;
mod step;
mod sweep;

pub use config::{LoraPlusConfig, OptimizerKind, Schedule};
pub use curriculum::{
    max_logit_diff, probe_inputs, run_curriculum, run_curriculum_with, CurriculumPlan, CurriculumRun, StagePlan, STAGE_LABELS,
};
pub use stage::{encode_records, stage_batches, train_stage, StepRecord, TrainLog};
pub use step::{clip_global_norm, lora_plus_step, Optimizer};
pub use sweep::{
    sweep_eta, sweep_order, sweep_scale, train_and_evaluate, EtaGrid, EtaTable, SweepCell, DEFAULT_FRACTIONS,
};
