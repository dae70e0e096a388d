//! Decoding test splits, scoring them and rendering comparison tables.

mod eval;
mod reports;

pub use eval::{
    evaluate, CheckpointGenerator, EmptyGenerator, EvalConfig, EvalRun, GoldGenerator, Generator,
};
pub use reports::{
    ablation_prompts, ood_report, stage_comparison, AblationRow, AblationTable, StageComparison,
    StageRow, OOD_TITLE,
};
