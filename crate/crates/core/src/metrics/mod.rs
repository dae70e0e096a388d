//! Evaluation metrics: set-based micro-F1 for structured outputs and
//! LCS-based ROUGE-L for generated text, plus report aggregation.

mod f1;
mod parse;
mod report;
mod rouge;

pub use f1::{micro_f1, F1Counts};
pub use parse::{is_label_task, normalize, parse_structured, StructuredItems};
pub use report::{
    aggregate, parse_predictions, predictions_to_jsonl, score_dataset, DatasetScore, MetricReport,
    PredictionRecord,
};
pub use rouge::{lcs_length, rouge_l};
