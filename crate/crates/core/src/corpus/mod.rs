//! Unified instruction-record corpus: ingestion, prompt assembly, splits
//! and the synthetic toy corpus.

mod build;
mod ingest;
mod manifest;
mod prompt;
mod sampling;
pub mod toy;
mod types;

pub use build::{
    assemble, assemble_from_manifest_file, hash_files, parse_records, records_to_jsonl, Corpus,
    DatasetSplit, FamilyStats,
};
pub use ingest::{check_unique_ids, escape_field, ingest_dataset, parse_raw_row};
pub use manifest::{FewShotScope, Manifest, ManifestEntry};
pub use prompt::{
    assign_instructions, attach_demonstration, inject_few_shot, render_demonstration,
    render_prompt, select_few_shot,
};
pub use sampling::{quota, sample_fraction};
pub use types::{
    DatasetKey, GkgRecord, GraphFamily, InstructionPool, MetricKind, PromptStrategy, ShotMode,
    TaskDescriptor,
};
