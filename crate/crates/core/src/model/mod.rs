//! Byte-level decoder-only transformer with low-rank adapters.

mod checkpoint;
mod config;
mod decode;
mod forward;
mod tokenizer;
mod weights;

pub use checkpoint::{lineage_warnings, Checkpoint, TensorEntry, BLOB_FILE, HEADER_FILE};
pub use config::{AdapterRole, ModelConfig};
pub use decode::KvCache;
pub use forward::{argmax, loss, AdapterGrad, ForwardCache, Gradients};
pub use tokenizer::{
    detokenize, encode_example, encode_prompt, tokenize, Encoded, Example, Token, BOS, EOS,
    PAD, SEP, VOCAB_SIZE,
};
pub use weights::{AdaptedLinear, Layer, LoraAdapter, Scalar, Slot, Transformer};
