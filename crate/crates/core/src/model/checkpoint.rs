//! Immutable model snapshots with a content hash and a parent link.

use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::ModelConfig;
use super::weights::Transformer;
use crate::error::{Error, Result};

pub const HEADER_FILE: &str = "header.json";
pub const BLOB_FILE: &str = "tensors.bin";
const FORMAT: &str = "gkg-checkpoint/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: [usize; 2],
    /// Byte offset into the blob.
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    format: String,
    config: ModelConfig,
    stage_label: String,
    parent_hash: Option<String>,
    tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub stage_label: String,
    pub parent_hash: Option<String>,
    pub model: Transformer<f32>,
}

impl Checkpoint {
    /// Untrained base model with fresh adapters.
    pub fn base(config: &ModelConfig, seed: u64) -> Result<Self> {
        Ok(Self {
            stage_label: "base".into(),
            parent_hash: None,
            model: Transformer::init(config, seed)?,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.model.config
    }

    /// A new checkpoint whose parent is `self`.
    pub fn child(&self, label: impl Into<String>, model: Transformer<f32>) -> Self {
        Self {
            stage_label: label.into(),
            parent_hash: Some(self.content_hash()),
            model,
        }
    }

    /// Named tensors in canonical order.
    pub fn tensors(&self) -> Vec<(String, &Array2<f32>)> {
        let m = &self.model;
        let mut out = vec![("tok_emb".to_string(), &m.tok_emb)];
        for (slot, lin) in m.linears() {
            let name = slot.name();
            out.push((format!("{name}.weight"), &lin.weight));
            if let Some(ad) = &lin.adapter {
                out.push((format!("{name}.lora_a"), &ad.a));
                out.push((format!("{name}.lora_b"), &ad.b));
            }
        }
        out
    }

    /// Header JSON bytes and the little-endian `f32` blob.
    pub fn encode(&self) -> (Vec<u8>, Vec<u8>) {
        let mut blob = Vec::new();
        let mut index = Vec::new();
        for (name, t) in self.tensors() {
            index.push(TensorEntry {
                name,
                shape: [t.nrows(), t.ncols()],
                offset: blob.len(),
            });
            for v in t.iter() {
                blob.extend_from_slice(&v.to_le_bytes());
            }
        }
        let header = Header {
            format: FORMAT.into(),
            config: self.model.config.clone(),
            stage_label: self.stage_label.clone(),
            parent_hash: self.parent_hash.clone(),
            tensors: index,
        };
        let bytes = serde_json::to_vec_pretty(&header).expect("header serializes");
        (bytes, blob)
    }

    /// Hex SHA-256 of header followed by blob.
    pub fn content_hash(&self) -> String {
        let (header, blob) = self.encode();
        hash_parts(&header, &blob)
    }

    pub fn decode(header: &[u8], blob: &[u8]) -> Result<Self> {
        let header: Header =
            serde_json::from_slice(header).map_err(|e| Error::json("checkpoint header", e))?;
        if header.format != FORMAT {
            return Err(Error::Checkpoint(format!("unknown format `{}`", header.format)));
        }
        let mut model = Transformer::<f32>::init(&header.config, 0)?;
        let expected: Vec<String> = Checkpoint {
            stage_label: String::new(),
            parent_hash: None,
            model: model.clone(),
        }
        .tensors()
        .into_iter()
        .map(|(n, _)| n)
        .collect();
        let names: Vec<&str> = header.tensors.iter().map(|t| t.name.as_str()).collect();
        if names != expected {
            return Err(Error::Checkpoint("tensor index disagrees with config".into()));
        }
        let read = |entry: &TensorEntry| -> Result<Array2<f32>> {
            let [rows, cols] = entry.shape;
            let end = entry.offset + rows * cols * 4;
            let bytes = blob.get(entry.offset..end).ok_or_else(|| {
                Error::Checkpoint(format!("tensor `{}` runs past the blob", entry.name))
            })?;
            let values = bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            Array2::from_shape_vec((rows, cols), values).map_err(|e| Error::Shape(e.to_string()))
        };
        let mut entries = header.tensors.iter();
        let mut next = || read(entries.next().expect("index length checked"));
        model.tok_emb = next()?;
        for (_, lin) in model.linears_mut() {
            lin.weight = next()?;
            if let Some(ad) = lin.adapter.as_mut() {
                ad.a = next()?;
                ad.b = next()?;
            }
        }
        model.check_shapes()?;
        Ok(Self {
            stage_label: header.stage_label,
            parent_hash: header.parent_hash,
            model,
        })
    }

    pub fn save(&self, dir: &Path) -> Result<String> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let (header, blob) = self.encode();
        let hp = dir.join(HEADER_FILE);
        fs::write(&hp, &header).map_err(|e| Error::io(hp, e))?;
        let bp = dir.join(BLOB_FILE);
        fs::write(&bp, &blob).map_err(|e| Error::io(bp, e))?;
        Ok(hash_parts(&header, &blob))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let hp = dir.join(HEADER_FILE);
        let header = fs::read(&hp).map_err(|e| Error::io(hp, e))?;
        let bp = dir.join(BLOB_FILE);
        let blob = fs::read(&bp).map_err(|e| Error::io(bp, e))?;
        Self::decode(&header, &blob)
    }
}

fn hash_parts(header: &[u8], blob: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(header);
    h.update(blob);
    hex::encode(h.finalize())
}

/// Warnings for each link in `chain` whose parent hash does not match its
/// predecessor.
pub fn lineage_warnings(chain: &[&Checkpoint]) -> Vec<String> {
    chain
        .windows(2)
        .filter_map(|w| {
            let expected = w[0].content_hash();
            (w[1].parent_hash.as_deref() != Some(expected.as_str())).then(|| {
                format!(
                    "`{}` does not descend from `{}` (parent {:?}, expected {})",
                    w[1].stage_label, w[0].stage_label, w[1].parent_hash, expected
                )
            })
        })
        .collect()
}
