use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::tokenizer::VOCAB_SIZE;
use crate::error::{Error, Result};

/// Weight matrices that can carry a low-rank adapter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AdapterRole {
    Query,
    Key,
    Value,
    Output,
    FfnUp,
    FfnDown,
    /// The output projection onto the vocabulary.
    Head,
}

impl AdapterRole {
    /// Roles present once per transformer layer, in storage order.
    pub const LAYER_ROLES: [AdapterRole; 6] = [
        AdapterRole::Query,
        AdapterRole::Key,
        AdapterRole::Value,
        AdapterRole::Output,
        AdapterRole::FfnUp,
        AdapterRole::FfnDown,
    ];

    pub const ALL: [AdapterRole; 7] = [
        AdapterRole::Query,
        AdapterRole::Key,
        AdapterRole::Value,
        AdapterRole::Output,
        AdapterRole::FfnUp,
        AdapterRole::FfnDown,
        AdapterRole::Head,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AdapterRole::Query => "query",
            AdapterRole::Key => "key",
            AdapterRole::Value => "value",
            AdapterRole::Output => "output",
            AdapterRole::FfnUp => "ffn-up",
            AdapterRole::FfnDown => "ffn-down",
            AdapterRole::Head => "head",
        }
    }

    pub(crate) fn layer_index(self) -> usize {
        match self {
            AdapterRole::Query => 0,
            AdapterRole::Key => 1,
            AdapterRole::Value => 2,
            AdapterRole::Output => 3,
            AdapterRole::FfnUp => 4,
            AdapterRole::FfnDown => 5,
            AdapterRole::Head => panic!("the head is not a layer matrix"),
        }
    }
}

impl fmt::Display for AdapterRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AdapterRole {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [AdapterRole::Head]
            .into_iter()
            .chain(AdapterRole::LAYER_ROLES)
            .find(|r| r.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown adapter role `{s}`")))
    }
}

fn default_targets() -> BTreeSet<AdapterRole> {
    [AdapterRole::Query, AdapterRole::Value].into_iter().collect()
}

fn default_vocab() -> usize {
    VOCAB_SIZE
}

/// Shape of the decoder-only model and of its adapters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    #[serde(default = "default_vocab")]
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub max_seq_len: usize,
    #[serde(default = "default_targets")]
    pub adapter_targets: BTreeSet<AdapterRole>,
    pub rank: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            vocab_size: VOCAB_SIZE,
            d_model: 64,
            n_layers: 2,
            n_heads: 4,
            d_ff: 128,
            max_seq_len: 256,
            adapter_targets: default_targets(),
            rank: 8,
        }
    }
}

impl ModelConfig {
    /// Distance penalty of attention head `h`: `2^(-8(h+1)/n_heads)`.
    pub fn alibi_slope(&self, h: usize) -> f64 {
        (2.0f64).powf(-8.0 * (h + 1) as f64 / self.n_heads as f64)
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    /// `(in, out)` of the matrix playing `role`.
    pub fn matrix_shape(&self, role: AdapterRole) -> (usize, usize) {
        let d = self.d_model;
        match role {
            AdapterRole::Query | AdapterRole::Key | AdapterRole::Value | AdapterRole::Output => (d, d),
            AdapterRole::FfnUp => (d, self.d_ff),
            AdapterRole::FfnDown => (self.d_ff, d),
            AdapterRole::Head => (d, self.vocab_size),
        }
    }

    pub fn with_targets(mut self, roles: impl IntoIterator<Item = AdapterRole>) -> Self {
        self.adapter_targets = roles.into_iter().collect();
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("model config: {m}")));
        if self.vocab_size != VOCAB_SIZE {
            return bad(format!("vocab_size must be {VOCAB_SIZE} (256 bytes + 4 specials)"));
        }
        if self.d_model == 0 || self.n_layers == 0 || self.n_heads == 0 || self.d_ff == 0 {
            return bad("dimensions must be positive".into());
        }
        if self.d_model % self.n_heads != 0 {
            return bad(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            ));
        }
        if self.max_seq_len < 2 {
            return bad("max_seq_len must be at least 2".into());
        }
        if self.rank == 0 {
            return bad("rank must be positive".into());
        }
        for &role in &self.adapter_targets {
            let (d, k) = self.matrix_shape(role);
            if self.rank >= d.min(k) {
                return bad(format!(
                    "rank {} must be below min({d}, {k}) of the {role} matrix",
                    self.rank
                ));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_is_valid() {
        let c = ModelConfig::default();
        c.validate().unwrap();
        assert_eq!(c.adapter_targets, default_targets());
        assert_eq!(c.rank, 8);
    }

    #[test]
    fn invalid_configs() {
        let c = ModelConfig {
            n_heads: 3,
            ..ModelConfig::default()
        };
        assert!(c.validate().is_err());
        let c = ModelConfig {
            rank: 64,
            ..ModelConfig::default()
        };
        assert!(c.validate().is_err());
        let c = ModelConfig {
            max_seq_len: 1,
            ..ModelConfig::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn roles_parse() {
        assert_eq!("ffn-up".parse::<AdapterRole>().unwrap(), AdapterRole::FfnUp);
        assert!("nope".parse::<AdapterRole>().is_err());
    }
}
