use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::types::{DatasetKey, TaskDescriptor};
use crate::error::{Error, Result};

/// Whether the few-shot quota is applied per dataset split or across the
/// whole corpus split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum FewShotScope {
    #[default]
    PerDataset,
    Global,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    #[serde(flatten)]
    pub descriptor: TaskDescriptor,
    pub train_count: usize,
    pub test_count: usize,
    /// Tab-separated `input<TAB>output` rows, train rows first.
    pub raw: PathBuf,
}

/// The split manifest: registered datasets with their row counts, the
/// global seed, the few-shot fraction and the instruction template files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_few_shot_fraction")]
    pub few_shot_fraction: f64,
    #[serde(default)]
    pub few_shot_scope: FewShotScope,
    /// Task code to template file (one instruction per line).
    #[serde(default)]
    pub instructions: BTreeMap<String, PathBuf>,
    #[serde(default, rename = "dataset")]
    pub datasets: Vec<ManifestEntry>,
}

fn default_few_shot_fraction() -> f64 {
    0.1
}

impl Default for Manifest {
    fn default() -> Self {
        Self {
            seed: 0,
            few_shot_fraction: default_few_shot_fraction(),
            few_shot_scope: FewShotScope::default(),
            instructions: BTreeMap::new(),
            datasets: Vec::new(),
        }
    }
}

impl Manifest {
    pub fn entry(&self, key: &DatasetKey) -> Option<&ManifestEntry> {
        self.datasets.iter().find(|e| &e.descriptor.key() == key)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let manifest: Manifest = toml::from_str(text).map_err(|source| Error::Toml {
            context: "manifest".into(),
            source,
        })?;
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("manifest serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.few_shot_fraction) {
            return Err(Error::Config(format!(
                "few_shot_fraction {} outside [0, 1]",
                self.few_shot_fraction
            )));
        }
        if self.datasets.is_empty() {
            return Err(Error::Config("manifest registers no dataset".into()));
        }
        let mut keys = BTreeSet::new();
        for e in &self.datasets {
            e.descriptor.validate()?;
            let key = e.descriptor.key();
            if !keys.insert(key.clone()) {
                return Err(Error::Config(format!("dataset {key} registered twice")));
            }
            if e.descriptor.held_out && e.train_count != 0 {
                return Err(Error::Config(format!(
                    "held-out dataset {key} must have train_count = 0"
                )));
            }
            if !self.instructions.contains_key(&e.descriptor.task_code) {
                return Err(Error::Config(format!(
                    "no instruction template file for task {}",
                    e.descriptor.task_code
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"
seed = 42
few_shot_fraction = 0.1

[instructions]
SRE = "instructions/SRE.txt"
ETRE = "instructions/ETRE.txt"

[[dataset]]
family = "KG"
task = "SRE"
dataset = "NYT"
metric = "micro-f1"
train_count = 3
test_count = 2
raw = "raw/SRE.NYT.tsv"

[[dataset]]
family = "EKG"
task = "ETRE"
dataset = "TCR"
metric = "micro-f1"
held_out = true
train_count = 0
test_count = 4
raw = "raw/ETRE.TCR.tsv"
"#;

    #[test]
    fn parses_and_round_trips() {
        let m = Manifest::parse(SAMPLE).unwrap();
        assert_eq!(m.seed, 42);
        assert_eq!(m.datasets.len(), 2);
        assert!(m.datasets[1].descriptor.held_out);
        assert_eq!(m.datasets[0].descriptor.fraction, 1.0);
        let again = Manifest::parse(&m.to_toml()).unwrap();
        assert_eq!(again, m);
    }

    #[test]
    fn rejects_held_out_training_rows() {
        let bad = SAMPLE.replace("train_count = 0", "train_count = 5");
        assert!(matches!(Manifest::parse(&bad), Err(Error::Config(_))));
    }

    #[test]
    fn rejects_missing_templates() {
        let bad = SAMPLE.replace("ETRE = \"instructions/ETRE.txt\"", "");
        assert!(Manifest::parse(&bad).is_err());
    }
}
