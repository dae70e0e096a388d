//! Run configuration: one TOML file drives every command.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use gkg_core::corpus::toy::ToySizes;
use gkg_core::harness::EvalConfig;
use gkg_core::trainer::{EtaGrid, DEFAULT_FRACTIONS};
use gkg_core::{CurriculumPlan, LoraPlusConfig, ModelConfig, PromptStrategy};
use serde::{Deserialize, Serialize};

use crate::UsageError;

/// File name of the resolved-config snapshot written next to every output.
pub const SNAPSHOT_FILE: &str = "run-config.toml";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corpus: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoints: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reports: Option<PathBuf>,
}

/// Synthetic corpus settings, used when no manifest is given.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToySettings {
    #[serde(default = "default_toy_train")]
    pub train: usize,
    #[serde(default = "default_toy_test")]
    pub test: usize,
    #[serde(default = "default_toy_seed")]
    pub seed: u64,
}

fn default_toy_train() -> usize {
    200
}

fn default_toy_test() -> usize {
    50
}

fn default_toy_seed() -> u64 {
    11
}

impl Default for ToySettings {
    fn default() -> Self {
        Self {
            train: default_toy_train(),
            test: default_toy_test(),
            seed: default_toy_seed(),
        }
    }
}

impl ToySettings {
    pub fn sizes(&self) -> ToySizes {
        ToySizes::uniform(self.train, self.test)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSettings {
    #[serde(default = "default_fractions")]
    pub fractions: Vec<f64>,
    #[serde(default = "EtaGrid::standard")]
    pub grid: EtaGrid,
}

fn default_fractions() -> Vec<f64> {
    DEFAULT_FRACTIONS.to_vec()
}

impl Default for SweepSettings {
    fn default() -> Self {
        Self {
            fractions: default_fractions(),
            grid: EtaGrid::standard(),
        }
    }
}

/// Everything a command needs. `seed` initializes the base model; the
/// trainer's own seed drives shuffles and merges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub strategy: PromptStrategy,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub toy: Option<ToySettings>,
    #[serde(default)]
    pub paths: Paths,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: LoraPlusConfig,
    #[serde(default)]
    pub plan: CurriculumPlan,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default)]
    pub sweep: SweepSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            strategy: PromptStrategy::Full,
            manifest: None,
            toy: None,
            paths: Paths::default(),
            model: ModelConfig::default(),
            train: LoraPlusConfig::default(),
            plan: CurriculumPlan::default(),
            eval: EvalConfig::default(),
            sweep: SweepSettings::default(),
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| UsageError(format!("malformed run config: {e}")).into())
    }

    /// Read `path` and make its relative paths relative to the file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| UsageError(format!("cannot read config {}: {e}", path.display())))?;
        let mut config = Self::parse(&text).with_context(|| path.display().to_string())?;
        let dir = path.parent().unwrap_or(Path::new("."));
        config.rebase(dir);
        Ok(config)
    }

    fn rebase(&mut self, dir: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        };
        for p in [
            &mut self.paths.corpus,
            &mut self.paths.checkpoints,
            &mut self.paths.reports,
            &mut self.manifest,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
    }

    /// Fill unset directories from `home` and check every section.
    pub fn resolve(mut self, home: &Path) -> Result<Self> {
        let paths = &mut self.paths;
        paths.corpus.get_or_insert_with(|| home.join("corpus"));
        paths.checkpoints.get_or_insert_with(|| home.join("checkpoints"));
        paths.reports.get_or_insert_with(|| home.join("reports"));
        self.rebase(&std::env::current_dir().context("current directory")?);
        let usage = |e: gkg_core::Error| UsageError(e.to_string());
        self.model.validate().map_err(usage)?;
        self.train.validate().map_err(usage)?;
        self.plan.validate().map_err(usage)?;
        self.sweep.grid.validate().map_err(usage)?;
        if self.sweep.fractions.iter().any(|&p| !(p > 0.0 && p <= 1.0)) {
            return Err(UsageError("sweep fractions must lie in (0, 1]".into()).into());
        }
        Ok(self)
    }

    pub fn corpus_dir(&self) -> &Path {
        self.paths.corpus.as_deref().expect("resolved config")
    }

    pub fn checkpoint_dir(&self) -> &Path {
        self.paths.checkpoints.as_deref().expect("resolved config")
    }

    pub fn report_dir(&self) -> &Path {
        self.paths.reports.as_deref().expect("resolved config")
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    /// Write the resolved snapshot into `dir`.
    pub fn write_snapshot(&self, dir: &Path) -> Result<PathBuf> {
        fs::create_dir_all(dir).with_context(|| dir.display().to_string())?;
        let path = dir.join(SNAPSHOT_FILE);
        fs::write(&path, self.to_toml()).with_context(|| path.display().to_string())?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_the_default() {
        assert_eq!(RunConfig::parse("").unwrap(), RunConfig::default());
    }

    #[test]
    fn snapshot_round_trips() {
        let mut c = RunConfig::default();
        c.toy = Some(ToySettings::default());
        c.train.max_steps = Some(3);
        c.plan = CurriculumPlan::from_order("E-K-C").unwrap();
        let c = c.resolve(Path::new("/tmp/home")).unwrap();
        assert_eq!(RunConfig::parse(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::parse("sede = 3").is_err());
        assert!(RunConfig::parse("[train]\neta = 1").is_err());
    }
}
