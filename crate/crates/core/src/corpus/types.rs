use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The graph family a dataset belongs to. `Counter` is the structure-to-text
/// task mixed into the final stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum GraphFamily {
    #[serde(rename = "KG")]
    Kg,
    #[serde(rename = "EKG")]
    Ekg,
    #[serde(rename = "CKG")]
    Ckg,
    Counter,
}

impl GraphFamily {
    pub const ALL: [GraphFamily; 4] = [
        GraphFamily::Kg,
        GraphFamily::Ekg,
        GraphFamily::Ckg,
        GraphFamily::Counter,
    ];

    /// The three graph families proper, without the counter task.
    pub const GRAPHS: [GraphFamily; 3] = [GraphFamily::Kg, GraphFamily::Ekg, GraphFamily::Ckg];

    pub fn as_str(self) -> &'static str {
        match self {
            GraphFamily::Kg => "KG",
            GraphFamily::Ekg => "EKG",
            GraphFamily::Ckg => "CKG",
            GraphFamily::Counter => "Counter",
        }
    }

    /// Single-letter code used in stage-order labels such as `K-E-C`.
    pub fn letter(self) -> char {
        match self {
            GraphFamily::Kg => 'K',
            GraphFamily::Ekg => 'E',
            GraphFamily::Ckg => 'C',
            GraphFamily::Counter => 'N',
        }
    }

    pub fn from_letter(c: char) -> Option<Self> {
        match c.to_ascii_uppercase() {
            'K' => Some(GraphFamily::Kg),
            'E' => Some(GraphFamily::Ekg),
            'C' => Some(GraphFamily::Ckg),
            _ => None,
        }
    }
}

impl fmt::Display for GraphFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for GraphFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "KG" => Ok(GraphFamily::Kg),
            "EKG" => Ok(GraphFamily::Ekg),
            "CKG" => Ok(GraphFamily::Ckg),
            "COUNTER" => Ok(GraphFamily::Counter),
            _ => Err(Error::Config(format!("unknown graph family `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MetricKind {
    MicroF1,
    RougeL,
}

impl MetricKind {
    /// ROUGE-L for abstract generation and structure-to-text, F1 elsewhere.
    pub fn for_task(task_code: &str) -> Self {
        match task_code {
            "AG" | "NLG" => MetricKind::RougeL,
            _ => MetricKind::MicroF1,
        }
    }
}

/// `task.dataset`, the prefix of every record id of a dataset.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct DatasetKey {
    pub task_code: String,
    pub dataset: String,
}

impl DatasetKey {
    pub fn new(task_code: impl Into<String>, dataset: impl Into<String>) -> Self {
        Self {
            task_code: task_code.into(),
            dataset: dataset.into(),
        }
    }

    /// Recover the key from a record id of the form `task.dataset.index`.
    pub fn from_record_id(id: &str) -> Option<Self> {
        let mut parts = id.rsplitn(2, '.');
        let _index = parts.next()?;
        let prefix = parts.next()?;
        let (task, dataset) = prefix.split_once('.')?;
        Some(Self::new(task, dataset))
    }

    pub fn record_id(&self, index: usize) -> String {
        format!("{}.{}.{}", self.task_code, self.dataset, index)
    }
}

impl FromStr for DatasetKey {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.split_once('.') {
            Some((task, dataset)) if !task.is_empty() && !dataset.is_empty() => Ok(Self::new(task, dataset)),
            _ => Err(Error::InvalidArgument(format!("`{s}` is not of the form task.dataset"))),
        }
    }
}

impl fmt::Display for DatasetKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.task_code, self.dataset)
    }
}

/// Metadata binding one dataset to its family, task and metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskDescriptor {
    pub family: GraphFamily,
    #[serde(rename = "task")]
    pub task_code: String,
    pub dataset: String,
    pub metric: MetricKind,
    #[serde(default)]
    pub held_out: bool,
    #[serde(default)]
    pub sampled: bool,
    #[serde(default = "one")]
    pub fraction: f64,
}

fn one() -> f64 {
    1.0
}

impl TaskDescriptor {
    /// Build a descriptor with the metric implied by the task code.
    pub fn new(family: GraphFamily, task_code: &str, dataset: &str) -> Self {
        Self {
            family,
            task_code: task_code.to_string(),
            dataset: dataset.to_string(),
            metric: MetricKind::for_task(task_code),
            held_out: false,
            sampled: false,
            fraction: 1.0,
        }
    }

    pub fn held_out(mut self) -> Self {
        self.held_out = true;
        self
    }

    pub fn sampled(mut self, fraction: f64) -> Self {
        self.sampled = true;
        self.fraction = fraction;
        self
    }

    pub fn key(&self) -> DatasetKey {
        DatasetKey::new(&self.task_code, &self.dataset)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(format!("descriptor {}: {msg}", self.key())));
        for (what, s) in [("task code", &self.task_code), ("dataset name", &self.dataset)] {
            if s.is_empty() || s.contains('.') || s.chars().any(char::is_whitespace) {
                return bad(format!("{what} `{s}` must be non-empty without dots or spaces"));
            }
        }
        if self.metric != MetricKind::for_task(&self.task_code) {
            return bad(format!(
                "metric {:?} does not match task {} (expected {:?})",
                self.metric,
                self.task_code,
                MetricKind::for_task(&self.task_code)
            ));
        }
        if self.family == GraphFamily::Counter && self.task_code != "NLG" {
            return bad("the counter family only carries the NLG task".into());
        }
        if !(self.fraction > 0.0 && self.fraction <= 1.0) {
            return bad(format!("sample fraction {} outside (0, 1]", self.fraction));
        }
        if !self.sampled && self.fraction != 1.0 {
            return bad("unsampled descriptors must have fraction 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShotMode {
    Zero,
    Few,
}

/// One unified instruction-tuning sample.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GkgRecord {
    pub id: String,
    pub instruction: String,
    #[serde(rename = "shot")]
    pub shot_mode: ShotMode,
    pub demonstration: Option<String>,
    pub input: String,
    pub output: String,
}

impl GkgRecord {
    /// A fresh zero-shot record with no instruction yet.
    pub fn bare(id: String, input: String, output: String) -> Self {
        Self {
            id,
            instruction: String::new(),
            shot_mode: ShotMode::Zero,
            demonstration: None,
            input,
            output,
        }
    }

    pub fn dataset_key(&self) -> Option<DatasetKey> {
        DatasetKey::from_record_id(&self.id)
    }

    /// Check the record invariants of a fully assembled record.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidArgument(format!("record {}: {msg}", self.id)));
        if self.instruction.is_empty() {
            return bad("empty instruction");
        }
        if self.input.is_empty() {
            return bad("empty input");
        }
        if self.output.is_empty() {
            return bad("empty output");
        }
        match (self.shot_mode, &self.demonstration) {
            (ShotMode::Few, Some(_)) | (ShotMode::Zero, None) => Ok(()),
            (ShotMode::Few, None) => bad("few-shot record without demonstration"),
            (ShotMode::Zero, Some(_)) => bad("zero-shot record with a demonstration"),
        }
    }
}

/// Ten instruction templates for one task code.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstructionPool {
    pub task_code: String,
    pub templates: Vec<String>,
}

impl InstructionPool {
    pub const SIZE: usize = 10;

    pub fn new(task_code: impl Into<String>, templates: Vec<String>) -> Result<Self> {
        let pool = Self {
            task_code: task_code.into(),
            templates,
        };
        pool.validate()?;
        Ok(pool)
    }

    /// Parse a template file: one instruction per non-blank line.
    pub fn parse(task_code: &str, text: &str) -> Result<Self> {
        let templates = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(String::from)
            .collect();
        Self::new(task_code, templates)
    }

    pub fn canonical(&self) -> &str {
        &self.templates[0]
    }

    pub fn validate(&self) -> Result<()> {
        if self.templates.len() != Self::SIZE {
            return Err(Error::Config(format!(
                "instruction pool for {} has {} templates, expected {}",
                self.task_code,
                self.templates.len(),
                Self::SIZE
            )));
        }
        for (i, t) in self.templates.iter().enumerate() {
            if t.trim().is_empty() {
                return Err(Error::Config(format!(
                    "instruction pool for {}: template {i} is empty",
                    self.task_code
                )));
            }
            if self.templates[..i].contains(t) {
                return Err(Error::Config(format!(
                    "instruction pool for {}: template {i} duplicates an earlier one",
                    self.task_code
                )));
            }
        }
        Ok(())
    }
}

/// Prompt construction variant used for the prompt ablation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum PromptStrategy {
    /// Diverse instructions and few-shot injection.
    #[default]
    Full,
    /// Canonical instruction only.
    SingleInstruction,
    /// No few-shot demonstrations.
    ZeroShotOnly,
    SingleAndZero,
}

impl PromptStrategy {
    pub const ALL: [PromptStrategy; 4] = [
        PromptStrategy::Full,
        PromptStrategy::SingleInstruction,
        PromptStrategy::ZeroShotOnly,
        PromptStrategy::SingleAndZero,
    ];

    pub fn single_instruction(self) -> bool {
        matches!(self, PromptStrategy::SingleInstruction | PromptStrategy::SingleAndZero)
    }

    pub fn zero_shot_only(self) -> bool {
        matches!(self, PromptStrategy::ZeroShotOnly | PromptStrategy::SingleAndZero)
    }

    pub fn label(self) -> &'static str {
        match self {
            PromptStrategy::Full => "P",
            PromptStrategy::SingleInstruction => "P_si",
            PromptStrategy::ZeroShotOnly => "P_zs",
            PromptStrategy::SingleAndZero => "P_si+zs",
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PromptStrategy::Full => "full",
            PromptStrategy::SingleInstruction => "single-instruction",
            PromptStrategy::ZeroShotOnly => "zero-shot-only",
            PromptStrategy::SingleAndZero => "single-and-zero",
        }
    }
}

impl FromStr for PromptStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "full" | "p" => Ok(PromptStrategy::Full),
            "single-instruction" | "si" | "p_si" => Ok(PromptStrategy::SingleInstruction),
            "zero-shot-only" | "zs" | "p_zs" => Ok(PromptStrategy::ZeroShotOnly),
            "single-and-zero" | "si+zs" | "p_si+zs" => Ok(PromptStrategy::SingleAndZero),
            _ => Err(Error::Config(format!("unknown prompt strategy `{s}`"))),
        }
    }
}

impl fmt::Display for PromptStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}
