//! `gkg`: ingest, train, eval, sweep and report commands over one run
//! configuration.

use std::ffi::OsString;
use std::fmt;
use std::path::PathBuf;

use anyhow::Result;
use clap::{Parser, Subcommand, ValueEnum};
use gkg_core::trainer::EtaGrid;
use gkg_core::{CurriculumPlan, PromptStrategy};

pub mod commands;
pub mod config;

pub use config::{Paths, RunConfig, SweepSettings, ToySettings, SNAPSHOT_FILE};

/// Bad input from the user: a missing file, a malformed config, a bad flag.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Debug, Parser)]
#[command(name = "gkg", version, about = "Graph-construction instruction tuning pipeline")]
pub struct Cli {
    /// Run configuration (TOML). Defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Default root for the corpus, checkpoint and report directories.
    #[arg(long, global = true, env = "GKG_HOME")]
    pub home: Option<PathBuf>,

    /// Overrides the base-model seed and the trainer seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    #[arg(long, global = true)]
    pub strategy: Option<PromptStrategy>,

    /// Stage order such as `E-K-C`.
    #[arg(long, global = true)]
    pub stage_order: Option<String>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build the instruction corpus and print per-family counts.
    Ingest {
        #[arg(long, conflicts_with = "toy")]
        manifest: Option<PathBuf>,
        /// Generate the synthetic toy corpus instead of reading a manifest.
        #[arg(long)]
        toy: bool,
    },
    /// Run the curriculum and write the base and stage checkpoints.
    Train,
    /// Decode and score the test splits with one checkpoint.
    Eval {
        /// Checkpoint directory; defaults to the last stage of the plan.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Stage-order, data-scale or learning-rate sweep.
    Sweep {
        kind: SweepKind,
        /// Comma-separated data fractions for the scale sweep.
        #[arg(long, value_delimiter = ',')]
        fractions: Option<Vec<f64>>,
        /// Learning-rate grid, e.g. `eta_a=1e-4,4e-4;lambda=5,10`.
        #[arg(long)]
        grid: Option<EtaGrid>,
    },
    /// Stage comparison or prompt ablation tables.
    Report {
        #[arg(long, value_enum, default_value_t = ReportKind::Stages)]
        kind: ReportKind,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SweepKind {
    Order,
    Scale,
    Eta,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ReportKind {
    Stages,
    Ablation,
}

impl Cli {
    /// Load the config file and apply the command-line overrides.
    pub fn resolve_config(&self) -> Result<RunConfig> {
        let mut config = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(seed) = self.seed {
            config.seed = seed;
            config.train.seed = seed;
        }
        if let Some(s) = self.strategy {
            config.strategy = s;
        }
        if let Some(order) = &self.stage_order {
            config.plan = CurriculumPlan::from_order(order).map_err(|e| UsageError(e.to_string()))?;
        }
        if let Command::Sweep { fractions, grid, .. } = &self.command {
            if let Some(f) = fractions {
                config.sweep.fractions = f.clone();
            }
            if let Some(g) = grid {
                config.sweep.grid = g.clone();
            }
        }
        let home = self.home.clone().unwrap_or_else(|| PathBuf::from("gkg-home"));
        config.resolve(&home)
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    let config = cli.resolve_config()?;
    match &cli.command {
        Command::Ingest { manifest, toy } => commands::ingest(config, manifest.as_deref(), *toy).map(drop),
        Command::Train => commands::train(&config).map(drop),
        Command::Eval { checkpoint } => commands::eval(&config, checkpoint.as_deref()).map(drop),
        Command::Sweep { kind, .. } => commands::sweep(&config, *kind).map(drop),
        Command::Report { kind } => commands::report(&config, *kind).map(drop),
    }
}

/// 2 for usage and configuration errors, 1 for everything else.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    let usage = err.chain().any(|e| {
        e.downcast_ref::<UsageError>().is_some()
            || e.downcast_ref::<gkg_core::Error>().is_some_and(gkg_core::Error::is_usage)
    });
    if usage {
        2
    } else {
        1
    }
}

/// The error chain joined by `: `, skipping causes the previous message
/// already spells out.
pub fn error_message(err: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in err.chain() {
        let text = cause.to_string();
        if !out.contains(&text) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&text);
        }
    }
    out
}

/// The machine-readable error line written to stderr.
pub fn error_json(message: &str, code: i32) -> String {
    serde_json::json!({
        "error": message,
        "kind": if code == 2 { "usage" } else { "internal" },
        "exit_code": code,
    })
    .to_string()
}

/// Parse `args`, run the command and return the process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return 0;
        }
        Err(e) => {
            let text = e.to_string();
            eprintln!("{}", error_json(text.trim_end(), 2));
            return 2;
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            let code = exit_code(&e);
            eprintln!("{}", error_json(&error_message(&e), code));
            code
        }
    }
}
