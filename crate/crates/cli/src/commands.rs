//! The five commands. Each writes its outputs plus a resolved-config
//! snapshot and returns a summary for callers that drive it as a library.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use gkg_core::corpus::{assemble_from_manifest_file, toy::generate_toy_corpus};
use gkg_core::harness::{
    ablation_prompts, evaluate, ood_report, stage_comparison, CheckpointGenerator, OOD_TITLE,
};
use gkg_core::metrics::predictions_to_jsonl;
use gkg_core::trainer::{
    run_curriculum_with, sweep_eta, sweep_order, sweep_scale, train_and_evaluate, SweepCell,
};
use gkg_core::{Checkpoint, Corpus, GraphFamily, MetricReport, PromptStrategy};
use serde::Serialize;

use crate::config::{RunConfig, ToySettings};
use crate::{ReportKind, SweepKind, UsageError};

pub const CORPUS_INDEX: &str = "corpus.json";
pub const BASE_DIR: &str = "base";

/// Print to stdout, ignoring a closed pipe.
fn emit(text: impl AsRef<str>) {
    use std::io::Write as _;
    let _ = std::io::stdout().write_all(text.as_ref().as_bytes());
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).with_context(|| parent.display().to_string())?;
    }
    fs::write(path, contents).with_context(|| path.display().to_string())
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).context("serializing report")?;
    text.push('\n');
    write(path, text)
}

/// Build the corpus from the configured manifest or toy settings.
pub fn build_corpus(config: &RunConfig, strategy: PromptStrategy) -> Result<Corpus> {
    if let Some(manifest) = &config.manifest {
        return Ok(assemble_from_manifest_file(manifest, strategy)?);
    }
    if let Some(toy) = &config.toy {
        return Ok(generate_toy_corpus(&toy.sizes(), toy.seed).assemble(strategy)?);
    }
    Err(UsageError("no corpus source: set `manifest` or `[toy]` in the config, or pass --manifest / --toy".into()).into())
}

pub fn load_corpus(config: &RunConfig) -> Result<Corpus> {
    let dir = config.corpus_dir();
    if !dir.join(CORPUS_INDEX).is_file() {
        return Err(UsageError(format!("no corpus at {}; run `gkg ingest` first", dir.display())).into());
    }
    let corpus = Corpus::read(dir)?;
    if corpus.strategy != config.strategy {
        return Err(UsageError(format!(
            "corpus at {} was built with strategy `{}`, config asks for `{}`",
            dir.display(),
            corpus.strategy,
            config.strategy
        ))
        .into());
    }
    Ok(corpus)
}

fn load_checkpoint(dir: &Path) -> Result<Checkpoint> {
    if !dir.is_dir() {
        return Err(UsageError(format!("no checkpoint at {}", dir.display())).into());
    }
    Ok(Checkpoint::load(dir)?)
}

#[derive(Debug, Clone, Serialize)]
pub struct IngestSummary {
    pub corpus_hash: String,
    pub stats: String,
}

pub fn ingest(mut config: RunConfig, manifest: Option<&Path>, toy: bool) -> Result<IngestSummary> {
    if let Some(m) = manifest {
        config.manifest = Some(std::path::absolute(m).context("manifest path")?);
        config.toy = None;
    }
    if toy {
        config.toy.get_or_insert_with(ToySettings::default);
        config.manifest = None;
    }
    let corpus = build_corpus(&config, config.strategy)?;
    let dir = config.corpus_dir();
    corpus.write(dir)?;
    if let Some(t) = &config.toy {
        generate_toy_corpus(&t.sizes(), t.seed).write(&dir.join("source"))?;
    }
    config.write_snapshot(dir)?;
    let summary = IngestSummary {
        corpus_hash: corpus.content_hash(),
        stats: corpus.render_stats(),
    };
    emit(format!("{}\n", summary.stats));
    emit(format!("corpus {} -> {}\n", summary.corpus_hash, dir.display()));
    Ok(summary)
}

#[derive(Debug, Clone, Serialize)]
pub struct StageEntry {
    pub label: String,
    pub hash: String,
    pub parent_hash: Option<String>,
    pub steps: usize,
    pub first_loss: Option<f64>,
    pub last_loss: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainSummary {
    pub order: String,
    pub corpus_hash: String,
    pub base_hash: String,
    pub stages: Vec<StageEntry>,
    pub handoff_max_diff: f64,
}

impl TrainSummary {
    pub fn final_hash(&self) -> &str {
        self.stages.last().map_or(&self.base_hash, |s| &s.hash)
    }
}

/// Stage checkpoints are saved as soon as each stage finishes, so a failure
/// later in the run leaves the earlier ones in place.
pub fn train(config: &RunConfig) -> Result<TrainSummary> {
    let corpus = load_corpus(config)?;
    let dir = config.checkpoint_dir();
    config.write_snapshot(dir)?;
    let base = Checkpoint::base(&config.model, config.seed)?;
    let base_hash = base.save(&dir.join(BASE_DIR))?;
    emit(format!("base {base_hash}\n"));
    let mut stages = Vec::new();
    let run = run_curriculum_with(&base, &config.plan, &corpus, &config.train, |ckpt, log| {
        let hash = ckpt.save(&dir.join(&ckpt.stage_label))?;
        let path = dir.join("logs").join(format!("{}.jsonl", ckpt.stage_label));
        fs::create_dir_all(dir.join("logs")).map_err(|e| gkg_core::Error::Io {
            path: dir.join("logs"),
            source: e,
        })?;
        fs::write(&path, log.to_jsonl()).map_err(|e| gkg_core::Error::Io { path, source: e })?;
        emit(format!(
            "{} {hash} steps={} loss {:.4} -> {:.4} ({:.1}s)\n",
            ckpt.stage_label,
            log.steps.len(),
            log.first_loss().unwrap_or(f64::NAN),
            log.last_loss().unwrap_or(f64::NAN),
            log.seconds
        ));
        stages.push(StageEntry {
            label: ckpt.stage_label.clone(),
            hash,
            parent_hash: ckpt.parent_hash.clone(),
            steps: log.steps.len(),
            first_loss: log.first_loss(),
            last_loss: log.last_loss(),
        });
        Ok(())
    })?;
    let summary = TrainSummary {
        order: config.plan.order_label(),
        corpus_hash: corpus.content_hash(),
        base_hash,
        stages,
        handoff_max_diff: run.handoff_max_diff,
    };
    write_json(&dir.join("chain.json"), &summary)?;
    Ok(summary)
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalSummary {
    pub checkpoint: String,
    pub checkpoint_hash: String,
    pub corpus_hash: String,
    pub strategy: PromptStrategy,
    pub report: MetricReport,
    pub first_line_report: MetricReport,
    pub ood_report: Option<MetricReport>,
    #[serde(skip)]
    pub dir: PathBuf,
}

/// Default checkpoint: the last stage of the plan.
pub fn default_checkpoint(config: &RunConfig) -> PathBuf {
    let label = config.plan.stages.last().map_or(BASE_DIR, |s| s.label.as_str());
    config.checkpoint_dir().join(label)
}

pub fn eval(config: &RunConfig, checkpoint: Option<&Path>) -> Result<EvalSummary> {
    let ckpt_dir = checkpoint.map_or_else(|| default_checkpoint(config), Path::to_path_buf);
    let ckpt = load_checkpoint(&ckpt_dir)?;
    let corpus = load_corpus(config)?;
    let run = evaluate(&mut CheckpointGenerator::new(&ckpt), &corpus, &config.eval)?;
    let ood = ood_report(&run).ok();
    let dir = config.report_dir().join(&ckpt.stage_label);
    config.write_snapshot(&dir)?;
    write(&dir.join("predictions.jsonl"), predictions_to_jsonl(&run.predictions))?;

    let mut md = run.report.to_markdown(&format!("{} ({})", ckpt.stage_label, run.strategy));
    if let Some(o) = &ood {
        md.push('\n');
        md.push_str(&o.to_markdown(OOD_TITLE));
    }
    let _ = writeln!(
        md,
        "\nFirst-line variant (predictions cut at the first line break): {:.4}",
        run.first_line_report.overall
    );
    write(&dir.join("report.md"), &md)?;

    let summary = EvalSummary {
        checkpoint: ckpt.stage_label.clone(),
        checkpoint_hash: run.checkpoint_hash,
        corpus_hash: corpus.content_hash(),
        strategy: run.strategy,
        report: run.report,
        first_line_report: run.first_line_report,
        ood_report: ood,
        dir,
    };
    write_json(&summary.dir.join("report.json"), &summary)?;
    let seconds: f64 = run.timing.values().sum();
    emit(format!(
        "{} overall {:.4} ({} predictions, {seconds:.1}s) -> {}\n",
        summary.checkpoint,
        summary.report.overall,
        run.predictions.len(),
        summary.dir.display()
    ));
    Ok(summary)
}

fn family_cells(report: &MetricReport) -> String {
    GraphFamily::ALL
        .iter()
        .map(|f| report.per_graph.get(f).map_or(String::new(), |v| format!("{v:.4}")))
        .collect::<Vec<_>>()
        .join(",")
}

fn family_header() -> String {
    GraphFamily::ALL.map(GraphFamily::as_str).join(",")
}

/// One row per stage order.
pub fn order_csv(cells: &[SweepCell]) -> String {
    let mut out = format!("order,{},overall,final_hash\n", family_header());
    for c in cells {
        let _ = writeln!(out, "{},{},{:.4},{}", c.key, family_cells(&c.report), c.report.overall, c.final_hash);
    }
    out
}

/// One column per data fraction, one row per score.
pub fn scale_csv(fractions: &[f64], cells: &[SweepCell]) -> String {
    let mut out = String::from("metric");
    for p in fractions {
        let _ = write!(out, ",{}%", (p * 100.0).round());
    }
    out.push('\n');
    let mut row = |name: &str, get: &dyn Fn(&MetricReport) -> Option<f64>| {
        out.push_str(name);
        for c in cells {
            let _ = write!(out, ",{}", get(&c.report).map_or(String::new(), |v| format!("{v:.4}")));
        }
        out.push('\n');
    };
    for f in GraphFamily::ALL {
        row(f.as_str(), &|r| r.per_graph.get(&f).copied());
    }
    row("overall", &|r| Some(r.overall));
    out
}

#[derive(Debug, Clone)]
pub struct SweepSummary {
    pub dir: PathBuf,
    pub cells: Vec<SweepCell>,
    pub csv: String,
}

pub fn sweep(config: &RunConfig, kind: SweepKind) -> Result<SweepSummary> {
    let corpus = load_corpus(config)?;
    let base = load_checkpoint(&config.checkpoint_dir().join(BASE_DIR))?;
    if base.config() != &config.model {
        return Err(UsageError("the base checkpoint was built with a different model config".into()).into());
    }
    let (train, eval) = (&config.train, &config.eval);
    let name = match kind {
        SweepKind::Order => "order",
        SweepKind::Scale => "scale",
        SweepKind::Eta => "eta",
    };
    let dir = config.report_dir().join("sweeps").join(name);
    config.write_snapshot(&dir)?;
    let (cells, csv) = match kind {
        SweepKind::Order => {
            let cells = sweep_order(&base, &corpus, train, eval)?;
            let csv = order_csv(&cells);
            (cells, csv)
        }
        SweepKind::Scale => {
            let fractions = &config.sweep.fractions;
            let cells = sweep_scale(&base, &corpus, fractions, train, eval)?;
            let csv = scale_csv(fractions, &cells);
            (cells, csv)
        }
        SweepKind::Eta => {
            let table = sweep_eta(&base, &corpus, &config.sweep.grid, train, eval)?;
            write_json(&dir.join("eta.json"), &table)?;
            (Vec::new(), table.to_csv())
        }
    };
    write(&dir.join(format!("{name}.csv")), &csv)?;
    if !cells.is_empty() {
        write_json(&dir.join("cells.json"), &cells)?;
    }
    emit(&csv);
    Ok(SweepSummary { dir, cells, csv })
}

pub fn report(config: &RunConfig, kind: ReportKind) -> Result<PathBuf> {
    let out = config.report_dir();
    match kind {
        ReportKind::Stages => {
            let corpus = load_corpus(config)?;
            let mut dirs = vec![config.checkpoint_dir().join(BASE_DIR)];
            dirs.extend(config.plan.stages.iter().map(|s| config.checkpoint_dir().join(&s.label)));
            let ckpts = dirs.iter().map(|d| load_checkpoint(d)).collect::<Result<Vec<_>>>()?;
            let refs: Vec<&Checkpoint> = ckpts.iter().collect();
            let table = stage_comparison(&refs, |c| {
                Ok(evaluate(&mut CheckpointGenerator::new(c), &corpus, &config.eval)?.report)
            })?;
            let dir = out.join("stages");
            config.write_snapshot(&dir)?;
            write(&dir.join("stages.csv"), table.to_csv())?;
            write_json(&dir.join("stages.json"), &table)?;
            for w in &table.warnings {
                eprintln!("warning: {w}");
            }
            emit(table.to_csv());
            Ok(dir)
        }
        ReportKind::Ablation => {
            let base = Checkpoint::base(&config.model, config.seed)?;
            let table = ablation_prompts(&PromptStrategy::ALL, |s| {
                let corpus = build_corpus(config, s).map_err(|e| gkg_core::Error::Config(format!("{e:#}")))?;
                let (_, run) = train_and_evaluate(&base, &config.plan, &corpus, &config.train, &config.eval)?;
                Ok(run.report)
            })?;
            let dir = out.join("ablation");
            config.write_snapshot(&dir)?;
            write(&dir.join("ablation.csv"), table.to_csv())?;
            write(&dir.join("ablation.md"), table.to_markdown())?;
            write_json(&dir.join("ablation.json"), &table)?;
            emit(table.to_markdown());
            Ok(dir)
        }
    }
}
