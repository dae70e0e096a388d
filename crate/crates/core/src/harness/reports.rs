use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::eval::EvalRun;
use crate::corpus::{GraphFamily, PromptStrategy};
use crate::error::{Error, Result};
use crate::metrics::MetricReport;
use crate::model::{lineage_warnings, Checkpoint};

pub const OOD_TITLE: &str = "Average performance on OOD datasets";

/// The report restricted to held-out datasets.
pub fn ood_report(run: &EvalRun) -> Result<MetricReport> {
    run.report
        .filtered(|s| s.held_out)
        .ok_or_else(|| Error::Eval("the run contains no held-out dataset".into()))
}

fn fmt_score(v: f64) -> String {
    format!("{v:.4}")
}

fn fmt_delta(v: f64) -> String {
    format!("{v:+.4}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub strategy: PromptStrategy,
    /// KG, EKG, CKG.
    pub families: [f64; 3],
    /// Mean of the three family columns.
    pub avg: f64,
    /// Row minus the `Full` row, same column order, then the average.
    pub deltas: [f64; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("strategy,label,KG,EKG,CKG,Avg,dKG,dEKG,dCKG,dAvg\n");
        for r in &self.rows {
            let cells: Vec<String> = r
                .families
                .iter()
                .chain([&r.avg])
                .map(|&v| fmt_score(v))
                .chain(r.deltas.iter().map(|&v| fmt_delta(v)))
                .collect();
            let _ = writeln!(out, "{},{},{}", r.strategy, r.strategy.label(), cells.join(","));
        }
        out
    }

    pub fn to_markdown(&self) -> String {
        let mut out = String::from("| Prompt | KG | EKG | CKG | Avg. |\n|---|---:|---:|---:|---:|\n");
        for r in &self.rows {
            let mut line = format!("| {} ", r.strategy.label());
            for (v, d) in r.families.iter().chain([&r.avg]).zip(&r.deltas) {
                if r.strategy == PromptStrategy::Full {
                    let _ = write!(line, "| {} ", fmt_score(*v));
                } else {
                    let _ = write!(line, "| {} ({}) ", fmt_score(*v), fmt_delta(*d));
                }
            }
            let _ = writeln!(out, "{line}|");
        }
        out
    }
}

fn family_columns(report: &MetricReport) -> [f64; 3] {
    GraphFamily::GRAPHS.map(|f| report.family(f).unwrap_or(f64::NAN))
}

/// One row per strategy. `run` rebuilds, trains and evaluates under the
/// given strategy. `Full` must be among `strategies`.
pub fn ablation_prompts(
    strategies: &[PromptStrategy],
    mut run: impl FnMut(PromptStrategy) -> Result<MetricReport>,
) -> Result<AblationTable> {
    if !strategies.contains(&PromptStrategy::Full) {
        return Err(Error::InvalidArgument("ablation needs the Full strategy as baseline".into()));
    }
    let mut scores = BTreeMap::new();
    for &s in strategies {
        if !scores.contains_key(&s.as_str()) {
            let cols = family_columns(&run(s)?);
            scores.insert(s.as_str(), cols);
        }
    }
    let avg = |c: &[f64; 3]| c.iter().sum::<f64>() / 3.0;
    let full = scores[PromptStrategy::Full.as_str()];
    let full_avg = avg(&full);
    let rows = strategies
        .iter()
        .map(|&s| {
            let cols = scores[s.as_str()];
            let a = avg(&cols);
            AblationRow {
                strategy: s,
                families: cols,
                avg: a,
                deltas: [cols[0] - full[0], cols[1] - full[1], cols[2] - full[2], a - full_avg],
            }
        })
        .collect();
    Ok(AblationTable { rows })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRow {
    pub label: String,
    pub checkpoint_hash: String,
    pub per_graph: BTreeMap<GraphFamily, f64>,
    pub overall: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageComparison {
    pub rows: Vec<StageRow>,
    /// Broken parent links between consecutive checkpoints.
    pub warnings: Vec<String>,
}

impl StageComparison {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("checkpoint,hash");
        for f in GraphFamily::ALL {
            let _ = write!(out, ",{f}");
        }
        out.push_str(",overall\n");
        for r in &self.rows {
            let _ = write!(out, "{},{}", r.label, r.checkpoint_hash);
            for f in GraphFamily::ALL {
                let v = r.per_graph.get(&f).map_or(String::new(), |&v| fmt_score(v));
                let _ = write!(out, ",{v}");
            }
            let _ = writeln!(out, ",{}", fmt_score(r.overall));
        }
        out
    }
}

/// Score every checkpoint on every family and check the parent links.
pub fn stage_comparison(
    checkpoints: &[&Checkpoint],
    mut evaluate: impl FnMut(&Checkpoint) -> Result<MetricReport>,
) -> Result<StageComparison> {
    if checkpoints.is_empty() {
        return Err(Error::InvalidArgument("no checkpoints to compare".into()));
    }
    let rows = checkpoints
        .iter()
        .map(|c| {
            let report = evaluate(c)?;
            Ok(StageRow {
                label: c.stage_label.clone(),
                checkpoint_hash: c.content_hash(),
                per_graph: report.per_graph,
                overall: report.overall,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(StageComparison {
        rows,
        warnings: lineage_warnings(checkpoints),
    })
}
