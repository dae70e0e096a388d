use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::f1::F1Counts;
use super::parse::parse_structured;
use super::rouge::rouge_l;
use crate::corpus::{DatasetKey, GraphFamily, MetricKind, TaskDescriptor};
use crate::error::{Error, Result};

/// One decoded test output paired with its gold answer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub record_id: String,
    pub gold: String,
    pub predicted: String,
}

/// Score of one dataset plus the bookkeeping needed for reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetScore {
    pub family: GraphFamily,
    pub task_code: String,
    pub dataset: String,
    pub metric: MetricKind,
    pub held_out: bool,
    pub score: f64,
    pub count: usize,
    /// Unparseable predicted fragments (F1 tasks only).
    #[serde(default)]
    pub dropped: usize,
}

impl DatasetScore {
    pub fn key(&self) -> DatasetKey {
        DatasetKey::new(&self.task_code, &self.dataset)
    }
}

/// Score all predictions of one dataset with its metric.
pub fn score_dataset(preds: &[PredictionRecord], descriptor: &TaskDescriptor) -> Result<DatasetScore> {
    if preds.is_empty() {
        return Err(Error::Eval(format!(
            "no predictions for dataset {}",
            descriptor.key()
        )));
    }
    let key = descriptor.key();
    if let Some(stray) = preds
        .iter()
        .find(|p| DatasetKey::from_record_id(&p.record_id).as_ref() != Some(&key))
    {
        return Err(Error::Eval(format!(
            "prediction {} does not belong to dataset {key}",
            stray.record_id
        )));
    }
    let (score, dropped) = match descriptor.metric {
        MetricKind::MicroF1 => {
            let mut total = F1Counts::default();
            let mut dropped = 0;
            for p in preds {
                let gold = parse_structured(&p.gold, &descriptor.task_code);
                let pred = parse_structured(&p.predicted, &descriptor.task_code);
                dropped += pred.dropped;
                total = total + F1Counts::of(&gold, &pred);
            }
            (total.f1(), dropped)
        }
        MetricKind::RougeL => {
            let sum: f64 = preds.iter().map(|p| rouge_l(&p.gold, &p.predicted)).sum();
            (sum / preds.len() as f64, 0)
        }
    };
    Ok(DatasetScore {
        family: descriptor.family,
        task_code: descriptor.task_code.clone(),
        dataset: descriptor.dataset.clone(),
        metric: descriptor.metric,
        held_out: descriptor.held_out,
        score,
        count: preds.len(),
        dropped,
    })
}

/// Dataset scores with unweighted per-family and overall means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub per_dataset: BTreeMap<String, DatasetScore>,
    pub per_graph: BTreeMap<GraphFamily, f64>,
    pub overall: f64,
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    sum / n as f64
}

/// Build a report from dataset scores. Means are unweighted over datasets
/// and summed in key order, so insertion order does not matter.
pub fn aggregate(scores: impl IntoIterator<Item = DatasetScore>) -> Result<MetricReport> {
    let mut per_dataset = BTreeMap::new();
    for s in scores {
        let key = s.key().to_string();
        if per_dataset.insert(key.clone(), s).is_some() {
            return Err(Error::Eval(format!("dataset {key} scored twice")));
        }
    }
    if per_dataset.is_empty() {
        return Err(Error::Eval("cannot aggregate zero dataset scores".into()));
    }
    Ok(report_from(per_dataset))
}

fn report_from(per_dataset: BTreeMap<String, DatasetScore>) -> MetricReport {
    let mut per_graph = BTreeMap::new();
    for family in GraphFamily::ALL {
        let mut scores = per_dataset.values().filter(|s| s.family == family).peekable();
        if scores.peek().is_some() {
            per_graph.insert(family, mean(scores.map(|s| s.score)));
        }
    }
    let overall = mean(per_dataset.values().map(|s| s.score));
    MetricReport {
        per_dataset,
        per_graph,
        overall,
    }
}

impl MetricReport {
    /// Restrict to datasets matching `keep`, recomputing the means.
    pub fn filtered(&self, keep: impl Fn(&DatasetScore) -> bool) -> Option<MetricReport> {
        let per_dataset: BTreeMap<_, _> = self
            .per_dataset
            .iter()
            .filter(|(_, s)| keep(s))
            .map(|(k, s)| (k.clone(), s.clone()))
            .collect();
        (!per_dataset.is_empty()).then(|| report_from(per_dataset))
    }

    pub fn family(&self, family: GraphFamily) -> Option<f64> {
        self.per_graph.get(&family).copied()
    }

    /// Recompute the means from `per_dataset` and compare bit-for-bit.
    pub fn is_consistent(&self) -> bool {
        let again = report_from(self.per_dataset.clone());
        again.per_graph == self.per_graph && again.overall.to_bits() == self.overall.to_bits()
    }

    /// Markdown table: rows grouped by graph family, held-out datasets
    /// starred, ROUGE-L tasks daggered, closed by the overall average.
    pub fn to_markdown(&self, title: &str) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "### {title}\n");
        let _ = writeln!(out, "| Graphs | Tasks | Datasets | Score | % |");
        let _ = writeln!(out, "|---|---|---|---:|---:|");
        for family in GraphFamily::ALL {
            let mut first = true;
            for s in self.per_dataset.values().filter(|s| s.family == family) {
                let graph = if first { family.as_str() } else { "" };
                first = false;
                let dagger = if s.metric == MetricKind::RougeL { "†" } else { "" };
                let star = if s.held_out { "*" } else { "" };
                let _ = writeln!(
                    out,
                    "| {graph} | {}{dagger} | {}{star} | {:.4} | {:.0} |",
                    s.task_code,
                    s.dataset,
                    s.score,
                    s.score * 100.0
                );
            }
        }
        let _ = writeln!(
            out,
            "| **Average Performance** | | | {:.4} | {:.0} |",
            self.overall,
            self.overall * 100.0
        );
        let _ = writeln!(out);
        let _ = writeln!(out, "| Graph average | Score |");
        let _ = writeln!(out, "|---|---:|");
        for (family, score) in &self.per_graph {
            let _ = writeln!(out, "| {family} | {score:.4} |");
        }
        let _ = writeln!(
            out,
            "\nHeld-out (OOD) datasets are starred by *. † marks tasks evaluated by ROUGE-L; all other tasks use micro-F1."
        );
        out
    }
}

pub fn predictions_to_jsonl(preds: &[PredictionRecord]) -> String {
    let mut out = String::new();
    for p in preds {
        out.push_str(&serde_json::to_string(p).expect("predictions serialize"));
        out.push('\n');
    }
    out
}

pub fn parse_predictions(text: &str) -> Result<Vec<PredictionRecord>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::json(format!("prediction line {}", i + 1), e))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn score(family: GraphFamily, task: &str, ds: &str, v: f64) -> DatasetScore {
        DatasetScore {
            family,
            task_code: task.into(),
            dataset: ds.into(),
            metric: MetricKind::for_task(task),
            held_out: false,
            score: v,
            count: 1,
            dropped: 0,
        }
    }

    fn pred(id: &str, gold: &str, predicted: &str) -> PredictionRecord {
        PredictionRecord {
            record_id: id.into(),
            gold: gold.into(),
            predicted: predicted.into(),
        }
    }

    #[test]
    fn ag_uses_rouge() {
        let d = TaskDescriptor::new(GraphFamily::Ckg, "AG", "CNNDM");
        let preds = [pred("AG.CNNDM.0", "the cat sat on the mat", "the cat on mat")];
        let s = score_dataset(&preds, &d).unwrap();
        assert_eq!(s.metric, MetricKind::RougeL);
        assert!((s.score - 0.8).abs() < 1e-12);
    }

    #[test]
    fn perfect_sre() {
        let d = TaskDescriptor::new(GraphFamily::Kg, "SRE", "NYT");
        let preds = [
            pred("SRE.NYT.0", "<a, r, b>", "<a, r, b>"),
            pred("SRE.NYT.1", "<c, r, d>; <e, r, f>", "<e, r, f>; <c, r, d>"),
        ];
        assert_eq!(score_dataset(&preds, &d).unwrap().score, 1.0);
    }

    #[test]
    fn etre_half_correct() {
        // TP = 2, FP = 2, FN = 2 over four single-label pairs
        let d = TaskDescriptor::new(GraphFamily::Ekg, "ETRE", "MATRES");
        let preds = [
            pred("ETRE.MATRES.0", "BEFORE", "BEFORE"),
            pred("ETRE.MATRES.1", "AFTER", "BEFORE"),
            pred("ETRE.MATRES.2", "AFTER", "after"),
            pred("ETRE.MATRES.3", "BEFORE", "AFTER"),
        ];
        assert_eq!(score_dataset(&preds, &d).unwrap().score, 0.5);
    }

    #[test]
    fn score_dataset_errors() {
        let d = TaskDescriptor::new(GraphFamily::Kg, "SRE", "NYT");
        assert!(score_dataset(&[], &d).is_err());
        let mixed = [pred("SRE.NYT.0", "x", "x"), pred("SRE.Other.0", "x", "x")];
        assert!(score_dataset(&mixed, &d).is_err());
    }

    #[test]
    fn family_and_overall_means() {
        let r = aggregate([
            score(GraphFamily::Kg, "SRE", "A", 1.0),
            score(GraphFamily::Kg, "SRE", "B", 0.0),
        ])
        .unwrap();
        assert_eq!(r.family(GraphFamily::Kg), Some(0.5));

        let single = aggregate([score(GraphFamily::Ekg, "ETRE", "A", 0.37)]).unwrap();
        assert_eq!(single.overall, 0.37);
    }

    #[test]
    fn overall_over_three_families() {
        let r = aggregate([
            score(GraphFamily::Kg, "SRE", "A", 0.1),
            score(GraphFamily::Kg, "SRE", "B", 0.3),
            score(GraphFamily::Ekg, "ETRE", "A", 0.3),
            score(GraphFamily::Ekg, "ETRE", "B", 0.5),
            score(GraphFamily::Ckg, "LI", "A", 0.5),
            score(GraphFamily::Ckg, "LI", "B", 0.7),
        ])
        .unwrap();
        assert!((r.family(GraphFamily::Kg).unwrap() - 0.2).abs() < 1e-12);
        assert!((r.family(GraphFamily::Ekg).unwrap() - 0.4).abs() < 1e-12);
        assert!((r.family(GraphFamily::Ckg).unwrap() - 0.6).abs() < 1e-12);
        assert!((r.overall - 0.4).abs() < 1e-12);
        assert!(r.is_consistent());
    }

    #[test]
    fn aggregate_rejects_empty_and_duplicates() {
        assert!(aggregate(Vec::new()).is_err());
        let s = score(GraphFamily::Kg, "SRE", "A", 1.0);
        assert!(aggregate([s.clone(), s]).is_err());
    }

    #[test]
    fn markdown_marks_ood_and_rouge() {
        let mut ood = score(GraphFamily::Ekg, "ETRE", "TCR", 0.25);
        ood.held_out = true;
        let r = aggregate([
            score(GraphFamily::Kg, "SRE", "NYT", 0.8),
            ood,
            score(GraphFamily::Ckg, "AG", "XSum", 0.4),
        ])
        .unwrap();
        let md = r.to_markdown("GKG-LLM");
        assert!(md.contains("| TCR* |"));
        assert!(md.contains("| AG† |"));
        assert!(md.contains("Average Performance"));
    }

    #[test]
    fn report_json_round_trip() {
        let r = aggregate([score(GraphFamily::Counter, "NLG", "WebNLG", 0.85)]).unwrap();
        let text = serde_json::to_string(&r).unwrap();
        let back: MetricReport = serde_json::from_str(&text).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn predictions_jsonl_round_trip() {
        let preds = vec![pred("SRE.NYT.0", "<a, r, b>", "<a, r, b>\nextra")];
        assert_eq!(parse_predictions(&predictions_to_jsonl(&preds)).unwrap(), preds);
    }
}
