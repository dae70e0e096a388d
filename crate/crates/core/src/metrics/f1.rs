use serde::{Deserialize, Serialize};

use super::parse::StructuredItems;
use crate::error::{Error, Result};

/// Pooled true positives, false positives and false negatives.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct F1Counts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl F1Counts {
    pub fn of(gold: &StructuredItems, pred: &StructuredItems) -> Self {
        let tp = gold.intersection_len(pred);
        Self {
            tp,
            fp: pred.len() - tp,
            fn_: gold.len() - tp,
        }
    }

    pub fn f1(&self) -> f64 {
        let denom = 2 * self.tp + self.fp + self.fn_;
        if denom == 0 {
            0.0
        } else {
            (2 * self.tp) as f64 / denom as f64
        }
    }
}

impl std::ops::Add for F1Counts {
    type Output = F1Counts;

    fn add(self, o: F1Counts) -> F1Counts {
        F1Counts {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            fn_: self.fn_ + o.fn_,
        }
    }
}

/// Micro-averaged F1 over `(gold, predicted)` item sets.
pub fn micro_f1(pairs: &[(StructuredItems, StructuredItems)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::InvalidArgument("micro_f1 over an empty pair list".into()));
    }
    let total = pairs
        .iter()
        .map(|(g, p)| F1Counts::of(g, p))
        .fold(F1Counts::default(), |a, b| a + b);
    Ok(total.f1())
}
