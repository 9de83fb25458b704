//! Per-element classification metrics over the three labels.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::proto::Label;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Averages {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    /// Rows are true labels, columns predictions, both in label index order.
    pub confusion: [[u64; 3]; 3],
    pub per_class: BTreeMap<String, ClassMetrics>,
    pub macro_avg: Averages,
    pub weighted_avg: Averages,
    pub accuracy: f64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl ClassificationReport {
    pub fn from_confusion(confusion: [[u64; 3]; 3]) -> Self {
        let mut per = [ClassMetrics { precision: 0.0, recall: 0.0, f1: 0.0, support: 0 }; 3];
        for (c, m) in per.iter_mut().enumerate() {
            let tp = confusion[c][c];
            let predicted: u64 = (0..3).map(|r| confusion[r][c]).sum();
            let support: u64 = confusion[c].iter().sum();
            let precision = ratio(tp, predicted);
            let recall = ratio(tp, support);
            let f1 = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
            *m = ClassMetrics { precision, recall, f1, support };
        }
        let total: u64 = per.iter().map(|m| m.support).sum();
        let mean = |f: fn(&ClassMetrics) -> f64| per.iter().map(f).sum::<f64>() / 3.0;
        let weighted = |f: fn(&ClassMetrics) -> f64| {
            if total == 0 {
                0.0
            } else {
                per.iter().map(|m| f(m) * m.support as f64).sum::<f64>() / total as f64
            }
        };
        let macro_avg = Averages { precision: mean(|m| m.precision), recall: mean(|m| m.recall), f1: mean(|m| m.f1) };
        let weighted_avg =
            Averages { precision: weighted(|m| m.precision), recall: weighted(|m| m.recall), f1: weighted(|m| m.f1) };
        let correct: u64 = (0..3).map(|c| confusion[c][c]).sum();
        let per_class = Label::ALL.iter().map(|l| (l.as_str().to_string(), per[l.index()])).collect();
        Self { confusion, per_class, macro_avg, weighted_avg, accuracy: ratio(correct, total) }
    }

    pub fn class(&self, label: Label) -> &ClassMetrics {
        &self.per_class[label.as_str()]
    }
}

#[derive(Clone, Debug, Default)]
pub struct ConfusionTally {
    counts: [[u64; 3]; 3],
}

impl ConfusionTally {
    pub fn add(&mut self, truth: &[Label], pred: &[Label]) -> Result<()> {
        if truth.len() != pred.len() {
            return Err(Error::Alignment(format!("{} true labels for {} predictions", truth.len(), pred.len())));
        }
        for (t, p) in truth.iter().zip(pred) {
            self.counts[t.index()][p.index()] += 1;
        }
        Ok(())
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn report(&self) -> ClassificationReport {
        ClassificationReport::from_confusion(self.counts)
    }
}

pub fn classification_report(truth: &[Label], pred: &[Label]) -> Result<ClassificationReport> {
    let mut t = ConfusionTally::default();
    t.add(truth, pred)?;
    Ok(t.report())
}
