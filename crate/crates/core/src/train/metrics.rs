use serde::{Deserialize, Serialize};

use crate::dataset::Label;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub tn: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Confusion {
    pub fn n(&self) -> usize {
        self.tp + self.tn + self.fp + self.fn_
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub f1: f64,
    pub recall: f64,
    pub precision: f64,
    pub confusion: Confusion,
    pub n: usize,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl Metrics {
    /// Metrics from confusion counts. Any 0/0 ratio (precision, recall, or
    /// f1) is defined as 0.
    pub fn from_confusion(c: Confusion) -> Self {
        let precision = ratio(c.tp, c.tp + c.fp);
        let recall = ratio(c.tp, c.tp + c.fn_);
        // Harmonic mean of precision and recall, written over the counts.
        let f1 = ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn_);
        Self {
            accuracy: ratio(c.tp + c.tn, c.n()),
            f1,
            recall,
            precision,
            confusion: c,
            n: c.n(),
        }
    }
}

pub fn compute_metrics(labels: &[Label], predictions: &[Label], positive: Label) -> Result<Metrics> {
    if labels.len() != predictions.len() {
        return Err(Error::LengthMismatch(labels.len(), predictions.len()));
    }
    if labels.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut c = Confusion::default();
    for (&l, &p) in labels.iter().zip(predictions) {
        match (l == positive, p == positive) {
            (true, true) => c.tp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fp += 1,
            (true, false) => c.fn_ += 1,
        }
    }
    Ok(Metrics::from_confusion(c))
}

#[cfg(test)]
mod tests {
    use super::*;
    use Label::{Human as H, Machine as M};

    #[test]
    fn hand_fixture() {
        let m = Metrics::from_confusion(Confusion {
            tp: 50,
            tn: 40,
            fp: 5,
            fn_: 5,
        });
        assert_eq!(m.accuracy, 0.9);
        assert_eq!(m.precision, 50.0 / 55.0);
        assert_eq!(m.recall, 50.0 / 55.0);
        assert!((m.f1 - 50.0 / 55.0).abs() < 1e-15);
    }

    #[test]
    fn degenerate_cases() {
        let m = compute_metrics(&[H, M, H], &[H, M, H], H).unwrap();
        assert_eq!((m.accuracy, m.f1, m.recall), (1.0, 1.0, 1.0));
        let m = compute_metrics(&[H, M, M], &[M, M, M], H).unwrap();
        assert_eq!((m.recall, m.f1, m.precision), (0.0, 0.0, 0.0));
        assert!(matches!(compute_metrics(&[H], &[], H), Err(Error::LengthMismatch(1, 0))));
    }

    #[test]
    fn confusion_serialises_fn_field() {
        let json = serde_json::to_string(&Confusion::default()).unwrap();
        assert!(json.contains("\"fn\":0"));
    }
}
