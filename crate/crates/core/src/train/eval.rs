use std::path::Path;
use std::time::Instant;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::metrics::{compute_metrics, Metrics};
use super::roc::{compute_roc_auc, RocCurve};
use crate::dataset::{DatasetManifest, Label, LabeledInputs, MelCache};
use crate::error::{Error, Result};
use crate::models::{predict_proba, Classifier};

/// Per-sample predictions on one dataset plus the resulting metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub model: String,
    pub dataset: String,
    pub metrics: Metrics,
    /// Inference wall time.
    pub wall_time_s: f64,
    pub ids: Vec<String>,
    pub labels: Vec<Label>,
    /// Probability of the positive class.
    pub scores: Vec<f64>,
    pub predictions: Vec<Label>,
}

impl Evaluation {
    pub fn roc(&self) -> Result<RocCurve> {
        let positive: Vec<bool> = self.labels.iter().map(|&l| l == Label::POSITIVE).collect();
        compute_roc_auc(&positive, &self.scores)
    }
}

pub fn evaluate(model: &Classifier, data: &LabeledInputs, dataset: &str) -> Result<Evaluation> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let start = Instant::now();
    let refs: Vec<&Array2<f32>> = data.inputs.iter().collect();
    let probs = predict_proba(model, &refs)?;
    let pos = Label::POSITIVE.index();
    let predictions: Vec<Label> = probs
        .iter()
        .map(|p| Label::from_index(if p[1] > p[0] { 1 } else { 0 }))
        .collect();
    let metrics = compute_metrics(&data.labels, &predictions, Label::POSITIVE)?;
    Ok(Evaluation {
        model: model.architecture().to_string(),
        dataset: dataset.to_string(),
        metrics,
        wall_time_s: start.elapsed().as_secs_f64(),
        ids: data.ids.clone(),
        labels: data.labels.clone(),
        scores: probs.iter().map(|p| p[pos] as f64).collect(),
        predictions,
    })
}

/// Evaluates `model` on each named manifest, loading inputs through the same
/// feature cache used for training.
pub fn run_out_of_domain_eval(
    model: &Classifier,
    manifests: &[(String, DatasetManifest)],
    cache: &MelCache,
) -> Result<Vec<Evaluation>> {
    if manifests.is_empty() {
        return Err(Error::EmptyDataset);
    }
    manifests
        .iter()
        .map(|(name, manifest)| {
            if manifest.is_empty() {
                return Err(Error::EmptyDataset);
            }
            evaluate(model, &cache.load_manifest(manifest)?, name)
        })
        .collect()
}

/// Concatenates several labelled sets (pooled "(o)" evaluation).
pub fn pool_sets(sets: &[&LabeledInputs]) -> LabeledInputs {
    let mut out = LabeledInputs::default();
    for set in sets {
        for i in 0..set.len() {
            out.push(set.ids[i].clone(), set.inputs[i].clone(), set.labels[i]);
        }
    }
    out
}

/// One row of the model-comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub model: String,
    pub dataset: String,
    pub accuracy: f64,
    pub f1: f64,
    pub recall: f64,
    pub precision: f64,
    pub n: usize,
    pub wall_time_s: f64,
}

impl MetricsRow {
    pub fn new(model: &str, dataset: &str, m: &Metrics, wall_time_s: f64) -> Self {
        Self {
            model: model.to_string(),
            dataset: dataset.to_string(),
            accuracy: m.accuracy,
            f1: m.f1,
            recall: m.recall,
            precision: m.precision,
            n: m.n,
            wall_time_s,
        }
    }
}

pub fn write_metrics_csv(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    crate::io::ensure_parent(path)?;
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricsRow>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

/// Out-of-domain table row: `Acc(name)` and `F1(name)` per evaluated set.
pub fn domain_table(evals: &[Evaluation]) -> (Vec<String>, Vec<f64>) {
    let mut header = Vec::new();
    let mut values = Vec::new();
    for e in evals {
        header.push(format!("Acc({})", e.dataset));
        values.push(e.metrics.accuracy);
    }
    for e in evals {
        header.push(format!("F1({})", e.dataset));
        values.push(e.metrics.f1);
    }
    (header, values)
}
