use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{FidelityReport, MultiFidelityReport};
use crate::error::{Error, Result};
use crate::io::ensure_parent;

pub const SINGLE_FIDELITY_COLUMNS: [&str; 4] = ["Visualisation", "Accuracy", "F1", "Recall"];
pub const MULTI_FIDELITY_COLUMNS: [&str; 6] = [
    "Combination Size",
    "Avg Mask",
    "Accuracy",
    "p-value",
    "Mask Reduction",
    "Accuracy Change",
];

/// One row of the single-technique table, in percent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SingleFidelityRow {
    pub visualisation: String,
    pub accuracy: f64,
    pub f1: f64,
    pub recall: f64,
}

/// Baseline ("Raw Spectrogram") first, then one row per report.
pub fn single_fidelity_rows(reports: &[FidelityReport]) -> Vec<SingleFidelityRow> {
    let mut rows = Vec::with_capacity(reports.len() + 1);
    if let Some(first) = reports.first() {
        let b = &first.baseline_metrics;
        rows.push(SingleFidelityRow {
            visualisation: "Raw Spectrogram".into(),
            accuracy: 100.0 * b.accuracy,
            f1: 100.0 * b.f1,
            recall: 100.0 * b.recall,
        });
    }
    for r in reports {
        let m = &r.masked_metrics;
        rows.push(SingleFidelityRow {
            visualisation: r.technique.display_name().into(),
            accuracy: 100.0 * m.accuracy,
            f1: 100.0 * m.f1,
            recall: 100.0 * m.recall,
        });
    }
    rows
}

/// One formatted row of the multi-technique table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiFidelityRow {
    pub combination_size: usize,
    pub avg_mask: String,
    pub accuracy: String,
    pub p_value: String,
    pub mask_reduction: String,
    pub accuracy_change: String,
}

fn opt(v: Option<f64>, digits: usize) -> String {
    v.map_or_else(|| "-".to_string(), |v| format!("{v:.digits$}"))
}

pub fn multi_fidelity_rows(report: &MultiFidelityReport) -> Vec<MultiFidelityRow> {
    report
        .rows
        .iter()
        .map(|r| MultiFidelityRow {
            combination_size: r.size,
            avg_mask: format!("{:.2}±{:.2}", r.avg_mask_mean, r.avg_mask_std),
            accuracy: format!("{:.1}±{:.1}", r.accuracy_mean, r.accuracy_std),
            p_value: opt(r.p_value, 3),
            mask_reduction: opt(r.mask_reduction_pct, 1),
            accuracy_change: opt(r.accuracy_change_pct, 1),
        })
        .collect()
}

fn write_csv(path: &Path, header: &[&str], rows: Vec<Vec<String>>) -> Result<()> {
    ensure_parent(path)?;
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_single_fidelity_csv(path: &Path, rows: &[SingleFidelityRow]) -> Result<()> {
    write_csv(
        path,
        &SINGLE_FIDELITY_COLUMNS,
        rows.iter()
            .map(|r| {
                vec![
                    r.visualisation.clone(),
                    format!("{:.1}", r.accuracy),
                    format!("{:.1}", r.f1),
                    format!("{:.1}", r.recall),
                ]
            })
            .collect(),
    )
}

pub fn write_multi_fidelity_csv(path: &Path, rows: &[MultiFidelityRow]) -> Result<()> {
    write_csv(
        path,
        &MULTI_FIDELITY_COLUMNS,
        rows.iter()
            .map(|r| {
                vec![
                    r.combination_size.to_string(),
                    r.avg_mask.clone(),
                    r.accuracy.clone(),
                    r.p_value.clone(),
                    r.mask_reduction.clone(),
                    r.accuracy_change.clone(),
                ]
            })
            .collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::super::SizeRow;
    use super::*;
    use crate::fidelity::MaskPolicy;

    #[test]
    fn multi_csv_columns() {
        let row = |size, mask: f64, acc: f64, p, red, chg| SizeRow {
            size,
            avg_mask_pct: vec![],
            accuracy_pct: vec![],
            avg_mask_mean: mask,
            avg_mask_std: 1.0,
            accuracy_mean: acc,
            accuracy_std: 2.0,
            p_value: p,
            mask_reduction_pct: red,
            accuracy_change_pct: chg,
        };
        let report = MultiFidelityReport {
            techniques: vec![],
            runs: 5,
            policy: MaskPolicy::default(),
            accuracy_definition: String::new(),
            baseline_accuracy_pct: vec![],
            rows: vec![
                row(2, 29.6, 48.6, None, None, None),
                row(3, 10.2, 55.6, Some(0.15), Some(65.5), Some(14.4)),
            ],
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("multi.csv");
        write_multi_fidelity_csv(&path, &multi_fidelity_rows(&report)).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "Combination Size,Avg Mask,Accuracy,p-value,Mask Reduction,Accuracy Change"
        );
        assert_eq!(lines.next().unwrap(), "2,29.60±1.00,48.6±2.0,-,-,-");
        assert_eq!(lines.next().unwrap(), "3,10.20±1.00,55.6±2.0,0.150,65.5,14.4");
    }
}
