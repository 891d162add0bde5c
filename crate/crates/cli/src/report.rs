use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use mgmd::io::{read_json, sha256_hex, write_json};
use mgmd::train::{read_metrics_csv, TrainingLog};
use mgmd::{Error, Result};
use serde::{Deserialize, Serialize};

use crate::commands::{ModalityRow, OverlayEntry};
use crate::config::ExperimentConfig;
use crate::workspace::Run;

pub const MODEL_COLUMNS: [&str; 4] = ["Model", "Training Time (s)", "Accuracy", "F1"];

/// A rendered table and the raw file its numbers come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportTable {
    pub name: String,
    pub title: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
    pub sources: Vec<String>,
}

impl ReportTable {
    fn markdown(&self, out: &mut String) {
        let _ = writeln!(out, "## {}\n", self.title);
        let _ = writeln!(out, "| {} |", self.header.join(" | "));
        let _ = writeln!(out, "|{}", "---|".repeat(self.header.len()));
        for row in &self.rows {
            let _ = writeln!(out, "| {} |", row.join(" | "));
        }
        let _ = writeln!(out, "\nSource: {}\n", self.sources.iter().map(|s| format!("`{s}`")).collect::<Vec<_>>().join(", "));
    }

    fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(&self.header)?;
        for row in &self.rows {
            w.write_record(row)?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

fn rel(root: &Path, p: &Path) -> String {
    p.strip_prefix(root).unwrap_or(p).to_string_lossy().replace('\\', "/")
}

/// A CSV file as a table, verbatim.
fn csv_table(root: &Path, path: &Path, name: &str, title: &str) -> Result<Option<ReportTable>> {
    if !path.is_file() {
        return Ok(None);
    }
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.iter().map(String::from).collect();
    let rows = r
        .records()
        .map(|rec| rec.map(|rec| rec.iter().map(String::from).collect()).map_err(Error::from))
        .collect::<Result<Vec<Vec<String>>>>()?;
    Ok(Some(ReportTable {
        name: name.into(),
        title: title.into(),
        header,
        rows,
        sources: vec![rel(root, path)],
    }))
}

/// Model comparison on the in-domain test split, best F1 first.
pub fn model_table(root: &Path, metrics: &Path, dataset: &str) -> Result<ReportTable> {
    let mut rows: Vec<_> = read_metrics_csv(metrics)?
        .into_iter()
        .filter(|r| r.dataset == dataset)
        .collect();
    rows.sort_by(|a, b| b.f1.total_cmp(&a.f1).then_with(|| a.model.cmp(&b.model)));
    let mut sources = vec![rel(root, metrics)];
    let mut out = Vec::new();
    for r in rows {
        let log_path = root.join("checkpoints").join(&r.model).join("training_log.json");
        let time = if log_path.is_file() {
            sources.push(rel(root, &log_path));
            format!("{:.0}", read_json::<TrainingLog>(&log_path)?.wall_time_s)
        } else {
            "-".into()
        };
        out.push(vec![r.model, time, format!("{:.3}", r.accuracy), format!("{:.3}", r.f1)]);
    }
    Ok(ReportTable {
        name: "models".into(),
        title: format!("Model comparison ({dataset} test split)"),
        header: MODEL_COLUMNS.iter().map(|s| s.to_string()).collect(),
        rows: out,
        sources,
    })
}

/// Audio, lyrics and fused heads side by side.
fn modality_table(root: &Path, path: &Path) -> Result<Option<ReportTable>> {
    if !path.is_file() {
        return Ok(None);
    }
    let mut r = csv::Reader::from_path(path)?;
    let mut rows = Vec::new();
    for rec in r.deserialize() {
        let m: ModalityRow = rec?;
        rows.push(vec![m.modality, format!("{:.3}", m.accuracy), format!("{:.3}", m.f1)]);
    }
    Ok(Some(ReportTable {
        name: "multimodal".into(),
        title: "Audio, lyrics and fused models".into(),
        header: vec!["Model".into(), "accuracy".into(), "F1".into()],
        rows,
        sources: vec![rel(root, path)],
    }))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportBundle {
    pub run_id: String,
    pub config_hash: String,
    pub tables: Vec<ReportTable>,
    pub figures: Vec<String>,
    /// Every raw file the report read, with its digest.
    pub inputs: Vec<(String, String)>,
}

/// Collects whatever the earlier commands produced into `report/`.
pub fn emit_report(cfg: &ExperimentConfig, run: &mut Run) -> Result<ReportBundle> {
    let root = run.layout.root.clone();
    let metrics = run.layout.metrics();
    if !metrics.is_file() {
        return Err(Error::MissingArtifact(format!(
            "{} (run `evaluate` before `report`)",
            metrics.display()
        )));
    }
    let mut tables = vec![model_table(&root, &metrics, &cfg.dataset.main.name)?];
    let optional: [(PathBuf, &str, &str); 3] = [
        (root.join("metrics/out_of_domain.csv"), "out_of_domain", "Out-of-domain performance"),
        (root.join("fidelity/single.csv"), "fidelity_single", "Fidelity with single XAI techniques"),
        (root.join("fidelity/multi.csv"), "fidelity_multi", "Fidelity with multiple XAI techniques"),
    ];
    tables.extend(modality_table(&root, &root.join("metrics/multimodal.csv"))?);
    for (path, name, title) in &optional {
        if let Some(mut t) = csv_table(&root, path, name, title)? {
            let raw = match *name {
                "fidelity_single" => Some("fidelity/single_samples.jsonl"),
                "fidelity_multi" => Some("fidelity/multi_log.jsonl"),
                _ => None,
            };
            if let Some(raw) = raw.filter(|r| root.join(r).is_file()) {
                t.sources.push(raw.into());
            }
            tables.push(t);
        }
    }

    let mut figures = Vec::new();
    if root.join("roc/roc.svg").is_file() {
        figures.push("roc/roc.svg".to_string());
    }
    let index = root.join("overlays/index.json");
    if index.is_file() {
        let entries: Vec<OverlayEntry> = read_json(&index)?;
        figures.extend(entries.into_iter().map(|e| e.svg));
    }

    let mut inputs = Vec::new();
    let mut seen = std::collections::BTreeSet::new();
    for t in &tables {
        for s in &t.sources {
            if seen.insert(s.clone()) {
                let bytes = std::fs::read(root.join(s)).map_err(|e| Error::io(root.join(s), e))?;
                inputs.push((s.clone(), sha256_hex(&bytes)));
            }
        }
    }

    let dir = run.layout.dir("report");
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let mut md = String::new();
    let _ = writeln!(md, "# Experiment report\n");
    let _ = writeln!(md, "Run `{}`, config `{}`, seed {}.\n", cfg.run_id(), run.config_hash, cfg.seed);
    for t in &tables {
        t.markdown(&mut md);
        let path = dir.join(format!("{}.csv", t.name));
        t.write_csv(&path)?;
        run.record(&path, None)?;
    }
    if !figures.is_empty() {
        let _ = writeln!(md, "## Figures\n");
        for f in &figures {
            let _ = writeln!(md, "- [{f}](../{f})");
        }
        md.push('\n');
    }
    let bundle = ReportBundle {
        run_id: cfg.run_id(),
        config_hash: run.config_hash.clone(),
        tables,
        figures,
        inputs,
    };
    let md_path = dir.join("summary.md");
    std::fs::write(&md_path, md).map_err(|e| Error::io(&md_path, e))?;
    run.record(&md_path, None)?;
    let json_path = dir.join("summary.json");
    write_json(&json_path, &bundle)?;
    run.record(&json_path, None)?;
    Ok(bundle)
}
