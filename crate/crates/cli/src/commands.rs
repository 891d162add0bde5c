use std::path::Path;

use log::info;
use mgmd::dataset::synth::write_wav_fixture;
use mgmd::dataset::{
    assign_splits, build_manifest, featurize_file, load_audio, DatasetManifest, Label, LabeledInputs,
};
use mgmd::fidelity::{
    multi_fidelity_rows, run_multi_fidelity, run_single_fidelity, single_fidelity_rows, write_multi_fidelity_csv,
    write_single_fidelity_csv, MultiFidelityConfig,
};
use mgmd::io::{write_json, write_jsonl};
use mgmd::models::{build_classifier, Classifier, CHECKPOINT_HEADER};
use mgmd::multimodal::{
    embed_audio, embed_lyrics, predict_fusion_label, train_fusion_head, EmbeddingCache, EmbeddingProvider,
    FusionLayout, MelStatsProvider, Modality, ProcessProvider, TrigramProvider,
};
use mgmd::train::{
    compute_metrics, domain_table, evaluate, render_roc_svg, train_classifier, write_metrics_csv, write_roc_csv,
    Evaluation, Metrics, MetricsRow,
};
use mgmd::xai::{encode_png, explain, pick_confident, render_figure_svg, render_overlay, write_heatmap, RenderSize};
use mgmd::{Error, Result};
use serde::{Deserialize, Serialize};

use crate::config::{DatasetSource, ExperimentConfig, ProviderConfig};
use crate::workspace::{file_stem, Run};

fn write_text(run: &mut Run, path: &Path, text: &str, fingerprint: Option<&str>) -> Result<()> {
    mgmd::io::ensure_parent(path)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))?;
    run.record(path, fingerprint)
}

fn source_root(run: &Run, src: &DatasetSource) -> Result<std::path::PathBuf> {
    match (&src.synthetic, &src.root) {
        (Some(spec), _) => {
            let dir = run.layout.data_dir(&src.name);
            if dir.exists() {
                std::fs::remove_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            }
            write_wav_fixture(&dir, spec)?;
            Ok(dir)
        }
        (None, Some(root)) => Ok(root.clone()),
        (None, None) => Err(Error::Config(format!("dataset `{}` has no root", src.name))),
    }
}

/// Builds manifests, the feature cache and the in-domain split.
pub fn prepare(cfg: &ExperimentConfig, run: &mut Run) -> Result<()> {
    for src in cfg.sources() {
        let root = source_root(run, src)?;
        let rules = match (&src.synthetic, src.rules.is_empty()) {
            (Some(spec), true) => spec.label_rules(),
            _ => src.rules.clone(),
        };
        let manifest = build_manifest(&root, &rules)?;
        let path = run.layout.manifest(&src.name);
        manifest.write_jsonl(&path)?;
        run.record(&path, None)?;
        let [human, machine] = manifest.label_counts();
        info!("{}: {} clips ({human} human, {machine} machine)", src.name, manifest.len());

        let cache = run.layout.mel_cache(cfg, &src.name);
        run.timed(&format!("featurize:{}", src.name), |_| {
            for row in &manifest.rows {
                if !cache.contains(&row.id) {
                    cache.store(&featurize_file(Path::new(&row.path), &row.id, &cfg.mel)?)?;
                }
            }
            Ok(())
        })?;

        if src.name == cfg.dataset.main.name {
            let splits = assign_splits(&manifest, cfg.seed)?;
            let path = run.layout.splits(&src.name);
            splits.write(&path)?;
            run.record(&path, None)?;
            info!(
                "splits: {} train, {} val, {} test",
                splits.train.len(),
                splits.val.len(),
                splits.test.len()
            );
        }
    }
    Ok(())
}

fn split_inputs(cfg: &ExperimentConfig, run: &Run, which: &str) -> Result<(DatasetManifest, LabeledInputs)> {
    let name = &cfg.dataset.main.name;
    let manifest = run.layout.read_manifest(name)?;
    let splits = run.layout.read_splits(name)?;
    let ids = match which {
        "train" => &splits.train,
        "val" => &splits.val,
        _ => &splits.test,
    };
    let inputs = run.layout.mel_cache(cfg, name).load_inputs(&manifest, ids)?;
    Ok((manifest, inputs))
}

pub fn load_checkpoint(run: &Run, model: &str) -> Result<Classifier> {
    let dir = run.layout.checkpoint(model);
    if !dir.join(CHECKPOINT_HEADER).is_file() {
        return Err(Error::MissingArtifact(format!(
            "no checkpoint for model `{model}` in {} (run `train` first)",
            dir.display()
        )));
    }
    Classifier::load(&dir)
}

pub fn train(cfg: &ExperimentConfig, run: &mut Run) -> Result<()> {
    let (_, train) = split_inputs(cfg, run, "train")?;
    let (_, val) = split_inputs(cfg, run, "val")?;
    let tc = cfg.train_config();
    for entry in &cfg.models {
        let model = build_classifier(&cfg.classifier_spec(entry), cfg.seed)?;
        let (model, log) = run.timed(&format!("train:{}", entry.name), |_| {
            train_classifier(model, &train, &val, &tc)
        })?;
        let dir = run.layout.checkpoint(&entry.name);
        model.save(&dir)?;
        let fp = model.fingerprint();
        write_json(&dir.join("training_log.json"), &log)?;
        for file in ["checkpoint.json", "model.safetensors", "training_log.json"] {
            if dir.join(file).is_file() {
                run.record(&dir.join(file), Some(&fp))?;
            }
        }
        let best = &log.epochs[log.best_epoch - 1];
        info!(
            "{}: best epoch {} val acc {:.4}, {:.1}s",
            entry.name, log.best_epoch, best.val_accuracy, log.wall_time_s
        );
    }
    Ok(())
}

/// Evaluation artifact as persisted, with provenance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvaluationRecord {
    pub config_hash: String,
    pub model_fingerprint: String,
    #[serde(flatten)]
    pub evaluation: Evaluation,
}

fn write_evaluation(run: &mut Run, model: &Classifier, name: &str, mut e: Evaluation) -> Result<Evaluation> {
    e.model = name.to_string();
    let path = run.layout.evaluation(name, &e.dataset);
    let fp = model.fingerprint();
    let record = EvaluationRecord {
        config_hash: run.config_hash.clone(),
        model_fingerprint: fp.clone(),
        evaluation: e.clone(),
    };
    write_json(&path, &record)?;
    run.record(&path, Some(&fp))?;
    Ok(e)
}

pub fn evaluate_models(cfg: &ExperimentConfig, run: &mut Run) -> Result<()> {
    let main = cfg.dataset.main.name.clone();
    let (_, test) = split_inputs(cfg, run, "test")?;
    let mut ood = Vec::new();
    for src in &cfg.dataset.out_of_domain {
        let manifest = run.layout.read_manifest(&src.name)?;
        ood.push((src.name.clone(), run.layout.mel_cache(cfg, &src.name).load_manifest(&manifest)?));
    }
    let mut rows = Vec::new();
    let mut domain_rows: Vec<(String, Vec<String>, Vec<f64>)> = Vec::new();
    for entry in &cfg.models {
        let model = load_checkpoint(run, &entry.name)?;
        let e = write_evaluation(run, &model, &entry.name, evaluate(&model, &test, &main)?)?;
        info!("{} on {main}: acc {:.4} f1 {:.4}", entry.name, e.metrics.accuracy, e.metrics.f1);
        rows.push(MetricsRow::new(&entry.name, &main, &e.metrics, e.wall_time_s));
        let mut evals = Vec::new();
        for (name, data) in &ood {
            let e = write_evaluation(run, &model, &entry.name, evaluate(&model, data, name)?)?;
            rows.push(MetricsRow::new(&entry.name, name, &e.metrics, e.wall_time_s));
            evals.push(e);
        }
        if !evals.is_empty() {
            let (header, values) = domain_table(&evals);
            domain_rows.push((entry.name.clone(), header, values));
        }
    }
    let path = run.layout.metrics();
    write_metrics_csv(&path, &rows)?;
    run.record(&path, None)?;
    if let Some((_, header, _)) = domain_rows.first() {
        let path = run.layout.dir("metrics").join("out_of_domain.csv");
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(std::iter::once("Model").chain(header.iter().map(String::as_str)))?;
        for (model, _, values) in &domain_rows {
            let mut rec = vec![model.clone()];
            rec.extend(values.iter().map(|v| format!("{v:.4}")));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
        run.record(&path, None)?;
    }
    Ok(())
}

pub fn roc(cfg: &ExperimentConfig, run: &mut Run) -> Result<()> {
    let main = &cfg.dataset.main.name;
    let mut curves = Vec::new();
    let mut auc_rows = String::from("model,auc\n");
    for entry in &cfg.models {
        let path = run.layout.evaluation(&entry.name, main);
        if !path.is_file() {
            return Err(Error::MissingArtifact(format!("{} (run `evaluate` first)", path.display())));
        }
        let record: EvaluationRecord = mgmd::io::read_json(&path)?;
        let curve = record.evaluation.roc()?;
        let out = run.layout.dir("roc").join(format!("{}.csv", entry.name));
        write_roc_csv(&out, &curve)?;
        run.record(&out, Some(&record.model_fingerprint))?;
        auc_rows.push_str(&format!("{},{:.6}\n", entry.name, curve.auc));
        curves.push((entry.name.clone(), curve));
    }
    let svg = render_roc_svg(&curves);
    write_text(run, &run.layout.dir("roc").join("roc.svg"), &svg, None)?;
    write_text(run, &run.layout.dir("roc").join("auc.csv"), &auc_rows, None)
}

fn provider(cfg: &ProviderConfig, modality: Modality) -> Result<Box<dyn EmbeddingProvider>> {
    match (cfg, modality) {
        (ProviderConfig::Builtin(name), Modality::Audio) if name == "mel_stats" => {
            Ok(Box::new(MelStatsProvider::default()))
        }
        (ProviderConfig::Builtin(name), Modality::Text) if name == "trigram" => Ok(Box::new(TrigramProvider::default())),
        (ProviderConfig::Builtin(name), _) => Err(Error::Config(format!("no built-in {modality} provider `{name}`"))),
        (ProviderConfig::Command { command }, _) => Ok(Box::new(ProcessProvider::spawn(command, modality)?)),
    }
}

/// One row of the modality comparison table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModalityRow {
    pub modality: String,
    pub accuracy: f64,
    pub f1: f64,
    pub recall: f64,
    pub precision: f64,
    pub n: usize,
}

pub fn fuse(cfg: &ExperimentConfig, run: &mut Run) -> Result<()> {
    let name = cfg.dataset.main.name.clone();
    let manifest = run.layout.read_manifest(&name)?;
    let splits = run.layout.read_splits(&name)?;
    let audio = provider(&cfg.fusion.audio_provider, Modality::Audio)?;
    let text = provider(&cfg.fusion.text_provider, Modality::Text)?;
    let cache = EmbeddingCache::new(run.layout.embedding_root());

    let embed = |ids: &[String]| -> Result<Vec<(Vec<f32>, Vec<f32>, Label)>> {
        ids.iter()
            .map(|id| {
                let row = manifest
                    .get(id)
                    .ok_or_else(|| Error::Config(format!("split id `{id}` is not in the manifest")))?;
                let key = format!("{name}/{id}");
                let a = cache.get_or_compute(&audio.provider_id(), Modality::Audio, &key, || {
                    let clip = load_audio(Path::new(&row.path), cfg.mel.target_rate)?.fit_duration(cfg.mel.clip_seconds);
                    embed_audio(audio.as_ref(), &clip)
                })?;
                let lyrics = match &row.lyrics_path {
                    Some(p) => Some(std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?),
                    None => None,
                };
                let t = match lyrics.as_deref().map(str::trim).filter(|s| !s.is_empty()) {
                    Some(l) => cache.get_or_compute(&text.provider_id(), Modality::Text, &key, || {
                        embed_lyrics(text.as_ref(), Some(l), cfg.fusion.lyrics_policy, id)
                    })?,
                    None => embed_lyrics(text.as_ref(), None, cfg.fusion.lyrics_policy, id)?,
                };
                Ok((a, t, row.label))
            })
            .collect()
    };
    let train = run.timed("embed:train", |_| embed(&splits.train))?;
    let test = run.timed("embed:test", |_| embed(&splits.test))?;

    let tc = mgmd::train::TrainConfig {
        seed: cfg.seed,
        ..cfg.fusion.train.clone()
    };
    let (ad, td) = (audio.dim(), text.dim());
    let variants: [(&str, usize, usize); 3] = [("Audio", ad, 0), ("Lyrics", 0, td), ("Audio + Lyrics", ad, td)];
    let mut rows = Vec::new();
    for (label, a_dim, t_dim) in variants {
        let pick = |(a, t, _): &(Vec<f32>, Vec<f32>, Label)| -> Vec<f32> {
            let mut v = if a_dim > 0 { a.clone() } else { Vec::new() };
            if t_dim > 0 {
                v.extend(t);
            }
            v
        };
        let pairs: Vec<(Vec<f32>, Label)> = train.iter().map(|s| (pick(s), s.2)).collect();
        let layout = FusionLayout {
            audio_dim: a_dim,
            text_dim: t_dim,
            audio_provider: if a_dim > 0 { audio.provider_id() } else { String::new() },
            text_provider: if t_dim > 0 { text.provider_id() } else { String::new() },
        };
        let head = run.timed(&format!("fuse:{label}"), |_| {
            train_fusion_head(&pairs, layout, cfg.fusion.head.clone(), &tc)
        })?;
        let labels: Vec<Label> = test.iter().map(|s| s.2).collect();
        let preds = test
            .iter()
            .map(|s| predict_fusion_label(&head, &pick(s)))
            .collect::<Result<Vec<_>>>()?;
        let m: Metrics = compute_metrics(&labels, &preds, Label::POSITIVE)?;
        info!("{label}: acc {:.4} f1 {:.4}", m.accuracy, m.f1);
        rows.push(ModalityRow {
            modality: label.to_string(),
            accuracy: m.accuracy,
            f1: m.f1,
            recall: m.recall,
            precision: m.precision,
            n: m.n,
        });
        if a_dim > 0 && t_dim > 0 {
            let dir = run.layout.fusion_checkpoint();
            head.save(&dir)?;
            let fp = head.fingerprint();
            run.record(&dir.join("fusion.json"), Some(&fp))?;
            run.record(&dir.join("fusion.safetensors"), Some(&fp))?;
        }
    }
    let path = run.layout.dir("metrics").join("multimodal.csv");
    mgmd::io::ensure_parent(&path)?;
    let mut w = csv::Writer::from_path(&path)?;
    for r in &rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    run.record(&path, None)?;
    Ok(())
}

/// Entry of `overlays/index.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OverlayEntry {
    pub sample_id: String,
    pub technique: String,
    pub class: usize,
    pub probability: f32,
    pub png: String,
    pub svg: String,
    pub heatmap: String,
}

fn explained_model(cfg: &ExperimentConfig, chosen: &Option<String>) -> String {
    chosen.clone().unwrap_or_else(|| cfg.models[0].name.clone())
}

pub fn explain_samples(cfg: &ExperimentConfig, run: &mut Run) -> Result<()> {
    let name = explained_model(cfg, &cfg.xai.model);
    let model = load_checkpoint(run, &name)?;
    let fp = model.fingerprint();
    let (manifest, test) = split_inputs(cfg, run, "test")?;
    let picked = pick_confident(&model, &test, cfg.xai.min_probability)?;
    if picked.is_empty() {
        return Err(Error::TooFewSamples(format!(
            "no test clip is classified correctly with probability above {}",
            cfg.xai.min_probability
        )));
    }
    let size = RenderSize {
        width: cfg.xai.overlay_width,
        height: cfg.xai.overlay_height,
    };
    let mut index = Vec::new();
    for (k, p) in picked.iter().take(cfg.xai.samples).enumerate() {
        let row = manifest.get(&p.id).ok_or_else(|| Error::Config(format!("`{}` is not in the manifest", p.id)))?;
        let mel = featurize_file(Path::new(&row.path), &row.id, &cfg.mel)?;
        let stem = file_stem(&p.id);
        for &technique in &cfg.xai.techniques {
            let map = run.timed(&format!("explain:{technique}:{stem}"), |_| {
                explain(&model, &test.inputs[p.index], technique, &cfg.xai.params, Some(p.class), cfg.seed + k as u64)
            })?;
            let map = map.with_sample_id(&p.id);
            let heat_dir = run.layout.dir("heatmaps").join(&name).join(technique.name());
            write_heatmap(&heat_dir, &stem, &map, &fp, Some(&run.config_hash))?;
            run.record(&heat_dir.join(format!("{stem}.f32")), Some(&fp))?;
            run.record(&heat_dir.join(format!("{stem}.json")), Some(&fp))?;

            let png = encode_png(&render_overlay(&mel, &map, cfg.xai.overlay_fraction, size)?)?;
            let over_dir = run.layout.dir("overlays").join(&name).join(technique.name());
            let png_path = over_dir.join(format!("{stem}.png"));
            mgmd::io::ensure_parent(&png_path)?;
            std::fs::write(&png_path, &png).map_err(|e| Error::io(&png_path, e))?;
            run.record(&png_path, Some(&fp))?;
            let title = format!("{} | {} | {} ({:.3})", technique.display_name(), p.id, Label::from_index(p.class), p.probability);
            let svg = render_figure_svg(&png, size, cfg.mel.clip_seconds, cfg.mel.n_mels, &title);
            let svg_path = over_dir.join(format!("{stem}.svg"));
            write_text(run, &svg_path, &svg, Some(&fp))?;
            let rel = |p: &Path| p.strip_prefix(&run.layout.root).unwrap_or(p).to_string_lossy().replace('\\', "/");
            index.push(OverlayEntry {
                sample_id: p.id.clone(),
                technique: technique.name().into(),
                class: p.class,
                probability: p.probability,
                png: rel(&png_path),
                svg: rel(&svg_path),
                heatmap: rel(&heat_dir.join(format!("{stem}.f32"))),
            });
        }
    }
    let path = run.layout.dir("overlays").join("index.json");
    write_json(&path, &index)?;
    run.record(&path, Some(&fp))
}

#[derive(Debug, Clone, Serialize)]
struct TechniqueSample<'a> {
    technique: &'a str,
    #[serde(flatten)]
    record: &'a mgmd::fidelity::SingleSampleRecord,
}

pub fn fidelity(cfg: &ExperimentConfig, run: &mut Run) -> Result<()> {
    let name = explained_model(cfg, &cfg.fidelity.model);
    let model = load_checkpoint(run, &name)?;
    let fp = model.fingerprint();
    let (_, test) = split_inputs(cfg, run, "test")?;
    let f = &cfg.fidelity;
    let dir = run.layout.dir("fidelity");

    let mut reports = Vec::new();
    for &t in &f.techniques {
        let r = run.timed(&format!("single:{t}"), |_| {
            run_single_fidelity(&model, &test, t, &cfg.xai.params, &f.policy, cfg.seed)
        })?;
        info!(
            "{t}: accuracy {:.4} -> {:.4} (random {:.4})",
            r.baseline_metrics.accuracy, r.masked_metrics.accuracy, r.random_metrics.accuracy
        );
        reports.push(r);
    }
    let samples: Vec<TechniqueSample> = reports
        .iter()
        .flat_map(|r| r.samples.iter().map(move |s| TechniqueSample {
            technique: r.technique.name(),
            record: s,
        }))
        .collect();
    write_jsonl(&dir.join("single_samples.jsonl"), &samples)?;
    write_json(
        &dir.join("single.json"),
        &serde_json::json!({
            "config_hash": run.config_hash,
            "model": name,
            "model_fingerprint": fp,
            "reports": reports,
        }),
    )?;
    write_single_fidelity_csv(&dir.join("single.csv"), &single_fidelity_rows(&reports))?;
    for file in ["single_samples.jsonl", "single.json", "single.csv"] {
        run.record(&dir.join(file), Some(&fp))?;
    }

    if f.techniques.len() >= 2 {
        let mcfg = MultiFidelityConfig {
            sizes: f.sizes.clone(),
            runs: f.runs,
            subsample: f.subsample,
            seed: cfg.seed,
        };
        let (report, log) = run.timed("multi", |_| {
            run_multi_fidelity(&model, &test, &f.techniques, &cfg.xai.params, &f.policy, &mcfg)
        })?;
        write_jsonl(&dir.join("multi_log.jsonl"), &log)?;
        write_json(
            &dir.join("multi.json"),
            &serde_json::json!({
                "config_hash": run.config_hash,
                "model": name,
                "model_fingerprint": fp,
                "report": report,
            }),
        )?;
        write_multi_fidelity_csv(&dir.join("multi.csv"), &multi_fidelity_rows(&report))?;
        for file in ["multi_log.jsonl", "multi.json", "multi.csv"] {
            run.record(&dir.join(file), Some(&fp))?;
        }
    } else {
        info!("multi-technique fidelity skipped: fewer than two techniques");
    }
    Ok(())
}
