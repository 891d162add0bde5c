use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mgmd::dataset::{DatasetManifest, SplitAssignment};
use mgmd::train::read_metrics_csv;
use mgmd_cli::config::ExperimentConfig;

const SMALL: &str = r#"
seed = 5
out_dir = "out"

[dataset.synthetic]
n_human = 12
n_machine = 12
seconds = 1.0
seed = 1
lyrics = true

[[dataset.out_of_domain]]
name = "shifted"

[dataset.out_of_domain.synthetic]
n_human = 4
n_machine = 4
seconds = 1.0
seed = 2
shift = true

[mel]
n_mels = 16
fft_window = 256
hop = 64
input_side = 16
clip_seconds = 1.0

[[models]]
name = "tiny"
architecture = "tinycnn"

[[models]]
name = "qsvm"
architecture = "qsvm"

[train]
batch_size = 8
epochs = 4

[xai]
model = "tiny"
samples = 1
min_probability = 0.5
overlay_width = 64
overlay_height = 64

[xai.params]
ig_steps = 8
occlusion_patch = 4
occlusion_stride = 4
lime_grid = 2
lime_samples = 40

[fidelity]
model = "tiny"
sizes = [2, 3]
runs = 2

[fusion]
lyrics_policy = "zero_vector"

[fusion.head]
hidden = [16]

[fusion.train]
batch_size = 8
epochs = 5
"#;

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("experiment.toml");
    std::fs::write(&path, text).unwrap();
    path
}

fn mgmd(args: &[&str], cache: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_mgmd"));
    cmd.args(args).env("RUST_LOG", "warn");
    match cache {
        Some(c) => cmd.env("MGMD_CACHE", c),
        None => cmd.env_remove("MGMD_CACHE"),
    };
    cmd.output().unwrap()
}

fn run_ok(command: &str, config: &Path, extra: &[&str]) {
    let mut args = vec![command, "--config", config.to_str().unwrap()];
    args.extend(extra);
    let out = mgmd(&args, None);
    assert!(
        out.status.success(),
        "{command} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn prepare_populates_manifests_splits_and_cache() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), SMALL);
    run_ok("prepare", &config, &[]);
    let out = dir.path().join("out");
    let manifest = DatasetManifest::read_jsonl(&out.join("manifests/main.jsonl")).unwrap();
    assert_eq!(manifest.len(), 24);
    assert_eq!(manifest.label_counts(), [12, 12]);
    assert!(manifest.rows.iter().all(|r| r.lyrics_path.is_some()));
    assert_eq!(DatasetManifest::read_jsonl(&out.join("manifests/shifted.jsonl")).unwrap().len(), 8);
    let splits = SplitAssignment::read(&out.join("splits/main.json")).unwrap();
    assert_eq!(splits.train.len() + splits.val.len() + splits.test.len(), 24);
    let arrays = walk(&out.join("mel_cache"), "f32");
    assert_eq!(arrays, 32);
    assert!(out.join("logs/prepare.json").is_file());
    assert!(out.join("run.json").is_file());
}

fn walk(dir: &Path, ext: &str) -> usize {
    let mut n = 0;
    for entry in std::fs::read_dir(dir).unwrap() {
        let p = entry.unwrap().path();
        if p.is_dir() {
            n += walk(&p, ext);
        } else if p.extension().is_some_and(|e| e == ext) {
            n += 1;
        }
    }
    n
}

#[test]
fn cache_env_relocates_features() {
    let dir = tempfile::tempdir().unwrap();
    let cache = dir.path().join("shared-cache");
    let config = write_config(dir.path(), SMALL);
    let out = mgmd(&["prepare", "--config", config.to_str().unwrap()], Some(&cache));
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(walk(&cache, "f32"), 32);
    assert!(!dir.path().join("out/mel_cache").exists());
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), SMALL);
    let c = config.to_str().unwrap();

    let fidelity = mgmd(&["fidelity", "--config", c], None);
    assert_eq!(fidelity.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&fidelity.stderr).contains("checkpoint"));
    assert_eq!(mgmd(&["report", "--config", c], None).status.code(), Some(3));
    assert_eq!(mgmd(&["train", "--config", c], None).status.code(), Some(3));

    assert_eq!(mgmd(&["train", "--config", c, "--set", "train.epochs=0"], None).status.code(), Some(2));
    assert_eq!(mgmd(&["train", "--config", c, "--set", "unknown_key=1"], None).status.code(), Some(2));
    assert_eq!(mgmd(&["train", "--config", "/nonexistent.toml"], None).status.code(), Some(2));
    assert_eq!(mgmd(&["bogus", "--config", c], None).status.code(), Some(2));
    let bad = write_config(dir.path(), "out_dir = \"x\"\n[dataset]\nroot = \"/nonexistent\"\nrules = []\n[[models]]\nname = \"a\"\narchitecture = \"tinycnn\"\n");
    assert_eq!(mgmd(&["prepare", "--config", bad.to_str().unwrap()], None).status.code(), Some(2));
}

fn pipeline(config: &Path, out: &Path) {
    let o = out.to_str().unwrap();
    for command in ["prepare", "train", "evaluate", "roc", "fuse", "explain", "fidelity", "report"] {
        run_ok(command, config, &["--out", o]);
    }
}

/// Metrics without the wall-time column.
fn metric_values(out: &Path) -> Vec<(String, String, f64, f64, f64, f64, usize)> {
    read_metrics_csv(&out.join("metrics/metrics.csv"))
        .unwrap()
        .into_iter()
        .map(|r| (r.model, r.dataset, r.accuracy, r.f1, r.recall, r.precision, r.n))
        .collect()
}

#[test]
fn full_pipeline_is_reproducible_and_reports() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), SMALL);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    pipeline(&config, &a);
    pipeline(&config, &b);

    assert_eq!(metric_values(&a), metric_values(&b));
    for file in [
        "metrics/multimodal.csv",
        "metrics/out_of_domain.csv",
        "fidelity/single.csv",
        "fidelity/multi.csv",
        "fidelity/multi_log.jsonl",
        "roc/auc.csv",
        "checkpoints/tiny/model.safetensors",
    ] {
        let x = std::fs::read(a.join(file)).unwrap();
        let y = std::fs::read(b.join(file)).unwrap();
        assert!(x == y, "{file} differs between identical runs");
    }

    let summary = std::fs::read_to_string(a.join("report/summary.md")).unwrap();
    assert!(summary.contains("| Model | Training Time (s) | Accuracy | F1 |"));
    assert!(summary.contains("| Combination Size | Avg Mask | Accuracy | p-value | Mask Reduction | Accuracy Change |"));
    assert!(summary.contains("| Visualisation | Accuracy | F1 | Recall |"));
    assert!(summary.contains("| Model | accuracy | F1 |"));
    assert!(summary.contains("Acc(shifted)"));
    assert!(summary.contains("(../roc/roc.svg)"));
    assert!(a.join("roc/roc.svg").is_file());
    assert!(a.join("report/models.csv").is_file());
    assert!(a.join("report/summary.json").is_file());
    assert!(a.join("checkpoints/_fusion/fusion.safetensors").is_file());

    // Model table: two rows, best F1 first.
    let table = std::fs::read_to_string(a.join("report/models.csv")).unwrap();
    let f1: Vec<f64> = table.lines().skip(1).map(|l| l.rsplit(',').next().unwrap().parse().unwrap()).collect();
    assert_eq!(f1.len(), 2);
    assert!(f1[0] >= f1[1]);

    // Every artifact of the explain step carries the config hash and fingerprint.
    let log: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(a.join("logs/explain.json")).unwrap()).unwrap();
    let hash = log["config_hash"].as_str().unwrap();
    let artifacts = log["artifacts"].as_array().unwrap();
    assert!(artifacts.iter().any(|x| x["path"].as_str().unwrap().ends_with(".png")));
    for x in artifacts {
        assert_eq!(x["config_hash"].as_str().unwrap(), hash);
        assert!(x["model_fingerprint"].as_str().is_some());
    }
    let heat = walk(&a.join("heatmaps"), "json");
    assert_eq!(heat, 5);
    let meta: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(
            std::fs::read_dir(a.join("heatmaps/tiny/ig"))
                .unwrap()
                .map(|e| e.unwrap().path())
                .find(|p| p.extension().is_some_and(|e| e == "json"))
                .unwrap(),
        )
        .unwrap(),
    )
    .unwrap();
    assert_eq!(meta["config_hash"].as_str().unwrap(), hash);
}

#[test]
fn shipped_configs_parse() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let data = tempfile::tempdir().unwrap();
    let root_override = format!("dataset.root=\"{}\"", data.path().display());
    let default = ExperimentConfig::load(&root.join("default.toml"), &[root_override], None).unwrap();
    assert_eq!(default.models.len(), 9);
    assert_eq!(default.train.batch_size, 64);
    assert_eq!(default.mel.input_side, 224);
    let synthetic = ExperimentConfig::load(&root.join("synthetic.toml"), &[], None).unwrap();
    assert!(synthetic.dataset.main.synthetic.is_some());
}
