use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use mgmd::dataset::{DatasetManifest, MelCache, SplitAssignment};
use mgmd::io::{sha256_hex, write_json};
use mgmd::{Error, Result};
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;

/// Environment variable that relocates the mel and embedding caches.
pub const CACHE_ENV: &str = "MGMD_CACHE";

/// Fixed layout of one experiment output directory.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
    pub cache_root: PathBuf,
}

impl Layout {
    pub fn new(cfg: &ExperimentConfig) -> Self {
        let root = cfg.out_dir.clone();
        let cache_root = std::env::var_os(CACHE_ENV)
            .filter(|v| !v.is_empty())
            .map(PathBuf::from)
            .unwrap_or_else(|| root.join("mel_cache"));
        Self { root, cache_root }
    }

    pub fn dir(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn data_dir(&self, dataset: &str) -> PathBuf {
        self.root.join("data").join(dataset)
    }

    pub fn manifest(&self, dataset: &str) -> PathBuf {
        self.dir("manifests").join(format!("{dataset}.jsonl"))
    }

    pub fn splits(&self, dataset: &str) -> PathBuf {
        self.dir("splits").join(format!("{dataset}.json"))
    }

    pub fn checkpoint(&self, model: &str) -> PathBuf {
        self.dir("checkpoints").join(model)
    }

    pub fn fusion_checkpoint(&self) -> PathBuf {
        self.dir("checkpoints").join("_fusion")
    }

    pub fn metrics(&self) -> PathBuf {
        self.dir("metrics").join("metrics.csv")
    }

    pub fn evaluation(&self, model: &str, dataset: &str) -> PathBuf {
        self.dir("metrics").join(format!("{model}__{dataset}.json"))
    }

    /// Mel cache for one dataset, keyed by the feature settings so a changed
    /// `[mel]` section never reads stale arrays.
    pub fn mel_cache(&self, cfg: &ExperimentConfig, dataset: &str) -> MelCache {
        let key = serde_json::to_string(&cfg.mel).unwrap_or_default();
        let key = &sha256_hex(key.as_bytes())[..12];
        MelCache::new(self.cache_root.join(format!("mel-{key}")).join(dataset))
    }

    pub fn embedding_root(&self) -> PathBuf {
        self.cache_root.join("embeddings")
    }

    pub fn read_manifest(&self, dataset: &str) -> Result<DatasetManifest> {
        let path = self.manifest(dataset);
        if !path.is_file() {
            return Err(Error::MissingArtifact(format!("{} (run `prepare` first)", path.display())));
        }
        DatasetManifest::read_jsonl(&path)
    }

    pub fn read_splits(&self, dataset: &str) -> Result<SplitAssignment> {
        let path = self.splits(dataset);
        if !path.is_file() {
            return Err(Error::MissingArtifact(format!("{} (run `prepare` first)", path.display())));
        }
        SplitAssignment::read(&path)
    }
}

/// One written file with what produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactRecord {
    /// Relative to the output directory.
    pub path: String,
    pub sha256: String,
    pub config_hash: String,
    pub model_fingerprint: Option<String>,
}

/// Structured log of one command invocation, written to `logs/<command>.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub command: String,
    pub run_id: String,
    pub config_hash: String,
    pub version: String,
    pub seed: u64,
    pub started_unix_s: u64,
    pub wall_time_s: f64,
    pub timings: Vec<(String, f64)>,
    pub artifacts: Vec<ArtifactRecord>,
}

/// Tracks timings and artifacts while a command runs.
pub struct Run {
    pub layout: Layout,
    pub config_hash: String,
    log: RunLog,
    start: Instant,
}

impl Run {
    pub fn start(command: &str, cfg: &ExperimentConfig) -> Result<Self> {
        let layout = Layout::new(cfg);
        std::fs::create_dir_all(&layout.root).map_err(|e| Error::io(&layout.root, e))?;
        let config_hash = cfg.hash();
        let started = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
        let log = RunLog {
            command: command.to_string(),
            run_id: cfg.run_id(),
            config_hash: config_hash.clone(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed: cfg.seed,
            started_unix_s: started,
            wall_time_s: 0.0,
            timings: Vec::new(),
            artifacts: Vec::new(),
        };
        write_json(&layout.root.join("config.json"), cfg)?;
        Ok(Self {
            layout,
            config_hash,
            log,
            start: Instant::now(),
        })
    }

    /// Runs `f` and records its wall time under `label`.
    pub fn timed<T>(&mut self, label: &str, f: impl FnOnce(&mut Self) -> Result<T>) -> Result<T> {
        let t = Instant::now();
        let out = f(self)?;
        self.log.timings.push((label.to_string(), t.elapsed().as_secs_f64()));
        Ok(out)
    }

    /// Records a file written by this command.
    pub fn record(&mut self, path: &Path, model_fingerprint: Option<&str>) -> Result<()> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let rel = path.strip_prefix(&self.layout.root).unwrap_or(path);
        self.log.artifacts.push(ArtifactRecord {
            path: rel.to_string_lossy().replace('\\', "/"),
            sha256: sha256_hex(&bytes),
            config_hash: self.config_hash.clone(),
            model_fingerprint: model_fingerprint.map(String::from),
        });
        Ok(())
    }

    pub fn finish(mut self) -> Result<RunLog> {
        self.log.wall_time_s = self.start.elapsed().as_secs_f64();
        let path = self.layout.dir("logs").join(format!("{}.json", self.log.command));
        write_json(&path, &self.log)?;
        write_json(
            &self.layout.root.join("run.json"),
            &serde_json::json!({
                "run_id": self.log.run_id,
                "config_hash": self.log.config_hash,
                "version": self.log.version,
                "seed": self.log.seed,
                "last_command": self.log.command,
            }),
        )?;
        Ok(self.log)
    }
}

/// File-name-safe form of a sample id.
pub fn file_stem(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' { c } else { '_' })
        .collect()
}
