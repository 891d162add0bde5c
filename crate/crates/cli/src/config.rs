use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use mgmd::dataset::synth::FixtureSpec;
use mgmd::dataset::{LabelRule, MelConfig};
use mgmd::fidelity::MaskPolicy;
use mgmd::models::{Architecture, ClassifierSpec};
use mgmd::multimodal::{FusionHeadConfig, LyricsPolicy};
use mgmd::train::TrainConfig;
use mgmd::xai::{Technique, XaiConfig};
use mgmd::{Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Name of the in-domain dataset.
pub const MAIN_DATASET: &str = "main";

/// A labelled audio tree: either an existing directory or a generated fixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSource {
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub root: Option<PathBuf>,
    #[serde(default)]
    pub rules: Vec<LabelRule>,
    /// When set, `prepare` writes this fixture under `<out>/data/<name>` and
    /// uses it instead of `root`.
    #[serde(default)]
    pub synthetic: Option<FixtureSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    #[serde(flatten)]
    pub main: DatasetSource,
    #[serde(default)]
    pub out_of_domain: Vec<DatasetSource>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelEntry {
    pub name: String,
    pub architecture: Architecture,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExplainConfig {
    /// Checkpoint to explain; the first configured model when unset.
    pub model: Option<String>,
    pub techniques: Vec<Technique>,
    /// Confidently classified test samples to explain.
    pub samples: usize,
    pub min_probability: f32,
    pub overlay_fraction: f64,
    pub overlay_width: u32,
    pub overlay_height: u32,
    pub params: XaiConfig,
}

impl Default for ExplainConfig {
    fn default() -> Self {
        Self {
            model: None,
            techniques: Technique::ALL.to_vec(),
            samples: 4,
            min_probability: 0.9,
            overlay_fraction: 0.1,
            overlay_width: 448,
            overlay_height: 448,
            params: XaiConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FidelitySection {
    pub model: Option<String>,
    pub techniques: Vec<Technique>,
    pub policy: MaskPolicy,
    pub sizes: Vec<usize>,
    pub runs: usize,
    pub subsample: usize,
}

impl Default for FidelitySection {
    fn default() -> Self {
        Self {
            model: None,
            techniques: Technique::ALL.to_vec(),
            policy: MaskPolicy::default(),
            sizes: vec![2, 3, 4, 5],
            runs: 5,
            subsample: 1000,
        }
    }
}

/// A built-in provider name or an external command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ProviderConfig {
    Builtin(String),
    Command { command: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionSection {
    pub audio_provider: ProviderConfig,
    pub text_provider: ProviderConfig,
    pub lyrics_policy: LyricsPolicy,
    pub head: FusionHeadConfig,
    pub train: TrainConfig,
}

impl Default for FusionSection {
    fn default() -> Self {
        Self {
            audio_provider: ProviderConfig::Builtin("mel_stats".into()),
            text_provider: ProviderConfig::Builtin("trigram".into()),
            lyrics_policy: LyricsPolicy::Strict,
            head: FusionHeadConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

/// Everything one experiment needs. Relative paths resolve against the
/// directory of the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    pub out_dir: PathBuf,
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub mel: MelConfig,
    pub models: Vec<ModelEntry>,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub xai: ExplainConfig,
    #[serde(default)]
    pub fidelity: FidelitySection,
    #[serde(default)]
    pub fusion: FusionSection,
}

/// Parses `value` as a TOML value, falling back to a plain string.
fn parse_override_value(value: &str) -> toml::Value {
    let doc = format!("v = {value}");
    match toml::from_str::<toml::Table>(&doc) {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(value.into())),
        Err(_) => toml::Value::String(value.into()),
    }
}

/// Applies `key.path=value` to a parsed config tree.
pub fn apply_override(root: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, value) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{assignment}` is not key=value")))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("bad override key `{key}`")));
    }
    let mut table = root;
    for part in &parts[..parts.len() - 1] {
        let entry = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override `{key}`: `{part}` is not a table")))?;
    }
    table.insert(parts[parts.len() - 1].to_string(), parse_override_value(value.trim()));
    Ok(())
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

impl ExperimentConfig {
    /// Reads `path`, applies overrides and `out`, resolves relative paths and
    /// validates the result.
    pub fn load(path: &Path, overrides: &[String], out: Option<&Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml_str(&text, base, overrides, out)
    }

    pub fn from_toml_str(text: &str, base: &Path, overrides: &[String], out: Option<&Path>) -> Result<Self> {
        let mut tree: toml::Table =
            toml::from_str(text).map_err(|e| Error::Config(format!("config is not valid TOML: {e}")))?;
        for o in overrides {
            apply_override(&mut tree, o)?;
        }
        let mut cfg: ExperimentConfig = toml::Value::Table(tree)
            .try_into()
            .map_err(|e| Error::Config(format!("config schema: {e}")))?;
        if let Some(out) = out {
            cfg.out_dir = out.to_path_buf();
        } else {
            cfg.out_dir = resolve(base, &cfg.out_dir);
        }
        if cfg.dataset.main.name.is_empty() {
            cfg.dataset.main.name = MAIN_DATASET.into();
        }
        for src in std::iter::once(&mut cfg.dataset.main).chain(cfg.dataset.out_of_domain.iter_mut()) {
            src.root = src.root.as_ref().map(|r| resolve(base, r));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.mel.validate()?;
        self.train.validate()?;
        self.fusion.train.validate()?;
        self.fidelity.policy.validate()?;
        if self.models.is_empty() {
            return Err(Error::Config("at least one [[models]] entry is required".into()));
        }
        let mut names = std::collections::BTreeSet::new();
        for m in &self.models {
            if m.name.is_empty() || m.name.contains(['/', '\\']) {
                return Err(Error::Config(format!("bad model name `{}`", m.name)));
            }
            if !names.insert(m.name.as_str()) {
                return Err(Error::Config(format!("duplicate model name `{}`", m.name)));
            }
            self.classifier_spec(m).validate()?;
        }
        for key in [&self.xai.model, &self.fidelity.model].into_iter().flatten() {
            self.model(key)?;
        }
        let mut sets = std::collections::BTreeSet::new();
        for src in self.sources() {
            if !sets.insert(src.name.as_str()) || src.name.is_empty() || src.name.contains(['/', '\\']) {
                return Err(Error::Config(format!("dataset name `{}` is empty, reused or not a plain name", src.name)));
            }
            match (&src.synthetic, &src.root) {
                (Some(_), _) => {}
                (None, Some(root)) if root.is_dir() => {
                    if src.rules.is_empty() {
                        return Err(Error::Config(format!("dataset `{}` has no labelling rules", src.name)));
                    }
                }
                (None, Some(root)) => {
                    return Err(Error::Config(format!(
                        "dataset `{}` root {} does not exist",
                        src.name,
                        root.display()
                    )))
                }
                (None, None) => {
                    return Err(Error::Config(format!("dataset `{}` needs a root or a synthetic fixture", src.name)))
                }
            }
        }
        if self.xai.samples == 0 || !(self.xai.overlay_fraction > 0.0 && self.xai.overlay_fraction <= 1.0) {
            return Err(Error::Config("xai.samples must be positive and overlay_fraction in (0, 1]".into()));
        }
        Ok(())
    }

    /// The in-domain dataset followed by the out-of-domain ones.
    pub fn sources(&self) -> impl Iterator<Item = &DatasetSource> {
        std::iter::once(&self.dataset.main).chain(self.dataset.out_of_domain.iter())
    }

    pub fn classifier_spec(&self, m: &ModelEntry) -> ClassifierSpec {
        let mut spec = ClassifierSpec::new(m.architecture, self.mel.input_side);
        spec.architecture_params = m.params.clone();
        spec
    }

    pub fn model(&self, name: &str) -> Result<&ModelEntry> {
        self.models
            .iter()
            .find(|m| m.name == name)
            .ok_or_else(|| Error::Config(format!("no model named `{name}`")))
    }

    /// Training settings with the global seed.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train.clone()
        }
    }

    /// Short SHA-256 of the resolved config.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).unwrap_or_default();
        hex::encode(Sha256::digest(json.as_bytes()))[..16].to_string()
    }

    /// Short hash of config, seed and crate version.
    pub fn run_id(&self) -> String {
        let key = format!("{}:{}:{}", self.hash(), self.seed, env!("CARGO_PKG_VERSION"));
        hex::encode(Sha256::digest(key.as_bytes()))[..12].to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
seed = 3
out_dir = "out"

[dataset.synthetic]
n_human = 4

[[models]]
name = "tiny"
architecture = "tinycnn"

[mel]
input_side = 16
"#;

    #[test]
    fn overrides_are_typed() {
        let base = Path::new("/tmp");
        let cfg = ExperimentConfig::from_toml_str(
            MINIMAL,
            base,
            &["train.epochs=3".into(), "xai.techniques=[\"ig\"]".into(), "fusion.lyrics_policy=zero_vector".into()],
            None,
        )
        .unwrap();
        assert_eq!(cfg.train.epochs, 3);
        assert_eq!(cfg.xai.techniques, vec![Technique::Ig]);
        assert_eq!(cfg.fusion.lyrics_policy, LyricsPolicy::ZeroVector);
        assert_eq!(cfg.out_dir, PathBuf::from("/tmp/out"));
        assert_eq!(cfg.dataset.main.name, MAIN_DATASET);
        assert_eq!(cfg.train_config().seed, 3);
    }

    #[test]
    fn schema_errors_are_config_errors() {
        let base = Path::new("/tmp");
        for bad in [
            "train.epochs=0",
            "models.0=1",
            "bogus=1",
            "mel.input_side=4",
            "xai.model=\"nope\"",
        ] {
            let r = ExperimentConfig::from_toml_str(MINIMAL, base, &[bad.into()], None);
            assert!(matches!(r, Err(Error::Config(_)) | Err(Error::Shape(_))), "{bad}: {r:?}");
        }
        assert!(matches!(
            ExperimentConfig::from_toml_str("out_dir = 1", base, &[], None),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn hash_tracks_content() {
        let base = Path::new("/tmp");
        let a = ExperimentConfig::from_toml_str(MINIMAL, base, &[], None).unwrap();
        let b = ExperimentConfig::from_toml_str(MINIMAL, base, &[], None).unwrap();
        let c = ExperimentConfig::from_toml_str(MINIMAL, base, &["seed=4".into()], None).unwrap();
        assert_eq!(a.hash(), b.hash());
        assert_ne!(a.hash(), c.hash());
        assert_eq!(a.run_id().len(), 12);
    }
}
