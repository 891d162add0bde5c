use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::manifest::DatasetManifest;
use super::mel::{MelConfig, MelSpectrogram};
use super::LabeledInputs;
use crate::error::{Error, Result};
use crate::io::{read_f32_array, read_json, write_f32_array, write_json};

/// JSON sidecar next to each cached array.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MelCacheMeta {
    pub source_id: String,
    /// `[rows, cols]` of the stored array (the resized model input).
    pub shape: [usize; 2],
    /// `[n_mels, frames]` of the dB grid it was resized from.
    pub grid_shape: [usize; 2],
    pub config: MelConfig,
}

/// On-disk cache of model inputs: one row-major f32 file per clip.
#[derive(Debug, Clone)]
pub struct MelCache {
    root: PathBuf,
}

impl MelCache {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn array_path(&self, id: &str) -> PathBuf {
        self.root.join(format!("{id}.f32"))
    }

    fn meta_path(&self, id: &str) -> PathBuf {
        self.root.join(format!("{id}.json"))
    }

    pub fn contains(&self, id: &str) -> bool {
        self.array_path(id).is_file() && self.meta_path(id).is_file()
    }

    pub fn store(&self, mel: &MelSpectrogram) -> Result<()> {
        let id = &mel.source_id;
        let data: Vec<f32> = mel.resized.iter().copied().collect();
        write_f32_array(&self.array_path(id), &data)?;
        let meta = MelCacheMeta {
            source_id: id.clone(),
            shape: [mel.resized.nrows(), mel.resized.ncols()],
            grid_shape: [mel.grid.nrows(), mel.grid.ncols()],
            config: mel.config.clone(),
        };
        write_json(&self.meta_path(id), &meta)
    }

    pub fn meta(&self, id: &str) -> Result<MelCacheMeta> {
        if !self.contains(id) {
            return Err(Error::MissingFeatureCache(id.to_string()));
        }
        read_json(&self.meta_path(id))
    }

    /// The cached model input for `id`.
    pub fn load(&self, id: &str) -> Result<Array2<f32>> {
        let meta = self.meta(id)?;
        let data = read_f32_array(&self.array_path(id))?;
        Array2::from_shape_vec((meta.shape[0], meta.shape[1]), data)
            .map_err(|e| Error::Shape(format!("cached array for `{id}`: {e}")))
    }

    /// Loads the cached inputs for `ids`, labelled from `manifest`.
    pub fn load_inputs(&self, manifest: &DatasetManifest, ids: &[String]) -> Result<LabeledInputs> {
        let mut out = LabeledInputs::default();
        for id in ids {
            let row = manifest
                .get(id)
                .ok_or_else(|| Error::Config(format!("id `{id}` is not in the manifest")))?;
            out.push(id.clone(), self.load(id)?, row.label);
        }
        Ok(out)
    }

    /// Loads every row of `manifest`.
    pub fn load_manifest(&self, manifest: &DatasetManifest) -> Result<LabeledInputs> {
        let ids: Vec<String> = manifest.rows.iter().map(|r| r.id.clone()).collect();
        self.load_inputs(manifest, &ids)
    }
}
