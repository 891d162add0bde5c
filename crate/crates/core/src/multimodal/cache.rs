use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::Modality;
use crate::error::{Error, Result};
use crate::io::{read_f32_array, read_json, sha256_hex, write_f32_array, write_json};

/// Metadata stored next to each cached vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingRecord {
    pub id: String,
    pub modality: Modality,
    pub provider_id: String,
    pub dim: usize,
}

/// On-disk embedding cache: `<root>/<provider>/<modality>/<hash>.{f32,json}`.
#[derive(Debug, Clone)]
pub struct EmbeddingCache {
    root: PathBuf,
}

impl EmbeddingCache {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn stem(&self, provider_id: &str, modality: Modality, id: &str) -> PathBuf {
        let safe: String = provider_id
            .chars()
            .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
            .collect();
        let key = &sha256_hex(id.as_bytes())[..24];
        self.root.join(safe).join(modality.to_string()).join(key)
    }

    pub fn load(&self, provider_id: &str, modality: Modality, id: &str) -> Result<Option<Vec<f32>>> {
        let stem = self.stem(provider_id, modality, id);
        let meta_path = stem.with_extension("json");
        if !meta_path.is_file() {
            return Ok(None);
        }
        let meta: EmbeddingRecord = read_json(&meta_path)?;
        if meta.id != id || meta.provider_id != provider_id {
            return Ok(None);
        }
        let v = read_f32_array(&stem.with_extension("f32"))?;
        if v.len() != meta.dim {
            return Err(Error::Shape(format!("cached vector for {id} has {} values, expected {}", v.len(), meta.dim)));
        }
        Ok(Some(v))
    }

    pub fn store(&self, record: &EmbeddingRecord, vector: &[f32]) -> Result<()> {
        if vector.len() != record.dim {
            return Err(Error::DimensionMismatch {
                expected: record.dim,
                got: vector.len(),
            });
        }
        let stem = self.stem(&record.provider_id, record.modality, &record.id);
        write_f32_array(&stem.with_extension("f32"), vector)?;
        write_json(&stem.with_extension("json"), record)
    }

    /// Cached vector, or `compute` it and store the result.
    pub fn get_or_compute(
        &self,
        provider_id: &str,
        modality: Modality,
        id: &str,
        compute: impl FnOnce() -> Result<Vec<f32>>,
    ) -> Result<Vec<f32>> {
        if let Some(v) = self.load(provider_id, modality, id)? {
            return Ok(v);
        }
        let v = compute()?;
        let record = EmbeddingRecord {
            id: id.to_string(),
            modality,
            provider_id: provider_id.to_string(),
            dim: v.len(),
        };
        self.store(&record, &v)?;
        Ok(v)
    }
}
