use std::collections::BTreeMap;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{AttributionMap, Technique};
use crate::error::{Error, Result};
use crate::io::{read_f32_array, read_json, write_f32_array, write_json};

/// JSON sidecar of a stored heatmap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapMeta {
    pub technique: Technique,
    pub params: BTreeMap<String, f64>,
    pub seed: Option<u64>,
    pub sample_id: String,
    pub model_fingerprint: String,
    pub target_class: usize,
    pub shape: [usize; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub completeness_residual: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
}

/// Writes `<stem>.f32` (row-major little-endian) and `<stem>.json`.
pub fn write_heatmap(
    dir: &Path,
    stem: &str,
    map: &AttributionMap,
    model_fingerprint: &str,
    config_hash: Option<&str>,
) -> Result<HeatmapMeta> {
    let meta = HeatmapMeta {
        technique: map.technique,
        params: map.params.clone(),
        seed: map.seed,
        sample_id: map.sample_id.clone(),
        model_fingerprint: model_fingerprint.to_string(),
        target_class: map.target_class,
        shape: [map.values.nrows(), map.values.ncols()],
        completeness_residual: map.params.get("completeness_residual").copied(),
        config_hash: config_hash.map(String::from),
    };
    let data: Vec<f32> = map.values.iter().copied().collect();
    write_f32_array(&dir.join(format!("{stem}.f32")), &data)?;
    write_json(&dir.join(format!("{stem}.json")), &meta)?;
    Ok(meta)
}

pub fn read_heatmap(dir: &Path, stem: &str) -> Result<(AttributionMap, HeatmapMeta)> {
    let meta_path = dir.join(format!("{stem}.json"));
    if !meta_path.is_file() {
        return Err(Error::MissingArtifact(meta_path.display().to_string()));
    }
    let meta: HeatmapMeta = read_json(&meta_path)?;
    let data = read_f32_array(&dir.join(format!("{stem}.f32")))?;
    let values = Array2::from_shape_vec((meta.shape[0], meta.shape[1]), data)
        .map_err(|e| Error::Shape(e.to_string()))?;
    let map = AttributionMap {
        values,
        technique: meta.technique,
        target_class: meta.target_class,
        sample_id: meta.sample_id.clone(),
        seed: meta.seed,
        params: meta.params.clone(),
    };
    Ok((map, meta))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let mut map = AttributionMap::new(
            Array2::from_shape_fn((3, 4), |(r, c)| r as f32 - c as f32 * 0.5),
            Technique::Ig,
            1,
        )
        .with_sample_id("machine/a");
        map.params.insert("completeness_residual".into(), 0.01);
        let meta = write_heatmap(dir.path(), "a_ig", &map, "abc", Some("cfg")).unwrap();
        assert_eq!(meta.completeness_residual, Some(0.01));
        let (back, meta2) = read_heatmap(dir.path(), "a_ig").unwrap();
        assert_eq!(back, map);
        assert_eq!(meta2, meta);
    }
}
