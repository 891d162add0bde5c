//! Audio ingestion, mel features, manifests and splits.

mod audio;
mod cache;
mod manifest;
mod mel;
mod split;
pub mod synth;

use std::path::Path;

use ndarray::Array2;

pub use audio::{load_audio, resample, write_wav, AudioClip};
pub use cache::{MelCache, MelCacheMeta};
pub use manifest::{build_manifest, DatasetManifest, Label, LabelRule, ManifestRow};
pub use mel::{compute_mel_spectrogram, mel_filterbank, MelConfig, MelSpectrogram};
pub use split::{assign_splits, split_sizes, SplitAssignment, TEST_FRACTION, VAL_FRACTION};

use crate::error::Result;

/// Model inputs with their ids and labels, index-aligned.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabeledInputs {
    pub ids: Vec<String>,
    pub inputs: Vec<Array2<f32>>,
    pub labels: Vec<Label>,
}

impl LabeledInputs {
    pub fn push(&mut self, id: String, input: Array2<f32>, label: Label) {
        self.ids.push(id);
        self.inputs.push(input);
        self.labels.push(label);
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn has_both_classes(&self) -> bool {
        self.labels.contains(&Label::Human) && self.labels.contains(&Label::Machine)
    }

    /// Subset by positions, in the given order.
    pub fn subset(&self, positions: &[usize]) -> LabeledInputs {
        let mut out = LabeledInputs::default();
        for &i in positions {
            out.push(self.ids[i].clone(), self.inputs[i].clone(), self.labels[i]);
        }
        out
    }
}

/// Full per-file feature pipeline: decode, resample, fit to the configured
/// clip length, then extract the mel spectrogram.
pub fn featurize_file(path: &Path, id: &str, cfg: &MelConfig) -> Result<MelSpectrogram> {
    let clip = load_audio(path, cfg.target_rate)?.fit_duration(cfg.clip_seconds);
    compute_mel_spectrogram(&clip, cfg, id)
}
