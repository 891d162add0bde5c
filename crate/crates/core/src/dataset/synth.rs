//! Synthetic fixtures: planted-feature grids and small WAV trees with the
//! same layout as a real labelled corpus.

use std::f32::consts::PI;
use std::path::Path;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::audio::write_wav;
use super::manifest::{Label, LabelRule};
use super::LabeledInputs;
use crate::error::Result;

/// Grid dataset where machine samples carry a bright square patch at a fixed
/// location and human samples do not.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantedSpec {
    pub side: usize,
    /// Top-left corner of the patch.
    pub origin: (usize, usize),
    pub patch: usize,
    /// Added to background cells inside the patch.
    pub boost: f32,
    /// Background cells are uniform in `[0, background)`.
    pub background: f32,
}

impl PlantedSpec {
    pub fn new(side: usize) -> Self {
        let patch = (side / 4).max(1);
        Self {
            side,
            origin: (side / 8, side / 2),
            patch,
            boost: 0.5,
            background: 0.5,
        }
    }

    pub fn in_patch(&self, r: usize, c: usize) -> bool {
        let (r0, c0) = self.origin;
        (r0..r0 + self.patch).contains(&r) && (c0..c0 + self.patch).contains(&c)
    }

    pub fn patch_mean(&self, grid: &Array2<f32>) -> f32 {
        let (r0, c0) = self.origin;
        let p = self.patch;
        grid.slice(ndarray::s![r0..r0 + p, c0..c0 + p]).mean().unwrap_or(0.0)
    }

    fn sample(&self, label: Label, rng: &mut ChaCha8Rng) -> Array2<f32> {
        let mut grid =
            Array2::from_shape_fn((self.side, self.side), |_| rng.random::<f32>() * self.background);
        if label == Label::Machine {
            for r in 0..self.side {
                for c in 0..self.side {
                    if self.in_patch(r, c) {
                        grid[[r, c]] += self.boost;
                    }
                }
            }
        }
        grid
    }

    /// `n` samples alternating human/machine.
    pub fn generate(&self, n: usize, seed: u64) -> LabeledInputs {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = LabeledInputs::default();
        for i in 0..n {
            let label = if i % 2 == 0 { Label::Human } else { Label::Machine };
            out.push(format!("planted/{seed}/{i:05}"), self.sample(label, &mut rng), label);
        }
        out
    }

    /// Same distribution plus a band of noise over rows the model never saw
    /// varying; the band overlaps the patch rows.
    pub fn generate_shifted(&self, n: usize, seed: u64) -> LabeledInputs {
        let mut data = self.generate(n, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        let (r0, _) = self.origin;
        for grid in &mut data.inputs {
            for r in r0..(r0 + self.patch).min(self.side) {
                for c in 0..self.side {
                    grid[[r, c]] += rng.random::<f32>() * self.boost * 1.5;
                }
            }
        }
        data
    }
}

/// WAV fixture tree: `human/*.wav` and `machine/*.wav`, optionally with
/// `<stem>.txt` lyrics sidecars.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FixtureSpec {
    pub n_human: usize,
    pub n_machine: usize,
    pub seconds: f32,
    pub sample_rate: u32,
    pub seed: u64,
    pub lyrics: bool,
    /// Adds band-limited noise to every clip (a distribution shift).
    pub shift: bool,
    /// Subset tag written into the label rules.
    pub subset_tag: Option<String>,
}

impl Default for FixtureSpec {
    fn default() -> Self {
        Self {
            n_human: 20,
            n_machine: 20,
            seconds: 10.0,
            sample_rate: 16_000,
            seed: 0,
            lyrics: false,
            shift: false,
            subset_tag: None,
        }
    }
}

impl FixtureSpec {
    pub fn label_rules(&self) -> Vec<LabelRule> {
        let mut rules = vec![
            LabelRule::new("human/*.wav", Label::Human),
            LabelRule::new("machine/*.wav", Label::Machine),
        ];
        if let Some(tag) = &self.subset_tag {
            rules = rules.into_iter().map(|r| r.with_tag(tag.clone())).collect();
        }
        rules
    }
}

const HUMAN_WORDS: &[&str] = &[
    "heart", "river", "morning", "mother", "road", "rain", "dance", "home", "light", "summer",
];
const MACHINE_WORDS: &[&str] = &[
    "neon", "signal", "circuit", "echo", "static", "pixel", "orbit", "chrome", "light", "summer",
];

/// Writes the fixture tree under `root`.
pub fn write_wav_fixture(root: &Path, spec: &FixtureSpec) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let jobs = (0..spec.n_human)
        .map(|i| (Label::Human, i))
        .chain((0..spec.n_machine).map(|i| (Label::Machine, i)));
    for (label, i) in jobs {
        let samples = synth_clip(label, spec, &mut rng);
        let stem = root.join(label.to_string()).join(format!("{label}_{i:04}"));
        write_wav(&stem.with_extension("wav"), &samples, spec.sample_rate, 1)?;
        if spec.lyrics {
            let words = if label == Label::Human { HUMAN_WORDS } else { MACHINE_WORDS };
            let line: Vec<&str> = (0..12).map(|_| words[rng.random_range(0..words.len())]).collect();
            let path = stem.with_extension("txt");
            std::fs::write(&path, line.join(" ") + "\n").map_err(|e| crate::Error::io(&path, e))?;
        }
    }
    Ok(())
}

fn synth_clip(label: Label, spec: &FixtureSpec, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let rate = spec.sample_rate as f32;
    let n = (spec.seconds * rate) as usize;
    let mut out = vec![0.0f32; n];
    // A few harmonic voices with slow amplitude envelopes.
    for _ in 0..3 {
        let f0 = rng.random_range(110.0f32..440.0);
        let env_rate = rng.random_range(0.1f32..0.5);
        let phase = rng.random_range(0.0f32..2.0 * PI);
        for h in 1..=4 {
            let amp = 0.08 / h as f32;
            let f = f0 * h as f32;
            if f >= rate / 2.0 {
                break;
            }
            for (t, s) in out.iter_mut().enumerate() {
                let time = t as f32 / rate;
                let env = 0.5 + 0.5 * (2.0 * PI * env_rate * time + phase).sin();
                *s += amp * env * (2.0 * PI * f * time + phase * h as f32).sin();
            }
        }
    }
    for s in out.iter_mut() {
        *s += rng.random_range(-0.01f32..0.01);
    }
    if label == Label::Machine {
        // Generator artefact: a steady high tone between 30% and 60% of the clip.
        let f = 0.3125 * rate;
        let (start, end) = ((0.3 * n as f32) as usize, (0.6 * n as f32) as usize);
        for (t, s) in out.iter_mut().enumerate().take(end).skip(start) {
            *s += 0.2 * (2.0 * PI * f * t as f32 / rate).sin();
        }
    }
    if spec.shift {
        let tones: Vec<(f32, f32)> = (0..24)
            .map(|_| (rng.random_range(0.25f32..0.375) * rate, rng.random_range(0.0..2.0 * PI)))
            .collect();
        for (t, s) in out.iter_mut().enumerate() {
            let time = t as f32 / rate;
            *s += tones
                .iter()
                .map(|&(f, p)| 0.02 * (2.0 * PI * f * time + p).sin())
                .sum::<f32>();
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn patch_threshold_oracle_is_perfect() {
        let spec = PlantedSpec::new(32);
        let data = spec.generate(400, 1);
        let threshold = (spec.background + spec.boost * 0.5 + spec.background * 0.5) / 2.0;
        let correct = data
            .inputs
            .iter()
            .zip(&data.labels)
            .filter(|(g, &l)| (spec.patch_mean(g) > threshold) == (l == Label::Machine))
            .count();
        assert_eq!(correct, 400);
        assert_eq!(data.labels.iter().filter(|&&l| l == Label::Human).count(), 200);
    }

    #[test]
    fn fixture_writes_expected_tree() {
        let dir = tempfile::tempdir().unwrap();
        let spec = FixtureSpec {
            n_human: 2,
            n_machine: 3,
            seconds: 0.5,
            lyrics: true,
            ..FixtureSpec::default()
        };
        write_wav_fixture(dir.path(), &spec).unwrap();
        let m = crate::dataset::build_manifest(dir.path(), &spec.label_rules()).unwrap();
        assert_eq!(m.label_counts(), [2, 3]);
        assert!(m.rows.iter().all(|r| r.lyrics_path.is_some()));
    }
}
