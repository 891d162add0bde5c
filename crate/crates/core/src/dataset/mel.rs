use std::sync::Arc;

use ndarray::Array2;
use rustfft::{num_complex::Complex, Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use super::audio::AudioClip;
use crate::error::{Error, Result};
use crate::grid::{all_finite, min_max_normalize, resize_bilinear};

/// Power floor used before the log, and for silent clips.
const AMIN: f64 = 1e-10;

/// Mel feature extraction settings.
///
/// Framing is centred: the signal is zero-padded by `fft_window / 2` on both
/// sides, so a clip of `n` samples yields `n / hop + 1` frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MelConfig {
    pub target_rate: u32,
    pub n_mels: usize,
    pub fft_window: usize,
    pub hop: usize,
    /// Edge length of the square model input.
    pub input_side: usize,
    /// Dynamic range kept below the per-clip maximum, in dB.
    pub top_db: f64,
    /// Clips are padded or centre-cropped to this length before extraction.
    pub clip_seconds: f64,
}

impl Default for MelConfig {
    fn default() -> Self {
        Self {
            target_rate: 16_000,
            n_mels: 128,
            fft_window: 2048,
            hop: 512,
            input_side: 224,
            top_db: 80.0,
            clip_seconds: 10.0,
        }
    }
}

impl MelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hop == 0 || self.hop > self.fft_window {
            return Err(Error::Config(format!(
                "hop ({}) must be in 1..=fft_window ({})",
                self.hop, self.fft_window
            )));
        }
        if self.n_mels == 0 || self.input_side == 0 || self.target_rate == 0 {
            return Err(Error::Config(
                "n_mels, input_side and target_rate must be positive".into(),
            ));
        }
        if !(self.top_db > 0.0) || !(self.clip_seconds > 0.0) {
            return Err(Error::Config("top_db and clip_seconds must be positive".into()));
        }
        Ok(())
    }

    /// Number of frames produced for `n_samples` under centred framing.
    pub fn frame_count(&self, n_samples: usize) -> usize {
        n_samples / self.hop + 1
    }

    /// Value of silent cells: the floor of the dB range.
    pub fn db_floor(&self) -> f32 {
        -self.top_db as f32
    }
}

/// Log-mel grid (mel bin x frame, dB relative to the clip maximum) plus the
/// normalised square model input.
#[derive(Debug, Clone, PartialEq)]
pub struct MelSpectrogram {
    pub grid: Array2<f32>,
    pub resized: Array2<f32>,
    pub config: MelConfig,
    pub source_id: String,
}

/// Computes the log-mel spectrogram of `clip` and its resized model input.
pub fn compute_mel_spectrogram(
    clip: &AudioClip,
    cfg: &MelConfig,
    source_id: &str,
) -> Result<MelSpectrogram> {
    cfg.validate()?;
    if clip.sample_rate != cfg.target_rate {
        return Err(Error::Config(format!(
            "clip sample rate {} differs from target rate {}",
            clip.sample_rate, cfg.target_rate
        )));
    }
    if clip.samples.is_empty() {
        return Err(Error::EmptyAudio);
    }
    let power = power_spectrogram(&clip.samples, cfg.fft_window, cfg.hop);
    let filters = mel_filterbank(cfg.target_rate, cfg.fft_window, cfg.n_mels);
    let mel = filters.dot(&power);
    let grid = power_to_db(&mel, cfg.top_db);
    let resized = resize_bilinear(&min_max_normalize(&grid), cfg.input_side, cfg.input_side);
    if !all_finite(&resized) {
        return Err(Error::NaNInput);
    }
    Ok(MelSpectrogram {
        grid,
        resized,
        config: cfg.clone(),
        source_id: source_id.to_string(),
    })
}

/// Periodic Hann window.
fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
        .collect()
}

/// |STFT|^2 with centred, zero-padded framing. Shape: (fft/2 + 1) x frames.
fn power_spectrogram(samples: &[f32], n_fft: usize, hop: usize) -> Array2<f64> {
    let pad = n_fft / 2;
    let mut padded = vec![0.0f64; samples.len() + 2 * pad];
    for (dst, &src) in padded[pad..].iter_mut().zip(samples) {
        *dst = src as f64;
    }
    let frames = samples.len() / hop + 1;
    let bins = n_fft / 2 + 1;
    let window = hann(n_fft);
    let fft: Arc<dyn Fft<f64>> = FftPlanner::new().plan_fft_forward(n_fft);
    let mut out = Array2::<f64>::zeros((bins, frames));
    let mut buf = vec![Complex::new(0.0, 0.0); n_fft];
    for t in 0..frames {
        let start = t * hop;
        for (i, slot) in buf.iter_mut().enumerate() {
            let v = padded.get(start + i).copied().unwrap_or(0.0);
            *slot = Complex::new(v * window[i], 0.0);
        }
        fft.process(&mut buf);
        for k in 0..bins {
            out[[k, t]] = buf[k].norm_sqr();
        }
    }
    out
}

fn hz_to_mel(hz: f64) -> f64 {
    let f_sp = 200.0 / 3.0;
    let min_log_hz = 1000.0;
    let min_log_mel = min_log_hz / f_sp;
    let logstep = 6.4f64.ln() / 27.0;
    if hz >= min_log_hz {
        min_log_mel + (hz / min_log_hz).ln() / logstep
    } else {
        hz / f_sp
    }
}

fn mel_to_hz(mel: f64) -> f64 {
    let f_sp = 200.0 / 3.0;
    let min_log_hz = 1000.0;
    let min_log_mel = min_log_hz / f_sp;
    let logstep = 6.4f64.ln() / 27.0;
    if mel >= min_log_mel {
        min_log_hz * (logstep * (mel - min_log_mel)).exp()
    } else {
        mel * f_sp
    }
}

/// Slaney-style triangular mel filterbank with area normalisation.
pub fn mel_filterbank(sample_rate: u32, n_fft: usize, n_mels: usize) -> Array2<f64> {
    let bins = n_fft / 2 + 1;
    let fmax = sample_rate as f64 / 2.0;
    let (mel_lo, mel_hi) = (hz_to_mel(0.0), hz_to_mel(fmax));
    let points: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(mel_lo + (mel_hi - mel_lo) * i as f64 / (n_mels + 1) as f64))
        .collect();
    let fft_freqs: Vec<f64> = (0..bins)
        .map(|k| k as f64 * sample_rate as f64 / n_fft as f64)
        .collect();
    let mut weights = Array2::<f64>::zeros((n_mels, bins));
    for m in 0..n_mels {
        let (lo, centre, hi) = (points[m], points[m + 1], points[m + 2]);
        let enorm = 2.0 / (hi - lo);
        for (k, &f) in fft_freqs.iter().enumerate() {
            let lower = (f - lo) / (centre - lo);
            let upper = (hi - f) / (hi - centre);
            weights[[m, k]] = lower.min(upper).max(0.0) * enorm;
        }
    }
    weights
}

/// dB relative to the grid maximum, floored at `-top_db`. A silent grid is all floor.
fn power_to_db(power: &Array2<f64>, top_db: f64) -> Array2<f32> {
    let peak = power.iter().cloned().fold(0.0f64, f64::max);
    if peak <= AMIN {
        return Array2::from_elem(power.dim(), -top_db as f32);
    }
    let ref_db = 10.0 * peak.log10();
    power.mapv(|p| {
        let db = 10.0 * p.max(AMIN).log10() - ref_db;
        db.max(-top_db) as f32
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Counts frames by literally sliding a window over the padded signal.
    fn framing_oracle(n: usize, n_fft: usize, hop: usize) -> usize {
        let padded = n + 2 * (n_fft / 2);
        let mut count = 0;
        let mut start = 0;
        while start + n_fft <= padded {
            count += 1;
            start += hop;
        }
        count
    }

    fn noise_clip(n: usize, seed: u64) -> AudioClip {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let samples = (0..n).map(|_| rng.random_range(-0.5f32..0.5)).collect();
        AudioClip::new(samples, 16_000, "noise")
    }

    #[test]
    fn ten_second_clip_shape() {
        assert_eq!(framing_oracle(160_000, 2048, 512), 313);
        let cfg = MelConfig::default();
        let mel = compute_mel_spectrogram(&noise_clip(160_000, 1), &cfg, "x").unwrap();
        assert_eq!(mel.grid.dim(), (128, 313));
        assert_eq!(mel.resized.dim(), (224, 224));
        assert!(mel.resized.iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v)));
        assert!(mel.grid.iter().all(|&v| (-80.0..=0.0).contains(&v)));
    }

    #[test]
    fn frame_count_matches_oracle_for_random_lengths() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let cfg = MelConfig {
            n_mels: 16,
            fft_window: 256,
            hop: 64,
            input_side: 8,
            ..MelConfig::default()
        };
        for _ in 0..100 {
            let n = rng.random_range(1..4000);
            let mel = compute_mel_spectrogram(&noise_clip(n, n as u64), &cfg, "x").unwrap();
            assert_eq!(mel.grid.nrows(), 16);
            assert_eq!(mel.grid.ncols(), framing_oracle(n, 256, 64));
            assert_eq!(mel.grid.ncols(), cfg.frame_count(n));
            assert!(all_finite(&mel.resized));
        }
    }

    #[test]
    fn silence_is_all_floor() {
        let cfg = MelConfig::default();
        let clip = AudioClip::new(vec![0.0; 16_000], 16_000, "silence");
        let mel = compute_mel_spectrogram(&clip, &cfg, "s").unwrap();
        assert!(mel.grid.iter().all(|&v| v == cfg.db_floor()));
        assert!(mel.resized.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn errors() {
        let cfg = MelConfig {
            hop: 4096,
            ..MelConfig::default()
        };
        let clip = noise_clip(1000, 2);
        assert!(matches!(compute_mel_spectrogram(&clip, &cfg, "x"), Err(Error::Config(_))));
        let empty = AudioClip::new(vec![], 16_000, "e");
        assert!(matches!(
            compute_mel_spectrogram(&empty, &MelConfig::default(), "x"),
            Err(Error::EmptyAudio)
        ));
        let wrong_rate = AudioClip::new(vec![0.1; 100], 8000, "w");
        assert!(matches!(
            compute_mel_spectrogram(&wrong_rate, &MelConfig::default(), "x"),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn tone_energy_lands_in_expected_band() {
        let rate = 16_000;
        let samples: Vec<f32> = (0..rate)
            .map(|i| (2.0 * std::f32::consts::PI * 1000.0 * i as f32 / rate as f32).sin())
            .collect();
        let cfg = MelConfig::default();
        let mel = compute_mel_spectrogram(&AudioClip::new(samples, rate, "t"), &cfg, "t").unwrap();
        let mid = mel.grid.ncols() / 2;
        let peak_bin = (0..cfg.n_mels)
            .max_by(|&a, &b| mel.grid[[a, mid]].total_cmp(&mel.grid[[b, mid]]))
            .unwrap();
        let filters = mel_filterbank(rate, cfg.fft_window, cfg.n_mels);
        let k_1k = 1000 * cfg.fft_window / rate as usize;
        let expected = (0..cfg.n_mels)
            .max_by(|&a, &b| filters[[a, k_1k]].total_cmp(&filters[[b, k_1k]]))
            .unwrap();
        assert!((peak_bin as i64 - expected as i64).abs() <= 1);
    }
}
