use std::path::Path;

use rubato::{
    Resampler, SincFixedIn, SincInterpolationParameters, SincInterpolationType, WindowFunction,
};

use crate::error::{Error, Result};

/// Decoded mono waveform.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
    pub source_path: String,
}

impl AudioClip {
    pub fn new(samples: Vec<f32>, sample_rate: u32, source_path: impl Into<String>) -> Self {
        Self {
            samples,
            sample_rate,
            source_path: source_path.into(),
        }
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Zero-pads or centre-crops to exactly `seconds`.
    pub fn fit_duration(&self, seconds: f64) -> AudioClip {
        let target = (seconds * self.sample_rate as f64).round() as usize;
        let samples = fit_length(&self.samples, target);
        AudioClip::new(samples, self.sample_rate, self.source_path.clone())
    }
}

fn fit_length(samples: &[f32], target: usize) -> Vec<f32> {
    use std::cmp::Ordering;
    match samples.len().cmp(&target) {
        Ordering::Equal => samples.to_vec(),
        Ordering::Less => {
            let mut out = samples.to_vec();
            out.resize(target, 0.0);
            out
        }
        Ordering::Greater => {
            let start = (samples.len() - target) / 2;
            samples[start..start + target].to_vec()
        }
    }
}

/// Decodes a WAV file, mixes it down to mono and resamples to `target_rate`.
///
/// A file already at `target_rate` is returned exactly as decoded.
pub fn load_audio(path: &Path, target_rate: u32) -> Result<AudioClip> {
    let display = path.display().to_string();
    let decode_err = |reason: String| Error::Decode {
        path: display.clone(),
        reason,
    };
    let mut reader = hound::WavReader::open(path).map_err(|e| decode_err(e.to_string()))?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    if channels == 0 || spec.sample_rate == 0 {
        return Err(decode_err("invalid WAV header".into()));
    }
    let interleaved: Vec<f32> = match spec.sample_format {
        hound::SampleFormat::Float => reader
            .samples::<f32>()
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| decode_err(e.to_string()))?,
        hound::SampleFormat::Int => {
            let scale = 1.0 / (1u64 << (spec.bits_per_sample - 1)) as f32;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f32 * scale))
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| decode_err(e.to_string()))?
        }
    };
    let expected = reader.len() as usize;
    if interleaved.len() != expected || interleaved.len() % channels != 0 {
        return Err(decode_err(format!(
            "truncated data: header declares {expected} samples, found {}",
            interleaved.len()
        )));
    }
    if interleaved.is_empty() {
        return Err(Error::EmptyAudio);
    }
    let mono: Vec<f32> = if channels == 1 {
        interleaved
    } else {
        interleaved
            .chunks_exact(channels)
            .map(|frame| frame.iter().sum::<f32>() / channels as f32)
            .collect()
    };
    if mono.iter().any(|v| !v.is_finite()) {
        return Err(decode_err("non-finite sample values".into()));
    }
    let samples = if spec.sample_rate == target_rate {
        mono
    } else {
        resample(&mono, spec.sample_rate, target_rate)?
    };
    Ok(AudioClip::new(samples, target_rate, display))
}

/// Band-limited sinc resampling. The output holds `round(len * to / from)` samples.
pub fn resample(samples: &[f32], from: u32, to: u32) -> Result<Vec<f32>> {
    if samples.is_empty() {
        return Err(Error::EmptyAudio);
    }
    if from == to {
        return Ok(samples.to_vec());
    }
    let ratio = to as f64 / from as f64;
    let expected = (samples.len() as f64 * ratio).round() as usize;
    let params = SincInterpolationParameters {
        sinc_len: 256,
        f_cutoff: 0.95,
        interpolation: SincInterpolationType::Linear,
        oversampling_factor: 256,
        window: WindowFunction::BlackmanHarris2,
    };
    let resample_err = |e: &dyn std::fmt::Display| Error::Decode {
        path: String::new(),
        reason: format!("resampling failed: {e}"),
    };
    let chunk = 8192usize;
    let mut resampler =
        SincFixedIn::<f64>::new(ratio, 1.0, params, chunk, 1).map_err(|e| resample_err(&e))?;
    let delay = resampler.output_delay();
    let input: Vec<f64> = samples.iter().map(|&v| v as f64).collect();
    let mut out: Vec<f64> = Vec::with_capacity(expected + delay + chunk);
    let mut pos = 0;
    while pos + chunk <= input.len() {
        let block = resampler
            .process(&[&input[pos..pos + chunk]], None)
            .map_err(|e| resample_err(&e))?;
        out.extend_from_slice(&block[0]);
        pos += chunk;
    }
    if pos < input.len() {
        let block = resampler
            .process_partial(Some(&[&input[pos..]]), None)
            .map_err(|e| resample_err(&e))?;
        out.extend_from_slice(&block[0]);
    }
    while out.len() < expected + delay {
        let block = resampler
            .process_partial::<&[f64]>(None, None)
            .map_err(|e| resample_err(&e))?;
        if block[0].is_empty() {
            break;
        }
        out.extend_from_slice(&block[0]);
    }
    let mut result: Vec<f32> = out.iter().skip(delay).take(expected).map(|&v| v as f32).collect();
    result.resize(expected, 0.0);
    Ok(result)
}

/// Writes a 16-bit PCM WAV. Used for fixtures.
pub fn write_wav(path: &Path, samples: &[f32], sample_rate: u32, channels: u16) -> Result<()> {
    crate::io::ensure_parent(path)?;
    let spec = hound::WavSpec {
        channels,
        sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let to_err = |e: hound::Error| Error::io(path, std::io::Error::other(e.to_string()));
    let mut writer = hound::WavWriter::create(path, spec).map_err(to_err)?;
    for &s in samples {
        let v = (s.clamp(-1.0, 1.0) * i16::MAX as f32).round() as i16;
        writer.write_sample(v).map_err(to_err)?;
    }
    writer.finalize().map_err(to_err)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine(freq: f32, rate: u32, seconds: f32) -> Vec<f32> {
        let n = (rate as f32 * seconds) as usize;
        (0..n)
            .map(|i| 0.5 * (2.0 * std::f32::consts::PI * freq * i as f32 / rate as f32).sin())
            .collect()
    }

    #[test]
    fn stereo_44k_resamples_to_mono_16k() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("stereo.wav");
        let mono = sine(440.0, 44_100, 10.0);
        let stereo: Vec<f32> = mono.iter().flat_map(|&v| [v, v]).collect();
        write_wav(&path, &stereo, 44_100, 2).unwrap();
        let clip = load_audio(&path, 16_000).unwrap();
        assert_eq!(clip.sample_rate, 16_000);
        assert_eq!(clip.samples.len(), 160_000);
        assert!((clip.duration_s() - 10.0).abs() < 1.0 / 16_000.0);
        assert!(clip.samples.iter().all(|v| v.is_finite()));
        // The tone survives resampling with roughly its original amplitude.
        let peak = clip.samples[1000..150_000].iter().fold(0.0f32, |m, v| m.max(v.abs()));
        assert!((peak - 0.5).abs() < 0.02, "peak {peak}");
    }

    #[test]
    fn target_rate_input_is_decoded_verbatim() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mono.wav");
        let samples = sine(220.0, 16_000, 1.0);
        write_wav(&path, &samples, 16_000, 1).unwrap();
        let clip = load_audio(&path, 16_000).unwrap();

        let mut reader = hound::WavReader::open(&path).unwrap();
        let decoded: Vec<f32> = reader
            .samples::<i32>()
            .map(|s| s.unwrap() as f32 / 32768.0)
            .collect();
        assert_eq!(clip.samples.len(), decoded.len());
        assert!(clip
            .samples
            .iter()
            .zip(&decoded)
            .all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn truncated_file_is_a_decode_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cut.wav");
        write_wav(&path, &sine(220.0, 16_000, 0.5), 16_000, 1).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
        assert!(matches!(load_audio(&path, 16_000), Err(Error::Decode { .. })));

        std::fs::write(&path, b"RIFF garbage").unwrap();
        assert!(matches!(load_audio(&path, 16_000), Err(Error::Decode { .. })));
    }

    #[test]
    fn empty_wav_is_empty_audio() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.wav");
        write_wav(&path, &[], 16_000, 1).unwrap();
        assert!(matches!(load_audio(&path, 16_000), Err(Error::EmptyAudio)));
    }

    #[test]
    fn fit_duration_pads_and_crops() {
        let clip = AudioClip::new(vec![1.0; 10], 10, "x");
        assert_eq!(clip.fit_duration(1.0).samples, vec![1.0; 10]);
        let padded = clip.fit_duration(1.5).samples;
        assert_eq!(padded.len(), 15);
        assert_eq!(&padded[10..], &[0.0; 5]);
        let long = AudioClip::new((0..20).map(|v| v as f32).collect(), 10, "x");
        assert_eq!(long.fit_duration(1.0).samples, (5..15).map(|v| v as f32).collect::<Vec<_>>());
    }

    #[test]
    fn resampling_same_rate_keeps_length() {
        let s = sine(100.0, 8000, 0.3);
        assert_eq!(resample(&s, 8000, 8000).unwrap(), s);
        assert_eq!(resample(&s, 8000, 16_000).unwrap().len(), 2 * s.len());
    }
}
