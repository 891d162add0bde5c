use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::Modality;
use crate::dataset::{compute_mel_spectrogram, resample, AudioClip, MelConfig};
use crate::error::{Error, Result};

/// A frozen encoder for one modality. Embedding takes `&self` only, so
/// nothing a caller does can change what a provider returns.
pub trait EmbeddingProvider: Send + Sync {
    fn modality(&self) -> Modality;

    fn dim(&self) -> usize;

    fn provider_id(&self) -> String;

    fn embed_audio(&self, _clip: &AudioClip) -> Result<Vec<f32>> {
        Err(Error::Provider(format!("{} does not embed audio", self.provider_id())))
    }

    fn embed_text(&self, _text: &str) -> Result<Vec<f32>> {
        Err(Error::Provider(format!("{} does not embed text", self.provider_id())))
    }
}

/// Audio embedding from log-mel statistics: per-band mean and standard
/// deviation over frames, in units of the dynamic range.
#[derive(Debug, Clone)]
pub struct MelStatsProvider {
    pub mel: MelConfig,
}

impl Default for MelStatsProvider {
    fn default() -> Self {
        Self {
            mel: MelConfig {
                n_mels: 64,
                fft_window: 1024,
                hop: 256,
                input_side: 8,
                ..MelConfig::default()
            },
        }
    }
}

impl EmbeddingProvider for MelStatsProvider {
    fn modality(&self) -> Modality {
        Modality::Audio
    }

    fn dim(&self) -> usize {
        2 * self.mel.n_mels
    }

    fn provider_id(&self) -> String {
        format!("melstats-{}-{}-{}", self.mel.n_mels, self.mel.fft_window, self.mel.hop)
    }

    fn embed_audio(&self, clip: &AudioClip) -> Result<Vec<f32>> {
        let clip = if clip.sample_rate == self.mel.target_rate {
            clip.clone()
        } else {
            AudioClip::new(
                resample(&clip.samples, clip.sample_rate, self.mel.target_rate)?,
                self.mel.target_rate,
                clip.source_path.clone(),
            )
        };
        let spec = compute_mel_spectrogram(&clip, &self.mel, &clip.source_path)?;
        let range = self.mel.top_db as f32;
        let mut out = Vec::with_capacity(self.dim());
        let frames = spec.grid.ncols().max(1) as f32;
        let mut stds = Vec::with_capacity(self.mel.n_mels);
        for band in spec.grid.rows() {
            let mean = band.sum() / frames;
            let var = band.iter().map(|v| (v - mean).powi(2)).sum::<f32>() / frames;
            out.push(mean / range);
            stds.push(var.sqrt() / range);
        }
        out.extend(stds);
        Ok(out)
    }
}

/// Text embedding by signed feature hashing of character trigrams of each
/// lower-cased word, L2-normalised. Empty text maps to the zero vector.
#[derive(Debug, Clone)]
pub struct TrigramProvider {
    pub dim: usize,
}

impl Default for TrigramProvider {
    fn default() -> Self {
        Self { dim: 256 }
    }
}

impl EmbeddingProvider for TrigramProvider {
    fn modality(&self) -> Modality {
        Modality::Text
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn provider_id(&self) -> String {
        format!("trigram-{}", self.dim)
    }

    fn embed_text(&self, text: &str) -> Result<Vec<f32>> {
        let mut v = vec![0.0f32; self.dim];
        let lower = text.to_lowercase();
        for word in lower.split(|c: char| !c.is_alphanumeric()).filter(|w| !w.is_empty()) {
            let chars: Vec<char> = format!(" {word} ").chars().collect();
            for tri in chars.windows(3) {
                let s: String = tri.iter().collect();
                let h = Sha256::digest(s.as_bytes());
                let bits = u64::from_le_bytes(h[..8].try_into().expect("8 bytes"));
                let sign = if bits >> 63 == 1 { -1.0 } else { 1.0 };
                v[(bits % self.dim as u64) as usize] += sign;
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f32>().sqrt();
        if norm > 0.0 {
            v.iter_mut().for_each(|x| *x /= norm);
        }
        Ok(v)
    }
}

#[derive(Debug, Deserialize)]
struct Handshake {
    provider_id: String,
    dim: usize,
}

#[derive(Debug, Serialize)]
#[serde(rename_all = "lowercase")]
enum Request<'a> {
    Path(&'a str),
    Text(&'a str),
}

#[derive(Debug, Deserialize)]
struct Reply {
    vector: Option<Vec<f32>>,
    error: Option<String>,
}

struct Pipe {
    child: Child,
    stdin: ChildStdin,
    stdout: BufReader<ChildStdout>,
}

/// Provider backed by an external process speaking JSON lines.
///
/// The process first prints `{"provider_id": .., "dim": ..}`. It then answers
/// each request line, `{"path": ..}` for audio or `{"text": ..}` for lyrics,
/// with `{"vector": [..]}` or `{"error": ..}`. Calls are serialised through a
/// mutex, so one process serves concurrent callers one at a time.
pub struct ProcessProvider {
    modality: Modality,
    provider_id: String,
    dim: usize,
    pipe: Mutex<Pipe>,
}

impl ProcessProvider {
    pub fn spawn(command: &[String], modality: Modality) -> Result<Self> {
        let (program, args) = command
            .split_first()
            .ok_or_else(|| Error::Config("provider command is empty".into()))?;
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::Provider(format!("cannot start `{program}`: {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let mut stdout = BufReader::new(child.stdout.take().expect("piped stdout"));
        let mut line = String::new();
        stdout
            .read_line(&mut line)
            .map_err(|e| Error::Provider(format!("handshake failed: {e}")))?;
        let hs: Handshake = serde_json::from_str(line.trim())
            .map_err(|e| Error::Provider(format!("bad handshake `{}`: {e}", line.trim())))?;
        if hs.dim == 0 {
            return Err(Error::Provider("provider declared dim 0".into()));
        }
        Ok(Self {
            modality,
            provider_id: hs.provider_id,
            dim: hs.dim,
            pipe: Mutex::new(Pipe { child, stdin, stdout }),
        })
    }

    fn call(&self, request: &Request) -> Result<Vec<f32>> {
        let mut pipe = self
            .pipe
            .lock()
            .map_err(|_| Error::Provider("provider pipe poisoned".into()))?;
        let fail = |e: std::io::Error| Error::Provider(format!("{}: {e}", self.provider_id));
        let mut msg = serde_json::to_string(request)?;
        msg.push('\n');
        pipe.stdin.write_all(msg.as_bytes()).map_err(fail)?;
        pipe.stdin.flush().map_err(fail)?;
        let mut line = String::new();
        if pipe.stdout.read_line(&mut line).map_err(fail)? == 0 {
            return Err(Error::Provider(format!("{} exited", self.provider_id)));
        }
        let reply: Reply = serde_json::from_str(line.trim())
            .map_err(|e| Error::Provider(format!("bad reply `{}`: {e}", line.trim())))?;
        match (reply.vector, reply.error) {
            (_, Some(e)) => Err(Error::Provider(e)),
            (Some(v), None) if v.len() == self.dim => Ok(v),
            (Some(v), None) => Err(Error::Provider(format!(
                "{} returned {} values, declared {}",
                self.provider_id,
                v.len(),
                self.dim
            ))),
            (None, None) => Err(Error::Provider("reply has no vector".into())),
        }
    }
}

impl Drop for ProcessProvider {
    fn drop(&mut self) {
        if let Ok(pipe) = self.pipe.get_mut() {
            let _ = pipe.child.kill();
            let _ = pipe.child.wait();
        }
    }
}

impl EmbeddingProvider for ProcessProvider {
    fn modality(&self) -> Modality {
        self.modality
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn provider_id(&self) -> String {
        self.provider_id.clone()
    }

    fn embed_audio(&self, clip: &AudioClip) -> Result<Vec<f32>> {
        if clip.source_path.is_empty() {
            return Err(Error::Provider("process providers need an audio file path".into()));
        }
        self.call(&Request::Path(&clip.source_path))
    }

    fn embed_text(&self, text: &str) -> Result<Vec<f32>> {
        self.call(&Request::Text(text))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trigram_is_deterministic_and_normalised() {
        let p = TrigramProvider::default();
        let a = p.embed_text("Neon circuit, neon!").unwrap();
        assert_eq!(a, p.embed_text("neon CIRCUIT neon").unwrap());
        assert_eq!(a.len(), 256);
        assert!((a.iter().map(|x| x * x).sum::<f32>() - 1.0).abs() < 1e-5);
        assert!(p.embed_text("").unwrap().iter().all(|&x| x == 0.0));
        assert!(p.embed_audio(&AudioClip::new(vec![0.0], 16_000, "")).is_err());
    }

    #[test]
    fn mel_stats_separate_tones() {
        let p = MelStatsProvider::default();
        let tone = |f: f32| {
            let s: Vec<f32> = (0..16_000)
                .map(|t| (2.0 * std::f32::consts::PI * f * t as f32 / 16_000.0).sin() * 0.5)
                .collect();
            AudioClip::new(s, 16_000, "")
        };
        let low = p.embed_audio(&tone(300.0)).unwrap();
        let high = p.embed_audio(&tone(3000.0)).unwrap();
        assert_eq!(low.len(), p.dim());
        assert_eq!(low, p.embed_audio(&tone(300.0)).unwrap());
        let dist: f32 = low.iter().zip(&high).map(|(a, b)| (a - b).powi(2)).sum();
        assert!(dist > 1.0);
    }

    #[test]
    fn process_provider_roundtrip() {
        let script = r#"echo '{"provider_id":"stub","dim":3}'; while read line; do echo '{"vector":[1,2,3]}'; done"#;
        let p = ProcessProvider::spawn(&["sh".into(), "-c".into(), script.into()], Modality::Text).unwrap();
        assert_eq!((p.provider_id(), p.dim()), ("stub".to_string(), 3));
        assert_eq!(p.embed_text("x").unwrap(), vec![1.0, 2.0, 3.0]);
        assert_eq!(p.embed_text("y").unwrap(), vec![1.0, 2.0, 3.0]);

        let bad = r#"echo '{"provider_id":"bad","dim":4}'; while read line; do echo '{"vector":[1]}'; done"#;
        let p = ProcessProvider::spawn(&["sh".into(), "-c".into(), bad.into()], Modality::Text).unwrap();
        assert!(matches!(p.embed_text("x"), Err(Error::Provider(_))));
        assert!(matches!(
            ProcessProvider::spawn(&["sh".into(), "-c".into(), "echo nope".into()], Modality::Text),
            Err(Error::Provider(_))
        ));
    }
}
