//! Early fusion of frozen audio and lyrics embeddings with a trainable MLP
//! head.

mod cache;
mod fusion;
mod providers;
mod synth;

use serde::{Deserialize, Serialize};

use crate::dataset::AudioClip;
use crate::error::{Error, Result};

pub use cache::{EmbeddingCache, EmbeddingRecord};
pub use fusion::{
    predict_fusion, predict_fusion_label, train_fusion_head, FusionHeadConfig, FusionLayout, FusionModel,
};
pub use providers::{EmbeddingProvider, MelStatsProvider, ProcessProvider, TrigramProvider};
pub use synth::{PairSample, PairSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Audio,
    Text,
}

impl std::fmt::Display for Modality {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Audio => "audio",
            Self::Text => "text",
        })
    }
}

/// What to do with a clip whose lyrics are absent or blank.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LyricsPolicy {
    /// Fail with `MissingLyrics`.
    #[default]
    Strict,
    /// Use an all-zero text embedding.
    ZeroVector,
}

fn checked(provider: &dyn EmbeddingProvider, v: Vec<f32>) -> Result<Vec<f32>> {
    if v.len() != provider.dim() {
        return Err(Error::Provider(format!(
            "{} returned {} values, declared {}",
            provider.provider_id(),
            v.len(),
            provider.dim()
        )));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::Provider(format!("{} returned non-finite values", provider.provider_id())));
    }
    Ok(v)
}

pub fn embed_audio(provider: &dyn EmbeddingProvider, clip: &AudioClip) -> Result<Vec<f32>> {
    if provider.modality() != Modality::Audio {
        return Err(Error::Config(format!("{} is not an audio provider", provider.provider_id())));
    }
    checked(provider, provider.embed_audio(clip)?)
}

/// Text embedding under `policy`; `id` names the sample in errors.
pub fn embed_lyrics(
    provider: &dyn EmbeddingProvider,
    lyrics: Option<&str>,
    policy: LyricsPolicy,
    id: &str,
) -> Result<Vec<f32>> {
    if provider.modality() != Modality::Text {
        return Err(Error::Config(format!("{} is not a text provider", provider.provider_id())));
    }
    match lyrics.map(str::trim).filter(|s| !s.is_empty()) {
        Some(text) => checked(provider, provider.embed_text(text)?),
        None => match policy {
            LyricsPolicy::Strict => Err(Error::MissingLyrics(id.to_string())),
            LyricsPolicy::ZeroVector => Ok(vec![0.0; provider.dim()]),
        },
    }
}

/// Audio embedding followed by text embedding, in that fixed order.
pub fn embed_pair(
    audio: &dyn EmbeddingProvider,
    text: &dyn EmbeddingProvider,
    clip: &AudioClip,
    lyrics: Option<&str>,
    policy: LyricsPolicy,
    id: &str,
) -> Result<Vec<f32>> {
    let mut fused = embed_audio(audio, clip)?;
    fused.extend(embed_lyrics(text, lyrics, policy, id)?);
    Ok(fused)
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Fixed {
        modality: Modality,
        value: Vec<f32>,
    }

    impl EmbeddingProvider for Fixed {
        fn modality(&self) -> Modality {
            self.modality
        }
        fn dim(&self) -> usize {
            self.value.len()
        }
        fn provider_id(&self) -> String {
            format!("fixed-{}", self.modality)
        }
        fn embed_audio(&self, _clip: &AudioClip) -> Result<Vec<f32>> {
            Ok(self.value.clone())
        }
        fn embed_text(&self, _text: &str) -> Result<Vec<f32>> {
            Ok(self.value.clone())
        }
    }

    fn unit(dim: usize, hot: usize) -> Vec<f32> {
        (0..dim).map(|i| (i == hot) as u8 as f32).collect()
    }

    #[test]
    fn concatenation_order_and_policy() {
        let a = Fixed {
            modality: Modality::Audio,
            value: unit(8, 2),
        };
        let t = Fixed {
            modality: Modality::Text,
            value: unit(4, 0),
        };
        let clip = AudioClip::new(vec![0.0; 10], 16_000, "");
        let v = embed_pair(&a, &t, &clip, Some("la"), LyricsPolicy::Strict, "s").unwrap();
        assert_eq!(v.len(), 12);
        assert_eq!(&v[..8], unit(8, 2).as_slice());
        assert_eq!(&v[8..], unit(4, 0).as_slice());
        assert_eq!(v, embed_pair(&a, &t, &clip, Some("la"), LyricsPolicy::Strict, "s").unwrap());
        // Swapped providers are rejected rather than silently reordered.
        assert!(embed_pair(&t, &a, &clip, Some("la"), LyricsPolicy::Strict, "s").is_err());

        assert!(matches!(
            embed_pair(&a, &t, &clip, None, LyricsPolicy::Strict, "s"),
            Err(Error::MissingLyrics(id)) if id == "s"
        ));
        let z = embed_pair(&a, &t, &clip, Some("  "), LyricsPolicy::ZeroVector, "s").unwrap();
        assert_eq!(&z[8..], &[0.0; 4]);
    }

    #[test]
    fn wrong_length_is_a_provider_error() {
        struct Liar;
        impl EmbeddingProvider for Liar {
            fn modality(&self) -> Modality {
                Modality::Text
            }
            fn dim(&self) -> usize {
                3
            }
            fn provider_id(&self) -> String {
                "liar".into()
            }
            fn embed_text(&self, _: &str) -> Result<Vec<f32>> {
                Ok(vec![1.0])
            }
        }
        assert!(matches!(
            embed_lyrics(&Liar, Some("x"), LyricsPolicy::Strict, "s"),
            Err(Error::Provider(_))
        ));
    }
}
