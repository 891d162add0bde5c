use std::path::Path;

use candle_core::{DType, Device, Tensor};
use candle_nn::{AdamW, Linear, Optimizer, ParamsAdamW, VarMap};
use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Label;
use crate::error::{Error, Result};
use crate::models::layers::{self, Mode};
use crate::models::Standardizer;
use crate::train::TrainConfig;

const HEAD_BLOB: &str = "fusion.safetensors";
const HEAD_HEADER: &str = "fusion.json";

/// Which providers produced the two halves of a fused vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FusionLayout {
    pub audio_dim: usize,
    pub text_dim: usize,
    pub audio_provider: String,
    pub text_provider: String,
}

impl FusionLayout {
    pub fn input_dim(&self) -> usize {
        self.audio_dim + self.text_dim
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FusionHeadConfig {
    pub hidden: Vec<usize>,
    pub dropout: f64,
}

impl Default for FusionHeadConfig {
    fn default() -> Self {
        Self {
            hidden: vec![512, 128],
            dropout: 0.3,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct HeadHeader {
    layout: FusionLayout,
    head: FusionHeadConfig,
    seed: u64,
    mean: Vec<f32>,
    scale: Vec<f32>,
    fingerprint: String,
}

/// Standardisation followed by an MLP (ReLU, dropout) over fused vectors.
pub struct FusionModel {
    pub layout: FusionLayout,
    pub head: FusionHeadConfig,
    seed: u64,
    standardizer: Standardizer,
    vars: VarMap,
    layers: Vec<Linear>,
}

impl std::fmt::Debug for FusionModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FusionModel")
            .field("layout", &self.layout)
            .field("head", &self.head)
            .field("fingerprint", &self.fingerprint())
            .finish()
    }
}

impl FusionModel {
    fn build(layout: FusionLayout, head: FusionHeadConfig, seed: u64, standardizer: Standardizer) -> Result<Self> {
        let vars = VarMap::new();
        let vb = layers::var_builder(&vars);
        let mut dims = vec![layout.input_dim()];
        dims.extend(&head.hidden);
        dims.push(2);
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, d)| layers::linear(vb.pp(format!("fc{i}")), d[0], d[1]))
            .collect::<candle_core::Result<Vec<_>>>()?;
        layers::seeded_init(&vars, seed)?;
        Ok(Self {
            layout,
            head,
            seed,
            standardizer,
            vars,
            layers,
        })
    }

    /// SHA-256 over the head parameters.
    pub fn fingerprint(&self) -> String {
        layers::snapshot(&self.vars)
            .and_then(|t| layers::fingerprint_tensors(&t))
            .unwrap_or_default()
    }

    fn forward(&self, x: &Tensor, mode: &mut Mode) -> Result<Tensor> {
        let mut h = x.clone();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layers::apply(layer, &h)?;
            if i < last {
                h = layers::dropout(&h.relu()?, self.head.dropout, mode)?;
            }
        }
        Ok(h)
    }

    fn standardized(&self, rows: &[&[f32]]) -> Result<Tensor> {
        let d = self.layout.input_dim();
        let mut flat = Vec::with_capacity(rows.len() * d);
        for r in rows {
            let mut v = r.to_vec();
            self.standardizer.apply(&mut v);
            flat.extend(v);
        }
        Ok(Tensor::from_vec(flat, (rows.len(), d), &Device::Cpu)?)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.vars.save(dir.join(HEAD_BLOB))?;
        let header = HeadHeader {
            layout: self.layout.clone(),
            head: self.head.clone(),
            seed: self.seed,
            mean: self.standardizer.mean.to_vec(),
            scale: self.standardizer.scale.to_vec(),
            fingerprint: self.fingerprint(),
        };
        crate::io::write_json(&dir.join(HEAD_HEADER), &header)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let header_path = dir.join(HEAD_HEADER);
        let blob = dir.join(HEAD_BLOB);
        if !header_path.is_file() || !blob.is_file() {
            return Err(Error::MissingArtifact(dir.display().to_string()));
        }
        let h: HeadHeader = crate::io::read_json(&header_path)?;
        let standardizer = Standardizer {
            mean: Array1::from(h.mean),
            scale: Array1::from(h.scale),
        };
        let mut model = Self::build(h.layout, h.head, h.seed, standardizer)?;
        model.vars.load(&blob)?;
        if model.fingerprint() != h.fingerprint {
            return Err(Error::Config(format!("fusion head {} fingerprint mismatch", dir.display())));
        }
        Ok(model)
    }
}

/// Trains a fresh head on `(fused vector, label)` pairs. Only head
/// parameters are optimised; the vectors are plain data.
pub fn train_fusion_head(
    pairs: &[(Vec<f32>, Label)],
    layout: FusionLayout,
    head: FusionHeadConfig,
    cfg: &TrainConfig,
) -> Result<FusionModel> {
    cfg.validate()?;
    let d = layout.input_dim();
    if pairs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if let Some((v, _)) = pairs.iter().find(|(v, _)| v.len() != d) {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: v.len(),
        });
    }
    if pairs.iter().any(|(v, _)| v.iter().any(|x| !x.is_finite())) {
        return Err(Error::NaNInput);
    }
    let first = pairs[0].1;
    if pairs.iter().all(|(_, l)| *l == first) {
        return Err(Error::SingleClass);
    }
    let features = Array2::from_shape_fn((pairs.len(), d), |(i, j)| pairs[i].0[j]);
    let model = FusionModel::build(layout, head, cfg.seed, Standardizer::fit(&features))?;

    let vars: Vec<candle_core::Var> = layers::trainable_vars(&model.vars).into_iter().map(|(_, v)| v).collect();
    let mut opt = AdamW::new(
        vars,
        ParamsAdamW {
            lr: cfg.learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        },
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut mode = Mode::train(cfg.seed.wrapping_mul(7_919).wrapping_add(epoch as u64));
        for chunk in order.chunks(cfg.batch_size) {
            let rows: Vec<&[f32]> = chunk.iter().map(|&i| pairs[i].0.as_slice()).collect();
            let x = model.standardized(&rows)?;
            let y: Vec<u32> = chunk.iter().map(|&i| pairs[i].1.index() as u32).collect();
            let y = Tensor::from_vec(y, chunk.len(), &Device::Cpu)?;
            let loss = candle_nn::loss::cross_entropy(&model.forward(&x, &mut mode)?, &y)?;
            if !loss.to_scalar::<f32>()?.is_finite() {
                return Err(Error::Divergence { epoch });
            }
            opt.backward_step(&loss)?;
        }
    }
    Ok(model)
}

/// Class probabilities `[human, machine]` for one fused vector.
pub fn predict_fusion(model: &FusionModel, fused: &[f32]) -> Result<[f32; 2]> {
    let d = model.layout.input_dim();
    if fused.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: fused.len(),
        });
    }
    if fused.iter().any(|x| !x.is_finite()) {
        return Err(Error::NaNInput);
    }
    let x = model.standardized(&[fused])?;
    let logits = model.forward(&x, &mut Mode::eval())?;
    let p = candle_nn::ops::softmax(&logits.to_dtype(DType::F64)?, 1)?
        .flatten_all()?
        .to_vec1::<f64>()?;
    Ok([p[0] as f32, p[1] as f32])
}

/// Label with the larger fused probability; ties go to human.
pub fn predict_fusion_label(model: &FusionModel, fused: &[f32]) -> Result<Label> {
    let p = predict_fusion(model, fused)?;
    Ok(Label::from_index(if p[1] > p[0] { 1 } else { 0 }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    fn layout(a: usize, t: usize) -> FusionLayout {
        FusionLayout {
            audio_dim: a,
            text_dim: t,
            audio_provider: "a".into(),
            text_provider: "t".into(),
        }
    }

    fn cfg() -> TrainConfig {
        TrainConfig {
            batch_size: 16,
            epochs: 15,
            seed: 3,
            ..TrainConfig::default()
        }
    }

    fn blobs(n: usize, seed: u64) -> Vec<(Vec<f32>, Label)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0f32, 1.0).unwrap();
        (0..n)
            .map(|i| {
                let label = if i % 2 == 0 { Label::Human } else { Label::Machine };
                let centre = if label == Label::Human { -3.0 } else { 3.0 };
                let v = (0..6).map(|_| centre + noise.sample(&mut rng)).collect();
                (v, label)
            })
            .collect()
    }

    #[test]
    fn separated_blobs_are_learned() {
        let train = blobs(120, 1);
        let val = blobs(60, 2);
        let m = train_fusion_head(&train, layout(4, 2), FusionHeadConfig::default(), &cfg()).unwrap();
        let correct = val
            .iter()
            .filter(|(v, l)| predict_fusion_label(&m, v).unwrap() == *l)
            .count();
        assert_eq!(correct, val.len());
        let p = predict_fusion(&m, &val[0].0).unwrap();
        assert!(p.iter().all(|&x| x >= 0.0) && ((p[0] + p[1]) - 1.0).abs() < 1e-6);
        assert_eq!(p, predict_fusion(&m, &val[0].0).unwrap());
    }

    #[test]
    fn errors_and_persistence() {
        let mut train = blobs(20, 1);
        assert!(matches!(
            predict_fusion(
                &train_fusion_head(&train, layout(4, 2), FusionHeadConfig::default(), &cfg()).unwrap(),
                &[0.0; 5]
            ),
            Err(Error::DimensionMismatch { expected: 6, got: 5 })
        ));
        let m = train_fusion_head(&train, layout(4, 2), FusionHeadConfig::default(), &cfg()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        m.save(dir.path()).unwrap();
        let back = FusionModel::load(dir.path()).unwrap();
        assert_eq!(back.fingerprint(), m.fingerprint());
        assert_eq!(predict_fusion(&back, &train[0].0).unwrap(), predict_fusion(&m, &train[0].0).unwrap());

        train[3].0.push(1.0);
        assert!(matches!(
            train_fusion_head(&train, layout(4, 2), FusionHeadConfig::default(), &cfg()),
            Err(Error::DimensionMismatch { .. })
        ));
        let one: Vec<_> = blobs(10, 1).into_iter().filter(|(_, l)| *l == Label::Human).collect();
        assert!(matches!(
            train_fusion_head(&one, layout(4, 2), FusionHeadConfig::default(), &cfg()),
            Err(Error::SingleClass)
        ));
    }
}
