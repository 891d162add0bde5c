//! Attribution maps: Integrated Gradients, occlusion, CAM, Grad-CAM, LIME,
//! plus thresholding, rendering and on-disk heatmaps.

mod cam;
mod ig;
mod lime;
mod occlusion;
mod render;
mod store;
mod threshold;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use candle_core::{DType, Device, Tensor, Var};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

pub use cam::{cam, cam_raw, cosine_similarity, grad_cam};
pub use ig::integrated_gradients;
pub use lime::{lime_explain, Segmentation};
pub use occlusion::{occlusion_positions, occlusion_sensitivity};
pub use render::{render_figure_svg, render_overlay, encode_png, RenderSize};
pub use store::{read_heatmap, write_heatmap, HeatmapMeta};
pub use threshold::{threshold_mass, threshold_topk, BinaryMask, Polarity};

use crate::dataset::LabeledInputs;
use crate::error::{Error, Result};
use crate::models::{softmax_rows, Classifier};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Technique {
    Ig,
    Occlusion,
    Cam,
    GradCam,
    Lime,
}

impl Technique {
    pub const ALL: [Technique; 5] = [Self::Ig, Self::Occlusion, Self::Cam, Self::GradCam, Self::Lime];

    pub fn name(self) -> &'static str {
        match self {
            Self::Ig => "ig",
            Self::Occlusion => "occlusion",
            Self::Cam => "cam",
            Self::GradCam => "gradcam",
            Self::Lime => "lime",
        }
    }

    /// Label used in report tables.
    pub fn display_name(self) -> &'static str {
        match self {
            Self::Ig => "IG",
            Self::Occlusion => "Occlusion",
            Self::Cam => "CAM",
            Self::GradCam => "Grad-CAM",
            Self::Lime => "LIME",
        }
    }

    pub fn is_stochastic(self) -> bool {
        self == Self::Lime
    }
}

impl fmt::Display for Technique {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Technique {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown technique `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttributionMap {
    pub values: Array2<f32>,
    pub technique: Technique,
    pub target_class: usize,
    pub sample_id: String,
    pub seed: Option<u64>,
    pub params: BTreeMap<String, f64>,
}

impl AttributionMap {
    pub(crate) fn new(values: Array2<f32>, technique: Technique, target_class: usize) -> Self {
        Self {
            values,
            technique,
            target_class,
            sample_id: String::new(),
            seed: None,
            params: BTreeMap::new(),
        }
    }

    pub fn with_sample_id(mut self, id: impl Into<String>) -> Self {
        self.sample_id = id.into();
        self
    }
}

/// What attribution methods need from a model. Inputs are `N x 1 x H x W`
/// tensors and scores are `N x C` pre-softmax class scores.
pub trait Explainable {
    fn input_hw(&self) -> (usize, usize);

    fn scores(&self, x: &Tensor) -> Result<Tensor>;

    /// Whether `scores` can be backpropagated to its input.
    fn differentiable(&self) -> bool {
        true
    }

    fn feature_layers(&self) -> Vec<String> {
        Vec::new()
    }

    fn activations(&self, _x: &Tensor, layer: &str) -> Result<Tensor> {
        Err(Error::LayerNotFound(layer.to_string()))
    }

    /// Scores computed from the activations of `layer`.
    fn scores_from(&self, _activations: &Tensor, layer: &str) -> Result<Tensor> {
        Err(Error::LayerNotFound(layer.to_string()))
    }

    /// `(layer, C x K weights)` when the model ends in GAP + linear.
    fn cam_head(&self) -> Option<(String, Tensor)> {
        None
    }
}

impl Explainable for Classifier {
    fn input_hw(&self) -> (usize, usize) {
        Classifier::input_hw(self)
    }

    fn scores(&self, x: &Tensor) -> Result<Tensor> {
        self.logits(x)
    }

    fn differentiable(&self) -> bool {
        !self.is_kernel()
    }

    fn feature_layers(&self) -> Vec<String> {
        Classifier::feature_layers(self).into_iter().map(String::from).collect()
    }

    fn activations(&self, x: &Tensor, layer: &str) -> Result<Tensor> {
        Classifier::activations(self, x, layer)
    }

    fn scores_from(&self, a: &Tensor, layer: &str) -> Result<Tensor> {
        self.logits_from(a, layer)
    }

    fn cam_head(&self) -> Option<(String, Tensor)> {
        Classifier::cam_head(self).map(|(l, w)| (l.to_string(), w))
    }
}

pub(crate) fn check_input<M: Explainable + ?Sized>(model: &M, input: &Array2<f32>) -> Result<()> {
    let (h, w) = model.input_hw();
    if input.dim() != (h, w) {
        return Err(Error::Shape(format!("model expects {h}x{w}, input is {:?}", input.dim())));
    }
    if !crate::grid::all_finite(input) {
        return Err(Error::NaNInput);
    }
    Ok(())
}

pub(crate) fn to_tensor(grids: &[&Array2<f32>]) -> Result<Tensor> {
    crate::models::batch_tensor(grids)
}

pub(crate) fn from_tensor_2d(t: &Tensor) -> Result<Array2<f32>> {
    let (h, w) = t.dims2()?;
    let data = t.to_dtype(DType::F32)?.flatten_all()?.to_vec1::<f32>()?;
    Array2::from_shape_vec((h, w), data).map_err(|e| Error::Shape(e.to_string()))
}

/// Target-class scores for each grid, evaluated in batches.
pub(crate) fn target_scores<M: Explainable + ?Sized>(
    model: &M,
    grids: &[Array2<f32>],
    target: usize,
) -> Result<Vec<f32>> {
    let mut out = Vec::with_capacity(grids.len());
    for chunk in grids.chunks(64) {
        let refs: Vec<&Array2<f32>> = chunk.iter().collect();
        let s = model.scores(&to_tensor(&refs)?)?;
        out.extend(s.narrow(1, target, 1)?.flatten_all()?.to_vec1::<f32>()?);
    }
    Ok(out)
}

/// Gradient of the summed target score with respect to the input batch.
pub(crate) fn input_gradient<M: Explainable + ?Sized>(model: &M, x: &Tensor, target: usize) -> Result<Tensor> {
    if !model.differentiable() {
        return Err(Error::NonDifferentiableModel);
    }
    let var = Var::from_tensor(x)?;
    let s = model.scores(var.as_tensor())?.narrow(1, target, 1)?.sum_all()?;
    let grads = s.backward()?;
    match grads.get(var.as_tensor()) {
        Some(g) => Ok(g.clone()),
        None => Ok(Tensor::zeros(x.shape(), DType::F32, &Device::Cpu)?),
    }
}

/// Predicted class (argmax of scores) for one input.
pub fn predicted_class<M: Explainable + ?Sized>(model: &M, input: &Array2<f32>) -> Result<usize> {
    check_input(model, input)?;
    let s = model.scores(&to_tensor(&[input])?)?.flatten_all()?.to_vec1::<f32>()?;
    Ok(s
        .iter()
        .enumerate()
        .fold((0, f32::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
        .0)
}

fn resolve_target<M: Explainable + ?Sized>(model: &M, input: &Array2<f32>, target: Option<usize>) -> Result<usize> {
    match target {
        Some(t) => Ok(t),
        None => predicted_class(model, input),
    }
}

/// Parameters for every technique.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct XaiConfig {
    pub ig_steps: usize,
    pub occlusion_patch: usize,
    pub occlusion_stride: usize,
    pub fill: f32,
    /// LIME segments per side (grid segmentation).
    pub lime_grid: usize,
    pub lime_samples: usize,
    pub lime_ridge: f64,
    /// Grad-CAM layer; the last feature layer when unset.
    pub gradcam_layer: Option<String>,
}

impl Default for XaiConfig {
    fn default() -> Self {
        Self {
            ig_steps: 64,
            occlusion_patch: 16,
            occlusion_stride: 8,
            fill: 0.0,
            lime_grid: 8,
            lime_samples: 1000,
            lime_ridge: 1.0,
            gradcam_layer: None,
        }
    }
}

/// Runs `technique` on one input. `target = None` explains the predicted
/// class; `seed` only matters for stochastic techniques.
pub fn explain<M: Explainable + ?Sized>(
    model: &M,
    input: &Array2<f32>,
    technique: Technique,
    cfg: &XaiConfig,
    target: Option<usize>,
    seed: u64,
) -> Result<AttributionMap> {
    check_input(model, input)?;
    let target = resolve_target(model, input, target)?;
    let (h, w) = input.dim();
    match technique {
        Technique::Ig => {
            let baseline = Array2::from_elem((h, w), 0.0f32);
            integrated_gradients(model, input, &baseline, cfg.ig_steps, target)
        }
        Technique::Occlusion => {
            let p = cfg.occlusion_patch.min(h).min(w);
            let s = cfg.occlusion_stride;
            occlusion_sensitivity(model, input, (p, p), (s, s), cfg.fill, target)
        }
        Technique::Cam => cam(model, input, target),
        Technique::GradCam => {
            let layer = match &cfg.gradcam_layer {
                Some(l) => l.clone(),
                None => model
                    .feature_layers()
                    .last()
                    .cloned()
                    .ok_or_else(|| Error::UnsupportedArchitecture("model exposes no feature layers".into()))?,
            };
            grad_cam(model, input, &layer, target)
        }
        Technique::Lime => {
            let seg = Segmentation::grid(h, w, cfg.lime_grid.min(h), cfg.lime_grid.min(w))?;
            lime_explain(model, input, &seg, cfg.lime_samples, seed, target, cfg.fill, cfg.lime_ridge)
        }
    }
}

/// A sample the model classifies correctly with high confidence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PickedSample {
    pub index: usize,
    pub id: String,
    pub class: usize,
    pub probability: f32,
}

/// Correctly classified samples whose top softmax probability exceeds
/// `min_probability`, most confident first.
pub fn pick_confident(model: &Classifier, data: &LabeledInputs, min_probability: f32) -> Result<Vec<PickedSample>> {
    let refs: Vec<&Array2<f32>> = data.inputs.iter().collect();
    let probs = softmax_rows(&model.logits_batch(&refs)?);
    let mut picked: Vec<PickedSample> = probs
        .iter()
        .enumerate()
        .filter_map(|(i, p)| {
            let class = if p[1] > p[0] { 1 } else { 0 };
            (p[class] > min_probability && class == data.labels[i].index()).then(|| PickedSample {
                index: i,
                id: data.ids[i].clone(),
                class,
                probability: p[class],
            })
        })
        .collect();
    picked.sort_by(|a, b| b.probability.total_cmp(&a.probability).then(a.index.cmp(&b.index)));
    Ok(picked)
}

#[cfg(test)]
pub(crate) mod toy {
    //! Small hand-built models used as oracles.

    use super::*;

    /// `score_c(x) = sum(w_c * x) + b_c` for two classes.
    pub struct Linear {
        pub w: [Array2<f32>; 2],
        pub b: [f32; 2],
    }

    impl Explainable for Linear {
        fn input_hw(&self) -> (usize, usize) {
            self.w[0].dim()
        }

        fn scores(&self, x: &Tensor) -> Result<Tensor> {
            let n = x.dim(0)?;
            let mut cols = Vec::new();
            for c in 0..2 {
                let w = to_tensor(&[&self.w[c]])?;
                let s = x.broadcast_mul(&w)?.flatten_from(1)?.sum(1)?;
                cols.push((s + self.b[c] as f64)?.reshape((n, 1))?);
            }
            Ok(Tensor::cat(&cols, 1)?)
        }
    }

    /// Class 0 scores the sum over a rectangular region; class 1 its negation.
    pub struct RegionSum {
        pub hw: (usize, usize),
        pub rows: std::ops::Range<usize>,
        pub cols: std::ops::Range<usize>,
    }

    impl Explainable for RegionSum {
        fn input_hw(&self) -> (usize, usize) {
            self.hw
        }

        fn scores(&self, x: &Tensor) -> Result<Tensor> {
            let n = x.dim(0)?;
            let r = x
                .narrow(2, self.rows.start, self.rows.len())?
                .narrow(3, self.cols.start, self.cols.len())?
                .flatten_from(1)?
                .sum(1)?
                .reshape((n, 1))?;
            Ok(Tensor::cat(&[&r, &r.neg()?], 1)?)
        }
    }

    /// Constant output regardless of input.
    pub struct Constant(pub (usize, usize));

    impl Explainable for Constant {
        fn input_hw(&self) -> (usize, usize) {
            self.0
        }

        fn scores(&self, x: &Tensor) -> Result<Tensor> {
            let n = x.dim(0)?;
            Ok(Tensor::from_vec(vec![0.3f32, -0.3].repeat(n), (n, 2), &Device::Cpu)?)
        }
    }
}

#[cfg(test)]
mod gradient_tests {
    use super::*;
    use crate::models::{build_classifier, Architecture, ClassifierSpec};
    use rand::{Rng, SeedableRng};

    #[test]
    fn cnn_input_gradient_matches_central_differences() {
        for side in [16, 32] {
            let m = build_classifier(&ClassifierSpec::new(Architecture::TinyCnn, side), 11).unwrap();
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
            let x = Array2::from_shape_fn((side, side), |_| rng.random_range(0.0f32..1.0));
            let g = input_gradient(&m, &to_tensor(&[&x]).unwrap(), 1).unwrap();
            let g = from_tensor_2d(&g.get(0).unwrap().squeeze(0).unwrap()).unwrap();
            let f = |x: &Array2<f32>| target_scores(&m, &[x.clone()], 1).unwrap()[0] as f64;
            let floor = 0.01 * g.iter().fold(0.0f32, |a, v| a.max(v.abs())) as f64;
            for &(r, c) in &[(0, 0), (3, 4), (8, 8), (side - 1, side - 1), (7, 2)] {
                let (mut up, mut down) = (x.clone(), x.clone());
                up[[r, c]] += 3e-3;
                down[[r, c]] -= 3e-3;
                let numeric = (f(&up) - f(&down)) / 6e-3;
                let analytic = g[[r, c]] as f64;
                assert!(
                    (analytic - numeric).abs() <= 0.05 * numeric.abs() + floor,
                    "side {side} ({r},{c}): {analytic} vs {numeric}"
                );
            }
        }
    }
}
