//! Classifier zoo behind one binary-classifier interface.

mod cnn;
mod kernel;
pub(crate) mod layers;
mod resnet;
mod sequence;
mod vit;

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use candle_core::{DType, Device, Tensor};
use candle_nn::VarMap;
use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

pub use kernel::{
    fit_kernel_machine, pool_features_for_kernel, KernelKind, KernelMachine, KernelSpec, Standardizer,
    POOLED_SIDE,
};
pub(crate) use layers::Mode;

use crate::dataset::{Label, LabeledInputs};
use crate::error::{Error, Result};
use layers::CResult;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Architecture {
    TinyCnn,
    ResNet18,
    Vgg,
    SeNet,
    MobileNet,
    CnnLstm,
    Vit,
    SsmSeq,
    XlstmSeq,
    Qsvm,
}

impl Architecture {
    pub const ALL: [Architecture; 10] = [
        Self::TinyCnn,
        Self::ResNet18,
        Self::Vgg,
        Self::SeNet,
        Self::MobileNet,
        Self::CnnLstm,
        Self::Vit,
        Self::SsmSeq,
        Self::XlstmSeq,
        Self::Qsvm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::TinyCnn => "tinycnn",
            Self::ResNet18 => "resnet18",
            Self::Vgg => "vgg",
            Self::SeNet => "senet",
            Self::MobileNet => "mobilenet",
            Self::CnnLstm => "cnn_lstm",
            Self::Vit => "vit",
            Self::SsmSeq => "ssm_seq",
            Self::XlstmSeq => "xlstm_seq",
            Self::Qsvm => "qsvm",
        }
    }

    /// Sequence models take `(frames, n_mels)` input shapes.
    pub fn is_sequence(self) -> bool {
        matches!(self, Self::SsmSeq | Self::XlstmSeq)
    }

    /// Reference stand-ins rather than faithful reimplementations.
    pub fn is_reference_form(self) -> bool {
        self.is_sequence()
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::UnknownArchitecture(s.to_string()))
    }
}

impl Serialize for Architecture {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for Architecture {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierSpec {
    pub architecture_name: Architecture,
    /// `[1, H, W]` for grid models, `[frames, n_mels]` for sequence models.
    pub input_shape: Vec<usize>,
    pub num_classes: usize,
    #[serde(default)]
    pub architecture_params: BTreeMap<String, f64>,
}

impl ClassifierSpec {
    /// Spec for square `side x side` model inputs.
    pub fn new(architecture: Architecture, side: usize) -> Self {
        let input_shape = if architecture.is_sequence() {
            vec![side, side]
        } else {
            vec![1, side, side]
        };
        Self {
            architecture_name: architecture,
            input_shape,
            num_classes: 2,
            architecture_params: BTreeMap::new(),
        }
    }

    pub fn with_param(mut self, key: &str, value: f64) -> Self {
        self.architecture_params.insert(key.to_string(), value);
        self
    }

    fn param(&self, key: &str, default: f64) -> f64 {
        self.architecture_params.get(key).copied().unwrap_or(default)
    }

    fn param_usize(&self, key: &str, default: usize) -> Result<usize> {
        let v = self.param(key, default as f64);
        if v < 1.0 || v.fract() != 0.0 {
            return Err(Error::Config(format!("architecture param `{key}` must be a positive integer")));
        }
        Ok(v as usize)
    }

    /// `(rows, cols)` of the model input grid.
    pub fn input_hw(&self) -> Result<(usize, usize)> {
        match (self.architecture_name.is_sequence(), self.input_shape.as_slice()) {
            (true, &[frames, n_mels]) => Ok((n_mels, frames)),
            (false, &[1, h, w]) => Ok((h, w)),
            _ => Err(Error::Shape(format!(
                "input shape {:?} does not fit {}",
                self.input_shape, self.architecture_name
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes != 2 {
            return Err(Error::Config(format!("num_classes must be 2, got {}", self.num_classes)));
        }
        let (h, w) = self.input_hw()?;
        let min = match self.architecture_name {
            Architecture::TinyCnn => 8,
            Architecture::ResNet18 | Architecture::SeNet | Architecture::Vgg | Architecture::MobileNet => 32,
            Architecture::CnnLstm => 4,
            Architecture::Vit => self.param_usize("patch", 16)?,
            Architecture::SsmSeq | Architecture::XlstmSeq | Architecture::Qsvm => 1,
        };
        if h < min || w < min {
            return Err(Error::Shape(format!(
                "{} needs inputs of at least {min}x{min}, got {h}x{w}",
                self.architecture_name
            )));
        }
        if self.architecture_name == Architecture::Vit {
            let p = self.param_usize("patch", 16)?;
            let heads = self.param_usize("heads", 3)?;
            if h % p != 0 || w % p != 0 {
                return Err(Error::Shape(format!("vit input {h}x{w} is not divisible by patch {p}")));
            }
            if self.param_usize("dim", 192)? % heads != 0 {
                return Err(Error::Config("vit dim must be divisible by heads".into()));
            }
        }
        Ok(())
    }
}

/// A network as a chain of named stages followed by a head.
pub(crate) trait Network: Send + Sync {
    fn stage_names(&self) -> &'static [&'static str] {
        &[]
    }

    fn stage(&self, _index: usize, x: &Tensor, _mode: &mut Mode) -> CResult<Tensor> {
        Ok(x.clone())
    }

    fn head(&self, x: &Tensor, mode: &mut Mode) -> CResult<Tensor>;

    /// Linear weights `2 x C` when the head is global pooling followed by a
    /// linear layer on the last stage.
    fn cam_weights(&self) -> Option<Tensor> {
        None
    }
}

pub(crate) struct NeuralModel {
    pub net: Box<dyn Network>,
    pub vars: VarMap,
}

/// Fitted kernel model over standardised pooled features.
pub(crate) struct KernelModel {
    pub machine: KernelMachine,
    pub standardizer: Standardizer,
}

pub(crate) enum Backend {
    Neural(NeuralModel),
    Kernel(Option<KernelModel>),
}

pub struct Classifier {
    spec: ClassifierSpec,
    seed: u64,
    pub(crate) backend: Backend,
}

impl fmt::Debug for Classifier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Classifier")
            .field("architecture", &self.spec.architecture_name)
            .field("input_shape", &self.spec.input_shape)
            .field("seed", &self.seed)
            .finish()
    }
}

fn build_network(spec: &ClassifierSpec, vars: &VarMap) -> Result<Box<dyn Network>> {
    let vb = layers::var_builder(vars);
    let (h, w) = spec.input_hw()?;
    let net: Box<dyn Network> = match spec.architecture_name {
        Architecture::TinyCnn => Box::new(cnn::TinyCnn::new(vb)?),
        Architecture::ResNet18 => Box::new(resnet::ResNet::new(vb, None)?),
        Architecture::SeNet => {
            let r = spec.param_usize("reduction", 16)?;
            Box::new(resnet::ResNet::new(vb, Some(r))?)
        }
        Architecture::Vgg => Box::new(cnn::Vgg::new(
            vb,
            h,
            w,
            spec.param("width", 1.0),
            spec.param_usize("fc_hidden", 4096)?,
            spec.param("batch_norm", 0.0) != 0.0,
        )?),
        Architecture::MobileNet => Box::new(cnn::MobileNet::new(vb, spec.param("width", 1.0))?),
        Architecture::CnnLstm => Box::new(sequence::CnnLstm::new(vb, h, spec.param_usize("hidden", 128)?)?),
        Architecture::Vit => {
            let p = vit::VitParams {
                patch: spec.param_usize("patch", 16)?,
                dim: spec.param_usize("dim", 192)?,
                depth: spec.param_usize("depth", 12)?,
                heads: spec.param_usize("heads", 3)?,
                mlp_ratio: spec.param_usize("mlp_ratio", 4)?,
            };
            Box::new(vit::Vit::new(vb, h, w, &p)?)
        }
        Architecture::SsmSeq => Box::new(sequence::SsmSeq::new(
            vb,
            h,
            spec.param_usize("dim", 128)?,
            spec.param_usize("depth", 2)?,
        )?),
        Architecture::XlstmSeq => Box::new(sequence::XlstmSeq::new(
            vb,
            h,
            spec.param_usize("dim", 128)?,
            spec.param_usize("depth", 2)?,
        )?),
        Architecture::Qsvm => unreachable!("kernel models have no network"),
    };
    Ok(net)
}

/// Builds a classifier with deterministic initial parameters.
pub fn build_classifier(spec: &ClassifierSpec, seed: u64) -> Result<Classifier> {
    spec.validate()?;
    let backend = if spec.architecture_name == Architecture::Qsvm {
        Backend::Kernel(None)
    } else {
        let vars = VarMap::new();
        let net = build_network(spec, &vars)?;
        layers::seeded_init(&vars, seed)?;
        Backend::Neural(NeuralModel { net, vars })
    };
    Ok(Classifier {
        spec: spec.clone(),
        seed,
        backend,
    })
}

/// Stacks `N` grids into an `N x 1 x H x W` tensor.
pub fn batch_tensor(inputs: &[&Array2<f32>]) -> Result<Tensor> {
    let Some(first) = inputs.first() else {
        return Err(Error::EmptyInput);
    };
    let (h, w) = first.dim();
    let mut data = Vec::with_capacity(inputs.len() * h * w);
    for g in inputs {
        if g.dim() != (h, w) {
            return Err(Error::Shape(format!("batch mixes {h}x{w} and {:?} inputs", g.dim())));
        }
        data.extend(g.iter().copied());
    }
    Ok(Tensor::from_vec(data, (inputs.len(), 1, h, w), &Device::Cpu)?)
}

pub(crate) fn softmax_rows(logits: &[[f32; 2]]) -> Vec<[f32; 2]> {
    logits
        .iter()
        .map(|&[a, b]| {
            let m = a.max(b);
            let (ea, eb) = ((a - m).exp(), (b - m).exp());
            let s = ea + eb;
            [ea / s, eb / s]
        })
        .collect()
}

impl Classifier {
    pub fn spec(&self) -> &ClassifierSpec {
        &self.spec
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn architecture(&self) -> Architecture {
        self.spec.architecture_name
    }

    pub fn input_hw(&self) -> (usize, usize) {
        self.spec.input_hw().expect("validated at build")
    }

    pub fn is_kernel(&self) -> bool {
        matches!(self.backend, Backend::Kernel(_))
    }

    pub fn is_fitted(&self) -> bool {
        !matches!(self.backend, Backend::Kernel(None))
    }

    pub(crate) fn neural(&self) -> Option<&NeuralModel> {
        match &self.backend {
            Backend::Neural(m) => Some(m),
            Backend::Kernel(_) => None,
        }
    }

    pub(crate) fn set_kernel(&mut self, model: KernelModel) {
        self.backend = Backend::Kernel(Some(model));
    }

    /// Number of trainable scalars (running statistics excluded).
    pub fn parameter_count(&self) -> usize {
        match &self.backend {
            Backend::Neural(m) => layers::trainable_vars(&m.vars)
                .iter()
                .map(|(_, v)| v.elem_count())
                .sum(),
            Backend::Kernel(Some(k)) => k.machine.support_vectors.len() + k.machine.dual_coef.len() + 1,
            Backend::Kernel(None) => 0,
        }
    }

    pub(crate) fn named_tensors(&self) -> Result<Vec<(String, Tensor)>> {
        Ok(match &self.backend {
            Backend::Neural(m) => layers::snapshot(&m.vars)?,
            Backend::Kernel(k) => kernel_tensors(k.as_ref())?,
        })
    }

    /// SHA-256 over every parameter tensor (names, shapes, values).
    pub fn fingerprint(&self) -> String {
        let tensors = self.named_tensors().expect("parameters readable");
        layers::fingerprint_tensors(&tensors).expect("parameters readable")
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        let (h, w) = self.input_hw();
        match x.dims() {
            [_, 1, hh, ww] if *hh == h && *ww == w => Ok(()),
            dims => Err(Error::Shape(format!("expected N x 1 x {h} x {w}, got {dims:?}"))),
        }
    }

    /// Eval-mode logits, `N x 2`.
    pub fn logits(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        self.forward(x, &mut Mode::eval())
    }

    pub(crate) fn forward(&self, x: &Tensor, mode: &mut Mode) -> Result<Tensor> {
        match &self.backend {
            Backend::Neural(m) => {
                let mut h = x.clone();
                for i in 0..m.net.stage_names().len() {
                    h = m.net.stage(i, &h, mode)?;
                }
                Ok(m.net.head(&h, mode)?)
            }
            Backend::Kernel(Some(k)) => kernel_logits(k, x),
            Backend::Kernel(None) => Err(Error::Config("kernel classifier has not been fitted".into())),
        }
    }

    /// Named intermediate layers, in forward order.
    pub fn feature_layers(&self) -> Vec<&'static str> {
        self.neural().map(|m| m.net.stage_names().to_vec()).unwrap_or_default()
    }

    fn stage_index(&self, layer: &str) -> Result<(usize, &NeuralModel)> {
        let m = self
            .neural()
            .ok_or_else(|| Error::LayerNotFound(format!("{layer} (kernel model has no layers)")))?;
        let idx = m
            .net
            .stage_names()
            .iter()
            .position(|&n| n == layer)
            .ok_or_else(|| Error::LayerNotFound(layer.to_string()))?;
        Ok((idx, m))
    }

    /// Eval-mode output of `layer`.
    pub fn activations(&self, x: &Tensor, layer: &str) -> Result<Tensor> {
        self.check_input(x)?;
        let (idx, m) = self.stage_index(layer)?;
        let mut mode = Mode::eval();
        let mut h = x.clone();
        for i in 0..=idx {
            h = m.net.stage(i, &h, &mut mode)?;
        }
        Ok(h)
    }

    /// Continues the eval-mode forward pass from the output of `layer`.
    pub fn logits_from(&self, activations: &Tensor, layer: &str) -> Result<Tensor> {
        let (idx, m) = self.stage_index(layer)?;
        let mut mode = Mode::eval();
        let mut h = activations.clone();
        for i in idx + 1..m.net.stage_names().len() {
            h = m.net.stage(i, &h, &mut mode)?;
        }
        Ok(m.net.head(&h, &mut mode)?)
    }

    /// `(layer, 2 x C weights)` when the head is GAP + linear.
    pub fn cam_head(&self) -> Option<(&'static str, Tensor)> {
        let m = self.neural()?;
        let w = m.net.cam_weights()?;
        Some((*m.net.stage_names().last()?, w))
    }

    /// Logits for a batch of grids, `N` rows. Samples run one at a time so a
    /// row never depends on what else is in the batch.
    pub fn logits_batch(&self, batch: &[&Array2<f32>]) -> Result<Vec<[f32; 2]>> {
        if batch.is_empty() {
            return Ok(Vec::new());
        }
        let (h, w) = self.input_hw();
        let mut out = Vec::with_capacity(batch.len());
        for chunk in batch.chunks(1) {
            for g in chunk {
                if g.dim() != (h, w) {
                    return Err(Error::Shape(format!("expected {h}x{w} input, got {:?}", g.dim())));
                }
                if !crate::grid::all_finite(g) {
                    return Err(Error::NaNInput);
                }
            }
            let logits = self.logits(&batch_tensor(chunk)?)?.to_dtype(DType::F32)?.to_vec2::<f32>()?;
            out.extend(logits.into_iter().map(|r| [r[0], r[1]]));
        }
        Ok(out)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let tensors = self.named_tensors()?;
        let header = CheckpointHeader {
            architecture_name: self.spec.architecture_name,
            architecture_params: self.spec.architecture_params.clone(),
            input_shape: self.spec.input_shape.clone(),
            fingerprint: layers::fingerprint_tensors(&tensors)?,
            seed: self.seed,
            kernel: match &self.backend {
                Backend::Kernel(Some(k)) => Some(k.machine.spec.clone()),
                _ => None,
            },
        };
        let map: std::collections::HashMap<String, Tensor> = tensors.into_iter().collect();
        let blob = dir.join(CHECKPOINT_BLOB);
        candle_core::safetensors::save(&map, &blob)?;
        crate::io::write_json(&dir.join(CHECKPOINT_HEADER), &header)
    }

    pub fn load(dir: &Path) -> Result<Classifier> {
        let header_path = dir.join(CHECKPOINT_HEADER);
        let blob = dir.join(CHECKPOINT_BLOB);
        if !header_path.is_file() || !blob.is_file() {
            return Err(Error::MissingArtifact(dir.display().to_string()));
        }
        let header: CheckpointHeader = crate::io::read_json(&header_path)?;
        let spec = ClassifierSpec {
            architecture_name: header.architecture_name,
            input_shape: header.input_shape.clone(),
            num_classes: 2,
            architecture_params: header.architecture_params.clone(),
        };
        let mut model = build_classifier(&spec, header.seed)?;
        let tensors = candle_core::safetensors::load(&blob, &Device::Cpu)?;
        match &mut model.backend {
            Backend::Neural(m) => {
                let mut saved: Vec<(String, Tensor)> = tensors.into_iter().collect();
                saved.sort_by(|a, b| a.0.cmp(&b.0));
                layers::restore(&m.vars, &saved)?;
            }
            Backend::Kernel(slot) => {
                if !tensors.is_empty() {
                    let kspec = header.kernel.clone().unwrap_or_default();
                    *slot = Some(kernel_from_tensors(&tensors, kspec)?);
                }
            }
        }
        let fp = model.fingerprint();
        if fp != header.fingerprint {
            return Err(Error::Config(format!(
                "checkpoint {} fingerprint mismatch ({fp} != {})",
                dir.display(),
                header.fingerprint
            )));
        }
        Ok(model)
    }

    /// Kernel spec of a fitted kernel model.
    pub fn kernel_spec(&self) -> Option<&KernelSpec> {
        match &self.backend {
            Backend::Kernel(Some(k)) => Some(&k.machine.spec),
            _ => None,
        }
    }
}

pub const CHECKPOINT_HEADER: &str = "checkpoint.json";
pub const CHECKPOINT_BLOB: &str = "model.safetensors";

/// JSON header stored next to the parameter blob.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub architecture_name: Architecture,
    pub architecture_params: BTreeMap<String, f64>,
    pub input_shape: Vec<usize>,
    pub fingerprint: String,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel: Option<KernelSpec>,
}

fn kernel_tensors(k: Option<&KernelModel>) -> Result<Vec<(String, Tensor)>> {
    let Some(k) = k else {
        return Ok(Vec::new());
    };
    let m = &k.machine;
    let dev = Device::Cpu;
    let sv = &m.support_vectors;
    let mut out = vec![
        (
            "dual_coef".to_string(),
            Tensor::from_vec(m.dual_coef.to_vec(), m.dual_coef.len(), &dev)?,
        ),
        ("gamma".to_string(), Tensor::from_vec(vec![m.gamma], 1, &dev)?),
        ("mean".to_string(), Tensor::from_vec(k.standardizer.mean.to_vec(), k.standardizer.mean.len(), &dev)?),
        ("rho".to_string(), Tensor::from_vec(vec![m.rho], 1, &dev)?),
        ("scale".to_string(), Tensor::from_vec(k.standardizer.scale.to_vec(), k.standardizer.scale.len(), &dev)?),
        (
            "support_vectors".to_string(),
            Tensor::from_vec(sv.iter().copied().collect::<Vec<f32>>(), (sv.nrows(), sv.ncols()), &dev)?,
        ),
    ];
    out.sort_by(|a, b| a.0.cmp(&b.0));
    Ok(out)
}

fn kernel_from_tensors(t: &std::collections::HashMap<String, Tensor>, spec: KernelSpec) -> Result<KernelModel> {
    let get = |name: &str| {
        t.get(name)
            .cloned()
            .ok_or_else(|| Error::Config(format!("kernel checkpoint lacks `{name}`")))
    };
    let sv = get("support_vectors")?;
    let (rows, cols) = sv.dims2()?;
    let sv = Array2::from_shape_vec((rows, cols), sv.flatten_all()?.to_vec1::<f32>()?)
        .map_err(|e| Error::Shape(e.to_string()))?;
    Ok(KernelModel {
        machine: KernelMachine {
            spec,
            gamma: get("gamma")?.to_vec1::<f64>()?[0],
            support_vectors: sv,
            dual_coef: Array1::from(get("dual_coef")?.to_vec1::<f64>()?),
            rho: get("rho")?.to_vec1::<f64>()?[0],
        },
        standardizer: Standardizer {
            mean: Array1::from(get("mean")?.to_vec1::<f32>()?),
            scale: Array1::from(get("scale")?.to_vec1::<f32>()?),
        },
    })
}

fn kernel_features(k: &KernelModel, grid: &Array2<f32>) -> Result<Vec<f32>> {
    let mut f = pool_features_for_kernel(grid)?;
    k.standardizer.apply(&mut f);
    Ok(f)
}

/// Logits `[f/2, -f/2]` where `f` is the decision value (positive = human).
fn kernel_logits(k: &KernelModel, x: &Tensor) -> Result<Tensor> {
    let (n, _, h, w) = x.dims4()?;
    let data = x.flatten_all()?.to_dtype(DType::F32)?.to_vec1::<f32>()?;
    let mut out = Vec::with_capacity(2 * n);
    for i in 0..n {
        let grid = Array2::from_shape_vec((h, w), data[i * h * w..(i + 1) * h * w].to_vec())
            .map_err(|e| Error::Shape(e.to_string()))?;
        let f = k.machine.decision_function(Array1::from(kernel_features(k, &grid)?).view())? as f32;
        let pos = Label::POSITIVE.index();
        let mut row = [0.0f32; 2];
        row[pos] = f / 2.0;
        row[1 - pos] = -f / 2.0;
        out.extend(row);
    }
    Ok(Tensor::from_vec(out, (n, 2), &Device::Cpu)?)
}

/// Fits a kernel classifier on model inputs: pools, standardises against the
/// training statistics, then runs the SVM solver.
pub fn fit_kernel_classifier(model: &mut Classifier, data: &LabeledInputs, kernel: &KernelSpec) -> Result<()> {
    if !model.is_kernel() {
        return Err(Error::UnsupportedArchitecture(format!(
            "{} is not a kernel model",
            model.architecture()
        )));
    }
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let pooled: Vec<Vec<f32>> = data
        .inputs
        .iter()
        .map(pool_features_for_kernel)
        .collect::<Result<_>>()?;
    let dim = pooled[0].len();
    let mut features = Array2::from_shape_vec((pooled.len(), dim), pooled.concat())
        .map_err(|e| Error::Shape(e.to_string()))?;
    let standardizer = Standardizer::fit(&features);
    for mut row in features.rows_mut() {
        standardizer.apply(row.as_slice_mut().expect("standard layout"));
    }
    let machine = fit_kernel_machine(&features, &data.labels, kernel)?;
    model.set_kernel(KernelModel { machine, standardizer });
    Ok(())
}

/// Class probabilities (softmax over logits), one `[human, machine]` row per
/// input.
pub fn predict_proba(model: &Classifier, batch: &[&Array2<f32>]) -> Result<Vec<[f32; 2]>> {
    Ok(softmax_rows(&model.logits_batch(batch)?))
}

/// Hard labels by argmax of probabilities.
pub fn predict_labels(model: &Classifier, batch: &[&Array2<f32>]) -> Result<Vec<Label>> {
    Ok(predict_proba(model, batch)?
        .into_iter()
        .map(|p| Label::from_index(if p[1] > p[0] { 1 } else { 0 }))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(side: usize, seed: u64) -> Array2<f32> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((side, side), |_| rng.random::<f32>())
    }

    #[test]
    fn unknown_architecture() {
        assert!(matches!("foo".parse::<Architecture>(), Err(Error::UnknownArchitecture(_))));
        assert_eq!("cnn_lstm".parse::<Architecture>().unwrap(), Architecture::CnnLstm);
    }

    #[test]
    fn tinycnn_full_size_logits() {
        let m = build_classifier(&ClassifierSpec::new(Architecture::TinyCnn, 224), 7).unwrap();
        let g = grid(224, 1);
        let l = m.logits_batch(&[&g]).unwrap();
        assert_eq!(l.len(), 1);
        assert!(l[0].iter().all(|v| v.is_finite()));
    }

    #[test]
    fn every_architecture_gives_two_logits() {
        let small: &[(Architecture, usize, &[(&str, f64)])] = &[
            (Architecture::TinyCnn, 16, &[]),
            (Architecture::ResNet18, 32, &[]),
            (Architecture::SeNet, 32, &[]),
            (Architecture::Vgg, 32, &[("width", 0.125), ("fc_hidden", 32.0)]),
            (Architecture::MobileNet, 32, &[("width", 0.125)]),
            (Architecture::CnnLstm, 16, &[("hidden", 16.0)]),
            (Architecture::Vit, 16, &[("patch", 8.0), ("dim", 24.0), ("depth", 2.0)]),
            (Architecture::SsmSeq, 12, &[("dim", 16.0)]),
            (Architecture::XlstmSeq, 12, &[("dim", 16.0)]),
        ];
        for &(arch, side, params) in small {
            let mut spec = ClassifierSpec::new(arch, side);
            for &(k, v) in params {
                spec = spec.with_param(k, v);
            }
            let m = build_classifier(&spec, 3).unwrap();
            let (g1, g2, g3) = (grid(side, 1), grid(side, 2), grid(side, 3));
            let p = predict_proba(&m, &[&g1, &g2, &g3]).unwrap();
            assert_eq!(p.len(), 3, "{arch}");
            for row in &p {
                assert!(row.iter().all(|v| v.is_finite() && *v >= 0.0), "{arch}");
                assert!(((row[0] + row[1]) as f64 - 1.0).abs() <= 1e-6, "{arch}");
            }
            let again = predict_proba(&m, &[&g1]).unwrap();
            assert_eq!(again[0], p[0], "{arch}");
            let twin = build_classifier(&spec, 3).unwrap();
            assert_eq!(twin.fingerprint(), m.fingerprint(), "{arch}");
        }
    }

    #[test]
    fn resnet18_parameter_count() {
        let m = build_classifier(&ClassifierSpec::new(Architecture::ResNet18, 224), 0).unwrap();
        // Standard table with a 1-channel stem and a 2-way head:
        // 11,689,512 - 2*64*49 (one input channel) - 998*513 (two classes)
        assert_eq!(m.parameter_count(), 11_689_512 - 2 * 64 * 49 - 998 * 513);
    }

    #[test]
    fn shape_errors() {
        let spec = ClassifierSpec::new(Architecture::ResNet18, 16);
        assert!(matches!(build_classifier(&spec, 0), Err(Error::Shape(_))));
        let spec = ClassifierSpec::new(Architecture::Vit, 40);
        assert!(matches!(build_classifier(&spec, 0), Err(Error::Shape(_))));
        let m = build_classifier(&ClassifierSpec::new(Architecture::TinyCnn, 16), 0).unwrap();
        assert!(matches!(m.logits_batch(&[&grid(20, 0)]), Err(Error::Shape(_))));
        assert!(m.logits_batch(&[]).unwrap().is_empty());
    }

    #[test]
    fn checkpoint_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let m = build_classifier(&ClassifierSpec::new(Architecture::TinyCnn, 16), 9).unwrap();
        m.save(dir.path()).unwrap();
        let back = Classifier::load(dir.path()).unwrap();
        assert_eq!(back.fingerprint(), m.fingerprint());
        let g = grid(16, 4);
        assert_eq!(back.logits_batch(&[&g]).unwrap(), m.logits_batch(&[&g]).unwrap());
    }

    #[test]
    fn kernel_classifier_fit_save_load() {
        let spec = ClassifierSpec::new(Architecture::Qsvm, 16);
        let mut m = build_classifier(&spec, 0).unwrap();
        let data = crate::dataset::synth::PlantedSpec::new(16).generate(40, 2);
        fit_kernel_classifier(&mut m, &data, &KernelSpec::default()).unwrap();
        let refs: Vec<&Array2<f32>> = data.inputs.iter().collect();
        let pred = predict_labels(&m, &refs).unwrap();
        assert_eq!(pred, data.labels);
        let dir = tempfile::tempdir().unwrap();
        m.save(dir.path()).unwrap();
        let back = Classifier::load(dir.path()).unwrap();
        assert_eq!(back.kernel_spec().unwrap().degree, 2);
        assert_eq!(predict_proba(&back, &refs).unwrap(), predict_proba(&m, &refs).unwrap());
    }
}
