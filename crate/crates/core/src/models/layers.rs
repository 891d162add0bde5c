//! Building blocks shared by the network definitions.

use candle_core::{DType, Device, Module, ModuleT, Tensor, D};
use candle_nn::{BatchNorm, BatchNormConfig, Conv2d, Conv2dConfig, Linear, VarBuilder, VarMap};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub(crate) type CResult<T> = candle_core::Result<T>;

/// Forward-pass mode. Training carries the RNG used for dropout masks.
pub(crate) struct Mode {
    rng: Option<ChaCha8Rng>,
}

impl Mode {
    pub fn eval() -> Self {
        Self { rng: None }
    }

    pub fn train(seed: u64) -> Self {
        Self {
            rng: Some(ChaCha8Rng::seed_from_u64(seed)),
        }
    }

    pub fn is_train(&self) -> bool {
        self.rng.is_some()
    }
}

/// Inverted dropout with a seeded mask; identity in eval mode.
pub(crate) fn dropout(x: &Tensor, p: f64, mode: &mut Mode) -> CResult<Tensor> {
    let Some(rng) = mode.rng.as_mut() else {
        return Ok(x.clone());
    };
    if p <= 0.0 {
        return Ok(x.clone());
    }
    let keep = 1.0 - p;
    let scale = (1.0 / keep) as f32;
    let mask: Vec<f32> = (0..x.elem_count())
        .map(|_| if rng.random::<f64>() < keep { scale } else { 0.0 })
        .collect();
    let mask = Tensor::from_vec(mask, x.shape(), x.device())?;
    x.mul(&mask)
}

/// 2-D convolution that sidesteps a layout mix-up in candle's CPU kernel.
///
/// The tiled kernel treats a contiguous N x C x H x W input as channels-last
/// whenever C == H == W and returns wrong values. Such inputs are handed over
/// with permuted strides, which forces the kernel's strided copy.
pub(crate) struct Conv(Conv2d);

impl Module for Conv {
    fn forward(&self, x: &Tensor) -> CResult<Tensor> {
        let (_, c, h, w) = x.dims4()?;
        if c == h && h == w && c > 1 {
            let x = x.permute((0, 2, 3, 1))?.contiguous()?.permute((0, 3, 1, 2))?;
            self.0.forward(&x)
        } else {
            self.0.forward(x)
        }
    }
}

pub(crate) fn conv(
    vb: VarBuilder,
    c_in: usize,
    c_out: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
    groups: usize,
    bias: bool,
) -> CResult<Conv> {
    let cfg = Conv2dConfig {
        padding,
        stride,
        groups,
        ..Default::default()
    };
    let inner = if bias {
        candle_nn::conv2d(c_in, c_out, kernel, cfg, vb)?
    } else {
        candle_nn::conv2d_no_bias(c_in, c_out, kernel, cfg, vb)?
    };
    Ok(Conv(inner))
}

pub(crate) struct Bn(BatchNorm);

impl Bn {
    pub fn new(channels: usize, vb: VarBuilder) -> CResult<Self> {
        Ok(Self(candle_nn::batch_norm(channels, BatchNormConfig::default(), vb)?))
    }

    pub fn forward(&self, x: &Tensor, mode: &Mode) -> CResult<Tensor> {
        self.0.forward_t(x, mode.is_train())
    }
}

/// Layer norm over the last dimension, composed from differentiable ops.
pub(crate) struct Norm {
    weight: Tensor,
    bias: Tensor,
}

impl Norm {
    pub fn new(dim: usize, vb: VarBuilder) -> CResult<Self> {
        Ok(Self {
            weight: vb.get(dim, "weight")?,
            bias: vb.get(dim, "bias")?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> CResult<Tensor> {
        let dim = x.dim(D::Minus1)? as f64;
        let mean = (x.sum_keepdim(D::Minus1)? / dim)?;
        let centred = x.broadcast_sub(&mean)?;
        let var = (centred.sqr()?.sum_keepdim(D::Minus1)? / dim)?;
        let normed = centred.broadcast_div(&(var + 1e-5)?.sqrt()?)?;
        normed.broadcast_mul(&self.weight)?.broadcast_add(&self.bias)
    }
}

pub(crate) fn linear(vb: VarBuilder, c_in: usize, c_out: usize) -> CResult<Linear> {
    candle_nn::linear(c_in, c_out, vb)
}

/// Global average pooling: N x C x H x W -> N x C.
pub(crate) fn gap(x: &Tensor) -> CResult<Tensor> {
    x.mean((2, 3))
}

/// Keeps even rows and columns: stride-2 subsampling.
fn subsample2(x: &Tensor) -> CResult<Tensor> {
    let (_, _, h, w) = x.dims4()?;
    let x = if h % 2 == 1 { x.pad_with_zeros(2, 0, 1)? } else { x.clone() };
    let x = if w % 2 == 1 { x.pad_with_zeros(3, 0, 1)? } else { x };
    let (n, c, h, w) = x.dims4()?;
    x.reshape((n, c, h / 2, 2, w / 2, 2))?
        .narrow(3, 0, 1)?
        .narrow(5, 0, 1)?
        .reshape((n, c, h / 2, w / 2))
}

/// 2x2 max pooling with stride 2; odd trailing rows and columns are dropped.
///
/// Written as a reshape and two reductions because the backward pass of
/// candle's `max_pool2d` shrinks gradients by the window area.
pub(crate) fn max_pool2(x: &Tensor) -> CResult<Tensor> {
    let (n, c, h, w) = x.dims4()?;
    let (oh, ow) = (h / 2, w / 2);
    x.narrow(2, 0, 2 * oh)?
        .narrow(3, 0, 2 * ow)?
        .reshape((n, c, oh, 2, ow, 2))?
        .max(5)?
        .max(3)
}

/// 3x3 max pooling with stride 2 and padding 1, for non-negative inputs
/// (zero padding equals -inf padding after a ReLU).
pub(crate) fn max_pool_3x3_s2(x: &Tensor) -> CResult<Tensor> {
    let (_, _, h, w) = x.dims4()?;
    let p = x.pad_with_zeros(2, 1, 1)?.pad_with_zeros(3, 1, 1)?;
    let rows = p
        .narrow(2, 0, h)?
        .maximum(&p.narrow(2, 1, h)?)?
        .maximum(&p.narrow(2, 2, h)?)?;
    let m = rows
        .narrow(3, 0, w)?
        .maximum(&rows.narrow(3, 1, w)?)?
        .maximum(&rows.narrow(3, 2, w)?)?;
    subsample2(&m)
}

pub(crate) fn apply(linear: &Linear, x: &Tensor) -> CResult<Tensor> {
    linear.forward(x)
}

pub(crate) fn var_builder(varmap: &VarMap) -> VarBuilder<'static> {
    VarBuilder::from_varmap(varmap, DType::F32, &Device::Cpu)
}

fn is_running_stat(name: &str) -> bool {
    name.ends_with("running_mean") || name.ends_with("running_var")
}

/// Overwrites every variable with a deterministic draw from `seed`.
///
/// Convolution kernels use He-uniform bounds, linear weights `1/sqrt(fan_in)`,
/// normalisation scales start at one, biases and running means at zero.
pub(crate) fn seeded_init(varmap: &VarMap, seed: u64) -> CResult<()> {
    let data = varmap.data().lock().expect("varmap lock poisoned");
    let mut names: Vec<&String> = data.keys().collect();
    names.sort();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for name in names {
        let var = &data[name];
        let dims = var.dims().to_vec();
        let count: usize = dims.iter().product();
        let fan_in: usize = dims.iter().skip(1).product::<usize>().max(1);
        let values: Vec<f32> = if name.contains("pos_embed") || name.contains("cls_token") {
            (0..count).map(|_| rng.random_range(-0.02f32..0.02)).collect()
        } else if dims.len() >= 3 {
            let bound = (6.0 / fan_in as f32).sqrt();
            (0..count).map(|_| rng.random_range(-bound..bound)).collect()
        } else if dims.len() == 2 {
            let bound = 1.0 / (fan_in as f32).sqrt();
            (0..count).map(|_| rng.random_range(-bound..bound)).collect()
        } else if name.ends_with("running_var") || name.ends_with("weight") {
            vec![1.0; count]
        } else {
            vec![0.0; count]
        };
        var.set(&Tensor::from_vec(values, dims, &Device::Cpu)?)?;
    }
    Ok(())
}

/// Trainable variables (running statistics excluded), sorted by name.
pub(crate) fn trainable_vars(varmap: &VarMap) -> Vec<(String, candle_core::Var)> {
    let data = varmap.data().lock().expect("varmap lock poisoned");
    let mut vars: Vec<(String, candle_core::Var)> = data
        .iter()
        .filter(|(name, _)| !is_running_stat(name))
        .map(|(n, v)| (n.clone(), v.clone()))
        .collect();
    vars.sort_by(|a, b| a.0.cmp(&b.0));
    vars
}

/// Deep copy of every variable, sorted by name.
pub(crate) fn snapshot(varmap: &VarMap) -> CResult<Vec<(String, Tensor)>> {
    let data = varmap.data().lock().expect("varmap lock poisoned");
    let mut out = Vec::with_capacity(data.len());
    for (name, var) in data.iter() {
        out.push((name.clone(), var.as_tensor().copy()?));
    }
    out.sort_by(|a, b| a.0.cmp(&b.0));
    Ok(out)
}

pub(crate) fn restore(varmap: &VarMap, saved: &[(String, Tensor)]) -> CResult<()> {
    let data = varmap.data().lock().expect("varmap lock poisoned");
    for (name, value) in saved {
        if let Some(var) = data.get(name) {
            var.set(value)?;
        }
    }
    Ok(())
}

/// SHA-256 over sorted `(name, shape, little-endian f32 values)`.
pub(crate) fn fingerprint_tensors(tensors: &[(String, Tensor)]) -> CResult<String> {
    use sha2::{Digest, Sha256};
    let mut hasher = Sha256::new();
    for (name, t) in tensors {
        hasher.update(name.as_bytes());
        for d in t.dims() {
            hasher.update((*d as u64).to_le_bytes());
        }
        for v in t.flatten_all()?.to_dtype(DType::F32)?.to_vec1::<f32>()? {
            hasher.update(v.to_le_bytes());
        }
    }
    Ok(hex::encode(hasher.finalize()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn max_pool_matches_direct_window_max() {
        let data: Vec<f32> = (0..2 * 7 * 6).map(|i| ((i * 37) % 11) as f32).collect();
        let x = Tensor::from_vec(data.clone(), (1, 2, 7, 6), &Device::Cpu).unwrap();
        let y = max_pool_3x3_s2(&x).unwrap();
        assert_eq!(y.dims(), &[1, 2, 4, 3]);
        let got = y.flatten_all().unwrap().to_vec1::<f32>().unwrap();
        let mut k = 0;
        for c in 0..2 {
            for oy in 0..4 {
                for ox in 0..3 {
                    let mut best = 0.0f32;
                    for dy in -1i64..=1 {
                        for dx in -1i64..=1 {
                            let (yy, xx) = (2 * oy as i64 + dy, 2 * ox as i64 + dx);
                            if (0..7).contains(&yy) && (0..6).contains(&xx) {
                                best = best.max(data[c * 42 + yy as usize * 6 + xx as usize]);
                            }
                        }
                    }
                    assert_eq!(got[k], best);
                    k += 1;
                }
            }
        }
    }

    #[test]
    fn max_pool2_values_and_gradient() {
        let data: Vec<f32> = (0..2 * 5 * 4).map(|i| ((i * 7) % 13) as f32 + 0.5 * (i % 3) as f32).collect();
        let x = candle_core::Var::from_tensor(&Tensor::from_vec(data.clone(), (1, 2, 5, 4), &Device::Cpu).unwrap()).unwrap();
        let y = max_pool2(x.as_tensor()).unwrap();
        assert_eq!(y.dims(), &[1, 2, 2, 2]);
        let direct = x.as_tensor().max_pool2d(2).unwrap();
        assert_eq!(y.flatten_all().unwrap().to_vec1::<f32>().unwrap(), direct.flatten_all().unwrap().to_vec1::<f32>().unwrap());
        // Each output has a unique argmax, so d(sum y)/dx is one-hot per window.
        let g = y.sum_all().unwrap().backward().unwrap();
        let g = g.get(x.as_tensor()).unwrap().flatten_all().unwrap().to_vec1::<f32>().unwrap();
        assert_eq!(g.iter().sum::<f32>(), 8.0);
        assert!(g.iter().all(|&v| v == 0.0 || v == 1.0));
    }

    #[test]
    fn conv_matches_direct_sum_when_channels_equal_side() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for (c_in, c_out, side) in [(16, 32, 16), (8, 4, 8), (4, 6, 5)] {
            let varmap = VarMap::new();
            let layer = conv(var_builder(&varmap).pp("c"), c_in, c_out, 3, 1, 1, 1, false).unwrap();
            let weights = varmap.all_vars()[0].flatten_all().unwrap().to_vec1::<f32>().unwrap();
            let data: Vec<f32> = (0..c_in * side * side).map(|_| rng.random::<f32>()).collect();
            let x = Tensor::from_vec(data.clone(), (1, c_in, side, side), &Device::Cpu).unwrap();
            let got = layer.forward(&x).unwrap().flatten_all().unwrap().to_vec1::<f32>().unwrap();
            let mut worst = 0.0f32;
            for o in 0..c_out {
                for y in 0..side {
                    for x in 0..side {
                        let mut sum = 0.0f32;
                        for c in 0..c_in {
                            for ky in 0..3 {
                                for kx in 0..3 {
                                    let (iy, ix) = (y + ky, x + kx);
                                    if iy < 1 || ix < 1 || iy > side || ix > side {
                                        continue;
                                    }
                                    sum += data[(c * side + iy - 1) * side + ix - 1]
                                        * weights[((o * c_in + c) * 3 + ky) * 3 + kx];
                                }
                            }
                        }
                        worst = worst.max((got[(o * side + y) * side + x] - sum).abs());
                    }
                }
            }
            assert!(worst < 1e-4, "({c_in}, {c_out}, {side}): max error {worst}");
        }
    }

    #[test]
    fn dropout_is_seeded_and_identity_in_eval() {
        let x = Tensor::ones((4, 8), DType::F32, &Device::Cpu).unwrap();
        let a = dropout(&x, 0.3, &mut Mode::train(1)).unwrap().to_vec2::<f32>().unwrap();
        let b = dropout(&x, 0.3, &mut Mode::train(1)).unwrap().to_vec2::<f32>().unwrap();
        assert_eq!(a, b);
        let e = dropout(&x, 0.3, &mut Mode::eval()).unwrap().to_vec2::<f32>().unwrap();
        assert!(e.iter().flatten().all(|&v| v == 1.0));
    }
}
