use candle_core::{Tensor, Var};
use ndarray::Array2;

use super::{check_input, from_tensor_2d, to_tensor, AttributionMap, Explainable, Technique};
use crate::error::{Error, Result};
use crate::grid::resize_bilinear;

/// Rectify, upsample to the input grid, then min-max normalise. A constant
/// positive map becomes all ones; an all-zero map stays zero.
fn finish(raw: &Array2<f32>, hw: (usize, usize)) -> Array2<f32> {
    let rect = raw.mapv(|v| v.max(0.0));
    let up = resize_bilinear(&rect, hw.0, hw.1);
    let (lo, hi) = up
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if hi - lo > f32::EPSILON * hi.abs().max(1.0) {
        up.mapv(|v| (v - lo) / (hi - lo))
    } else if hi > 0.0 {
        Array2::ones(hw)
    } else {
        Array2::zeros(hw)
    }
}

fn feature_maps(a: &Tensor) -> Result<(usize, usize, usize)> {
    match a.dims() {
        &[1, k, h, w] => Ok((k, h, w)),
        dims => Err(Error::UnsupportedArchitecture(format!(
            "attribution layer must be 1 x K x h x w, got {dims:?}"
        ))),
    }
}

/// `sum_k w[target, k] * A_k` on the feature grid (before rectification and
/// upsampling).
pub fn cam_raw<M: Explainable + ?Sized>(model: &M, input: &Array2<f32>, target: usize) -> Result<Array2<f32>> {
    check_input(model, input)?;
    let (layer, weights) = model
        .cam_head()
        .ok_or_else(|| Error::UnsupportedArchitecture("CAM needs a global-average-pool + linear head".into()))?;
    let a = model.activations(&to_tensor(&[input])?, &layer)?;
    let (k, h, w) = feature_maps(&a)?;
    let wc = weights.get(target)?;
    if wc.dims() != [k] {
        return Err(Error::Shape(format!("CAM weights {:?} do not match {k} channels", wc.dims())));
    }
    let raw = wc
        .reshape((k, 1))?
        .broadcast_mul(&a.squeeze(0)?.reshape((k, h * w))?)?
        .sum(0)?
        .reshape((h, w))?;
    from_tensor_2d(&raw)
}

/// Class activation map, rectified, upsampled and min-max normalised.
pub fn cam<M: Explainable + ?Sized>(model: &M, input: &Array2<f32>, target: usize) -> Result<AttributionMap> {
    let raw = cam_raw(model, input, target)?;
    let mut map = AttributionMap::new(finish(&raw, input.dim()), Technique::Cam, target);
    map.params.insert("feature_rows".into(), raw.nrows() as f64);
    map.params.insert("feature_cols".into(), raw.ncols() as f64);
    Ok(map)
}

/// Grad-CAM at `layer`: channel weights are the spatial mean of the target
/// score's gradient; the weighted sum of activations is rectified,
/// upsampled and normalised like [`cam`].
pub fn grad_cam<M: Explainable + ?Sized>(
    model: &M,
    input: &Array2<f32>,
    layer: &str,
    target: usize,
) -> Result<AttributionMap> {
    check_input(model, input)?;
    if !model.feature_layers().iter().any(|l| l == layer) {
        return Err(Error::LayerNotFound(layer.to_string()));
    }
    if !model.differentiable() {
        return Err(Error::NonDifferentiableModel);
    }
    let a = model.activations(&to_tensor(&[input])?, layer)?.detach();
    let (k, h, w) = feature_maps(&a)?;
    let var = Var::from_tensor(&a)?;
    let score = model.scores_from(var.as_tensor(), layer)?.narrow(1, target, 1)?.sum_all()?;
    let grads = score.backward()?;
    let g = grads
        .get(var.as_tensor())
        .cloned()
        .unwrap_or(a.zeros_like()?);
    let alpha = g.squeeze(0)?.reshape((k, h * w))?.mean_keepdim(1)?;
    let raw = alpha
        .broadcast_mul(&a.squeeze(0)?.reshape((k, h * w))?)?
        .sum(0)?
        .reshape((h, w))?;
    let raw = from_tensor_2d(&raw)?;
    let mut map = AttributionMap::new(finish(&raw, input.dim()), Technique::GradCam, target);
    map.params.insert("feature_rows".into(), h as f64);
    map.params.insert("feature_cols".into(), w as f64);
    Ok(map)
}

/// Cosine similarity of two maps; two all-zero maps count as identical.
pub fn cosine_similarity(a: &Array2<f32>, b: &Array2<f32>) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum();
    let na: f64 = a.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
    match (na == 0.0, nb == 0.0) {
        (true, true) => 1.0,
        (true, false) | (false, true) => 0.0,
        _ => dot / (na * nb),
    }
}
