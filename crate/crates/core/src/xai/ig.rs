use ndarray::Array2;

use super::{check_input, from_tensor_2d, input_gradient, target_scores, to_tensor, AttributionMap, Explainable, Technique};
use crate::error::{Error, Result};

const PATH_BATCH: usize = 16;

/// Integrated Gradients with the Riemann midpoint rule: gradients at
/// `baseline + (k + 1/2)/steps * (input - baseline)`, averaged and multiplied
/// by `input - baseline`.
///
/// `params` records `steps`, `score_delta = f(input) - f(baseline)` and
/// `completeness_residual = sum(map) - score_delta`.
pub fn integrated_gradients<M: Explainable + ?Sized>(
    model: &M,
    input: &Array2<f32>,
    baseline: &Array2<f32>,
    steps: usize,
    target: usize,
) -> Result<AttributionMap> {
    check_input(model, input)?;
    if baseline.dim() != input.dim() {
        return Err(Error::Shape(format!(
            "baseline {:?} does not match input {:?}",
            baseline.dim(),
            input.dim()
        )));
    }
    if steps == 0 {
        return Err(Error::Config("integrated gradients needs at least one step".into()));
    }
    if !model.differentiable() {
        return Err(Error::NonDifferentiableModel);
    }
    let diff = input - baseline;
    let mut grad_sum = Array2::<f64>::zeros(input.dim());
    let alphas: Vec<f32> = (0..steps).map(|k| (k as f32 + 0.5) / steps as f32).collect();
    for chunk in alphas.chunks(PATH_BATCH) {
        let points: Vec<Array2<f32>> = chunk.iter().map(|&a| baseline + &(&diff * a)).collect();
        let refs: Vec<&Array2<f32>> = points.iter().collect();
        let grads = input_gradient(model, &to_tensor(&refs)?, target)?;
        for i in 0..chunk.len() {
            let g = from_tensor_2d(&grads.get(i)?.squeeze(0)?)?;
            grad_sum.zip_mut_with(&g, |s, &v| *s += v as f64);
        }
    }
    let values = ndarray::Zip::from(&diff)
        .and(&grad_sum)
        .map_collect(|&d, &g| (d as f64 * g / steps as f64) as f32);

    let ends = target_scores(model, &[input.clone(), baseline.clone()], target)?;
    let delta = ends[0] as f64 - ends[1] as f64;
    let total: f64 = values.iter().map(|&v| v as f64).sum();
    let mut map = AttributionMap::new(values, Technique::Ig, target);
    map.params.insert("steps".into(), steps as f64);
    map.params.insert("score_delta".into(), delta);
    map.params.insert("completeness_residual".into(), total - delta);
    Ok(map)
}
