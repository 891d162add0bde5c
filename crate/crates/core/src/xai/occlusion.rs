use ndarray::{s, Array2};

use super::{check_input, target_scores, AttributionMap, Explainable, Technique};
use crate::error::{Error, Result};

/// Patch offsets along one axis: `0, stride, 2*stride, ...` plus a final
/// flush-with-the-edge offset when the stride leaves cells uncovered.
pub fn occlusion_positions(len: usize, patch: usize, stride: usize) -> Vec<usize> {
    let mut out: Vec<usize> = (0..=len - patch).step_by(stride).collect();
    if out.last().is_some_and(|&p| p + patch < len) {
        out.push(len - patch);
    }
    out
}

/// Occlusion sensitivity: every cell gets the mean score drop
/// `f(input) - f(occluded)` over the patch placements that cover it. Cells
/// no placement covers get 0.
pub fn occlusion_sensitivity<M: Explainable + ?Sized>(
    model: &M,
    input: &Array2<f32>,
    patch: (usize, usize),
    stride: (usize, usize),
    fill: f32,
    target: usize,
) -> Result<AttributionMap> {
    check_input(model, input)?;
    let (h, w) = input.dim();
    let (ph, pw) = patch;
    if ph == 0 || pw == 0 || stride.0 == 0 || stride.1 == 0 {
        return Err(Error::Config("occlusion patch and stride must be at least 1".into()));
    }
    if ph > h || pw > w {
        return Err(Error::Config(format!("occlusion patch {ph}x{pw} exceeds input {h}x{w}")));
    }
    if !fill.is_finite() {
        return Err(Error::Config("occlusion fill must be finite".into()));
    }
    let rows = occlusion_positions(h, ph, stride.0);
    let cols = occlusion_positions(w, pw, stride.1);
    let placements: Vec<(usize, usize)> = rows
        .iter()
        .flat_map(|&r| cols.iter().map(move |&c| (r, c)))
        .collect();

    let base = target_scores(model, std::slice::from_ref(input), target)?[0];
    let mut sum = Array2::<f64>::zeros((h, w));
    let mut count = Array2::<u32>::zeros((h, w));
    for chunk in placements.chunks(64) {
        let grids: Vec<Array2<f32>> = chunk
            .iter()
            .map(|&(r, c)| {
                let mut g = input.clone();
                g.slice_mut(s![r..r + ph, c..c + pw]).fill(fill);
                g
            })
            .collect();
        let scores = target_scores(model, &grids, target)?;
        for (&(r, c), &score) in chunk.iter().zip(&scores) {
            let drop = base as f64 - score as f64;
            sum.slice_mut(s![r..r + ph, c..c + pw]).mapv_inplace(|v| v + drop);
            count.slice_mut(s![r..r + ph, c..c + pw]).mapv_inplace(|v| v + 1);
        }
    }
    let values = ndarray::Zip::from(&sum)
        .and(&count)
        .map_collect(|&s, &n| if n == 0 { 0.0 } else { (s / n as f64) as f32 });
    let mut map = AttributionMap::new(values, Technique::Occlusion, target);
    map.params.insert("patch_h".into(), ph as f64);
    map.params.insert("patch_w".into(), pw as f64);
    map.params.insert("stride_h".into(), stride.0 as f64);
    map.params.insert("stride_w".into(), stride.1 as f64);
    map.params.insert("fill".into(), fill as f64);
    Ok(map)
}

#[cfg(test)]
mod tests {
    use super::super::toy::{Constant, RegionSum};
    use super::*;

    #[test]
    fn positions_cover_edges() {
        assert_eq!(occlusion_positions(8, 3, 2), vec![0, 2, 4, 5]);
        assert_eq!(occlusion_positions(8, 4, 4), vec![0, 4]);
        assert_eq!(occlusion_positions(8, 8, 3), vec![0]);
    }

    #[test]
    fn constant_model_gives_zero_map() {
        let x = Array2::from_shape_fn((8, 8), |(r, c)| (r + c) as f32);
        let map = occlusion_sensitivity(&Constant((8, 8)), &x, (3, 3), (2, 2), 0.0, 0).unwrap();
        assert!(map.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn full_patch_is_single_occlusion() {
        let model = RegionSum {
            hw: (8, 8),
            rows: 2..4,
            cols: 1..6,
        };
        let x = Array2::from_shape_fn((8, 8), |(r, c)| (r * 8 + c) as f32);
        let map = occlusion_sensitivity(&model, &x, (8, 8), (5, 5), 0.0, 0).unwrap();
        let expected: f32 = (2..4).flat_map(|r| (1..6).map(move |c| (r * 8 + c) as f32)).sum();
        assert!(map.values.iter().all(|&v| v == expected));
    }

    #[test]
    fn patch_too_large() {
        let x = Array2::zeros((8, 8));
        assert!(matches!(
            occlusion_sensitivity(&Constant((8, 8)), &x, (9, 2), (1, 1), 0.0, 0),
            Err(Error::Config(_))
        ));
    }
}
