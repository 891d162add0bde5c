use nalgebra::{DMatrix, DVector};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{check_input, target_scores, AttributionMap, Explainable, Technique};
use crate::error::{Error, Result};

/// Cell -> segment assignment over the input grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Segmentation {
    pub labels: Array2<usize>,
    pub n_segments: usize,
}

impl Segmentation {
    /// Regular `seg_rows x seg_cols` grid of rectangles; edge segments absorb
    /// the remainder.
    pub fn grid(h: usize, w: usize, seg_rows: usize, seg_cols: usize) -> Result<Self> {
        if seg_rows == 0 || seg_cols == 0 || seg_rows > h || seg_cols > w {
            return Err(Error::Config(format!(
                "cannot cut {h}x{w} into {seg_rows}x{seg_cols} segments"
            )));
        }
        let labels = Array2::from_shape_fn((h, w), |(r, c)| {
            let sr = (r * seg_rows / h).min(seg_rows - 1);
            let sc = (c * seg_cols / w).min(seg_cols - 1);
            sr * seg_cols + sc
        });
        Ok(Self {
            labels,
            n_segments: seg_rows * seg_cols,
        })
    }

    pub fn from_labels(labels: Array2<usize>) -> Result<Self> {
        let n_segments = labels.iter().max().map_or(0, |m| m + 1);
        let mut used = vec![false; n_segments];
        for &l in &labels {
            used[l] = true;
        }
        if used.iter().any(|u| !u) {
            return Err(Error::Config("segment ids must be contiguous from 0".into()));
        }
        Ok(Self { labels, n_segments })
    }
}

/// LIME with a linear surrogate: `n_samples` random on/off segment masks
/// (the first keeps every segment), off segments set to `fill`, and a ridge
/// fit (`ridge * |w|^2`, unpenalised intercept) of the target score on the
/// mask bits. Segment weights are broadcast to their cells; `params` holds
/// the surrogate's R^2.
#[allow(clippy::too_many_arguments)]
pub fn lime_explain<M: Explainable + ?Sized>(
    model: &M,
    input: &Array2<f32>,
    segmentation: &Segmentation,
    n_samples: usize,
    seed: u64,
    target: usize,
    fill: f32,
    ridge: f64,
) -> Result<AttributionMap> {
    check_input(model, input)?;
    if n_samples == 0 {
        return Err(Error::Config("LIME needs at least one sample".into()));
    }
    if segmentation.labels.dim() != input.dim() {
        return Err(Error::Shape("segmentation does not cover the input grid".into()));
    }
    let d = segmentation.n_segments;
    if d < 2 {
        return Err(Error::DegenerateSegmentation);
    }
    if !(ridge >= 0.0) {
        return Err(Error::Config("LIME ridge must be non-negative".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let masks: Vec<Vec<bool>> = (0..n_samples)
        .map(|i| {
            if i == 0 {
                vec![true; d]
            } else {
                (0..d).map(|_| rng.random_bool(0.5)).collect()
            }
        })
        .collect();
    let mut y = Vec::with_capacity(n_samples);
    for chunk in masks.chunks(64) {
        let grids: Vec<Array2<f32>> = chunk
            .iter()
            .map(|m| {
                ndarray::Zip::from(input)
                    .and(&segmentation.labels)
                    .map_collect(|&v, &s| if m[s] { v } else { fill })
            })
            .collect();
        y.extend(target_scores(model, &grids, target)?.into_iter().map(|v| v as f64));
    }

    let z = DMatrix::from_fn(n_samples, d, |i, j| if masks[i][j] { 1.0 } else { 0.0 });
    let (weights, intercept) = ridge_fit(&z, &DVector::from_vec(y.clone()), ridge)?;
    let pred = &z * &weights + DVector::from_element(n_samples, intercept);
    let mean = y.iter().sum::<f64>() / n_samples as f64;
    let ss_tot: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    let ss_res: f64 = y.iter().zip(pred.iter()).map(|(a, b)| (a - b).powi(2)).sum();
    let r2 = if ss_tot > 0.0 {
        1.0 - ss_res / ss_tot
    } else if ss_res <= 1e-12 {
        1.0
    } else {
        0.0
    };

    let values = segmentation.labels.mapv(|s| weights[s] as f32);
    let mut map = AttributionMap::new(values, Technique::Lime, target);
    map.seed = Some(seed);
    map.params.insert("n_samples".into(), n_samples as f64);
    map.params.insert("n_segments".into(), d as f64);
    map.params.insert("ridge".into(), ridge);
    map.params.insert("r2".into(), r2);
    map.params.insert("intercept".into(), intercept);
    Ok(map)
}

/// Ridge regression with an unpenalised intercept, via centring and a
/// Cholesky solve (LU when the system is not positive definite).
pub(crate) fn ridge_fit(z: &DMatrix<f64>, y: &DVector<f64>, ridge: f64) -> Result<(DVector<f64>, f64)> {
    let z_mean = z.row_mean();
    let y_mean = y.mean();
    let zc = DMatrix::from_fn(z.nrows(), z.ncols(), |i, j| z[(i, j)] - z_mean[j]);
    let yc = y.map(|v| v - y_mean);
    let mut a = zc.transpose() * &zc;
    for j in 0..a.ncols() {
        a[(j, j)] += ridge;
    }
    let b = zc.transpose() * yc;
    let w = match a.clone().cholesky() {
        Some(ch) => ch.solve(&b),
        None => a
            .lu()
            .solve(&b)
            .unwrap_or_else(|| DVector::zeros(z.ncols())),
    };
    let intercept = y_mean - (z_mean * &w)[(0, 0)];
    Ok((w, intercept))
}

#[cfg(test)]
mod tests {
    use super::super::toy::RegionSum;
    use super::*;

    #[test]
    fn single_region_model_picks_its_segment() {
        // 4 quadrants of an 8x8 grid; the model only reads the top-right one.
        let seg = Segmentation::grid(8, 8, 2, 2).unwrap();
        let model = RegionSum {
            hw: (8, 8),
            rows: 0..4,
            cols: 4..8,
        };
        let x = Array2::from_elem((8, 8), 1.0f32);
        let map = lime_explain(&model, &x, &seg, 200, 3, 0, 0.0, 1.0).unwrap();
        let w: Vec<f32> = [(0, 0), (0, 4), (4, 0), (4, 4)].iter().map(|&p| map.values[p]).collect();
        assert!(w[1] > w[0] && w[1] > w[2] && w[1] > w[3]);
        assert!(map.params["r2"] > 0.99);
    }

    #[test]
    fn seeded_and_errors() {
        let seg = Segmentation::grid(8, 8, 4, 4).unwrap();
        let model = RegionSum {
            hw: (8, 8),
            rows: 1..5,
            cols: 2..3,
        };
        let x = Array2::from_shape_fn((8, 8), |(r, c)| (r * c) as f32 / 10.0);
        let a = lime_explain(&model, &x, &seg, 50, 9, 0, 0.0, 1.0).unwrap();
        let b = lime_explain(&model, &x, &seg, 50, 9, 0, 0.0, 1.0).unwrap();
        assert_eq!(a, b);
        assert!(matches!(
            lime_explain(&model, &x, &seg, 0, 9, 0, 0.0, 1.0),
            Err(Error::Config(_))
        ));
        let one = Segmentation::grid(8, 8, 1, 1).unwrap();
        assert!(matches!(
            lime_explain(&model, &x, &one, 10, 9, 0, 0.0, 1.0),
            Err(Error::DegenerateSegmentation)
        ));
    }

    #[test]
    fn ridge_recovers_exact_linear_fit_without_penalty() {
        let z = DMatrix::from_row_slice(4, 2, &[0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let y = DVector::from_vec(vec![1.0, 3.0, 0.5, 2.5]);
        let (w, b) = ridge_fit(&z, &y, 0.0).unwrap();
        assert!((w[0] - 2.0).abs() < 1e-12 && (w[1] + 0.5).abs() < 1e-12 && (b - 1.0).abs() < 1e-12);
    }
}
