//! Small 2-D grid helpers shared by feature extraction, attribution and rendering.

use ndarray::Array2;

/// Bilinear resampling with half-pixel centres and edge clamping.
pub fn resize_bilinear(src: &Array2<f32>, rows: usize, cols: usize) -> Array2<f32> {
    let (src_rows, src_cols) = src.dim();
    if (src_rows, src_cols) == (rows, cols) {
        return src.clone();
    }
    let sy = src_rows as f64 / rows as f64;
    let sx = src_cols as f64 / cols as f64;
    let taps = |dst: usize, scale: f64, len: usize| -> (usize, usize, f64) {
        let pos = ((dst as f64 + 0.5) * scale - 0.5).max(0.0);
        let lo = (pos.floor() as usize).min(len - 1);
        let hi = (lo + 1).min(len - 1);
        (lo, hi, pos - lo as f64)
    };
    let col_taps: Vec<_> = (0..cols).map(|c| taps(c, sx, src_cols)).collect();
    Array2::from_shape_fn((rows, cols), |(r, c)| {
        let (y0, y1, fy) = taps(r, sy, src_rows);
        let (x0, x1, fx) = col_taps[c];
        let top = src[[y0, x0]] as f64 * (1.0 - fx) + src[[y0, x1]] as f64 * fx;
        let bottom = src[[y1, x0]] as f64 * (1.0 - fx) + src[[y1, x1]] as f64 * fx;
        (top * (1.0 - fy) + bottom * fy) as f32
    })
}

/// Area-weighted resampling: each output cell is the overlap-weighted mean of
/// the source cells it covers. Works for both down- and up-sampling.
pub fn resize_area(src: &Array2<f32>, rows: usize, cols: usize) -> Array2<f32> {
    let (src_rows, src_cols) = src.dim();
    let row_w = overlap_weights(src_rows, rows);
    let col_w = overlap_weights(src_cols, cols);
    let mut out = Array2::<f32>::zeros((rows, cols));
    for (r, rw) in row_w.iter().enumerate() {
        for (c, cw) in col_w.iter().enumerate() {
            let mut acc = 0.0f64;
            let mut total = 0.0f64;
            for &(sr, wr) in rw {
                for &(sc, wc) in cw {
                    let w = wr * wc;
                    acc += w * src[[sr, sc]] as f64;
                    total += w;
                }
            }
            out[[r, c]] = (acc / total) as f32;
        }
    }
    out
}

fn overlap_weights(src_len: usize, dst_len: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = src_len as f64 / dst_len as f64;
    (0..dst_len)
        .map(|d| {
            let start = d as f64 * scale;
            let end = start + scale;
            let first = start.floor() as usize;
            let last = (end.ceil() as usize).min(src_len);
            (first..last)
                .filter_map(|s| {
                    let overlap = (end.min(s as f64 + 1.0) - start.max(s as f64)).max(0.0);
                    (overlap > 1e-12).then_some((s, overlap))
                })
                .collect()
        })
        .collect()
}

/// Min-max normalisation to `[0, 1]`. A constant grid maps to all zeros.
pub fn min_max_normalize(src: &Array2<f32>) -> Array2<f32> {
    let (lo, hi) = src
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let range = hi - lo;
    if !(range > 0.0) {
        return Array2::zeros(src.dim());
    }
    src.mapv(|v| (v - lo) / range)
}

pub fn all_finite(src: &Array2<f32>) -> bool {
    src.iter().all(|v| v.is_finite())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn area_downsample_averages_blocks() {
        let src = Array2::from_shape_fn((4, 4), |(r, c)| (r * 4 + c) as f32);
        let out = resize_area(&src, 2, 2);
        assert_eq!(out, array![[2.5, 4.5], [10.5, 12.5]]);
    }

    #[test]
    fn area_fractional_preserves_mean() {
        let src = Array2::from_shape_fn((7, 5), |(r, c)| (r * 3 + c * c) as f32);
        let out = resize_area(&src, 3, 2);
        let mean_src = src.mean().unwrap();
        let mean_out = out.mean().unwrap();
        assert!((mean_src - mean_out).abs() < 1e-4);
    }

    #[test]
    fn bilinear_identity_and_constant() {
        let src = Array2::from_elem((3, 5), 0.25f32);
        assert_eq!(resize_bilinear(&src, 3, 5), src);
        let up = resize_bilinear(&src, 10, 11);
        assert!(up.iter().all(|&v| (v - 0.25).abs() < 1e-7));
    }

    #[test]
    fn normalize_constant_is_zero() {
        let src = Array2::from_elem((2, 2), 3.0f32);
        assert!(min_max_normalize(&src).iter().all(|&v| v == 0.0));
        let src = array![[1.0f32, 3.0], [2.0, 5.0]];
        assert_eq!(min_max_normalize(&src), array![[0.0, 0.5], [0.25, 1.0]]);
    }
}
