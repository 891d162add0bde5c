use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    /// Largest values.
    #[default]
    Positive,
    /// Smallest values.
    Negative,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BinaryMask {
    pub selected: Array2<bool>,
    pub fraction: f64,
    pub polarity: Polarity,
}

impl BinaryMask {
    pub fn empty(dim: (usize, usize)) -> Self {
        Self {
            selected: Array2::from_elem(dim, false),
            fraction: 0.0,
            polarity: Polarity::Positive,
        }
    }

    pub fn count(&self) -> usize {
        self.selected.iter().filter(|&&s| s).count()
    }

    /// Selected share of all cells.
    pub fn area(&self) -> f64 {
        self.count() as f64 / self.selected.len().max(1) as f64
    }
}

fn check_fraction(fraction: f64) -> Result<()> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Config(format!("mask fraction must be in (0, 1], got {fraction}")));
    }
    Ok(())
}

/// Cells ordered by value (descending for positive polarity, ascending for
/// negative); equal values keep row-major order.
fn ranked(values: &Array2<f32>, polarity: Polarity) -> Result<Vec<usize>> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NaNInput);
    }
    let flat: Vec<f32> = values.iter().copied().collect();
    let mut order: Vec<usize> = (0..flat.len()).collect();
    match polarity {
        Polarity::Positive => order.sort_by(|&a, &b| flat[b].total_cmp(&flat[a])),
        Polarity::Negative => order.sort_by(|&a, &b| flat[a].total_cmp(&flat[b])),
    }
    Ok(order)
}

fn mask_from(dim: (usize, usize), cells: &[usize], fraction: f64, polarity: Polarity) -> BinaryMask {
    let mut selected = Array2::from_elem(dim, false);
    let w = dim.1;
    for &i in cells {
        selected[[i / w, i % w]] = true;
    }
    BinaryMask {
        selected,
        fraction,
        polarity,
    }
}

/// Selects `round(fraction * cells)` cells with the largest (positive) or
/// smallest (negative) values; ties go to the earlier cell in row-major order.
pub fn threshold_topk(values: &Array2<f32>, fraction: f64, polarity: Polarity) -> Result<BinaryMask> {
    check_fraction(fraction)?;
    let order = ranked(values, polarity)?;
    let count = ((fraction * values.len() as f64).round() as usize).min(values.len());
    Ok(mask_from(values.dim(), &order[..count], fraction, polarity))
}

/// Mass-fraction variant: the fewest top-ranked cells whose same-signed
/// attribution mass reaches `fraction` of the map's total same-signed mass.
pub fn threshold_mass(values: &Array2<f32>, fraction: f64, polarity: Polarity) -> Result<BinaryMask> {
    check_fraction(fraction)?;
    let order = ranked(values, polarity)?;
    let flat: Vec<f64> = values.iter().map(|&v| v as f64).collect();
    let signed = |v: f64| match polarity {
        Polarity::Positive => v.max(0.0),
        Polarity::Negative => (-v).max(0.0),
    };
    let total: f64 = flat.iter().map(|&v| signed(v)).sum();
    let mut cells = Vec::new();
    if total > 0.0 {
        let mut acc = 0.0;
        for &i in &order {
            if acc >= fraction * total || signed(flat[i]) == 0.0 {
                break;
            }
            acc += signed(flat[i]);
            cells.push(i);
        }
    }
    Ok(mask_from(values.dim(), &cells, fraction, polarity))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn top_one_of_ten() {
        let v = array![[3.0f32, 9.0, 1.0, 4.0, 0.5, 2.0, 8.0, 7.0, 6.0, 5.0]];
        let m = threshold_topk(&v, 0.1, Polarity::Positive).unwrap();
        assert_eq!(m.count(), 1);
        assert!(m.selected[[0, 1]]);
        let n = threshold_topk(&v, 0.1, Polarity::Negative).unwrap();
        assert!(n.selected[[0, 4]]);
    }

    #[test]
    fn full_fraction_and_ties() {
        let v = array![[1.0f32, 1.0], [1.0, 1.0]];
        assert_eq!(threshold_topk(&v, 1.0, Polarity::Positive).unwrap().count(), 4);
        let half = threshold_topk(&v, 0.5, Polarity::Positive).unwrap();
        assert_eq!(half.selected, array![[true, true], [false, false]]);
    }

    #[test]
    fn bad_fraction() {
        let v = array![[1.0f32]];
        assert!(matches!(threshold_topk(&v, 0.0, Polarity::Positive), Err(Error::Config(_))));
        assert!(matches!(threshold_topk(&v, 1.5, Polarity::Positive), Err(Error::Config(_))));
    }

    #[test]
    fn mass_fraction() {
        let v = array![[6.0f32, 3.0, 1.0, -5.0]];
        let m = threshold_mass(&v, 0.5, Polarity::Positive).unwrap();
        assert_eq!(m.selected, array![[true, false, false, false]]);
        let m = threshold_mass(&v, 0.7, Polarity::Positive).unwrap();
        assert_eq!(m.count(), 2);
    }
}
