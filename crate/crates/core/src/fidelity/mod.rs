//! Explanation fidelity: mask the cells an explanation ranks highest and
//! measure how much the classifier degrades.

mod multi;
mod stats;
mod table;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{Label, LabeledInputs};
use crate::error::{Error, Result};
use crate::train::{compute_metrics, Metrics};
use crate::xai::{explain, predicted_class, threshold_topk, BinaryMask, Explainable, Polarity, Technique, XaiConfig};

pub use multi::{
    accuracy_change_pct, aggregate_log, mask_reduction_pct, run_multi_fidelity, MultiFidelityConfig, MultiFidelityReport,
    MultiSampleRecord, SizeRow,
};
pub use stats::{mean_std, welch_t_test};
pub use table::{
    multi_fidelity_rows, single_fidelity_rows, write_multi_fidelity_csv, write_single_fidelity_csv, MultiFidelityRow,
    SingleFidelityRow, MULTI_FIDELITY_COLUMNS, SINGLE_FIDELITY_COLUMNS,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MaskPolicy {
    pub fraction: f64,
    pub polarity: Polarity,
    pub fill: f32,
}

impl Default for MaskPolicy {
    fn default() -> Self {
        Self {
            fraction: 0.1,
            polarity: Polarity::Positive,
            fill: 0.0,
        }
    }
}

impl MaskPolicy {
    pub fn validate(&self) -> Result<()> {
        if !(self.fraction > 0.0 && self.fraction <= 1.0) {
            return Err(Error::Config(format!("mask fraction must be in (0, 1], got {}", self.fraction)));
        }
        if !self.fill.is_finite() {
            return Err(Error::Config("mask fill must be finite".into()));
        }
        Ok(())
    }

    pub fn mask(&self, values: &Array2<f32>) -> Result<BinaryMask> {
        threshold_topk(values, self.fraction, self.polarity)
    }
}

/// Copy of `input` with the selected cells set to `fill`.
pub fn apply_mask(input: &Array2<f32>, mask: &BinaryMask, fill: f32) -> Result<Array2<f32>> {
    if input.dim() != mask.selected.dim() {
        return Err(Error::Shape(format!(
            "mask {:?} does not match input {:?}",
            mask.selected.dim(),
            input.dim()
        )));
    }
    Ok(ndarray::Zip::from(input)
        .and(&mask.selected)
        .map_collect(|&v, &s| if s { fill } else { v }))
}

/// Cells covered by at least `k` of the masks.
pub fn overlap_mask(masks: &[BinaryMask], k: usize) -> Result<BinaryMask> {
    let first = masks.first().ok_or(Error::EmptyInput)?;
    if k == 0 {
        return Err(Error::Config("overlap size must be at least 1".into()));
    }
    let dim = first.selected.dim();
    let mut counts = Array2::<usize>::zeros(dim);
    for m in masks {
        if m.selected.dim() != dim {
            return Err(Error::Shape(format!("mask {:?} differs from {:?}", m.selected.dim(), dim)));
        }
        ndarray::Zip::from(&mut counts)
            .and(&m.selected)
            .for_each(|c, &s| *c += s as usize);
    }
    Ok(BinaryMask {
        selected: counts.mapv(|c| c >= k),
        fraction: first.fraction,
        polarity: first.polarity,
    })
}

/// `count` distinct cells drawn uniformly at random.
pub fn random_mask(dim: (usize, usize), count: usize, rng: &mut ChaCha8Rng) -> BinaryMask {
    let n = dim.0 * dim.1;
    let mut selected = Array2::from_elem(dim, false);
    for i in rand::seq::index::sample(rng, n, count.min(n)) {
        selected[[i / dim.1, i % dim.1]] = true;
    }
    BinaryMask {
        selected,
        fraction: count as f64 / n.max(1) as f64,
        polarity: Polarity::Positive,
    }
}

/// One sample of a single-technique run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SingleSampleRecord {
    pub id: String,
    pub label: Label,
    pub baseline: Label,
    pub masked: Label,
    /// Prediction with a random mask of the same cardinality.
    pub random: Label,
    pub mask_cells: usize,
    pub total_cells: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FidelityReport {
    pub technique: Technique,
    pub baseline_metrics: Metrics,
    pub masked_metrics: Metrics,
    /// Equal-cardinality random-mask control.
    pub random_metrics: Metrics,
    pub n_samples: usize,
    pub policy: MaskPolicy,
    pub mean_mask_pct: f64,
    pub samples: Vec<SingleSampleRecord>,
}

pub(crate) fn predict_label<M: Explainable + ?Sized>(model: &M, input: &Array2<f32>) -> Result<Label> {
    Ok(Label::from_index(predicted_class(model, input)?))
}

/// Explains each sample's predicted class with `technique`, masks the top
/// cells per `policy` and re-predicts. A random mask of the same size is
/// evaluated alongside as a control. `seed` drives LIME and the control.
pub fn run_single_fidelity<M: Explainable + ?Sized>(
    model: &M,
    data: &LabeledInputs,
    technique: Technique,
    xai: &XaiConfig,
    policy: &MaskPolicy,
    seed: u64,
) -> Result<FidelityReport> {
    policy.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = Vec::with_capacity(data.len());
    for (i, input) in data.inputs.iter().enumerate() {
        let pred = predicted_class(model, input)?;
        let map = explain(model, input, technique, xai, Some(pred), seed.wrapping_add(i as u64))?;
        let mask = policy.mask(&map.values)?;
        let masked = apply_mask(input, &mask, policy.fill)?;
        let control = random_mask(input.dim(), mask.count(), &mut rng);
        let random = apply_mask(input, &control, policy.fill)?;
        samples.push(SingleSampleRecord {
            id: data.ids[i].clone(),
            label: data.labels[i],
            baseline: Label::from_index(pred),
            masked: predict_label(model, &masked)?,
            random: predict_label(model, &random)?,
            mask_cells: mask.count(),
            total_cells: input.len(),
        });
    }
    let metrics = |pick: fn(&SingleSampleRecord) -> Label| {
        let preds: Vec<Label> = samples.iter().map(pick).collect();
        compute_metrics(&data.labels, &preds, Label::POSITIVE)
    };
    Ok(FidelityReport {
        technique,
        baseline_metrics: metrics(|s| s.baseline)?,
        masked_metrics: metrics(|s| s.masked)?,
        random_metrics: metrics(|s| s.random)?,
        n_samples: samples.len(),
        policy: *policy,
        mean_mask_pct: 100.0
            * samples
                .iter()
                .map(|s| s.mask_cells as f64 / s.total_cells as f64)
                .sum::<f64>()
            / samples.len() as f64,
        samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::xai::toy::RegionSum;
    use ndarray::array;
    use proptest::prelude::*;

    fn mask(cells: &[(usize, usize)], dim: (usize, usize)) -> BinaryMask {
        let mut m = BinaryMask::empty(dim);
        for &c in cells {
            m.selected[c] = true;
        }
        m
    }

    #[test]
    fn apply_mask_cases() {
        let x = array![[1.0f32, 2.0], [3.0, 4.0]];
        let mut all = BinaryMask::empty((2, 2));
        all.selected.fill(true);
        assert_eq!(apply_mask(&x, &all, 0.0).unwrap(), Array2::<f32>::zeros((2, 2)));
        assert_eq!(apply_mask(&x, &BinaryMask::empty((2, 2)), 0.0).unwrap(), x);
        assert!(matches!(apply_mask(&x, &BinaryMask::empty((3, 2)), 0.0), Err(Error::Shape(_))));
    }

    #[test]
    fn overlap_examples() {
        let dim = (1, 4);
        let a = mask(&[(0, 1), (0, 2)], dim);
        let b = mask(&[(0, 2), (0, 3)], dim);
        let c = mask(&[(0, 2)], dim);
        let all = [a.clone(), b.clone(), c.clone()];
        assert_eq!(overlap_mask(&all, 2).unwrap().selected, array![[false, false, true, false]]);
        assert_eq!(overlap_mask(&all, 1).unwrap().selected, array![[false, true, true, true]]);
        assert_eq!(overlap_mask(&all, 4).unwrap().count(), 0);
        assert!(matches!(overlap_mask(&[], 1), Err(Error::EmptyInput)));
        assert!(matches!(
            overlap_mask(&[a, BinaryMask::empty((2, 2))], 1),
            Err(Error::Shape(_))
        ));
    }

    proptest! {
        #[test]
        fn overlap_is_monotone(bits in proptest::collection::vec(proptest::collection::vec(any::<bool>(), 12), 1..6)) {
            let masks: Vec<BinaryMask> = bits
                .iter()
                .map(|b| BinaryMask {
                    selected: Array2::from_shape_vec((3, 4), b.clone()).unwrap(),
                    fraction: 0.1,
                    polarity: Polarity::Positive,
                })
                .collect();
            for k in 1..=masks.len() {
                let lo = overlap_mask(&masks, k).unwrap();
                let hi = overlap_mask(&masks, k + 1).unwrap();
                prop_assert!(ndarray::Zip::from(&lo.selected).and(&hi.selected).all(|&l, &h| !h || l));
            }
        }
    }

    #[test]
    fn random_mask_has_requested_size() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(random_mask((5, 7), 6, &mut rng).count(), 6);
        assert_eq!(random_mask((2, 2), 9, &mut rng).count(), 4);
    }

    fn region_data() -> (RegionSum, LabeledInputs) {
        // Class 0 (human) wins when the top-left region sums above zero.
        let model = RegionSum {
            hw: (8, 8),
            rows: 0..2,
            cols: 0..2,
        };
        let mut data = LabeledInputs::default();
        for i in 0..10 {
            let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
            let x = Array2::from_shape_fn((8, 8), |(r, c)| if r < 2 && c < 2 { sign } else { 0.1 * (r + c) as f32 });
            let label = if sign > 0.0 { Label::Human } else { Label::Machine };
            data.push(format!("s{i}"), x, label);
        }
        (model, data)
    }

    #[test]
    fn tiny_fraction_reproduces_baseline() {
        let (model, data) = region_data();
        let policy = MaskPolicy {
            fraction: 1e-6,
            ..MaskPolicy::default()
        };
        let r = run_single_fidelity(&model, &data, Technique::Ig, &XaiConfig::default(), &policy, 0).unwrap();
        assert_eq!(r.masked_metrics, r.baseline_metrics);
        assert_eq!(r.baseline_metrics.accuracy, 1.0);
        assert_eq!(r.mean_mask_pct, 0.0);
    }

    #[test]
    fn masking_the_evidence_breaks_predictions() {
        let (model, data) = region_data();
        let policy = MaskPolicy {
            fraction: 4.0 / 64.0,
            ..MaskPolicy::default()
        };
        let cfg = XaiConfig {
            ig_steps: 8,
            ..XaiConfig::default()
        };
        let r = run_single_fidelity(&model, &data, Technique::Ig, &cfg, &policy, 0).unwrap();
        assert_eq!(r.baseline_metrics.accuracy, 1.0);
        // Zeroed evidence gives a zero score for both classes; ties go to class 0.
        assert_eq!(r.masked_metrics.accuracy, 0.5);
        assert!(matches!(
            run_single_fidelity(&model, &LabeledInputs::default(), Technique::Ig, &cfg, &policy, 0),
            Err(Error::EmptyDataset)
        ));
    }
}
