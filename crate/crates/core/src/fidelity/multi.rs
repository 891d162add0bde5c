use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::stats::{mean_std, welch_t_test};
use super::{apply_mask, overlap_mask, predict_label, MaskPolicy};
use crate::dataset::{Label, LabeledInputs};
use crate::error::{Error, Result};
use crate::xai::{explain, predicted_class, BinaryMask, Explainable, Technique, XaiConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MultiFidelityConfig {
    /// Combination sizes (minimum number of techniques covering a cell).
    pub sizes: Vec<usize>,
    pub runs: usize,
    /// Evaluation subsample drawn per run; all samples when the data is smaller.
    pub subsample: usize,
    pub seed: u64,
}

impl Default for MultiFidelityConfig {
    fn default() -> Self {
        Self {
            sizes: vec![2, 3, 4, 5],
            runs: 5,
            subsample: 1000,
            seed: 0,
        }
    }
}

/// One (run, sample, size) evaluation; enough to recompute every aggregate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiSampleRecord {
    pub run: usize,
    pub size: usize,
    pub index: usize,
    pub id: String,
    pub label: Label,
    pub baseline: Label,
    pub masked: Label,
    pub mask_cells: usize,
    pub total_cells: usize,
}

/// Aggregates for one combination size. Percentages are in 0..100.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizeRow {
    pub size: usize,
    pub avg_mask_pct: Vec<f64>,
    pub accuracy_pct: Vec<f64>,
    pub avg_mask_mean: f64,
    pub avg_mask_std: f64,
    pub accuracy_mean: f64,
    pub accuracy_std: f64,
    /// Welch test of the per-run accuracies against the previous size.
    pub p_value: Option<f64>,
    pub mask_reduction_pct: Option<f64>,
    pub accuracy_change_pct: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiFidelityReport {
    pub techniques: Vec<Technique>,
    pub runs: usize,
    pub policy: MaskPolicy,
    /// Accuracy is plain accuracy over the masked evaluation subset.
    pub accuracy_definition: String,
    pub baseline_accuracy_pct: Vec<f64>,
    pub rows: Vec<SizeRow>,
}

/// Relative decrease of the mean masked area from the previous size.
pub fn mask_reduction_pct(previous: f64, current: f64) -> Option<f64> {
    (previous != 0.0).then(|| 100.0 * (previous - current) / previous)
}

/// Relative change of mean accuracy from the previous size.
pub fn accuracy_change_pct(previous: f64, current: f64) -> Option<f64> {
    (previous != 0.0).then(|| 100.0 * (current - previous) / previous)
}

fn mask_cells(mask: &BinaryMask) -> Vec<u32> {
    mask.selected
        .iter()
        .enumerate()
        .filter_map(|(i, &s)| s.then_some(i as u32))
        .collect()
}

fn mask_from_cells(dim: (usize, usize), cells: &[u32]) -> BinaryMask {
    let mut m = BinaryMask::empty(dim);
    for &i in cells {
        m.selected[[i as usize / dim.1, i as usize % dim.1]] = true;
    }
    m
}

fn run_seed(seed: u64, run: usize) -> u64 {
    seed ^ (run as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Multi-technique protocol. In every run: draw the evaluation subsample,
/// explain each sample's predicted class with every technique (stochastic
/// techniques get fresh per-run seeds), take each technique's top-fraction
/// mask, and for each size `k` mask the cells covered by at least `k`
/// techniques. Maps of deterministic techniques are computed once per
/// sample. Returns the report and the per-sample log.
pub fn run_multi_fidelity<M: Explainable + ?Sized>(
    model: &M,
    data: &LabeledInputs,
    techniques: &[Technique],
    xai: &XaiConfig,
    policy: &MaskPolicy,
    cfg: &MultiFidelityConfig,
) -> Result<(MultiFidelityReport, Vec<MultiSampleRecord>)> {
    policy.validate()?;
    if cfg.sizes.is_empty() || cfg.sizes.contains(&0) {
        return Err(Error::Config("combination sizes must be positive".into()));
    }
    let needed = *cfg.sizes.iter().max().unwrap_or(&0);
    if techniques.len() < needed {
        return Err(Error::TooFewTechniques {
            needed,
            got: techniques.len(),
        });
    }
    if cfg.runs < 2 {
        return Err(Error::TooFewRuns(cfg.runs));
    }
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }

    let mut cached: HashMap<(usize, Technique), Vec<u32>> = HashMap::new();
    let mut predictions: HashMap<usize, usize> = HashMap::new();
    let mut log = Vec::new();
    let mut baseline_accuracy_pct = Vec::with_capacity(cfg.runs);
    let mut per_size: Vec<(Vec<f64>, Vec<f64>)> = vec![(Vec::new(), Vec::new()); cfg.sizes.len()];

    for run in 0..cfg.runs {
        let seed = run_seed(cfg.seed, run);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut indices: Vec<usize> = if data.len() <= cfg.subsample {
            (0..data.len()).collect()
        } else {
            rand::seq::index::sample(&mut rng, data.len(), cfg.subsample).into_vec()
        };
        indices.sort_unstable();

        let mut sums = vec![(0.0f64, 0usize); cfg.sizes.len()];
        let mut baseline_correct = 0usize;
        for &i in &indices {
            let input = &data.inputs[i];
            let pred = match predictions.get(&i) {
                Some(&p) => p,
                None => {
                    let p = predicted_class(model, input)?;
                    predictions.insert(i, p);
                    p
                }
            };
            let label = data.labels[i];
            let baseline = Label::from_index(pred);
            baseline_correct += (baseline == label) as usize;

            let mut masks = Vec::with_capacity(techniques.len());
            for &t in techniques {
                let cells = if t.is_stochastic() {
                    let map = explain(model, input, t, xai, Some(pred), seed.wrapping_add(i as u64))?;
                    mask_cells(&policy.mask(&map.values)?)
                } else if let Some(c) = cached.get(&(i, t)) {
                    c.clone()
                } else {
                    let map = explain(model, input, t, xai, Some(pred), 0)?;
                    let c = mask_cells(&policy.mask(&map.values)?);
                    cached.insert((i, t), c.clone());
                    c
                };
                masks.push(mask_from_cells(input.dim(), &cells));
            }

            for (s, &k) in cfg.sizes.iter().enumerate() {
                let mask = overlap_mask(&masks, k)?;
                let masked = predict_label(model, &apply_mask(input, &mask, policy.fill)?)?;
                let record = MultiSampleRecord {
                    run,
                    size: k,
                    index: i,
                    id: data.ids[i].clone(),
                    label,
                    baseline,
                    masked,
                    mask_cells: mask.count(),
                    total_cells: input.len(),
                };
                sums[s].0 += record.mask_cells as f64 / record.total_cells as f64;
                sums[s].1 += (masked == label) as usize;
                log.push(record);
            }
        }
        let n = indices.len() as f64;
        baseline_accuracy_pct.push(100.0 * baseline_correct as f64 / n);
        for (s, &(area, correct)) in sums.iter().enumerate() {
            per_size[s].0.push(100.0 * area / n);
            per_size[s].1.push(100.0 * correct as f64 / n);
        }
    }

    let mut rows: Vec<SizeRow> = Vec::with_capacity(cfg.sizes.len());
    for (s, (areas, accs)) in per_size.into_iter().enumerate() {
        let (avg_mask_mean, avg_mask_std) = mean_std(&areas);
        let (accuracy_mean, accuracy_std) = mean_std(&accs);
        let (p_value, mask_reduction, accuracy_change) = match rows.last() {
            Some(prev) => (
                Some(welch_t_test(&prev.accuracy_pct, &accs)?),
                mask_reduction_pct(prev.avg_mask_mean, avg_mask_mean),
                accuracy_change_pct(prev.accuracy_mean, accuracy_mean),
            ),
            None => (None, None, None),
        };
        rows.push(SizeRow {
            size: cfg.sizes[s],
            avg_mask_pct: areas,
            accuracy_pct: accs,
            avg_mask_mean,
            avg_mask_std,
            accuracy_mean,
            accuracy_std,
            p_value,
            mask_reduction_pct: mask_reduction,
            accuracy_change_pct: accuracy_change,
        });
    }
    let report = MultiFidelityReport {
        techniques: techniques.to_vec(),
        runs: cfg.runs,
        policy: *policy,
        accuracy_definition: "accuracy over the masked evaluation subset (both classes)".into(),
        baseline_accuracy_pct,
        rows,
    };
    Ok((report, log))
}

/// Averages a per-sample log back into `(size, run) -> (avg mask %, accuracy %)`.
pub fn aggregate_log(log: &[MultiSampleRecord]) -> std::collections::BTreeMap<(usize, usize), (f64, f64)> {
    let mut acc: std::collections::BTreeMap<(usize, usize), (f64, usize, usize)> = Default::default();
    for r in log {
        let e = acc.entry((r.size, r.run)).or_insert((0.0, 0, 0));
        e.0 += r.mask_cells as f64 / r.total_cells as f64;
        e.1 += (r.masked == r.label) as usize;
        e.2 += 1;
    }
    acc.into_iter()
        .map(|(k, (area, correct, n))| (k, (100.0 * area / n as f64, 100.0 * correct as f64 / n as f64)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use crate::xai::toy::RegionSum;

    #[test]
    fn reduction_and_change_arithmetic() {
        assert!((mask_reduction_pct(29.6, 10.2).unwrap() - 65.5).abs() < 0.05);
        assert!((mask_reduction_pct(10.2, 3.42).unwrap() - 66.5).abs() < 0.05);
        assert!((mask_reduction_pct(3.42, 0.43).unwrap() - 87.4).abs() < 0.05);
        assert!((accuracy_change_pct(48.6, 55.6).unwrap() - 14.4).abs() < 0.05);
        assert!((accuracy_change_pct(55.6, 76.0).unwrap() - 36.7).abs() < 0.05);
        assert!((accuracy_change_pct(76.0, 80.0).unwrap() - 5.3).abs() < 0.05);
        assert_eq!(mask_reduction_pct(0.0, 0.0), None);
    }

    fn toy() -> (RegionSum, LabeledInputs) {
        let model = RegionSum {
            hw: (16, 16),
            rows: 2..8,
            cols: 4..12,
        };
        let mut data = LabeledInputs::default();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for i in 0..12 {
            let x = Array2::from_shape_fn((16, 16), |_| rand::Rng::random::<f32>(&mut rng) - 0.5);
            let s: f32 = x.slice(ndarray::s![2..8, 4..12]).sum();
            let label = if s > 0.0 { Label::Human } else { Label::Machine };
            data.push(format!("t{i}"), x, label);
        }
        (model, data)
    }

    fn cfg() -> XaiConfig {
        XaiConfig {
            ig_steps: 8,
            occlusion_patch: 4,
            occlusion_stride: 4,
            lime_grid: 4,
            lime_samples: 60,
            ..XaiConfig::default()
        }
    }

    #[test]
    fn columns_match_the_log() {
        let (model, data) = toy();
        let techniques = [Technique::Ig, Technique::Occlusion, Technique::Lime];
        let mc = MultiFidelityConfig {
            sizes: vec![1, 2, 3],
            runs: 3,
            subsample: 8,
            seed: 4,
        };
        let (report, log) =
            run_multi_fidelity(&model, &data, &techniques, &cfg(), &MaskPolicy::default(), &mc).unwrap();
        assert_eq!(log.len(), 3 * 8 * 3);
        let agg = aggregate_log(&log);
        for row in &report.rows {
            for run in 0..3 {
                let (area, acc) = agg[&(row.size, run)];
                assert_eq!(area, row.avg_mask_pct[run]);
                assert_eq!(acc, row.accuracy_pct[run]);
            }
            if let Some(p) = row.p_value {
                assert!((0.0..=1.0).contains(&p));
            }
        }
        for run in 0..3 {
            for w in report.rows.windows(2) {
                assert!(w[1].avg_mask_pct[run] <= w[0].avg_mask_pct[run]);
            }
        }
        let r1 = &report.rows[1];
        let prev = &report.rows[0];
        assert_eq!(
            r1.mask_reduction_pct,
            mask_reduction_pct(prev.avg_mask_mean, r1.avg_mask_mean)
        );
    }

    #[test]
    fn argument_errors() {
        let (model, data) = toy();
        let p = MaskPolicy::default();
        let few = MultiFidelityConfig::default();
        assert!(matches!(
            run_multi_fidelity(&model, &data, &[Technique::Ig, Technique::Lime], &cfg(), &p, &few),
            Err(Error::TooFewTechniques { needed: 5, got: 2 })
        ));
        let one_run = MultiFidelityConfig {
            sizes: vec![2],
            runs: 1,
            ..MultiFidelityConfig::default()
        };
        assert!(matches!(
            run_multi_fidelity(&model, &data, &[Technique::Ig, Technique::Lime], &cfg(), &p, &one_run),
            Err(Error::TooFewRuns(1))
        ));
    }
}
