use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::manifest::{DatasetManifest, Label};
use crate::error::{Error, Result};

/// Test share of the whole set.
pub const TEST_FRACTION: f64 = 0.2;
/// Validation share of the whole set (0.2 of the remaining 0.8).
pub const VAL_FRACTION: f64 = 0.8 * 0.2;

/// Disjoint train/validation/test partition of manifest ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub seed: u64,
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

impl SplitAssignment {
    pub fn write(&self, path: &Path) -> Result<()> {
        crate::io::write_json(path, self)
    }

    pub fn read(path: &Path) -> Result<Self> {
        crate::io::read_json(path)
    }
}

/// Split sizes `(train, val, test)` for `n` items.
///
/// `test = round(0.2 n)`, `val = round(0.16 n)`, and train takes the rest.
pub fn split_sizes(n: usize) -> (usize, usize, usize) {
    let test = (TEST_FRACTION * n as f64).round() as usize;
    let val = (VAL_FRACTION * n as f64).round() as usize;
    (n - test - val, val, test)
}

/// Stratified, seeded partition into train/val/test.
///
/// Totals follow [`split_sizes`]; each total is apportioned across the two
/// labels by largest remainder so class ratios match in every split.
pub fn assign_splits(manifest: &DatasetManifest, seed: u64) -> Result<SplitAssignment> {
    let n = manifest.len();
    if n < 3 {
        return Err(Error::TooFewSamples(format!(
            "need at least 3 rows to split, got {n}"
        )));
    }
    let (n_train, n_val, n_test) = split_sizes(n);
    if n_train == 0 || n_val == 0 || n_test == 0 {
        return Err(Error::TooFewSamples(format!(
            "{n} rows give an empty split ({n_train}/{n_val}/{n_test})"
        )));
    }

    let mut per_class: Vec<Vec<String>> = Label::ALL
        .iter()
        .map(|&label| {
            let mut ids: Vec<String> = manifest
                .rows
                .iter()
                .filter(|r| r.label == label)
                .map(|r| r.id.clone())
                .collect();
            ids.sort();
            ids
        })
        .collect();
    let counts: Vec<usize> = per_class.iter().map(Vec::len).collect();
    let test_alloc = apportion(n_test, &counts, TEST_FRACTION, &vec![usize::MAX; counts.len()]);
    let room: Vec<usize> = counts.iter().zip(&test_alloc).map(|(c, t)| c - t).collect();
    let val_alloc = apportion(n_val, &counts, VAL_FRACTION, &room);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut split = SplitAssignment {
        seed,
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
    };
    for (class, ids) in per_class.iter_mut().enumerate() {
        ids.shuffle(&mut rng);
        let (t, v) = (test_alloc[class], val_alloc[class]);
        split.test.extend_from_slice(&ids[..t]);
        split.val.extend_from_slice(&ids[t..t + v]);
        split.train.extend_from_slice(&ids[t + v..]);
    }
    split.train.sort();
    split.val.sort();
    split.test.sort();
    Ok(split)
}

/// Largest-remainder apportionment of `total` across classes proportional to
/// `counts * fraction`, never exceeding `room`.
fn apportion(total: usize, counts: &[usize], fraction: f64, room: &[usize]) -> Vec<usize> {
    let ideal: Vec<f64> = counts.iter().map(|&c| c as f64 * fraction).collect();
    let mut alloc: Vec<usize> = ideal
        .iter()
        .zip(room)
        .map(|(&x, &r)| (x.floor() as usize).min(r))
        .collect();
    let mut order: Vec<usize> = (0..counts.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = ideal[a] - ideal[a].floor();
        let fb = ideal[b] - ideal[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    let mut assigned: usize = alloc.iter().sum();
    while assigned < total {
        let before = assigned;
        for &c in &order {
            if assigned < total && alloc[c] < room[c].min(counts[c]) {
                alloc[c] += 1;
                assigned += 1;
            }
        }
        if assigned == before {
            break;
        }
    }
    while assigned > total {
        let c = (0..alloc.len()).max_by_key(|&c| alloc[c]).unwrap_or(0);
        alloc[c] -= 1;
        assigned -= 1;
    }
    alloc
}
