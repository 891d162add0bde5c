//! Polynomial-kernel SVM trained with SMO (maximal violating pair working
//! set selection), plus the pooled feature representation it consumes.

use ndarray::{Array1, Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use crate::dataset::Label;
use crate::error::{Error, Result};
use crate::grid::{all_finite, resize_area};

/// Side of the area-pooled grid fed to the kernel model.
pub const POOLED_SIDE: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelKind {
    Poly,
}

/// `K(x, y) = (gamma * <x, y> + coef0)^degree`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KernelSpec {
    pub kernel: KernelKind,
    pub degree: u32,
    pub coef0: f64,
    /// Soft-margin penalty `C`.
    pub regularization: f64,
    /// `None` resolves at fit time to `1 / (D * var(X))`.
    pub gamma: Option<f64>,
}

impl Default for KernelSpec {
    fn default() -> Self {
        Self {
            kernel: KernelKind::Poly,
            degree: 2,
            coef0: 1.0,
            regularization: 1.0,
            gamma: None,
        }
    }
}

impl KernelSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.regularization > 0.0) {
            return Err(Error::Config("kernel regularization must be positive".into()));
        }
        if self.degree == 0 {
            return Err(Error::Config("kernel degree must be at least 1".into()));
        }
        Ok(())
    }

    pub fn eval(&self, gamma: f64, x: ArrayView1<f32>, y: ArrayView1<f32>) -> f64 {
        let dot: f64 = x.iter().zip(y.iter()).map(|(&a, &b)| a as f64 * b as f64).sum();
        (gamma * dot + self.coef0).powi(self.degree as i32)
    }
}

/// Fitted dual-form SVM: `f(x) = sum_i coef_i K(sv_i, x) - rho`, positive for
/// the positive class.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelMachine {
    pub spec: KernelSpec,
    pub gamma: f64,
    pub support_vectors: Array2<f32>,
    /// `y_i * alpha_i` per support vector.
    pub dual_coef: Array1<f64>,
    pub rho: f64,
}

impl KernelMachine {
    pub fn dim(&self) -> usize {
        self.support_vectors.ncols()
    }

    pub fn decision_function(&self, x: ArrayView1<f32>) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        let sum: f64 = self
            .support_vectors
            .outer_iter()
            .zip(self.dual_coef.iter())
            .map(|(sv, &c)| c * self.spec.eval(self.gamma, sv, x))
            .sum();
        Ok(sum - self.rho)
    }

    pub fn predict(&self, x: ArrayView1<f32>) -> Result<Label> {
        Ok(if self.decision_function(x)? > 0.0 {
            Label::POSITIVE
        } else {
            Label::POSITIVE.other()
        })
    }
}

/// Fits the kernel SVM on `features` (N x D). The positive label is
/// [`Label::POSITIVE`].
pub fn fit_kernel_machine(features: &Array2<f32>, labels: &[Label], spec: &KernelSpec) -> Result<KernelMachine> {
    spec.validate()?;
    let n = features.nrows();
    if labels.len() != n {
        return Err(Error::LengthMismatch(n, labels.len()));
    }
    if features.ncols() == 0 {
        return Err(Error::DimensionMismatch { expected: 1, got: 0 });
    }
    if !labels.contains(&Label::Human) || !labels.contains(&Label::Machine) {
        return Err(Error::SingleClass);
    }
    if !features.iter().all(|v| v.is_finite()) {
        return Err(Error::NaNInput);
    }
    let gamma = spec.gamma.unwrap_or_else(|| {
        let var = features.mapv(|v| v as f64).var(0.0);
        let denom = features.ncols() as f64 * var;
        if denom > 0.0 {
            1.0 / denom
        } else {
            1.0
        }
    });
    let y: Vec<f64> = labels
        .iter()
        .map(|&l| if l == Label::POSITIVE { 1.0 } else { -1.0 })
        .collect();
    let gram = Gram::new(features, spec, gamma);
    let (alpha, rho) = smo(&gram, &y, spec.regularization);

    let support: Vec<usize> = (0..n).filter(|&i| alpha[i] > 1e-12).collect();
    let support_vectors = features.select(Axis(0), &support);
    let dual_coef = support.iter().map(|&i| y[i] * alpha[i]).collect();
    log::debug!("kernel machine: {} support vectors of {n}", support.len());
    Ok(KernelMachine {
        spec: spec.clone(),
        gamma,
        support_vectors,
        dual_coef,
        rho,
    })
}

/// Kernel rows, precomputed when they fit in memory and computed on demand
/// otherwise.
struct Gram<'a> {
    features: &'a Array2<f32>,
    spec: &'a KernelSpec,
    gamma: f64,
    full: Option<Vec<f32>>,
}

impl<'a> Gram<'a> {
    const MAX_FULL: usize = 8000;

    fn new(features: &'a Array2<f32>, spec: &'a KernelSpec, gamma: f64) -> Self {
        let n = features.nrows();
        let mut g = Self {
            features,
            spec,
            gamma,
            full: None,
        };
        if n <= Self::MAX_FULL {
            let mut full = vec![0.0f32; n * n];
            for i in 0..n {
                for j in i..n {
                    let k = g.eval(i, j) as f32;
                    full[i * n + j] = k;
                    full[j * n + i] = k;
                }
            }
            g.full = Some(full);
        }
        g
    }

    fn eval(&self, i: usize, j: usize) -> f64 {
        self.spec.eval(self.gamma, self.features.row(i), self.features.row(j))
    }

    fn row(&self, i: usize) -> Vec<f64> {
        let n = self.features.nrows();
        match &self.full {
            Some(full) => full[i * n..(i + 1) * n].iter().map(|&v| v as f64).collect(),
            None => (0..n).map(|j| self.eval(i, j)).collect(),
        }
    }
}

/// Dual solver for `min 1/2 a'Qa - e'a`, `0 <= a <= C`, `y'a = 0`, with
/// `Q_ij = y_i y_j K_ij`. Returns `(alpha, rho)`.
fn smo(gram: &Gram, y: &[f64], c: f64) -> (Vec<f64>, f64) {
    const EPS: f64 = 1e-3;
    const TAU: f64 = 1e-12;
    let n = y.len();
    let max_iter = (1000 * n).max(100_000);
    let mut alpha = vec![0.0f64; n];
    let mut grad = vec![-1.0f64; n];
    let diag: Vec<f64> = (0..n).map(|i| gram.eval(i, i)).collect();

    let in_up = |a: f64, yi: f64| (yi > 0.0 && a < c) || (yi < 0.0 && a > 0.0);
    let in_low = |a: f64, yi: f64| (yi > 0.0 && a > 0.0) || (yi < 0.0 && a < c);

    for _ in 0..max_iter {
        let mut i = usize::MAX;
        let mut g_max = f64::NEG_INFINITY;
        let mut j = usize::MAX;
        let mut g_min = f64::INFINITY;
        for t in 0..n {
            let v = -y[t] * grad[t];
            if in_up(alpha[t], y[t]) && v > g_max {
                g_max = v;
                i = t;
            }
            if in_low(alpha[t], y[t]) && v < g_min {
                g_min = v;
                j = t;
            }
        }
        if i == usize::MAX || j == usize::MAX || g_max - g_min < EPS {
            break;
        }
        let k_i = gram.row(i);
        let k_j = gram.row(j);
        let q_ij = y[i] * y[j] * k_i[j];
        let (old_i, old_j) = (alpha[i], alpha[j]);
        if y[i] != y[j] {
            let quad = (diag[i] + diag[j] + 2.0 * q_ij).max(TAU);
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > 0.0 {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = c - diff;
                }
            } else if alpha[j] > c {
                alpha[j] = c;
                alpha[i] = c + diff;
            }
        } else {
            let quad = (diag[i] + diag[j] - 2.0 * q_ij).max(TAU);
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > c {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = sum - c;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > c {
                if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = sum - c;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }
        let (d_i, d_j) = (alpha[i] - old_i, alpha[j] - old_j);
        for t in 0..n {
            grad[t] += y[t] * (y[i] * k_i[t] * d_i + y[j] * k_j[t] * d_j);
        }
    }

    // rho from free vectors, or the midpoint of the feasible interval.
    let (mut sum, mut count) = (0.0, 0usize);
    let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
    for t in 0..n {
        let yg = y[t] * grad[t];
        if alpha[t] > 0.0 && alpha[t] < c {
            sum += yg;
            count += 1;
        } else if (alpha[t] >= c && y[t] < 0.0) || (alpha[t] <= 0.0 && y[t] > 0.0) {
            ub = ub.min(yg);
        } else {
            lb = lb.max(yg);
        }
    }
    let rho = if count > 0 { sum / count as f64 } else { (ub + lb) / 2.0 };
    (alpha, rho)
}

/// Area-pools a model input to 64 x 64 and flattens it (4,096 values),
/// before standardisation.
pub fn pool_features_for_kernel(input: &Array2<f32>) -> Result<Vec<f32>> {
    if !all_finite(input) {
        return Err(Error::NaNInput);
    }
    if input.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(resize_area(input, POOLED_SIDE, POOLED_SIDE).iter().copied().collect())
}

/// Per-feature standardisation fitted on training features. Features with
/// zero spread keep unit scale.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Array1<f32>,
    pub scale: Array1<f32>,
}

impl Standardizer {
    pub fn fit(features: &Array2<f32>) -> Self {
        let mean = features.mean_axis(Axis(0)).unwrap_or_else(|| Array1::zeros(features.ncols()));
        let scale = features
            .std_axis(Axis(0), 0.0)
            .mapv(|s| if s > 0.0 && s.is_finite() { s } else { 1.0 });
        Self { mean, scale }
    }

    pub fn apply(&self, features: &mut [f32]) {
        for ((v, m), s) in features.iter_mut().zip(&self.mean).zip(&self.scale) {
            *v = (*v - m) / s;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn xor_is_separated() {
        let x = array![[1.0f32, 1.0], [1.0, -1.0], [-1.0, 1.0], [-1.0, -1.0]];
        // sign(x*y): +1 -> Human (positive), -1 -> Machine
        let labels = [Label::Human, Label::Machine, Label::Machine, Label::Human];
        let m = fit_kernel_machine(&x, &labels, &KernelSpec::default()).unwrap();
        for (row, &l) in x.outer_iter().zip(&labels) {
            assert_eq!(m.predict(row).unwrap(), l);
        }
        assert_eq!((m.spec.degree, m.spec.coef0), (2, 1.0));
    }

    #[test]
    fn single_class_and_dims() {
        let x = array![[1.0f32, 1.0], [1.0, -1.0]];
        assert!(matches!(
            fit_kernel_machine(&x, &[Label::Human, Label::Human], &KernelSpec::default()),
            Err(Error::SingleClass)
        ));
        let m = fit_kernel_machine(&x, &[Label::Human, Label::Machine], &KernelSpec::default()).unwrap();
        assert!(matches!(
            m.decision_function(array![1.0f32].view()),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn kernel_symmetry() {
        let spec = KernelSpec::default();
        let a = array![0.3f32, -1.7, 2.25, 1e-3];
        let b = array![-4.0f32, 0.125, 0.5, 9.0];
        assert_eq!(spec.eval(0.37, a.view(), b.view()), spec.eval(0.37, b.view(), a.view()));
        assert!(spec.eval(0.37, a.view(), a.view()) >= 0.0);
    }

    #[test]
    fn pooled_features() {
        let g = Array2::from_elem((224, 224), 0.25f32);
        let f = pool_features_for_kernel(&g).unwrap();
        assert_eq!(f.len(), 4096);
        assert!(f.iter().all(|&v| (v - 0.25).abs() < 1e-6));
        let mut bad = g.clone();
        bad[[3, 3]] = f32::NAN;
        assert!(matches!(pool_features_for_kernel(&bad), Err(Error::NaNInput)));
    }

    #[test]
    fn linearly_separable_cloud() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let n = 200;
        let mut x = Array2::zeros((n, 3));
        let mut labels = Vec::new();
        for i in 0..n {
            let pos = i % 2 == 0;
            for j in 0..3 {
                x[[i, j]] = rng.random_range(-1.0f32..1.0) + if pos { 3.0 } else { -3.0 };
            }
            labels.push(if pos { Label::Human } else { Label::Machine });
        }
        let m = fit_kernel_machine(&x, &labels, &KernelSpec::default()).unwrap();
        let correct = x
            .outer_iter()
            .zip(&labels)
            .filter(|(r, &l)| m.predict(r.view()).unwrap() == l)
            .count();
        assert_eq!(correct, n);
    }
}
