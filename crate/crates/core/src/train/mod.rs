//! Training loop, metrics, ROC and evaluation protocols.

mod eval;
mod metrics;
mod roc;

use std::time::Instant;

use candle_core::{Device, Tensor};
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use eval::{
    domain_table, evaluate, pool_sets, read_metrics_csv, run_out_of_domain_eval, write_metrics_csv,
    Evaluation, MetricsRow,
};
pub use metrics::{compute_metrics, Confusion, Metrics};
pub use roc::{compute_roc_auc, render_roc_svg, write_roc_csv, RocCurve, RocPoint};

use crate::dataset::LabeledInputs;
use crate::error::{Error, Result};
use crate::models::{batch_tensor, fit_kernel_classifier, layers, Classifier, KernelSpec, Mode};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Only `adam` is supported.
    pub optimizer: String,
    pub seed: u64,
    pub device: String,
    /// Used when the model is the kernel classifier.
    pub kernel: KernelSpec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            epochs: 10,
            learning_rate: 1e-3,
            optimizer: "adam".into(),
            seed: 0,
            device: "cpu".into(),
            kernel: KernelSpec::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.epochs == 0 || !(self.learning_rate > 0.0) {
            return Err(Error::Config(
                "batch_size, epochs and learning_rate must be positive".into(),
            ));
        }
        if self.optimizer != "adam" {
            return Err(Error::Config(format!("unsupported optimizer `{}`", self.optimizer)));
        }
        if self.device != "cpu" {
            return Err(Error::Config(format!("unsupported device `{}`", self.device)));
        }
        self.kernel.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub epochs: Vec<EpochRecord>,
    pub wall_time_s: f64,
    pub final_fingerprint: String,
    /// 1-based epoch whose parameters were kept.
    pub best_epoch: usize,
    /// Set when fewer than `cfg.epochs` epochs ran.
    pub early_exit: Option<String>,
}

fn labels_tensor(data: &LabeledInputs, positions: &[usize]) -> Result<Tensor> {
    let y: Vec<u32> = positions.iter().map(|&i| data.labels[i].index() as u32).collect();
    Ok(Tensor::from_vec(y, positions.len(), &Device::Cpu)?)
}

fn batch_of(data: &LabeledInputs, positions: &[usize]) -> Result<Tensor> {
    let refs: Vec<&Array2<f32>> = positions.iter().map(|&i| &data.inputs[i]).collect();
    batch_tensor(&refs)
}

/// Mean cross-entropy and accuracy in eval mode.
fn eval_loss(model: &Classifier, data: &LabeledInputs, batch: usize) -> Result<(f64, f64)> {
    let positions: Vec<usize> = (0..data.len()).collect();
    let (mut loss_sum, mut correct) = (0.0f64, 0usize);
    for chunk in positions.chunks(batch) {
        let x = batch_of(data, chunk)?;
        let y = labels_tensor(data, chunk)?;
        let logits = model.forward(&x, &mut Mode::eval())?;
        let loss = candle_nn::loss::cross_entropy(&logits, &y)?.to_scalar::<f32>()? as f64;
        loss_sum += loss * chunk.len() as f64;
        let pred = logits.argmax(1)?.to_vec1::<u32>()?;
        correct += pred
            .iter()
            .zip(chunk)
            .filter(|(&p, &i)| p as usize == data.labels[i].index())
            .count();
    }
    Ok((loss_sum / data.len() as f64, correct as f64 / data.len() as f64))
}

fn check_splits(train: &LabeledInputs, val: &LabeledInputs) -> Result<()> {
    if train.is_empty() || val.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if !train.has_both_classes() {
        return Err(Error::SingleClass);
    }
    Ok(())
}

/// Trains `model` on `train`, selecting the epoch with the best validation
/// accuracy; ties go to the lower validation loss, then the earlier epoch. Kernel models are fitted in closed form and
/// log a single record.
pub fn train_classifier(
    mut model: Classifier,
    train: &LabeledInputs,
    val: &LabeledInputs,
    cfg: &TrainConfig,
) -> Result<(Classifier, TrainingLog)> {
    cfg.validate()?;
    check_splits(train, val)?;
    let start = Instant::now();

    if model.is_kernel() {
        fit_kernel_classifier(&mut model, train, &cfg.kernel)?;
        let (train_loss, train_accuracy) = eval_loss(&model, train, cfg.batch_size)?;
        let (val_loss, val_accuracy) = eval_loss(&model, val, cfg.batch_size)?;
        let log = TrainingLog {
            epochs: vec![EpochRecord {
                epoch: 1,
                train_loss,
                train_accuracy,
                val_loss,
                val_accuracy,
            }],
            wall_time_s: start.elapsed().as_secs_f64(),
            final_fingerprint: model.fingerprint(),
            best_epoch: 1,
            early_exit: Some("kernel model fitted in closed form".into()),
        };
        return Ok((model, log));
    }

    let neural = model.neural().expect("neural backend");
    let vars: Vec<candle_core::Var> = layers::trainable_vars(&neural.vars)
        .into_iter()
        .map(|(_, v)| v)
        .collect();
    let mut opt = AdamW::new(
        vars,
        ParamsAdamW {
            lr: cfg.learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        },
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut records = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, f64, usize, Vec<(String, Tensor)>)> = None;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut mode = Mode::train(cfg.seed.wrapping_mul(1_000_003).wrapping_add(epoch as u64));
        let (mut loss_sum, mut correct) = (0.0f64, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            let x = batch_of(train, chunk)?;
            let y = labels_tensor(train, chunk)?;
            let logits = model.forward(&x, &mut mode)?;
            let loss = candle_nn::loss::cross_entropy(&logits, &y)?;
            let value = loss.to_scalar::<f32>()? as f64;
            if !value.is_finite() {
                return Err(Error::Divergence { epoch });
            }
            opt.backward_step(&loss)?;
            loss_sum += value * chunk.len() as f64;
            let pred = logits.argmax(1)?.to_vec1::<u32>()?;
            correct += pred
                .iter()
                .zip(chunk)
                .filter(|(&p, &i)| p as usize == train.labels[i].index())
                .count();
        }
        let (val_loss, val_accuracy) = eval_loss(&model, val, cfg.batch_size)?;
        if !val_loss.is_finite() {
            return Err(Error::Divergence { epoch });
        }
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            train_accuracy: correct as f64 / train.len() as f64,
            val_loss,
            val_accuracy,
        };
        log::info!(
            "{} epoch {epoch}/{}: train loss {:.4} acc {:.3}, val loss {:.4} acc {:.3}",
            model.architecture(),
            cfg.epochs,
            record.train_loss,
            record.train_accuracy,
            val_loss,
            val_accuracy
        );
        records.push(record);
        let better = best
            .as_ref()
            .is_none_or(|(acc, loss, _, _)| val_accuracy > *acc || (val_accuracy == *acc && val_loss < *loss));
        if better {
            let neural = model.neural().expect("neural backend");
            best = Some((val_accuracy, val_loss, epoch, layers::snapshot(&neural.vars)?));
        }
    }
    let (_, _, best_epoch, params) = best.expect("at least one epoch");
    layers::restore(&model.neural().expect("neural backend").vars, &params)?;
    let log = TrainingLog {
        epochs: records,
        wall_time_s: start.elapsed().as_secs_f64(),
        final_fingerprint: model.fingerprint(),
        best_epoch,
        early_exit: None,
    };
    Ok((model, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::synth::PlantedSpec;
    use crate::models::{build_classifier, Architecture, ClassifierSpec};

    fn small_cfg() -> TrainConfig {
        TrainConfig {
            batch_size: 16,
            epochs: 3,
            seed: 5,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn defaults() {
        let c = TrainConfig::default();
        assert_eq!((c.batch_size, c.epochs, c.learning_rate), (64, 10, 0.001));
    }

    #[test]
    fn deterministic_training() {
        let planted = PlantedSpec::new(16);
        let train = planted.generate(48, 1);
        let val = planted.generate(16, 2);
        let spec = ClassifierSpec::new(Architecture::TinyCnn, 16);
        let run = || {
            let m = build_classifier(&spec, 1).unwrap();
            train_classifier(m, &train, &val, &small_cfg()).unwrap()
        };
        let (a, log_a) = run();
        let (b, log_b) = run();
        assert_eq!(a.fingerprint(), b.fingerprint());
        assert_eq!(log_a.epochs, log_b.epochs);
        assert_eq!(log_a.epochs.len(), 3);
        assert_eq!(log_a.final_fingerprint, a.fingerprint());
    }

    #[test]
    fn restores_best_accuracy_then_lowest_loss() {
        let planted = PlantedSpec::new(16);
        let train = planted.generate(48, 1);
        let val = planted.generate(16, 2);
        let spec = ClassifierSpec::new(Architecture::TinyCnn, 16);
        let cfg = TrainConfig { epochs: 6, ..small_cfg() };
        let (model, log) = train_classifier(build_classifier(&spec, 1).unwrap(), &train, &val, &cfg).unwrap();
        let top = log.epochs.iter().map(|e| e.val_accuracy).fold(0.0, f64::max);
        let expected = log
            .epochs
            .iter()
            .filter(|e| e.val_accuracy == top)
            .min_by(|a, b| a.val_loss.total_cmp(&b.val_loss))
            .unwrap();
        assert_eq!(log.best_epoch, expected.epoch);
        let (val_loss, val_accuracy) = eval_loss(&model, &val, 16).unwrap();
        assert_eq!((val_loss, val_accuracy), (expected.val_loss, expected.val_accuracy));
    }

    #[test]
    fn errors() {
        let planted = PlantedSpec::new(16);
        let data = planted.generate(8, 1);
        let spec = ClassifierSpec::new(Architecture::TinyCnn, 16);
        let m = build_classifier(&spec, 1).unwrap();
        let empty = LabeledInputs::default();
        assert!(matches!(
            train_classifier(m, &empty, &data, &small_cfg()),
            Err(Error::EmptyDataset)
        ));
        let humans: Vec<usize> = (0..8).step_by(2).collect();
        let m = build_classifier(&spec, 1).unwrap();
        assert!(matches!(
            train_classifier(m, &data.subset(&humans), &data, &small_cfg()),
            Err(Error::SingleClass)
        ));
        let blowup = TrainConfig {
            learning_rate: 1e38,
            batch_size: 2,
            ..small_cfg()
        };
        let m = build_classifier(&spec, 1).unwrap();
        assert!(matches!(
            train_classifier(m, &data, &data, &blowup),
            Err(Error::Divergence { .. })
        ));
    }

    #[test]
    fn kernel_model_logs_early_exit() {
        let planted = PlantedSpec::new(16);
        let m = build_classifier(&ClassifierSpec::new(Architecture::Qsvm, 16), 0).unwrap();
        let (m, log) = train_classifier(m, &planted.generate(40, 1), &planted.generate(20, 2), &small_cfg()).unwrap();
        assert!(m.is_fitted());
        assert_eq!(log.epochs.len(), 1);
        assert!(log.early_exit.is_some());
        assert_eq!(log.epochs[0].val_accuracy, 1.0);
    }
}
