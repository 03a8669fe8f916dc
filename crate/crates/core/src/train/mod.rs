//! Mini-batch training: joint pre-training, encoder fine-tuning, splits,
//! loss weighting, learning-rate schedules, early stopping and grid search.
//!
//! [`fit`] is the single training loop. It evaluates the validation loss
//! before any update (epoch 0) and after every epoch, keeps the weights of
//! the best validation epoch, and stops once `patience` epochs pass without
//! a strict improvement. [`pretrain`] and [`fine_tune`] wrap it with the
//! contracts of the two experiments.

mod balance;
mod schedule;
mod search;
mod split;

use std::collections::BTreeMap;
use std::io::Write;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    batch_loss, batch_tensor, Architecture, BatchTargets, BceForm, ForwardOptions, ModelWeights, Network, Objective,
    TrainableScope, DEFAULT_BETA, EVAL_BATCH,
};
use crate::signal::{GridEpoch, GridMask};
use crate::tensor::optim::{OptimizerKind, OptimizerState};
use crate::tensor::{Graph, Mode, Scalar, Tensor, BN_MOMENTUM};

pub use balance::{compute_weights, LossWeights};
pub use schedule::{triangular_lr, Schedule, TriangularSchedule};
pub use search::{grid_search, Candidate, SearchGrid, SearchOutcome, SearchRow};
pub use split::{hold_out_dataset, make_splits, select, SplitMode, SplitPlan, SPLIT_GROUPS};

pub const DEFAULT_PATIENCE: usize = 100;
pub const TRAIN_BATCH: usize = 32;
pub const DEFAULT_MAX_EPOCHS: usize = 1000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub optimizer: OptimizerKind,
    /// Base rate for [`Schedule::ConstantDecayed`].
    pub learning_rate: f64,
    /// Inverse-time decay per update step.
    pub decay: f64,
    pub objective: Objective,
    pub bce_form: BceForm,
    pub patience: usize,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub eval_batch_size: usize,
    pub seed: u64,
    pub schedule: Schedule,
    pub scope: TrainableScope,
    /// Weight kept by the batch-norm running statistics at each update.
    #[serde(default = "default_bn_momentum")]
    pub bn_momentum: f64,
}

fn default_bn_momentum() -> f64 {
    BN_MOMENTUM
}

impl TrainConfig {
    /// Joint reconstruction + classification over every tensor, SGD at
    /// 0.002 with 1e-5 decay.
    pub fn pretrain() -> Self {
        Self {
            optimizer: OptimizerKind::Sgd,
            learning_rate: 0.002,
            decay: 1e-5,
            objective: Objective::Joint { beta: DEFAULT_BETA },
            bce_form: BceForm::Full,
            patience: DEFAULT_PATIENCE,
            max_epochs: DEFAULT_MAX_EPOCHS,
            batch_size: TRAIN_BATCH,
            eval_batch_size: EVAL_BATCH,
            seed: 0,
            schedule: Schedule::ConstantDecayed,
            scope: TrainableScope::All,
            bn_momentum: BN_MOMENTUM,
        }
    }

    /// Classification only, decoder frozen, triangular schedule.
    pub fn fine_tune() -> Self {
        Self {
            objective: Objective::Classification,
            schedule: Schedule::Triangular(TriangularSchedule::default()),
            scope: TrainableScope::EncoderAndClassifier,
            decay: 0.0,
            ..Self::pretrain()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.patience == 0 {
            return Err(Error::Config("patience must be positive".into()));
        }
        if self.batch_size == 0 || self.eval_batch_size == 0 {
            return Err(Error::Config("batch sizes must be positive".into()));
        }
        if let Objective::Joint { beta } = self.objective {
            if !(beta.is_finite() && beta >= 0.0) {
                return Err(Error::Config(format!("beta must be finite and >= 0, got {beta}")));
            }
        }
        if !(0.0..1.0).contains(&self.bn_momentum) {
            return Err(Error::Config(format!("bn_momentum must lie in [0, 1), got {}", self.bn_momentum)));
        }
        if let Schedule::Triangular(s) = &self.schedule {
            s.validate()?;
        }
        OptimizerState::<f32>::new(self.optimizer, self.learning_rate, self.decay)?;
        Ok(())
    }

    fn epoch_lr(&self, epoch: usize) -> Option<f64> {
        match &self.schedule {
            Schedule::ConstantDecayed => None,
            Schedule::Triangular(s) => Some(s.lr(epoch)),
        }
    }
}

/// One line of the training log. Epoch 0 is the evaluation before any
/// update and has no training loss.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: Option<f64>,
    pub val_loss: f64,
    pub val_mse: Option<f64>,
    pub val_bce: f64,
    /// Rate in effect at the end of the epoch.
    pub lr: f64,
    pub wall_s: f64,
}

impl EpochRecord {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("epoch records serialize")
    }
}

/// Writes records as JSON lines.
pub fn write_log<W: Write>(records: &[EpochRecord], mut out: W) -> std::io::Result<()> {
    for r in records {
        writeln!(out, "{}", r.to_json_line())?;
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub log: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    /// Training epochs completed (epoch 0 excluded).
    pub epochs_run: usize,
    pub stopped_early: bool,
}

/// Mean loss terms over a set of epochs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossSummary {
    pub total: f64,
    pub mse: Option<f64>,
    pub bce: f64,
}

fn shared_mask(epochs: &[GridEpoch]) -> Result<GridMask> {
    let first = epochs
        .first()
        .ok_or_else(|| Error::Contract("no epochs to train or evaluate on".into()))?
        .mask;
    if epochs.iter().any(|e| e.mask != first) {
        return Err(Error::Contract("all epochs in a run must share one grid mask".into()));
    }
    Ok(first)
}

struct Batch<S> {
    grids: Tensor<S>,
    labels: Vec<S>,
    w_class: Vec<S>,
    w_dataset: Vec<S>,
}

fn assemble<S: Scalar>(epochs: &[&GridEpoch], weights: &LossWeights) -> Result<Batch<S>> {
    Ok(Batch {
        grids: batch_tensor(epochs)?,
        labels: epochs.iter().map(|e| S::lit(e.label.as_f32() as f64)).collect(),
        w_class: epochs.iter().map(|e| S::lit(weights.class_weight(e.label))).collect(),
        w_dataset: epochs.iter().map(|e| S::lit(weights.dataset_weight(&e.dataset_id))).collect(),
    })
}

/// Infer-mode loss averaged over `epochs`.
pub fn evaluate_loss<S: Scalar>(
    net: &Network<S>,
    epochs: &[GridEpoch],
    weights: &LossWeights,
    objective: Objective,
    form: BceForm,
    batch_size: usize,
) -> Result<LossSummary> {
    let mask = shared_mask(epochs)?;
    let (mut total, mut mse, mut bce) = (0.0, 0.0, 0.0);
    for chunk in epochs.chunks(batch_size.max(1)) {
        let refs: Vec<&GridEpoch> = chunk.iter().collect();
        let b = assemble::<S>(&refs, weights)?;
        let mut g = Graph::new();
        let x = g.input(b.grids.clone());
        let opts = ForwardOptions {
            reconstruct: objective.needs_decoder(),
            ..Default::default()
        };
        let fwd = net.forward(&mut g, x, opts, &mut ChaCha8Rng::seed_from_u64(0))?;
        let targets = BatchTargets {
            grids: &b.grids,
            mask: &mask,
            labels: &b.labels,
            w_class: &b.w_class,
            w_dataset: &b.w_dataset,
        };
        let terms = batch_loss(&mut g, fwd.prob, fwd.recon, &targets, objective, form)?;
        let n = chunk.len() as f64;
        total += g.value(terms.total).data()[0].to_f64().unwrap_or(f64::NAN) * n;
        bce += g.value(terms.bce).data().iter().map(|v| v.to_f64().unwrap_or(f64::NAN)).sum::<f64>();
        if let Some(m) = terms.mse {
            mse += g.value(m).data().iter().map(|v| v.to_f64().unwrap_or(f64::NAN)).sum::<f64>();
        }
    }
    let n = epochs.len() as f64;
    Ok(LossSummary {
        total: total / n,
        mse: objective.needs_decoder().then_some(mse / n),
        bce: bce / n,
    })
}

/// One pass over `train` in shuffled mini-batches. Returns the mean batch
/// loss.
#[allow(clippy::too_many_arguments)]
fn train_epoch<S: Scalar>(
    net: &mut Network<S>,
    train: &[GridEpoch],
    mask: &GridMask,
    weights: &LossWeights,
    cfg: &TrainConfig,
    opt: &mut OptimizerState<S>,
    rng: &mut ChaCha8Rng,
    epoch: usize,
) -> Result<f64> {
    let mut order: Vec<usize> = (0..train.len()).collect();
    order.shuffle(rng);
    let momentum = S::lit(cfg.bn_momentum);
    let opts = ForwardOptions {
        mode: Mode::Train,
        scope: Some(cfg.scope),
        reconstruct: cfg.objective.needs_decoder(),
        trace: false,
    };
    let mut sum = 0.0;
    let mut batches = 0usize;
    for idx in order.chunks(cfg.batch_size) {
        let refs: Vec<&GridEpoch> = idx.iter().map(|&i| &train[i]).collect();
        let b = assemble::<S>(&refs, weights)?;
        let mut g = Graph::new();
        let x = g.input(b.grids.clone());
        let fwd = net.forward(&mut g, x, opts, rng)?;
        let targets = BatchTargets {
            grids: &b.grids,
            mask,
            labels: &b.labels,
            w_class: &b.w_class,
            w_dataset: &b.w_dataset,
        };
        let terms = batch_loss(&mut g, fwd.prob, fwd.recon, &targets, cfg.objective, cfg.bce_form)?;
        let loss = g.value(terms.total).data()[0].to_f64().unwrap_or(f64::NAN);
        if !loss.is_finite() {
            return Err(Error::Diverged { epoch, loss });
        }
        g.backward(terms.total)?;
        let grads: Vec<(String, Tensor<S>)> = fwd.params.iter().map(|(n, v)| (n.clone(), g.grad_or_zeros(*v))).collect();
        let by_name: BTreeMap<&str, &Tensor<S>> = grads.iter().map(|(n, t)| (n.as_str(), t)).collect();
        let weights_mut = net.weights_mut();
        let entries = weights_mut
            .iter_mut()
            .filter_map(|(name, entry)| by_name.get(name).map(|&grad| (name, &mut entry.tensor, grad)))
            .collect();
        opt.step(entries)?;
        for (prefix, stats) in &fwd.bn_stats {
            if !cfg.scope.includes(prefix) {
                continue;
            }
            let mut rm = weights_mut.get(&format!("{prefix}.running_mean"))?.clone();
            let mut rv = weights_mut.get(&format!("{prefix}.running_var"))?.clone();
            stats.fold_into(&mut rm, &mut rv, momentum);
            *weights_mut.get_mut(&format!("{prefix}.running_mean"))? = rm;
            *weights_mut.get_mut(&format!("{prefix}.running_var"))? = rv;
        }
        sum += loss;
        batches += 1;
    }
    Ok(sum / batches.max(1) as f64)
}

/// Trains `net` in place and leaves it holding the best-validation weights.
///
/// `observer` sees every log record as soon as it exists, so a diverging
/// run still leaves its log behind.
pub fn fit<S: Scalar>(
    net: &mut Network<S>,
    train: &[GridEpoch],
    val: &[GridEpoch],
    weights: &LossWeights,
    cfg: &TrainConfig,
    observer: &mut dyn FnMut(&EpochRecord),
) -> Result<TrainReport> {
    cfg.validate()?;
    let mask = shared_mask(train)?;
    if shared_mask(val)? != mask {
        return Err(Error::Contract("training and validation epochs use different grid masks".into()));
    }
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = OptimizerState::<S>::new(
        cfg.optimizer,
        cfg.epoch_lr(0).unwrap_or(cfg.learning_rate),
        if cfg.epoch_lr(0).is_some() { 0.0 } else { cfg.decay },
    )?;
    let eval = |net: &Network<S>| evaluate_loss(net, val, weights, cfg.objective, cfg.bce_form, cfg.eval_batch_size);
    let first = eval(net)?;
    let mut log = vec![EpochRecord {
        epoch: 0,
        train_loss: None,
        val_loss: first.total,
        val_mse: first.mse,
        val_bce: first.bce,
        lr: opt.current_lr(),
        wall_s: started.elapsed().as_secs_f64(),
    }];
    observer(&log[0]);
    if !first.total.is_finite() {
        return Err(Error::Diverged {
            epoch: 0,
            loss: first.total,
        });
    }
    let mut best: (usize, f64, ModelWeights<S>) = (0, first.total, net.weights().clone());
    let mut stopped_early = false;
    let mut epochs_run = 0;
    for epoch in 1..=cfg.max_epochs {
        if let Some(lr) = cfg.epoch_lr(epoch - 1) {
            opt.learning_rate = lr;
        }
        let train_loss = train_epoch(net, train, &mask, weights, cfg, &mut opt, &mut rng, epoch)?;
        let v = eval(net)?;
        epochs_run = epoch;
        let record = EpochRecord {
            epoch,
            train_loss: Some(train_loss),
            val_loss: v.total,
            val_mse: v.mse,
            val_bce: v.bce,
            lr: opt.current_lr(),
            wall_s: started.elapsed().as_secs_f64(),
        };
        observer(&record);
        log.push(record);
        if !v.total.is_finite() {
            return Err(Error::Diverged { epoch, loss: v.total });
        }
        if v.total < best.1 {
            best = (epoch, v.total, net.weights().clone());
        } else if epoch - best.0 >= cfg.patience {
            stopped_early = true;
            break;
        }
    }
    *net.weights_mut() = best.2;
    Ok(TrainReport {
        log,
        best_epoch: best.0,
        best_val_loss: best.1,
        epochs_run,
        stopped_early,
    })
}

/// Joint training of a freshly built model on every dataset except the
/// held-out one.
pub fn pretrain<S: Scalar>(
    net: &mut Network<S>,
    train: &[GridEpoch],
    val: &[GridEpoch],
    cfg: &TrainConfig,
    observer: &mut dyn FnMut(&EpochRecord),
) -> Result<TrainReport> {
    if cfg.scope != TrainableScope::All {
        return Err(Error::Config("pre-training updates every tensor; use scope `all`".into()));
    }
    let weights = compute_weights(train)?;
    fit(net, train, val, &weights, cfg, observer)
}

/// Adopts pre-trained weights and trains encoder and classifier on a new
/// dataset, leaving the decoder untouched.
pub fn fine_tune<S: Scalar>(
    arch: Architecture,
    pretrained: ModelWeights<S>,
    train: &[GridEpoch],
    val: &[GridEpoch],
    cfg: &TrainConfig,
    observer: &mut dyn FnMut(&EpochRecord),
) -> Result<(Network<S>, TrainReport)> {
    if cfg.scope != TrainableScope::EncoderAndClassifier {
        return Err(Error::Config("fine-tuning freezes the decoder; use scope `encoder_and_classifier`".into()));
    }
    let mut net = Network::from_weights(arch, pretrained)?;
    let weights = compute_weights(train)?;
    let report = fit(&mut net, train, val, &weights, cfg, observer)?;
    Ok((net, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::{Label, EPOCH_VALUES, GRID_CELLS};
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn toy_epochs(n: usize, seed: u64, amplitude: f32) -> Vec<GridEpoch> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mask = GridMask::standard();
        (0..n)
            .map(|i| {
                let label = if i % 4 == 0 { Label::Attended } else { Label::Unattended };
                let grid = (0..EPOCH_VALUES)
                    .map(|k| {
                        if !mask.cells()[k % GRID_CELLS] {
                            return 0.0;
                        }
                        let t = (k / GRID_CELLS) as f32;
                        let bump = if label == Label::Attended { amplitude * (-((t - 40.0) / 12.0).powi(2)).exp() } else { 0.0 };
                        bump + rng.sample::<f32, _>(StandardNormal) * 0.5
                    })
                    .collect();
                GridEpoch {
                    grid,
                    mask,
                    label,
                    dataset_id: format!("toy{}", i % 2),
                }
            })
            .collect()
    }

    fn sslc_cfg() -> TrainConfig {
        TrainConfig {
            optimizer: OptimizerKind::Rmsprop,
            learning_rate: 1e-3,
            decay: 0.0,
            max_epochs: 5,
            ..TrainConfig::pretrain()
        }
    }

    #[test]
    fn frozen_rate_stops_after_patience() {
        let data = toy_epochs(24, 1, 1.0);
        let mut net = Network::<f32>::sslc_ae(3).unwrap();
        let cfg = TrainConfig {
            learning_rate: 0.0,
            max_epochs: 500,
            ..sslc_cfg()
        };
        let report = pretrain(&mut net, &data[..16], &data[16..], &cfg, &mut |_| {}).unwrap();
        assert_eq!(report.epochs_run, DEFAULT_PATIENCE);
        assert!(report.stopped_early);
        assert_eq!(report.best_epoch, 0);
        assert_eq!(report.log.len(), DEFAULT_PATIENCE + 1);
    }

    #[test]
    fn validation_loss_drops_and_best_is_restored() {
        let data = toy_epochs(120, 2, 2.0);
        let mut net = Network::<f32>::sslc_ae(4).unwrap();
        let mut seen = Vec::new();
        let report = pretrain(&mut net, &data[..96], &data[96..], &sslc_cfg(), &mut |r| seen.push(r.epoch)).unwrap();
        assert_eq!(seen, (0..=5).collect::<Vec<_>>());
        let best = report.log.iter().map(|r| r.val_loss).fold(f64::INFINITY, f64::min);
        assert!(best < report.log[0].val_loss);
        assert_eq!(report.best_val_loss, best);
        let again = evaluate_loss(&net, &data[96..], &compute_weights(&data[..96]).unwrap(), sslc_cfg().objective, BceForm::Full, 128).unwrap();
        assert!((again.total - best).abs() < 1e-12);
    }

    #[test]
    fn same_seed_same_first_epoch() {
        let data = toy_epochs(64, 5, 1.0);
        let run = || {
            let mut net = Network::<f32>::sslc_ae(8).unwrap();
            let cfg = TrainConfig { max_epochs: 1, ..sslc_cfg() };
            pretrain(&mut net, &data[..48], &data[48..], &cfg, &mut |_| {}).unwrap().log[1].train_loss.unwrap()
        };
        assert_eq!(run().to_bits(), run().to_bits());
    }

    #[test]
    fn divergence_aborts() {
        let data = toy_epochs(40, 6, 1.0);
        let mut net = Network::<f32>::sslc_ae(1).unwrap();
        let cfg = TrainConfig {
            optimizer: OptimizerKind::Sgd,
            learning_rate: 1e12,
            max_epochs: 20,
            ..sslc_cfg()
        };
        let mut log = 0;
        let err = pretrain(&mut net, &data[..32], &data[32..], &cfg, &mut |_| log += 1).unwrap_err();
        assert!(matches!(err, Error::Diverged { .. } | Error::NonFiniteGradient { .. }), "{err}");
        assert!(log >= 1);
    }

    #[test]
    fn fine_tune_leaves_decoder_untouched() {
        let data = toy_epochs(48, 7, 2.0);
        let pre = Network::<f32>::erpenet(11).unwrap();
        let before = pre.weights().clone();
        let cfg = TrainConfig {
            optimizer: OptimizerKind::Rmsprop,
            max_epochs: 1,
            schedule: Schedule::Triangular(TriangularSchedule {
                start: 1e-3,
                ..Default::default()
            }),
            ..TrainConfig::fine_tune()
        };
        let (net, report) = fine_tune(Architecture::erpenet(), before.clone(), &data[..32], &data[32..], &cfg, &mut |_| {}).unwrap();
        assert_eq!(report.epochs_run, 1);
        let mut encoder_changed = false;
        for (name, e) in before.iter() {
            let after = net.weights().get(name).unwrap();
            if name.starts_with("decoder.") {
                assert_eq!(after.data(), e.tensor.data(), "{name}");
            } else if name.starts_with("encoder.") && after.data() != e.tensor.data() {
                encoder_changed = true;
            }
        }
        // Either the first epoch improved (encoder moved) or the untouched
        // start was restored as best.
        assert!(encoder_changed || report.best_epoch == 0);
    }

    #[test]
    fn scope_contracts() {
        let data = toy_epochs(32, 9, 1.0);
        let sslc = Network::<f32>::sslc_ae(0).unwrap();
        let err = fine_tune(Architecture::erpenet(), sslc.weights().clone(), &data, &data, &TrainConfig::fine_tune(), &mut |_| {});
        assert!(matches!(err, Err(Error::Fingerprint { .. })));
        let mut net = Network::<f32>::sslc_ae(0).unwrap();
        assert!(pretrain(&mut net, &data, &data, &TrainConfig::fine_tune(), &mut |_| {}).is_err());
        let bad = TrainConfig { patience: 0, ..TrainConfig::pretrain() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn log_lines_are_json() {
        let r = EpochRecord {
            epoch: 0,
            train_loss: None,
            val_loss: 0.5,
            val_mse: Some(0.25),
            val_bce: 0.7,
            lr: 2e-5,
            wall_s: 0.0,
        };
        let mut out = Vec::new();
        write_log(&[r.clone(), r.clone()], &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text.lines().count(), 2);
        let back: EpochRecord = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        assert_eq!(back, r);
    }
}
