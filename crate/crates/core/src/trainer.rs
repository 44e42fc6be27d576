//! Regularized cross-entropy training with Adam, a halving learning-rate
//! schedule and checkpoint-on-improvement.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::TrainSection;
use crate::error::{Error, Result};
use crate::model::Network;
use crate::numerics::checkpoint::{self, TensorRecord};
use crate::numerics::{count_learnable, no_grad, AdamState, Module, Param, Tensor};
use crate::pipeline::TrialSet;

/// L1 (`alpha`) and L2 (`beta`) penalty coefficients.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RegSpec {
    pub alpha: f64,
    pub beta: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub lr_halving_period: usize,
    pub seed: u64,
    pub reg: RegSpec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig::from(&TrainSection::default())
    }
}

impl From<&TrainSection> for TrainConfig {
    fn from(t: &TrainSection) -> Self {
        TrainConfig {
            batch_size: t.batch_size,
            epochs: t.epochs,
            lr: t.lr,
            lr_halving_period: t.lr_halving_period,
            seed: t.seed,
            reg: RegSpec { alpha: t.alpha, beta: t.beta },
        }
    }
}

impl TrainConfig {
    /// Learning rate for the 0-indexed `epoch`: halved once per elapsed period.
    pub fn lr_for_epoch(&self, epoch: usize) -> f64 {
        self.lr * 0.5f64.powi((epoch / self.lr_halving_period) as i32)
    }
}

/// `α·Σ|w| + β·Σw²` over penalized weights (biases, norms and scalars excluded).
pub fn penalty(params: &[Param], reg: RegSpec) -> Result<Tensor> {
    let mut total = Tensor::scalar(0.0);
    if reg.alpha == 0.0 && reg.beta == 0.0 {
        return Ok(total);
    }
    for p in params.iter().filter(|p| p.kind.is_penalized()) {
        if reg.alpha != 0.0 {
            total = total.add(&p.tensor.abs().sum_all().scale(reg.alpha))?;
        }
        if reg.beta != 0.0 {
            total = total.add(&p.tensor.square().sum_all().scale(reg.beta))?;
        }
    }
    Ok(total)
}

/// Mean cross-entropy of `logits: [B, C]` plus the weight penalty.
pub fn loss(logits: &Tensor, labels: &[usize], params: &[Param], reg: RegSpec) -> Result<Tensor> {
    if logits.rank() != 2 || logits.shape()[0] != labels.len() || labels.is_empty() {
        return Err(Error::shape("loss", logits.shape(), &[labels.len()]));
    }
    let classes = logits.shape()[1];
    if let Some(&label) = labels.iter().find(|&&y| y >= classes) {
        return Err(Error::LabelOutOfRange { label, n_classes: classes });
    }
    let nll = logits.log_softmax()?.pick(labels)?.mean_all()?.neg();
    nll.add(&penalty(params, reg)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub accuracy: f64,
    /// `confusion[true][predicted]`
    pub confusion: Vec<Vec<usize>>,
}

pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

/// Scores predictions against labels.
pub fn score(predictions: &[usize], labels: &[usize], n_classes: usize) -> Evaluation {
    let mut confusion = vec![vec![0; n_classes]; n_classes];
    let mut correct = 0;
    for (&p, &y) in predictions.iter().zip(labels) {
        confusion[y][p] += 1;
        correct += usize::from(p == y);
    }
    let accuracy = if labels.is_empty() { 0.0 } else { correct as f64 / labels.len() as f64 };
    Evaluation { accuracy, confusion }
}

pub const EVAL_BATCH: usize = 256;

/// Eval-mode accuracy and confusion matrix.
pub fn evaluate(net: &Network, data: &TrialSet) -> Result<Evaluation> {
    if net.n_classes != data.n_classes {
        return Err(Error::ClassMismatch { model: net.n_classes, data: data.n_classes });
    }
    let was_training = net.compressor.is_training();
    net.set_training(false);
    let idx: Vec<usize> = (0..data.n_trials()).collect();
    let mut preds = Vec::with_capacity(idx.len());
    let result = no_grad(|| -> Result<()> {
        for chunk in idx.chunks(EVAL_BATCH) {
            let logits = net.forward(&data.batch(chunk))?;
            let v = logits.data();
            preds.extend(v.chunks(net.n_classes).map(argmax));
        }
        Ok(())
    });
    net.set_training(was_training);
    result?;
    Ok(score(&preds, &data.labels, data.n_classes))
}

/// Total learnable scalars.
pub fn count_params(model: &dyn Module) -> usize {
    count_learnable(&model.params())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-indexed.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_acc: f64,
    pub lr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub epochs: Vec<EpochRecord>,
    pub best_val_acc: f64,
    pub best_epoch: usize,
    pub checkpoint_epochs: Vec<usize>,
    pub param_count: usize,
    pub train_trials: usize,
    pub val_trials: usize,
    pub seed: u64,
    pub config_hash: String,
    pub wall_time_s: f64,
}

impl RunReport {
    pub fn epochs_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,val_acc,lr\n");
        for e in &self.epochs {
            let _ = writeln!(s, "{},{:.17e},{:.17e},{:e}", e.epoch, e.train_loss, e.val_acc, e.lr);
        }
        s
    }
}

/// 1-indexed epochs at which accuracy strictly improved on the best so far.
pub fn improvement_epochs(val_acc: &[f64]) -> Vec<usize> {
    let mut best = f64::NEG_INFINITY;
    let mut out = Vec::new();
    for (i, &a) in val_acc.iter().enumerate() {
        if a > best {
            best = a;
            out.push(i + 1);
        }
    }
    out
}

pub struct TrainOutcome {
    pub report: RunReport,
    /// Parameter values at the best epoch, buffers included.
    pub best_state: Vec<TensorRecord>,
}

/// Trains `net` in place. With `out_dir`, `best.ckpt` is rewritten on
/// every improvement and `epochs.csv` after every epoch.
pub fn train(
    net: &Network,
    train_set: &TrialSet,
    val_set: &TrialSet,
    cfg: &TrainConfig,
    out_dir: Option<&Path>,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    if net.n_classes != train_set.n_classes {
        return Err(Error::ClassMismatch { model: net.n_classes, data: train_set.n_classes });
    }
    if train_set.n_trials() == 0 {
        return Err(Error::Config("empty training set".into()));
    }
    let start = Instant::now();
    let learnable = net.learnable_params();
    let all = net.params();
    let mut adam = AdamState::new(&learnable, cfg.lr);
    let mut report = RunReport {
        epochs: Vec::new(),
        best_val_acc: f64::NEG_INFINITY,
        best_epoch: 0,
        checkpoint_epochs: Vec::new(),
        param_count: count_learnable(&all),
        train_trials: train_set.n_trials(),
        val_trials: val_set.n_trials(),
        seed: cfg.seed,
        config_hash: String::new(),
        wall_time_s: 0.0,
    };
    let mut best_state = checkpoint::records_of(&all);
    let mut order: Vec<usize> = (0..train_set.n_trials()).collect();

    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_for_epoch(epoch);
        adam.lr = lr;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(epoch as u64 + 1);
        order.shuffle(&mut rng);
        net.set_training(true);
        let mut loss_sum = 0.0;
        for (step, chunk) in order.chunks(cfg.batch_size).enumerate() {
            for p in &learnable {
                p.tensor.zero_grad();
            }
            let logits = net.forward(&train_set.batch(chunk))?;
            let l = loss(&logits, &train_set.batch_labels(chunk), &learnable, cfg.reg)?;
            let value = l.item();
            if !value.is_finite() {
                return Err(Error::Divergence { epoch: epoch + 1, step: step + 1, loss: value });
            }
            l.backward()?;
            adam.step(&learnable)?;
            loss_sum += value * chunk.len() as f64;
        }
        let val_acc = evaluate(net, val_set)?.accuracy;
        let rec = EpochRecord {
            epoch: epoch + 1,
            train_loss: loss_sum / train_set.n_trials() as f64,
            val_acc,
            lr,
        };
        if val_acc > report.best_val_acc {
            report.best_val_acc = val_acc;
            report.best_epoch = epoch + 1;
            report.checkpoint_epochs.push(epoch + 1);
            best_state = checkpoint::records_of(&all);
            if let Some(dir) = out_dir {
                let path = dir.join("best.ckpt");
                std::fs::write(&path, checkpoint::encode(&best_state)).map_err(|e| Error::io(&path, e))?;
            }
        }
        on_epoch(&rec);
        report.epochs.push(rec);
        if let Some(dir) = out_dir {
            let path = dir.join("epochs.csv");
            std::fs::write(&path, report.epochs_csv()).map_err(|e| Error::io(&path, e))?;
        }
    }
    net.set_training(false);
    report.wall_time_s = start.elapsed().as_secs_f64();
    Ok(TrainOutcome { report, best_state })
}
