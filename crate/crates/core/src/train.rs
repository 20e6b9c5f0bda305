//! Deterministic training protocol shared by the MDT and the baselines.
//!
//! AdamW (lr 3e-5, weight decay 1e-2 at full scale), binary cross-entropy
//! over multi-hot labels, 30 epochs with the learning rate divided by ten at
//! epoch 20 (epochs are 1-indexed). Batch order, dropout masks and parameter
//! init all flow from a single seed through ChaCha8 streams, so a rerun with
//! the same seed is byte-identical.

use alloc::format;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ForwardCtx;
use crate::optim::AdamW;
use crate::params::ParamSet;
use crate::record::Case;
use crate::tape::Tape;
use crate::tensor::Tensor;

/// Anything the trainer can optimize: a forward pass to logits plus access
/// to the parameter set.
pub trait TrainableModel {
    fn forward(&self, tape: &Tape, case: &Case, ctx: &mut ForwardCtx) -> Result<Tensor>;
    fn params(&self) -> &ParamSet;
    fn dropout_rate(&self) -> f32;
    fn class_count(&self) -> usize;
}

impl TrainableModel for crate::model::MdtModel {
    fn forward(&self, tape: &Tape, case: &Case, ctx: &mut ForwardCtx) -> Result<Tensor> {
        // inherent method; path syntax picks the inherent impl
        crate::model::MdtModel::forward(self, tape, case, ctx)
    }

    fn params(&self) -> &ParamSet {
        &self.params
    }

    fn dropout_rate(&self) -> f32 {
        self.cfg.dropout
    }

    fn class_count(&self) -> usize {
        self.cfg.class_count
    }
}

/// Optimization hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f32,
    pub weight_decay: f32,
    pub epochs: usize,
    /// 1-indexed epoch at which the learning rate is divided by `lr_drop_factor`.
    pub lr_drop_epoch: usize,
    pub lr_drop_factor: f32,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> TrainConfig {
        TrainConfig {
            lr: 3e-5,
            weight_decay: 1e-2,
            epochs: 30,
            lr_drop_epoch: 20,
            lr_drop_factor: 10.0,
            batch_size: 256,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lr <= 0.0 || !self.lr.is_finite() {
            return Err(Error::Contract(format!("bad learning rate {}", self.lr)));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Contract("epochs and batch_size must be positive".into()));
        }
        if self.lr_drop_factor <= 0.0 {
            return Err(Error::Contract("lr_drop_factor must be positive".into()));
        }
        Ok(())
    }

    /// Learning rate in effect during a 1-indexed epoch.
    pub fn lr_at_epoch(&self, epoch: usize) -> f32 {
        if epoch >= self.lr_drop_epoch {
            self.lr / self.lr_drop_factor
        } else {
            self.lr
        }
    }
}

/// One line of the training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f32,
}

/// Everything a finished run produces.
pub struct TrainResult {
    pub logs: Vec<EpochLog>,
    /// 1-indexed epoch with the lowest validation loss (earliest on ties).
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub best_checkpoint: Vec<u8>,
    pub final_checkpoint: Vec<u8>,
}

fn fisher_yates(indices: &mut [usize], rng: &mut ChaCha8Rng) {
    for i in (1..indices.len()).rev() {
        let j = rng.gen_range(0..=i);
        indices.swap(i, j);
    }
}

/// Mean binary cross-entropy of a batch: forwards every case, stacks the
/// logits and applies the stable fused loss.
pub fn batch_loss<M: TrainableModel>(
    model: &M,
    tape: &Tape,
    cases: &[&Case],
    ctx: &mut ForwardCtx,
) -> Result<Tensor> {
    if cases.is_empty() {
        return Err(Error::Contract("empty batch".into()));
    }
    let classes = model.class_count();
    let mut logit_rows = Vec::with_capacity(cases.len());
    let mut label_data = Vec::with_capacity(cases.len() * classes);
    for case in cases {
        logit_rows.push(model.forward(tape, case, ctx)?);
        label_data.extend_from_slice(&case.labels);
    }
    let refs: Vec<&Tensor> = logit_rows.iter().collect();
    let logits = tape.concat_rows(&refs)?;
    tape.bce_with_logits(&logits, &label_data)
}

/// Mean loss over a split without touching gradients or dropout.
pub fn eval_loss<M: TrainableModel>(model: &M, cases: &[Case]) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut total = 0.0f64;
    for case in cases {
        let tape = Tape::new();
        let mut ctx = ForwardCtx::new(false, 0.0, &mut rng, None);
        let refs = [case];
        let loss = batch_loss(model, &tape, &refs, &mut ctx)?;
        total += loss.item()? as f64;
    }
    Ok(total / cases.len() as f64)
}

/// Eval-mode scores (sigmoid of logits) for every case, `scores[case][class]`.
pub fn predict<M: TrainableModel>(model: &M, cases: &[Case]) -> Result<Vec<Vec<f32>>> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut out = Vec::with_capacity(cases.len());
    for case in cases {
        let tape = Tape::new();
        let mut ctx = ForwardCtx::new(false, 0.0, &mut rng, None);
        let logits = model.forward(&tape, case, &mut ctx)?;
        out.push(logits.data().iter().map(|&z| crate::mathx::sigmoidf(z)).collect());
    }
    Ok(out)
}

/// Full training loop. Keeps the parameters of the epoch with the lowest
/// validation loss and restores them before returning, so the model is left
/// in its best state.
pub fn train<M: TrainableModel>(
    model: &M,
    cfg: &TrainConfig,
    train_cases: &[Case],
    val_cases: &[Case],
    mut on_epoch: Option<&mut dyn FnMut(&EpochLog)>,
) -> Result<TrainResult> {
    cfg.validate()?;
    if train_cases.is_empty() || val_cases.is_empty() {
        return Err(Error::Contract("train and val splits must be non-empty".into()));
    }
    let mut opt = AdamW::new(model.params(), cfg.lr, cfg.weight_decay)?;
    // independent deterministic streams for batch order and dropout
    let mut order_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_mul(2).wrapping_add(1));
    let mut drop_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_mul(2).wrapping_add(2));
    let mut indices: Vec<usize> = (0..train_cases.len()).collect();
    let mut logs = Vec::with_capacity(cfg.epochs);
    let mut best_epoch = 0usize;
    let mut best_val = f64::INFINITY;
    let mut best_checkpoint = crate::checkpoint::encode_params(model.params())?;
    for epoch in 1..=cfg.epochs {
        opt.lr = cfg.lr_at_epoch(epoch);
        fisher_yates(&mut indices, &mut order_rng);
        let mut epoch_loss = 0.0f64;
        let mut n_batches = 0usize;
        for (batch_idx, batch) in indices.chunks(cfg.batch_size).enumerate() {
            let tape = Tape::new();
            let cases: Vec<&Case> = batch.iter().map(|&i| &train_cases[i]).collect();
            let mut ctx = ForwardCtx::new(true, model.dropout_rate(), &mut drop_rng, None);
            let loss = batch_loss(model, &tape, &cases, &mut ctx).map_err(|e| {
                Error::Contract(format!("epoch {epoch} batch {batch_idx}: {e}"))
            })?;
            epoch_loss += loss.item()? as f64;
            n_batches += 1;
            let grads = tape.backward(&loss)?;
            opt.step(model.params(), &grads)?;
        }
        let train_loss = epoch_loss / n_batches as f64;
        let val_loss = eval_loss(model, val_cases)?;
        let log = EpochLog {
            epoch,
            train_loss,
            val_loss,
            lr: opt.lr,
        };
        if let Some(cb) = on_epoch.as_mut() {
            cb(&log);
        }
        logs.push(log);
        if val_loss < best_val {
            best_val = val_loss;
            best_epoch = epoch;
            best_checkpoint = crate::checkpoint::encode_params(model.params())?;
        }
    }
    let final_checkpoint = crate::checkpoint::encode_params(model.params())?;
    crate::checkpoint::load_params(model.params(), &best_checkpoint)?;
    Ok(TrainResult {
        logs,
        best_epoch,
        best_val_loss: best_val,
        best_checkpoint,
        final_checkpoint,
    })
}
