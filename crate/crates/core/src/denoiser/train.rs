//! Adam training of the residual denoiser.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::grad::{batch_gradients, batch_loss, to_example, Example, Gradients};
use super::{DenoiserArch, DenoiserModel};
use crate::dsp::Matrix;
use crate::error::{Error, Result};

/// Noisy/clean patches of the same recording segment. `group` names the
/// source recording; the train/validation split never separates a group.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchPair {
    pub noisy: Matrix,
    pub clean: Matrix,
    pub snr_db: f64,
    pub group: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub arch: DenoiserArch,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub validation_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            arch: DenoiserArch::default(),
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            epochs: 64,
            batch_size: 16,
            validation_fraction: 0.1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        if !(self.learning_rate > 0.0) || self.epochs < 1 || self.batch_size < 1 {
            return Err(Error::BadConfig(
                "learning rate must be > 0, epochs and batch size >= 1".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::BadConfig("validation fraction must be in [0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub validation_loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainedDenoiser {
    pub model: DenoiserModel<f32>,
    pub log: Vec<EpochLog>,
    pub train_groups: Vec<String>,
    pub validation_groups: Vec<String>,
}

/// Splits recording groups into (train, validation) with a seeded shuffle.
pub(crate) fn split_groups(
    pairs: &[PatchPair],
    fraction: f64,
    seed: u64,
) -> (Vec<String>, Vec<String>) {
    let mut groups: Vec<String> = pairs
        .iter()
        .map(|p| p.group.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if groups.len() < 2 || fraction == 0.0 {
        return (groups, Vec::new());
    }
    groups.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_5eed));
    let n_val = ((groups.len() as f64 * fraction).round() as usize).clamp(1, groups.len() - 1);
    let val = groups.split_off(groups.len() - n_val);
    (groups, val)
}

struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn new(cfg: &TrainConfig, n: usize) -> Self {
        Adam {
            lr: cfg.learning_rate,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.epsilon,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f32], grads: &[f32]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            let g = grads[i] as f64;
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mhat = self.m[i] / c1;
            let vhat = self.v[i] / c2;
            params[i] = (params[i] as f64 - self.lr * mhat / (vhat.sqrt() + self.eps)) as f32;
        }
    }
}

/// Trains a denoiser to predict `noisy - clean` from `noisy`.
///
/// Batches are drawn from a shuffle seeded by `cfg.seed` and all reductions
/// run in a fixed order, so identical inputs give bit-identical weights.
pub fn train_denoiser(pairs: &[PatchPair], cfg: &TrainConfig) -> Result<TrainedDenoiser> {
    cfg.validate()?;
    if pairs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let side = cfg.arch.patch_side;
    for p in pairs {
        if p.noisy.shape() != (side, side) || p.clean.shape() != (side, side) {
            return Err(Error::ShapeMismatch(format!(
                "training patches must be {side}x{side}"
            )));
        }
    }
    let (train_groups, val_groups) = split_groups(pairs, cfg.validation_fraction, cfg.seed);
    let mut model = DenoiserModel::<f32>::init(cfg.arch, cfg.seed);
    let mut val_sorted = val_groups.clone();
    val_sorted.sort();
    let is_val = |p: &PatchPair| val_sorted.binary_search(&p.group).is_ok();

    let train: Vec<Example<f32>> = pairs
        .iter()
        .filter(|p| !is_val(p))
        .map(|p| to_example(&model, p))
        .collect();
    let mut val: Vec<Example<f32>> = pairs
        .iter()
        .filter(|p| is_val(p))
        .map(|p| to_example(&model, p))
        .collect();
    if val.is_empty() {
        log::warn!("single recording group: validating on the training patches");
        val = pairs.iter().map(|p| to_example(&model, p)).collect();
    }

    let mut adam = Adam::new(cfg, model.param_count());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut train_total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&Example<f32>> = chunk.iter().map(|&i| &train[i]).collect();
            let mut grads = Gradients::zeros_like(&model);
            let loss = batch_gradients(&model, &batch, side, &mut grads);
            train_total += loss * batch.len() as f64;
            let mut params = model.params();
            adam.step(&mut params, &grads.flatten());
            model.set_params(&params);
        }
        let val_refs: Vec<&Example<f32>> = val.iter().collect();
        let validation_loss = batch_loss(&model, &val_refs, side);
        let entry = EpochLog {
            epoch,
            train_loss: train_total / train.len() as f64,
            validation_loss,
        };
        log::info!(
            "denoiser epoch {epoch}: train {:.6} validation {:.6}",
            entry.train_loss,
            entry.validation_loss
        );
        if !validation_loss.is_finite() {
            return Err(Error::DivergedLoss {
                epoch,
                loss: validation_loss,
            });
        }
        log.push(entry);
    }
    if let (Some(first), Some(last)) = (log.first(), log.last()) {
        if last.validation_loss > first.validation_loss {
            log::warn!(
                "validation loss rose from {:.6} to {:.6}",
                first.validation_loss,
                last.validation_loss
            );
        }
    }
    model.epochs_trained = cfg.epochs;
    model.training_seed = cfg.seed;
    Ok(TrainedDenoiser {
        model,
        log,
        train_groups,
        validation_groups: val_groups,
    })
}
