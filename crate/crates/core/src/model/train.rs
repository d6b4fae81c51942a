use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::FlowModel;
use crate::data::{scale_augment, TrajectoryWindow};
use crate::diffcore::nn::ParamStore;
use crate::diffcore::Graph;
use crate::error::{Error, Result};
use crate::flows::{Mode, StatUpdates};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Multiplies the learning rate after every epoch.
    pub lr_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm clip.
    pub clip_norm: Option<f64>,
    /// Random scaling about the window mean, drawn per window and batch.
    pub scale_augment: Option<(f64, f64)>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: 64,
            learning_rate: 1e-3,
            lr_decay: 0.999,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: Some(10.0),
            scale_augment: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if self.batch_size == 0 {
            errs.push("train.batch_size must be >= 1".into());
        }
        if !(self.learning_rate > 0.0) {
            errs.push("train.learning_rate must be positive".into());
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            errs.push("train.lr_decay must lie in (0, 1]".into());
        }
        for (k, b) in [("train.beta1", self.beta1), ("train.beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                errs.push(format!("{k} must lie in [0, 1)"));
            }
        }
        if !(self.eps > 0.0) {
            errs.push("train.eps must be positive".into());
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                errs.push("train.clip_norm must be positive".into());
            }
        }
        if let Some((lo, hi)) = self.scale_augment {
            if !(lo > 0.0 && lo <= hi) {
                errs.push("train.scale_augment must satisfy 0 < lo <= hi".into());
            }
        }
        errs
    }
}

/// Adam over the trainable entries of a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(store: &ParamStore, beta1: f64, beta2: f64, eps: f64) -> Self {
        let zeros: Vec<Vec<f64>> = store.entries().iter().map(|e| vec![0.0; e.value.numel()]).collect();
        Adam {
            beta1,
            beta2,
            eps,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn steps_taken(&self) -> i32 {
        self.step
    }

    /// `grads[i]` belongs to entry `i`; frozen entries are skipped.
    pub fn update(&mut self, store: &mut ParamStore, grads: &[Vec<f64>], lr: f64) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        for (i, e) in store.entries_mut().iter_mut().enumerate() {
            if !e.trainable {
                continue;
            }
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (j, x) in e.value.data_mut().iter_mut().enumerate() {
                let gj = grads[i][j];
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * gj;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * gj * gj;
                *x -= lr * (m[j] / c1) / ((v[j] / c2).sqrt() + self.eps);
            }
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean minibatch loss per epoch.
    pub epoch_losses: Vec<f64>,
    pub steps: usize,
}

/// One gradient step's loss and per-entry gradients, with stats updates.
pub(crate) fn loss_and_grads(
    model: &FlowModel,
    batch: &[&TrajectoryWindow],
    rng: &mut ChaCha8Rng,
) -> Result<(f64, Vec<Vec<f64>>, StatUpdates)> {
    let mut g = Graph::new();
    let p = model.store.bind(&mut g);
    let mut updates = StatUpdates::new();
    let trace = model.config.effective_train_trace();
    let loss = model.nll_loss(&mut g, &p, batch, &mut Mode::Train(&mut updates), trace, rng)?;
    let grads = g.backward(loss)?;
    let per_entry = model
        .store
        .entries()
        .iter()
        .zip(p.vars())
        .map(|(e, &v)| if e.trainable { grads.get_or_zero(v) } else { Vec::new() })
        .collect();
    Ok((g.value(loss).item(), per_entry, updates))
}

/// Minibatch Adam on preprocessed windows. Running statistics are updated
/// after every step.
pub fn train(model: &mut FlowModel, windows: &[TrajectoryWindow], cfg: &TrainConfig) -> Result<TrainReport> {
    let errs = cfg.validate();
    if !errs.is_empty() {
        return Err(Error::Config(errs));
    }
    if windows.is_empty() && cfg.epochs > 0 {
        return Err(Error::contract("training needs at least one window"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(&model.store, cfg.beta1, cfg.beta2, cfg.eps);
    let mut order: Vec<usize> = (0..windows.len()).collect();
    let mut report = TrainReport::default();
    let mut lr = cfg.learning_rate;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let augmented: Vec<TrajectoryWindow>;
            let batch: Vec<&TrajectoryWindow> = match cfg.scale_augment {
                Some(range) => {
                    augmented = chunk
                        .iter()
                        .map(|&i| scale_augment(windows[i].clone(), range, &mut rng))
                        .collect();
                    augmented.iter().collect()
                }
                None => chunk.iter().map(|&i| &windows[i]).collect(),
            };
            let (loss, mut grads, updates) = match loss_and_grads(model, &batch, &mut rng) {
                Ok(v) => v,
                Err(Error::Degenerate(_) | Error::Numeric(_) | Error::Domain(_)) => {
                    return Err(Error::Divergence { epoch, batch: b })
                }
                Err(e) => return Err(e),
            };
            let sq: f64 = grads.iter().flatten().map(|x| x * x).sum();
            if !loss.is_finite() || !sq.is_finite() {
                return Err(Error::Divergence { epoch, batch: b });
            }
            if let Some(c) = cfg.clip_norm {
                let norm = sq.sqrt();
                if norm > c {
                    let f = c / norm;
                    grads.iter_mut().flatten().for_each(|x| *x *= f);
                }
            }
            adam.update(&mut model.store, &grads, lr);
            updates.apply(&mut model.store);
            total += loss;
            batches += 1;
            report.steps += 1;
        }
        report.epoch_losses.push(total / batches as f64);
        lr *= cfg.lr_decay;
    }
    Ok(report)
}
