//! Mini-batch training shared by both models.
//!
//! Per-example gradients are computed in parallel and summed in batch order,
//! so results do not depend on the number of worker threads.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autograd::{Dropout, Grad, Gradients, ParamGroup, ParamStore, Tensor};
use crate::error::{Error, Result};
use crate::metrics::MetricReport;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecayMode {
    /// Constant rate after warmup.
    None,
    /// Linear decay to zero at the last step.
    Linear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters {
    pub max_length: usize,
    pub dropout: f64,
    pub batch_size: usize,
    pub encoder_lr: f64,
    pub head_lr: f64,
    /// Weight of the label-correlation term (detector only).
    pub alpha: f64,
    pub warmup_fraction: f64,
    pub weight_decay_mode: DecayMode,
    pub epochs: usize,
    pub seed: u64,
    /// Detection threshold stored with detector checkpoints.
    pub threshold: f64,
    pub grad_clip: f64,
}

impl Hyperparameters {
    pub fn detector_defaults() -> Self {
        Hyperparameters {
            max_length: 128,
            dropout: 0.2,
            batch_size: 32,
            encoder_lr: 2e-5,
            head_lr: 1e-3,
            alpha: 0.2,
            warmup_fraction: 0.0,
            weight_decay_mode: DecayMode::Linear,
            epochs: 20,
            seed: 42,
            threshold: 0.5,
            grad_clip: 1.0,
        }
    }

    pub fn sentiment_defaults() -> Self {
        Hyperparameters {
            dropout: 0.1,
            warmup_fraction: 0.1,
            ..Self::detector_defaults()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Hyperparameter(m.to_string()));
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.encoder_lr > 0.0 && self.head_lr > 0.0) {
            return bad("learning rates must be positive");
        }
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            return bad("warmup_fraction must be in [0, 1)");
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return bad("alpha must be in [0, 1]");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must be in [0, 1)");
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return bad("threshold must be in (0, 1)");
        }
        if !(self.grad_clip > 0.0) {
            return bad("grad_clip must be positive");
        }
        if self.max_length < 8 {
            return bad("max_length must be at least 8");
        }
        Ok(())
    }

    fn base_lr(&self, group: ParamGroup) -> f64 {
        match group {
            ParamGroup::Encoder => self.encoder_lr,
            ParamGroup::Head => self.head_lr,
        }
    }
}

/// Linear warmup over the first `warmup_fraction · total_steps` steps, then
/// linear decay to zero at `total_steps`.
pub fn lr_schedule(step: usize, total_steps: usize, base_lr: f64, warmup_fraction: f64) -> Result<f64> {
    lr_at(step, total_steps, base_lr, warmup_fraction, DecayMode::Linear)
}

pub fn lr_at(step: usize, total_steps: usize, base_lr: f64, warmup_fraction: f64, decay: DecayMode) -> Result<f64> {
    if total_steps == 0 {
        return Err(Error::InvalidInput("total_steps must be at least 1".into()));
    }
    if step > total_steps {
        return Err(Error::InvalidInput(format!("step {step} is past total_steps {total_steps}")));
    }
    let (s, t) = (step as f64, total_steps as f64);
    let w = warmup_fraction * t;
    if s < w {
        return Ok(base_lr * s / w);
    }
    Ok(match decay {
        DecayMode::None => base_lr,
        DecayMode::Linear if t > w => base_lr * (t - s) / (t - w),
        DecayMode::Linear => 0.0,
    })
}

/// Adam with bias correction and per-group learning rates.
#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: i32,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(store: &ParamStore) -> Self {
        let zeros: Vec<Tensor> = store.iter().map(|(_, p)| Tensor::zeros(p.value.dim())).collect();
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn step<F>(&mut self, store: &mut ParamStore, grads: &Gradients, lr: F)
    where
        F: Fn(ParamGroup) -> f64,
    {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        let ids: Vec<_> = store.iter().map(|(id, p)| (id, p.group)).collect();
        for (id, group) in ids {
            let i = id.index();
            let (b1, b2) = (self.beta1, self.beta2);
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            m.mapv_inplace(|x| x * b1);
            v.mapv_inplace(|x| x * b2);
            match grads.get(id) {
                None => {}
                Some(Grad::Dense(g)) => {
                    m.scaled_add(1.0 - b1, g);
                    ndarray::Zip::from(&mut *v).and(g).for_each(|v, &g| *v += (1.0 - b2) * g * g);
                }
                Some(Grad::Rows(rows)) => {
                    for (&r, g) in rows {
                        m.row_mut(r).scaled_add(1.0 - b1, g);
                        ndarray::Zip::from(v.row_mut(r)).and(g).for_each(|v, &g| *v += (1.0 - b2) * g * g);
                    }
                }
            }
            let rate = lr(group);
            let eps = self.eps;
            ndarray::Zip::from(store.get_mut(id))
                .and(&*m)
                .and(&*v)
                .for_each(|p, &m, &v| *p -= rate * (m / c1) / ((v / c2).sqrt() + eps));
        }
    }
}

/// A training example that can name itself in diagnostics.
pub trait Labelled {
    fn id(&self) -> &str;
}

/// A model the trainer can optimise.
pub trait Trainable: Sync {
    type Example: Labelled + Sync;

    fn params(&self) -> &ParamStore;
    fn params_mut(&mut self) -> &mut ParamStore;

    /// Loss of one example and its gradient. `dropout` is `None` in
    /// evaluation mode.
    fn example_loss(
        &self,
        example: &Self::Example,
        dropout: Option<&mut Dropout<ChaCha8Rng>>,
    ) -> Result<(f64, Gradients)>;

    /// Dev-set metrics; must include `f1_macro`.
    fn evaluate(&self, examples: &[Self::Example]) -> Result<MetricReport>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrLog {
    pub encoder: f64,
    pub head: f64,
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub step: usize,
    pub train_loss: f64,
    pub dev: std::collections::BTreeMap<String, f64>,
    /// Rates used for the last update of the epoch.
    pub lr: LrLog,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    /// 1-based epoch whose parameters were kept; `None` after zero epochs.
    pub best_epoch: Option<usize>,
    pub best_dev: Option<MetricReport>,
    pub epochs: Vec<EpochLog>,
    pub total_steps: usize,
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Seed derived from a path of integers.
pub fn derive_seed(parts: &[u64]) -> u64 {
    parts.iter().fold(0x5eed, |acc, &p| splitmix(acc ^ splitmix(p)))
}

/// Optimise `model` on `train`, keeping the parameters of the epoch with the
/// best dev F1-macro (the last epoch when `dev` is empty).
pub fn train<M: Trainable>(
    model: &mut M,
    train: &[M::Example],
    dev: &[M::Example],
    hp: &Hyperparameters,
    mut log: Option<&mut dyn Write>,
) -> Result<TrainOutcome> {
    hp.validate()?;
    if train.is_empty() {
        return Err(Error::InvalidInput("empty training set".into()));
    }
    let batches_per_epoch = train.len().div_ceil(hp.batch_size);
    let total_steps = (hp.epochs * batches_per_epoch).max(1);
    let mut adam = Adam::new(model.params());
    let mut best: Option<(f64, usize, ParamStore, MetricReport)> = None;
    let mut epochs = Vec::with_capacity(hp.epochs);
    let mut step = 0usize;
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 1..=hp.epochs {
        let mut shuffle = ChaCha8Rng::seed_from_u64(derive_seed(&[hp.seed, epoch as u64]));
        order.sort_unstable();
        order.shuffle(&mut shuffle);
        let mut loss_sum = 0.0;
        let mut lr_log = LrLog { encoder: 0.0, head: 0.0 };

        for batch in order.chunks(hp.batch_size) {
            let results: Vec<Result<(f64, Gradients)>> = batch
                .par_iter()
                .enumerate()
                .map(|(k, &i)| {
                    let rng = ChaCha8Rng::seed_from_u64(derive_seed(&[hp.seed, epoch as u64, step as u64, k as u64]));
                    let mut d = Dropout { rate: hp.dropout, rng };
                    model.example_loss(&train[i], Some(&mut d))
                })
                .collect();
            let n = batch.len() as f64;
            let mut grads = Gradients::new(model.params().len());
            let mut batch_loss = 0.0;
            for r in results {
                let (l, g) = r?;
                batch_loss += l;
                grads.accumulate(&g, 1.0 / n);
            }
            batch_loss /= n;
            let norm = grads.global_norm();
            if !batch_loss.is_finite() || !norm.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    step,
                    batch_ids: batch.iter().map(|&i| train[i].id().to_string()).collect(),
                });
            }
            if norm > hp.grad_clip {
                grads.scale(hp.grad_clip / norm);
            }
            let factor = lr_at(step, total_steps, 1.0, hp.warmup_fraction, hp.weight_decay_mode)?;
            lr_log = LrLog {
                encoder: factor * hp.encoder_lr,
                head: factor * hp.head_lr,
            };
            adam.step(model.params_mut(), &grads, |g| factor * hp.base_lr(g));
            loss_sum += batch_loss * n;
            step += 1;
        }

        let train_loss = loss_sum / train.len() as f64;
        let dev_report = if dev.is_empty() {
            None
        } else {
            Some(model.evaluate(dev)?)
        };
        let entry = EpochLog {
            epoch,
            step,
            train_loss,
            dev: dev_report.as_ref().map(|r| r.metrics.clone()).unwrap_or_default(),
            lr: lr_log,
        };
        if let Some(w) = log.as_deref_mut() {
            let line = serde_json::to_string(&entry)?;
            writeln!(w, "{line}").map_err(|e| Error::io("<training log>", e))?;
        }
        epochs.push(entry);

        let score = dev_report
            .as_ref()
            .and_then(|r| r.get("f1_macro"))
            .unwrap_or(f64::NEG_INFINITY);
        let better = match &best {
            None => true,
            Some((b, ..)) => dev_report.is_none() || score > *b,
        };
        if better {
            let mut report = dev_report.unwrap_or_default();
            report.provenance.epoch = Some(epoch);
            report.provenance.step = Some(step);
            report.provenance.seed = Some(hp.seed);
            best = Some((score, epoch, model.params().clone(), report));
        }
    }

    let (best_epoch, best_dev) = match best {
        Some((_, epoch, params, report)) => {
            *model.params_mut() = params;
            (Some(epoch), Some(report))
        }
        None => (None, None),
    };
    Ok(TrainOutcome {
        best_epoch,
        best_dev,
        epochs,
        total_steps,
    })
}
