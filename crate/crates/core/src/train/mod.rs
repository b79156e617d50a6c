//! Mini-batch maximum-likelihood training with a bound-then-exact loss schedule.

mod adam;

use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

pub use adam::{adam_step, clip_global_norm, global_norm, AdamHyper, AdamState};

use crate::autonet::{Mdn, MdnConfig};
use crate::data::ConditionedBatch;
use crate::error::{MdnError, Result};
use crate::loss::LossKind;
use crate::rng::{stream_rng, SHUFFLE_STREAM};
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Leading fraction of epochs trained with `warmup_loss`.
    pub warmup_fraction: f64,
    pub warmup_loss: LossKind,
    pub main_loss: LossKind,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Global gradient norm cap.
    pub clip_norm: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let h = AdamHyper::default();
        Self {
            epochs: 100,
            batch_size: 128,
            learning_rate: h.learning_rate,
            warmup_fraction: 0.2,
            warmup_loss: LossKind::WeightedJensen,
            main_loss: LossKind::ExactNll,
            beta1: h.beta1,
            beta2: h.beta2,
            epsilon: h.epsilon,
            clip_norm: 10.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(MdnError::InvalidInput(m.into()));
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch size must be at least 1");
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return bad("learning rate must be finite and non-negative");
        }
        if !(0.0..=1.0).contains(&self.warmup_fraction) {
            return bad("warmup fraction must lie in [0, 1]");
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2)) {
            return bad("Adam betas must lie in [0, 1)");
        }
        if !(self.epsilon > 0.0) {
            return bad("Adam epsilon must be positive");
        }
        if !(self.clip_norm > 0.0) {
            return bad("clip norm must be positive");
        }
        Ok(())
    }

    pub fn hyper(&self) -> AdamHyper {
        AdamHyper {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        }
    }

    /// `⌈warmup_fraction · epochs⌉`.
    pub fn warmup_epochs(&self) -> usize {
        let w = (self.warmup_fraction * self.epochs as f64).ceil() as usize;
        w.min(self.epochs)
    }

    /// Training objective in effect during zero-based `epoch`.
    pub fn loss_for_epoch(&self, epoch: usize) -> LossKind {
        if epoch < self.warmup_epochs() {
            self.warmup_loss
        } else {
            self.main_loss
        }
    }
}

/// Per-epoch summary handed to progress observers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochSummary {
    pub epoch: usize,
    pub loss_kind: LossKind,
    pub train_loss: f64,
    pub val_nll: Option<f64>,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportConfig {
    pub mdn: MdnConfig,
    pub train: TrainConfig,
}

/// Outcome of a training run.
///
/// Wall-clock timings are kept in memory only; the JSON form omits them so
/// identical runs serialize identically.
#[derive(Debug, Clone)]
pub struct TrainReport<T> {
    /// Mean training objective per epoch, under that epoch's loss kind.
    pub train_loss: Vec<f64>,
    pub loss_kind: Vec<LossKind>,
    /// Mean exact NLL on the validation set after each epoch; empty without validation data.
    pub val_nll: Vec<f64>,
    pub epoch_seconds: Vec<f64>,
    pub seed: u64,
    pub epochs: usize,
    pub config: ReportConfig,
    pub model: Mdn<T>,
}

#[derive(Serialize)]
struct ReportJson<'a> {
    train_loss: &'a [f64],
    val_nll: &'a [f64],
    loss_kind: &'a [LossKind],
    seed: u64,
    epochs: usize,
    warmup_epochs: usize,
    config: &'a ReportConfig,
}

impl<T: Real> TrainReport<T> {
    pub fn final_val_nll(&self) -> Option<f64> {
        self.val_nll.last().copied()
    }

    pub fn to_json(&self) -> String {
        let doc = ReportJson {
            train_loss: &self.train_loss,
            val_nll: &self.val_nll,
            loss_kind: &self.loss_kind,
            seed: self.seed,
            epochs: self.epochs,
            warmup_epochs: self.config.train.warmup_epochs(),
            config: &self.config,
        };
        serde_json::to_string_pretty(&doc).expect("report serializes")
    }
}

/// Trains a freshly initialized network (seeded with `cfg.seed`).
pub fn train<T: Real>(
    cfg: &TrainConfig,
    mdn_cfg: &MdnConfig,
    dataset: &ConditionedBatch<T>,
    val: &ConditionedBatch<T>,
) -> Result<TrainReport<T>> {
    train_observed(cfg, mdn_cfg, dataset, val, |_| {})
}

/// [`train`] with a callback after every epoch.
pub fn train_observed<T: Real>(
    cfg: &TrainConfig,
    mdn_cfg: &MdnConfig,
    dataset: &ConditionedBatch<T>,
    val: &ConditionedBatch<T>,
    mut observe: impl FnMut(&EpochSummary),
) -> Result<TrainReport<T>> {
    cfg.validate()?;
    let mut mdn = Mdn::new(mdn_cfg.clone(), cfg.seed)?;
    if dataset.is_empty() {
        return Err(MdnError::InvalidInput("training set is empty".into()));
    }
    for b in [dataset, val] {
        if b.x_dim() != mdn_cfg.n {
            return Err(MdnError::shape("data dimension", mdn_cfg.n, b.x_dim()));
        }
        if b.y_dim() != mdn_cfg.m {
            return Err(MdnError::shape("condition dimension", mdn_cfg.m, b.y_dim()));
        }
    }

    let hyper = cfg.hyper();
    let clip = T::lit(cfg.clip_norm);
    let mut state = AdamState::new(&mdn.params);
    let mut shuffle = stream_rng(cfg.seed, SHUFFLE_STREAM);
    let mut order: Vec<usize> = (0..dataset.len()).collect();

    let mut report = TrainReport {
        train_loss: Vec::with_capacity(cfg.epochs),
        loss_kind: Vec::with_capacity(cfg.epochs),
        val_nll: Vec::new(),
        epoch_seconds: Vec::with_capacity(cfg.epochs),
        seed: cfg.seed,
        epochs: cfg.epochs,
        config: ReportConfig {
            mdn: mdn_cfg.clone(),
            train: cfg.clone(),
        },
        model: mdn.clone(),
    };

    for epoch in 0..cfg.epochs {
        let started = Instant::now();
        let kind = cfg.loss_for_epoch(epoch);
        order.shuffle(&mut shuffle);
        let mut sum = 0.0f64;
        for (batch, idx) in order.chunks(cfg.batch_size).enumerate() {
            let mut step = mdn.loss_and_gradient(dataset, idx, kind)?;
            let loss = step.loss.total.to_f64_lossy();
            if !loss.is_finite() {
                return Err(MdnError::Diverged { epoch, batch });
            }
            sum += loss * idx.len() as f64;
            clip_global_norm(&mut step.grads, clip);
            adam_step(&mut mdn.params, &step.grads, &mut state, &hyper)?;
        }
        let train_loss = sum / dataset.len() as f64;
        let val_nll = if val.is_empty() {
            None
        } else {
            Some(mdn.mean_nll(val)?.to_f64_lossy())
        };
        let seconds = started.elapsed().as_secs_f64();
        report.train_loss.push(train_loss);
        report.loss_kind.push(kind);
        report.epoch_seconds.push(seconds);
        if let Some(v) = val_nll {
            report.val_nll.push(v);
        }
        observe(&EpochSummary {
            epoch,
            loss_kind: kind,
            train_loss,
            val_nll,
            seconds,
        });
    }
    report.model = mdn;
    Ok(report)
}
