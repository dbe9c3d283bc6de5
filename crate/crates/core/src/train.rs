//! Minibatch training with best-epoch early stopping.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Model;
use crate::preprocess::{build_batches, trim_random_end, LabeledSequence, PaddedBatch};
use crate::tensorcore::{masked_mse_loss, Mode, Param};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    #[default]
    Adam,
    Sgd,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub val_fraction: f64,
    pub optimizer: OptimizerKind,
    pub grad_clip: Option<f64>,
    pub retrim_each_epoch: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 8,
            learning_rate: 0.01,
            max_epochs: 1000,
            patience: 40,
            seed: 0,
            val_fraction: 0.1,
            optimizer: OptimizerKind::Adam,
            grad_clip: None,
            retrim_each_epoch: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Validation(format!("TrainConfig: {m}")));
        if self.batch_size == 0 {
            return fail("batch_size must be at least 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail("learning_rate must be positive");
        }
        if self.max_epochs == 0 {
            return fail("max_epochs must be at least 1");
        }
        if self.patience == 0 {
            return fail("patience must be at least 1");
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 0.5) {
            return fail("val_fraction must be in (0, 0.5)");
        }
        if matches!(self.grad_clip, Some(c) if !(c > 0.0)) {
            return fail("grad_clip must be positive");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub train_loss_curve: Vec<f64>,
    pub val_loss_curve: Vec<f64>,
    pub stopped_early: bool,
}

/// One row of the per-epoch log.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub seconds: f64,
}

/// Splits whole engines into train and validation sets.
///
/// The validation set gets `round(n * val_fraction)` engines, at least one,
/// and at least one engine stays in training. Both halves keep input order.
pub fn split_train_val<T: Clone>(items: &[T], val_fraction: f64, seed: u64) -> Result<(Vec<T>, Vec<T>)> {
    if items.len() < 2 {
        return Err(Error::Validation(format!(
            "need at least 2 engines to split off a validation set, got {}",
            items.len()
        )));
    }
    if !(val_fraction > 0.0 && val_fraction < 1.0) {
        return Err(Error::Validation(format!("val_fraction {val_fraction} outside (0, 1)")));
    }
    let n = items.len();
    let n_val = ((n as f64 * val_fraction).round() as usize).clamp(1, n - 1);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut is_val = vec![false; n];
    for &i in &order[..n_val] {
        is_val[i] = true;
    }
    let pick = |want: bool| items.iter().zip(&is_val).filter(|(_, &v)| v == want).map(|(x, _)| x.clone()).collect();
    Ok((pick(false), pick(true)))
}

/// Scales all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(params: &mut [(String, &mut Param)], max_norm: f64) -> f64 {
    let norm = params.iter().map(|(_, p)| p.grad.sum_squares()).sum::<f64>().sqrt();
    if norm > max_norm {
        let scale = max_norm / norm;
        for (_, p) in params.iter_mut() {
            p.grad.data_mut().iter_mut().for_each(|g| *g *= scale);
        }
    }
    norm
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Adam or plain SGD over an ordered parameter list.
#[derive(Clone, Debug)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    grad_clip: Option<f64>,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, grad_clip: Option<f64>) -> Self {
        Optimizer {
            kind,
            lr,
            grad_clip,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn from_config(cfg: &TrainConfig) -> Self {
        Self::new(cfg.optimizer, cfg.learning_rate, cfg.grad_clip)
    }

    /// Applies one update using the gradients stored in `params`.
    pub fn step(&mut self, params: &mut [(String, &mut Param)]) {
        if let Some(max_norm) = self.grad_clip {
            clip_global_norm(params, max_norm);
        }
        match self.kind {
            OptimizerKind::Sgd => {
                for (_, p) in params.iter_mut() {
                    let Param { value, grad } = &mut **p;
                    for (w, g) in value.data_mut().iter_mut().zip(grad.data()) {
                        *w -= self.lr * g;
                    }
                }
            }
            OptimizerKind::Adam => {
                if self.first.is_empty() {
                    self.first = params.iter().map(|(_, p)| vec![0.0; p.numel()]).collect();
                    self.second = self.first.clone();
                }
                self.step += 1;
                let bc1 = 1.0 - ADAM_BETA1.powi(self.step as i32);
                let bc2 = 1.0 - ADAM_BETA2.powi(self.step as i32);
                for (i, (_, p)) in params.iter_mut().enumerate() {
                    let Param { value, grad } = &mut **p;
                    let (m, v) = (&mut self.first[i], &mut self.second[i]);
                    for (j, (w, &g)) in value.data_mut().iter_mut().zip(grad.data()).enumerate() {
                        m[j] = ADAM_BETA1 * m[j] + (1.0 - ADAM_BETA1) * g;
                        v[j] = ADAM_BETA2 * v[j] + (1.0 - ADAM_BETA2) * g * g;
                        let m_hat = m[j] / bc1;
                        let v_hat = v[j] / bc2;
                        *w -= self.lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
                    }
                }
            }
        }
    }
}

/// Tracks the best validation loss and the epochs since it last improved.
#[derive(Clone, Debug)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    best_epoch: usize,
    since_best: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StopDecision {
    pub improved: bool,
    pub stop: bool,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best: f64::INFINITY,
            best_epoch: 0,
            since_best: 0,
        }
    }

    /// Records the validation loss of `epoch` (1-based).
    pub fn observe(&mut self, epoch: usize, val_loss: f64) -> StopDecision {
        if val_loss < self.best {
            self.best = val_loss;
            self.best_epoch = epoch;
            self.since_best = 0;
            StopDecision {
                improved: true,
                stop: false,
            }
        } else {
            self.since_best += 1;
            StopDecision {
                improved: false,
                stop: self.since_best >= self.patience,
            }
        }
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    pub fn best(&self) -> f64 {
        self.best
    }
}

/// Loss over the supervised positions of a set of sequences, in eval mode.
pub fn evaluate_loss(model: &Model, seqs: &[LabeledSequence], batch_size: usize) -> Result<f64> {
    let mut sum = 0.0;
    let mut count = 0usize;
    for chunk in seqs.chunks(batch_size.max(1)) {
        let members: Vec<&LabeledSequence> = chunk.iter().collect();
        let batch = PaddedBatch::from_sequences(&members, None)?;
        let pred = model.predict(&batch)?;
        let (loss, _) = masked_mse_loss(&pred, &batch.labels, &batch.loss_mask)?;
        let n = batch.loss_mask.count();
        sum += loss * n as f64;
        count += n;
    }
    if count == 0 {
        return Err(Error::Validation("no supervised positions to evaluate".into()));
    }
    Ok(sum / count as f64)
}

/// One forward/backward/update on a batch; returns the pre-update loss.
pub fn train_step(
    model: &mut Model,
    optimizer: &mut Optimizer,
    batch: &PaddedBatch,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let (pred, tape) = model.forward(batch, Mode::Train, rng)?;
    let (loss, grad) = masked_mse_loss(&pred, &batch.labels, &batch.loss_mask)?;
    if !loss.is_finite() {
        return Err(Error::NonFinite("loss"));
    }
    model.zero_grad();
    model.backward(&tape, &grad)?;
    optimizer.step(&mut model.named_params_mut());
    Ok(loss)
}

/// Trains `model` and returns the snapshot with the lowest validation loss.
///
/// With `retrim_each_epoch`, `train_set` is taken as untrimmed and a fresh
/// random end trim is drawn for every sequence each epoch; otherwise the
/// sequences are used as given. `on_epoch` sees every epoch's record.
pub fn train<F>(
    mut model: Model,
    train_set: &[LabeledSequence],
    val_set: &[LabeledSequence],
    cfg: &TrainConfig,
    mut on_epoch: F,
) -> Result<(Model, TrainReport)>
where
    F: FnMut(&EpochRecord),
{
    cfg.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::Validation("training and validation sets must be non-empty".into()));
    }
    if let Some(s) = train_set.iter().chain(val_set).find(|s| s.n_features != model.config().in_features) {
        return Err(Error::shape("sequence features", model.config().in_features, s.n_features));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut optimizer = Optimizer::from_config(cfg);
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut best = model.clone();
    let mut train_curve = Vec::new();
    let mut val_curve = Vec::new();
    let mut stopped_early = false;

    for epoch in 1..=cfg.max_epochs {
        let started = Instant::now();
        let retrimmed;
        let epoch_set = if cfg.retrim_each_epoch {
            retrimmed = train_set.iter().map(|s| trim_random_end(s, &mut rng)).collect::<Vec<_>>();
            &retrimmed[..]
        } else {
            train_set
        };
        let batches = build_batches(epoch_set, cfg.batch_size, &mut rng)?;
        let (mut sum, mut count) = (0.0, 0usize);
        for (bi, batch) in batches.iter().enumerate() {
            let loss = train_step(&mut model, &mut optimizer, batch, &mut rng).map_err(|e| match e {
                Error::NonFinite(_) => Error::Divergence {
                    epoch,
                    batch: bi + 1,
                    loss: f64::NAN,
                },
                other => other,
            })?;
            let n = batch.loss_mask.count();
            sum += loss * n as f64;
            count += n;
        }
        let train_loss = sum / count as f64;
        let val_loss = evaluate_loss(&model, val_set, cfg.batch_size)?;
        if !val_loss.is_finite() {
            return Err(Error::Divergence {
                epoch,
                batch: batches.len(),
                loss: val_loss,
            });
        }
        train_curve.push(train_loss);
        val_curve.push(val_loss);
        let decision = stopper.observe(epoch, val_loss);
        if decision.improved {
            best = model.clone();
        }
        on_epoch(&EpochRecord {
            epoch,
            train_loss,
            val_loss,
            seconds: started.elapsed().as_secs_f64(),
        });
        log::debug!("epoch {epoch}: train {train_loss:.4} val {val_loss:.4}");
        if decision.stop {
            stopped_early = true;
            break;
        }
    }
    let report = TrainReport {
        epochs_run: train_curve.len(),
        best_epoch: stopper.best_epoch(),
        best_val_loss: stopper.best(),
        train_loss_curve: train_curve,
        val_loss_curve: val_curve,
        stopped_early,
    };
    Ok((best, report))
}
