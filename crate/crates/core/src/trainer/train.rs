//! Deterministic minibatch training: Adam on mean squared error with
//! epoch-level early stopping on validation loss.

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Adam, AdamConfig, Tape};
use crate::dataset::{Split, WindowedDataset};
use crate::error::{Error, Result};
use crate::model::Forecaster;
use crate::rng::stream;
use crate::surgery::EvalMods;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    /// Consecutive non-improving validation epochs tolerated before training
    /// stops. Zero disables early stopping.
    pub patience: usize,
    /// A validation improvement smaller than this does not reset patience.
    pub min_delta: f64,
    /// Optional global-norm gradient clip; off by default so gradient checks
    /// see the raw gradients.
    pub grad_clip: Option<f64>,
    pub seed: u64,
    /// Fit against each window's normalized targets (the usual pairing with
    /// window normalization). When normalization is off the two scales
    /// coincide.
    pub loss_on_normalized: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            batch_size: 64,
            adam: AdamConfig::default(),
            patience: 5,
            min_delta: 0.0,
            grad_clip: None,
            seed: 0,
            loss_on_normalized: true,
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_mse: f64,
    pub val_mse: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_mse: f64,
    pub stopped_early: bool,
}

impl TrainOutcome {
    pub fn val_history(&self) -> Vec<f64> {
        self.history.iter().map(|r| r.val_mse).collect()
    }
}

/// Stack `indices`' samples into one (B*C x L) input and (B*C x H) target.
fn gather(
    data: &WindowedDataset,
    split: Split,
    indices: &[usize],
    normalized: bool,
) -> (Vec<f64>, Vec<f64>, usize) {
    let c = data.channels();
    let (l, h) = (data.spec().lookback, data.spec().horizon);
    let mut input = Vec::with_capacity(indices.len() * c * l);
    let mut target = Vec::with_capacity(indices.len() * c * h);
    for &i in indices {
        let s = data.sample(split, i);
        input.extend_from_slice(&s.input);
        target.extend_from_slice(if normalized { &s.target_norm } else { &s.target_raw });
    }
    (input, target, indices.len() * c)
}

/// Mean squared error of the model over a whole split, on the training
/// scale, without touching parameters.
fn split_loss<M: Forecaster>(
    model: &M,
    data: &WindowedDataset,
    split: Split,
    batch_size: usize,
    normalized: bool,
    noise: &mut ChaCha8Rng,
) -> Result<f64> {
    let n = data.len(split);
    let mut sum = 0.0;
    let mut elems = 0usize;
    let indices: Vec<usize> = (0..n).collect();
    for batch in indices.chunks(batch_size) {
        let (input, target, rows) = gather(data, split, batch, normalized);
        let mut tape = Tape::new();
        let bound = model.params().bind(&mut tape, false);
        let x = tape.leaf(input, rows, data.spec().lookback)?;
        let y = tape.leaf(target, rows, data.spec().horizon)?;
        let pred = model.forward(&mut tape, &bound, x, &EvalMods::none(), noise, None)?;
        let loss = tape.mse(pred, y)?;
        let count = rows * data.spec().horizon;
        sum += tape.data(loss)[0] * count as f64;
        elems += count;
    }
    Ok(sum / elems as f64)
}

/// Fit `model` to the train split, tracking validation MSE each epoch. The
/// model is left holding the best-validation parameters seen, so early
/// stopping never returns a model worse than the best epoch. With an empty
/// validation split the epoch's training loss stands in as the signal.
pub fn train<M: Forecaster>(
    model: &mut M,
    data: &WindowedDataset,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    if cfg.batch_size == 0 {
        return Err(Error::InvalidArg("batch_size must be positive".into()));
    }
    if data.is_empty(Split::Train) {
        return Err(Error::InvalidArg("training split is empty".into()));
    }
    let spec = data.spec();
    if spec.lookback != model.lookback()
        || spec.horizon != model.horizon()
        || data.channels() != model.channels()
    {
        return Err(Error::InvalidArg(format!(
            "dataset geometry (L={}, H={}, C={}) does not match the model (L={}, H={}, C={})",
            spec.lookback,
            spec.horizon,
            data.channels(),
            model.lookback(),
            model.horizon(),
            model.channels()
        )));
    }

    let normalized = cfg.loss_on_normalized;
    let mut noise = stream(cfg.seed, "train-noise");
    let has_val = !data.is_empty(Split::Val);

    if cfg.epochs == 0 {
        let best_val_mse = if has_val {
            split_loss(model, data, Split::Val, cfg.batch_size, normalized, &mut noise)?
        } else {
            f64::INFINITY
        };
        return Ok(TrainOutcome {
            history: Vec::new(),
            best_epoch: 0,
            best_val_mse,
            stopped_early: false,
        });
    }

    let mut adam = Adam::new(cfg.adam, model.params());
    let mut shuffle_rng = stream(cfg.seed, "shuffle");
    let mut order: Vec<usize> = (0..data.len(Split::Train)).collect();

    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best_val = f64::INFINITY;
    let mut best_epoch = 0usize;
    let mut best_params = model.params().clone();
    let mut bad_streak = 0usize;
    let mut stopped_early = false;

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut train_sum = 0.0;
        let mut train_elems = 0usize;
        for (step, batch) in order.chunks(cfg.batch_size).enumerate() {
            let (input, target, rows) = gather(data, Split::Train, batch, normalized);
            let mut tape = Tape::new();
            let bound = model.params().bind(&mut tape, true);
            let x = tape.leaf(input, rows, spec.lookback)?;
            let y = tape.leaf(target, rows, spec.horizon)?;
            let pred = model.forward(&mut tape, &bound, x, &EvalMods::none(), &mut noise, None)?;
            let loss = tape.mse(pred, y)?;
            let lval = tape.data(loss)[0];
            if !lval.is_finite() {
                return Err(Error::non_finite(format!(
                    "training loss at epoch {epoch}, step {step}"
                )));
            }
            tape.backward(loss)?;
            let mut grads = tape.take_grads(bound.ids());
            if let Some(limit) = cfg.grad_clip {
                clip_global_norm(&mut grads, limit);
            }
            adam.apply(model.params_mut(), &grads)?;
            let count = rows * spec.horizon;
            train_sum += lval * count as f64;
            train_elems += count;
        }
        let train_mse = train_sum / train_elems as f64;
        let val_mse = if has_val {
            split_loss(model, data, Split::Val, cfg.batch_size, normalized, &mut noise)?
        } else {
            train_mse
        };
        history.push(EpochRecord { epoch, train_mse, val_mse });

        if val_mse < best_val - cfg.min_delta {
            best_val = val_mse;
            best_epoch = epoch;
            best_params = model.params().clone();
            bad_streak = 0;
        } else {
            bad_streak += 1;
            if cfg.patience > 0 && bad_streak >= cfg.patience {
                stopped_early = true;
                break;
            }
        }
    }

    *model.params_mut() = best_params;
    Ok(TrainOutcome {
        history,
        best_epoch,
        best_val_mse: best_val,
        stopped_early,
    })
}

/// Scale every gradient so their joint L2 norm does not exceed `limit`.
fn clip_global_norm(grads: &mut [Option<Vec<f64>>], limit: f64) {
    let sq: f64 = grads
        .iter()
        .flatten()
        .flat_map(|g| g.iter())
        .map(|&v| v * v)
        .sum();
    let norm = sq.sqrt();
    if norm > limit {
        let scale = limit / norm;
        for g in grads.iter_mut().flatten() {
            for v in g.iter_mut() {
                *v *= scale;
            }
        }
    }
}

/// Write the epoch history as CSV with columns epoch, train_mse, val_mse.
pub fn export_history(history: &[EpochRecord], path: impl AsRef<std::path::Path>) -> Result<()> {
    let path = path.as_ref();
    let display = path.display().to_string();
    let fail = |e: csv::Error| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::FileFormat { path: display.clone(), message: format!("{other:?}") },
    };
    let mut w = csv::Writer::from_path(path).map_err(fail)?;
    w.write_record(["epoch", "train_mse", "val_mse"]).map_err(fail)?;
    for r in history {
        w.write_record([r.epoch.to_string(), r.train_mse.to_string(), r.val_mse.to_string()])
            .map_err(fail)?;
    }
    w.flush()?;
    Ok(())
}
