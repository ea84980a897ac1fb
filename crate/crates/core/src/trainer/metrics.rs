//! Forecast quality metrics on the raw data scale: MSE, MAE, and mean
//! directional accuracy.
//!
//! MDA counts a (step, channel) prediction as a hit when the forecast moves
//! in the same direction as the truth relative to the previous ground-truth
//! value (the last input value at the first horizon step). Zero moves count
//! as a hit only when both sides are exactly zero.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::dataset::{Split, WindowedDataset};
use crate::error::{Error, Result};
use crate::model::Forecaster;
use crate::surgery::EvalMods;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    pub mse: f64,
    pub mae: f64,
    pub mda: f64,
    /// Number of windows evaluated.
    pub count: usize,
}

/// Strict sign agreement; zeros only match zeros.
fn same_direction(a: f64, b: f64) -> bool {
    (a == 0.0 && b == 0.0) || (a > 0.0 && b > 0.0) || (a < 0.0 && b < 0.0)
}

#[derive(Default)]
struct Accum {
    se: f64,
    ae: f64,
    hits: usize,
    terms: usize,
    samples: usize,
}

impl Accum {
    /// Fold in one channel's horizon: raw-scale prediction and truth plus
    /// the channel's last input value.
    fn update_row(&mut self, pred: &[f64], target: &[f64], last_input: f64) {
        let mut y_ref = last_input;
        for (&p, &y) in pred.iter().zip(target) {
            let e = p - y;
            self.se += e * e;
            self.ae += e.abs();
            if same_direction(p - y_ref, y - y_ref) {
                self.hits += 1;
            }
            self.terms += 1;
            y_ref = y;
        }
    }

    fn finish(self) -> MetricSet {
        let n = self.terms as f64;
        MetricSet {
            mse: self.se / n,
            mae: self.ae / n,
            mda: self.hits as f64 / n,
            count: self.samples,
        }
    }
}

/// Evaluate a split on the raw data scale. With `predictions_normalized`
/// each window's stats map the forecast back to raw units (identity when
/// normalization is off); pass false for models fit directly on raw targets.
pub fn evaluate<M: Forecaster>(
    model: &M,
    data: &WindowedDataset,
    split: Split,
    batch_size: usize,
    predictions_normalized: bool,
    mods: &EvalMods,
    noise: &mut ChaCha8Rng,
) -> Result<MetricSet> {
    if batch_size == 0 {
        return Err(Error::InvalidArg("batch_size must be positive".into()));
    }
    let n = data.len(split);
    if n == 0 {
        return Err(Error::InvalidArg(format!("cannot evaluate empty split {split:?}")));
    }
    let c = data.channels();
    let (l, h) = (data.spec().lookback, data.spec().horizon);
    let mut acc = Accum::default();
    let indices: Vec<usize> = (0..n).collect();
    for batch in indices.chunks(batch_size) {
        let samples: Vec<_> = batch.iter().map(|&i| data.sample(split, i)).collect();
        let mut input = Vec::with_capacity(samples.len() * c * l);
        for s in &samples {
            input.extend_from_slice(&s.input);
        }
        let mut tape = Tape::new();
        let bound = model.params().bind(&mut tape, false);
        let x = tape.leaf(input, samples.len() * c, l)?;
        let out = model.forward(&mut tape, &bound, x, mods, noise, None)?;
        let pred = tape.data(out);
        for (j, s) in samples.iter().enumerate() {
            for ch in 0..c {
                let row = &pred[(j * c + ch) * h..(j * c + ch + 1) * h];
                let raw: Vec<f64> = if predictions_normalized {
                    row.iter().map(|&v| v * s.std[ch] + s.mean[ch]).collect()
                } else {
                    row.to_vec()
                };
                acc.update_row(&raw, &s.target_raw[ch * h..(ch + 1) * h], s.last_input_raw[ch]);
            }
            acc.samples += 1;
        }
    }
    Ok(acc.finish())
}
