//! Distribution of predicted event amplitudes, grouped by the true next
//! state: for each test window, the first complete event inside the horizon
//! is decoded from the forecast with the amplitude oracle and binned against
//! the state the series actually visited.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::dataset::{LabeledSeries, Split, StateMachine, ToySeriesConfig, WindowedDataset,
    extract_event_amplitude};
use crate::error::{Error, Result};
use crate::model::Forecaster;
use crate::surgery::EvalMods;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensityBins {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
}

impl Default for DensityBins {
    fn default() -> Self {
        DensityBins { lo: -1.0, hi: 4.0, n: 50 }
    }
}

impl DensityBins {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || !(self.lo < self.hi) {
            return Err(Error::InvalidArg(format!(
                "density bins need lo < hi and n > 0, got [{}, {}) x {}",
                self.lo, self.hi, self.n
            )));
        }
        Ok(())
    }

    /// Bin index for an amplitude; out-of-range values land in the end bins
    /// so every sample is counted.
    pub fn index(&self, value: f64) -> usize {
        let w = (self.hi - self.lo) / self.n as f64;
        let raw = ((value - self.lo) / w).floor();
        (raw.max(0.0) as usize).min(self.n - 1)
    }

    pub fn center(&self, bin: usize) -> f64 {
        let w = (self.hi - self.lo) / self.n as f64;
        self.lo + (bin as f64 + 0.5) * w
    }
}

/// Histogram of decoded forecast amplitudes for windows whose true next
/// state is `state`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StateDensity {
    pub state: usize,
    /// The state's true amplitude level.
    pub level: f64,
    pub bins: DensityBins,
    pub counts: Vec<usize>,
    pub total: usize,
    pub mean: f64,
    /// Center of the fullest bin (NaN when the state was never visited).
    pub mode_amplitude: f64,
    /// Set when the mode sits further than half a level from the truth.
    pub degenerate: bool,
}

/// Bin decoded amplitudes by true next state. `forecasts` pairs each
/// window's origin (absolute step of its first horizon point) with its
/// raw-scale forecast values.
pub fn state_density_from_forecasts(
    forecasts: &[(usize, Vec<f64>)],
    labels: &LabeledSeries,
    toy: &ToySeriesConfig,
    machine: &StateMachine,
    bins: &DensityBins,
) -> Result<Vec<StateDensity>> {
    bins.validate()?;
    let span = toy.event_span();
    let horizon = forecasts.first().map(|(_, f)| f.len()).unwrap_or(0);
    if horizon < toy.event_period + span - 1 {
        return Err(Error::InvalidArg(format!(
            "horizon {horizon} cannot always contain a complete event (need {})",
            toy.event_period + span - 1
        )));
    }
    let n_states = machine.n_states();
    let mut counts = vec![vec![0usize; bins.n]; n_states];
    let mut sums = vec![0.0; n_states];
    let mut totals = vec![0usize; n_states];

    for (origin, forecast) in forecasts {
        // First labeled event fully inside [origin, origin + horizon).
        let next = labels
            .event_start_indices
            .iter()
            .copied()
            .enumerate()
            .find(|&(_, ev)| ev >= *origin && ev + span <= origin + forecast.len());
        let Some((k, ev)) = next else {
            return Err(Error::InvalidArg(format!(
                "no complete labeled event inside horizon starting at {origin}"
            )));
        };
        let state = labels.event_states[k];
        let amp = extract_event_amplitude(forecast, *origin, toy, ev)?;
        counts[state][bins.index(amp)] += 1;
        sums[state] += amp;
        totals[state] += 1;
    }

    Ok((0..n_states)
        .map(|s| {
            let total = totals[s];
            let (mode_amplitude, degenerate) = if total == 0 {
                (f64::NAN, false)
            } else {
                let best = counts[s]
                    .iter()
                    .enumerate()
                    .max_by_key(|&(_, &c)| c)
                    .map(|(b, _)| b)
                    .unwrap();
                let mode = bins.center(best);
                (mode, (mode - machine.levels[s]).abs() > 0.5)
            };
            StateDensity {
                state: s,
                level: machine.levels[s],
                bins: *bins,
                counts: counts[s].clone(),
                total,
                mean: if total == 0 { f64::NAN } else { sums[s] / total as f64 },
                mode_amplitude,
                degenerate,
            }
        })
        .collect())
}

/// Run the model over a split and bin its decoded amplitude predictions by
/// true next state.
#[allow(clippy::too_many_arguments)]
pub fn predicted_state_density<M: Forecaster>(
    model: &M,
    data: &WindowedDataset,
    labels: &LabeledSeries,
    toy: &ToySeriesConfig,
    machine: &StateMachine,
    split: Split,
    batch_size: usize,
    predictions_normalized: bool,
    mods: &EvalMods,
    noise: &mut ChaCha8Rng,
    bins: &DensityBins,
) -> Result<Vec<StateDensity>> {
    let forecasts = model_forecasts(model, data, split, batch_size, predictions_normalized, mods, noise)?;
    state_density_from_forecasts(&forecasts, labels, toy, machine, bins)
}

/// Raw-scale forecasts for every window of a split, paired with origins.
/// Single-channel data only; the toy series has one channel.
pub fn model_forecasts<M: Forecaster>(
    model: &M,
    data: &WindowedDataset,
    split: Split,
    batch_size: usize,
    predictions_normalized: bool,
    mods: &EvalMods,
    noise: &mut ChaCha8Rng,
) -> Result<Vec<(usize, Vec<f64>)>> {
    if data.channels() != 1 {
        return Err(Error::Unsupported(
            "amplitude decoding is defined for single-channel series".into(),
        ));
    }
    if batch_size == 0 {
        return Err(Error::InvalidArg("batch_size must be positive".into()));
    }
    let n = data.len(split);
    if n == 0 {
        return Err(Error::InvalidArg(format!("cannot forecast empty split {split:?}")));
    }
    let (l, h) = (data.spec().lookback, data.spec().horizon);
    let mut out = Vec::with_capacity(n);
    let indices: Vec<usize> = (0..n).collect();
    for batch in indices.chunks(batch_size) {
        let samples: Vec<_> = batch.iter().map(|&i| data.sample(split, i)).collect();
        let mut input = Vec::with_capacity(samples.len() * l);
        for s in &samples {
            input.extend_from_slice(&s.input);
        }
        let mut tape = Tape::new();
        let bound = model.params().bind(&mut tape, false);
        let x = tape.leaf(input, samples.len(), l)?;
        let pred_id = model.forward(&mut tape, &bound, x, mods, noise, None)?;
        let pred = tape.data(pred_id);
        for (j, s) in samples.iter().enumerate() {
            let row = &pred[j * h..(j + 1) * h];
            let raw: Vec<f64> = if predictions_normalized {
                row.iter().map(|&v| v * s.std[0] + s.mean[0]).collect()
            } else {
                row.to_vec()
            };
            out.push((s.origin, raw));
        }
    }
    Ok(out)
}
