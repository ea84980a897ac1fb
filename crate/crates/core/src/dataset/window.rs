//! Sliding-window supervision: stride-1 (lookback, horizon) pairs split
//! chronologically into train/val/test by window counts, with optional
//! per-window z-score normalization.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WindowSpec {
    pub lookback: usize,
    pub horizon: usize,
    /// Fractions over the window universe; must sum to 1.
    pub train_frac: f64,
    pub val_frac: f64,
    pub test_frac: f64,
    /// Per-window per-channel z-score over the input region.
    pub normalize: bool,
}

impl Default for WindowSpec {
    fn default() -> Self {
        WindowSpec {
            lookback: 336,
            horizon: 96,
            train_frac: 0.7,
            val_frac: 0.1,
            test_frac: 0.2,
            normalize: false,
        }
    }
}

impl WindowSpec {
    pub fn validate(&self) -> Result<()> {
        if self.lookback == 0 || self.horizon == 0 {
            return Err(Error::InvalidArg("lookback and horizon must be positive".into()));
        }
        let fr = [self.train_frac, self.val_frac, self.test_frac];
        if fr.iter().any(|&f| !(0.0..=1.0).contains(&f)) {
            return Err(Error::InvalidArg(format!("split fractions {fr:?} outside [0,1]")));
        }
        let sum: f64 = fr.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArg(format!("split fractions {fr:?} sum to {sum}, expected 1")));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

/// One supervised window in per-channel row layout: `input` is (C x L),
/// `target_*` are (C x H). `mean`/`std` hold the de-normalization stats
/// (identity when normalization is off).
#[derive(Clone, Debug)]
pub struct Sample {
    pub input: Vec<f64>,
    pub target_norm: Vec<f64>,
    pub target_raw: Vec<f64>,
    /// Raw last input value per channel; the first-step reference for MDA.
    pub last_input_raw: Vec<f64>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Forecast origin: absolute step of the first horizon point.
    pub origin: usize,
}

/// Windowed view over a time-major series (`values[t * channels + c]`).
#[derive(Clone, Debug)]
pub struct WindowedDataset {
    values: Vec<f64>,
    channels: usize,
    spec: WindowSpec,
    n_train: usize,
    n_val: usize,
    n_total: usize,
}

impl WindowedDataset {
    pub fn new(values: Vec<f64>, channels: usize, spec: WindowSpec) -> Result<Self> {
        spec.validate()?;
        if channels == 0 || values.len() % channels != 0 {
            return Err(Error::InvalidArg(format!(
                "{} values do not form whole rows of {channels} channels",
                values.len()
            )));
        }
        let rows = values.len() / channels;
        let need = spec.lookback + spec.horizon;
        if rows < need {
            return Err(Error::InvalidArg(format!(
                "series of {rows} steps is shorter than lookback {} + horizon {}",
                spec.lookback, spec.horizon
            )));
        }
        let n_total = rows - need + 1;
        let n_train = (spec.train_frac * n_total as f64).floor() as usize;
        let n_val = (spec.val_frac * n_total as f64).floor() as usize;
        Ok(WindowedDataset {
            values,
            channels,
            spec,
            n_train,
            n_val,
            n_total,
        })
    }

    pub fn spec(&self) -> &WindowSpec {
        &self.spec
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn window_universe(&self) -> usize {
        self.n_total
    }

    pub fn len(&self, split: Split) -> usize {
        match split {
            Split::Train => self.n_train,
            Split::Val => self.n_val,
            Split::Test => self.n_total - self.n_train - self.n_val,
        }
    }

    pub fn is_empty(&self, split: Split) -> bool {
        self.len(split) == 0
    }

    /// Window start step of sample `i` of `split`.
    pub fn start_of(&self, split: Split, i: usize) -> usize {
        let base = match split {
            Split::Train => 0,
            Split::Val => self.n_train,
            Split::Test => self.n_train + self.n_val,
        };
        base + i
    }

    pub fn sample(&self, split: Split, i: usize) -> Sample {
        assert!(i < self.len(split), "sample index out of range");
        let s = self.start_of(split, i);
        let (l, h, c) = (self.spec.lookback, self.spec.horizon, self.channels);
        let mut input = vec![0.0; c * l];
        let mut target_raw = vec![0.0; c * h];
        let mut last_input_raw = vec![0.0; c];
        for ch in 0..c {
            for t in 0..l {
                input[ch * l + t] = self.values[(s + t) * c + ch];
            }
            for t in 0..h {
                target_raw[ch * h + t] = self.values[(s + l + t) * c + ch];
            }
            last_input_raw[ch] = input[ch * l + l - 1];
        }
        let (mut mean, mut std) = (vec![0.0; c], vec![1.0; c]);
        let mut target_norm = target_raw.clone();
        if self.spec.normalize {
            for ch in 0..c {
                let row = &mut input[ch * l..(ch + 1) * l];
                let m = row.iter().sum::<f64>() / l as f64;
                let var = row.iter().map(|&v| (v - m) * (v - m)).sum::<f64>() / l as f64;
                // Constant windows keep scale 1 so normalization stays invertible.
                let sd = if var.sqrt() > 1e-8 { var.sqrt() } else { 1.0 };
                for v in row.iter_mut() {
                    *v = (*v - m) / sd;
                }
                for v in target_norm[ch * h..(ch + 1) * h].iter_mut() {
                    *v = (*v - m) / sd;
                }
                mean[ch] = m;
                std[ch] = sd;
            }
        }
        Sample {
            input,
            target_norm,
            target_raw,
            last_input_raw,
            mean,
            std,
            origin: s + l,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(rows: usize, channels: usize) -> Vec<f64> {
        (0..rows * channels).map(|i| i as f64 * 0.5).collect()
    }

    #[test]
    fn window_count_matches_formula() {
        let spec = WindowSpec::default();
        let d = WindowedDataset::new(ramp(1000, 1), 1, spec).unwrap();
        assert_eq!(d.window_universe(), 569);
        let total = d.len(Split::Train) + d.len(Split::Val) + d.len(Split::Test);
        assert_eq!(total, 569);
        assert_eq!(d.len(Split::Train), (0.7f64 * 569.0).floor() as usize);
    }

    #[test]
    fn boundary_length_gives_exactly_one_sample() {
        let spec = WindowSpec::default();
        let d = WindowedDataset::new(ramp(336 + 96, 1), 1, spec).unwrap();
        assert_eq!(d.window_universe(), 1);
        assert_eq!(
            d.len(Split::Train) + d.len(Split::Val) + d.len(Split::Test),
            1
        );
    }

    #[test]
    fn too_short_series_is_rejected() {
        let spec = WindowSpec::default();
        assert!(WindowedDataset::new(ramp(431, 1), 1, spec).is_err());
    }

    #[test]
    fn split_target_regions_are_disjoint_and_chronological() {
        let spec = WindowSpec {
            lookback: 8,
            horizon: 4,
            ..WindowSpec::default()
        };
        let d = WindowedDataset::new(ramp(100, 1), 1, spec).unwrap();
        let mut seen = std::collections::HashSet::new();
        let mut last_origin = 0;
        for split in [Split::Train, Split::Val, Split::Test] {
            for i in 0..d.len(split) {
                let s = d.sample(split, i);
                assert!(seen.insert(s.origin), "origin {} reused", s.origin);
                assert!(s.origin >= last_origin);
                last_origin = s.origin;
            }
        }
    }

    #[test]
    fn normalization_round_trips_and_standardizes() {
        let spec = WindowSpec {
            lookback: 16,
            horizon: 4,
            normalize: true,
            ..WindowSpec::default()
        };
        let values: Vec<f64> = (0..300).map(|i| (i as f64 * 0.37).sin() * 3.0 + 5.0).collect();
        let d = WindowedDataset::new(values.clone(), 1, spec).unwrap();
        let s = d.sample(Split::Train, 3);
        let l = 16;
        let mean = s.input.iter().sum::<f64>() / l as f64;
        let var = s.input.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / l as f64;
        assert!(mean.abs() < 1e-9, "mean {mean}");
        assert!((var - 1.0).abs() < 1e-9, "var {var}");
        // De-normalization reproduces the raw series.
        let start = d.start_of(Split::Train, 3);
        for t in 0..l {
            let raw = s.input[t] * s.std[0] + s.mean[0];
            assert!((raw - values[start + t]).abs() < 1e-9);
        }
        // Targets share the input stats.
        for t in 0..4 {
            let raw = s.target_norm[t] * s.std[0] + s.mean[0];
            assert!((raw - s.target_raw[t]).abs() < 1e-9);
        }
    }

    #[test]
    fn multichannel_layout_is_per_channel_rows() {
        let spec = WindowSpec {
            lookback: 3,
            horizon: 2,
            ..WindowSpec::default()
        };
        // Two channels: channel 0 counts up, channel 1 counts down.
        let rows = 40;
        let mut values = Vec::new();
        for t in 0..rows {
            values.push(t as f64);
            values.push(-(t as f64));
        }
        let d = WindowedDataset::new(values, 2, spec).unwrap();
        let s = d.sample(Split::Train, 0);
        assert_eq!(s.input, [0.0, 1.0, 2.0, 0.0, -1.0, -2.0]);
        assert_eq!(s.target_raw, [3.0, 4.0, -3.0, -4.0]);
        assert_eq!(s.last_input_raw, [2.0, -2.0]);
        assert_eq!(s.origin, 3);
    }
}
