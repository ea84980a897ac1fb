//! Synthetic labeled series: a sinusoidal carrier, state-machine-driven
//! triangular events, and Gaussian noise. The event amplitudes follow a
//! Markov chain over discrete states, so the series carries ground-truth
//! labels an analysis can check forecasts against.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::stream;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToySeriesConfig {
    pub carrier_amplitude: f64,
    /// Cycles per step.
    pub carrier_frequency: f64,
    pub carrier_phase: f64,
    pub carrier_offset: f64,
    /// Steps between event starts.
    pub event_period: usize,
    /// Event span = event_period / event_duty_ratio.
    pub event_duty_ratio: usize,
    /// Triangle height per unit of state level.
    pub event_amplitude_factor: f64,
    /// First event starts at this step.
    pub event_offset: usize,
    pub noise_sigma: f64,
    pub length: usize,
    pub seed: u64,
}

impl Default for ToySeriesConfig {
    fn default() -> Self {
        ToySeriesConfig {
            carrier_amplitude: 1.0,
            carrier_frequency: 0.01,
            carrier_phase: 0.0,
            carrier_offset: 0.0,
            event_period: 80,
            event_duty_ratio: 8,
            event_amplitude_factor: 0.5,
            event_offset: 0,
            noise_sigma: 0.025,
            length: 2000,
            seed: 0,
        }
    }
}

impl ToySeriesConfig {
    pub fn validate(&self) -> Result<()> {
        if self.event_duty_ratio == 0 || self.event_period % self.event_duty_ratio != 0 {
            return Err(Error::InvalidArg(format!(
                "event_period {} must be a positive multiple of event_duty_ratio {}",
                self.event_period, self.event_duty_ratio
            )));
        }
        if self.noise_sigma < 0.0 {
            return Err(Error::InvalidArg(format!("noise_sigma {} < 0", self.noise_sigma)));
        }
        if self.length < self.event_period {
            return Err(Error::InvalidArg(format!(
                "length {} shorter than one event period {}",
                self.length, self.event_period
            )));
        }
        Ok(())
    }

    pub fn event_span(&self) -> usize {
        self.event_period / self.event_duty_ratio
    }

    pub fn carrier_at(&self, t: usize) -> f64 {
        let tau = 2.0 * std::f64::consts::PI;
        self.carrier_amplitude * (tau * self.carrier_frequency * t as f64 + self.carrier_phase).sin()
            + self.carrier_offset
    }

    /// Integral of one unit-level event (level 1): factor times the discrete
    /// triangle weights summed over the span. 2.5 at the defaults.
    pub fn unit_event_integral(&self) -> f64 {
        let span = self.event_span();
        let total: f64 = (0..span).map(|j| triangle_weight(j, span)).sum();
        self.event_amplitude_factor * total
    }
}

/// Symmetric triangle over `span` samples: linear rise to 1 at span/2, then
/// linear fall. Weight 0 at j=0 so consecutive events never touch.
pub fn triangle_weight(j: usize, span: usize) -> f64 {
    let half = span as f64 / 2.0;
    (1.0 - (j as f64 - half).abs() / half).max(0.0)
}

/// Markov chain over event amplitude levels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StateMachine {
    /// Amplitude level of each state.
    pub levels: Vec<f64>,
    /// Row-stochastic transition matrix, one row per state.
    pub transition: Vec<Vec<f64>>,
    pub initial_state: usize,
    pub rng_seed: u64,
}

impl Default for StateMachine {
    fn default() -> Self {
        // 0 branches to 0 or 1 with equal odds; 1 -> 2 -> 3 -> 0 is
        // deterministic. Stationary distribution [0.4, 0.2, 0.2, 0.2].
        StateMachine {
            levels: vec![0.0, 1.0, 2.0, 3.0],
            transition: vec![
                vec![0.5, 0.5, 0.0, 0.0],
                vec![0.0, 0.0, 1.0, 0.0],
                vec![0.0, 0.0, 0.0, 1.0],
                vec![1.0, 0.0, 0.0, 0.0],
            ],
            initial_state: 0,
            rng_seed: 1,
        }
    }
}

impl StateMachine {
    pub fn validate(&self) -> Result<()> {
        let n = self.levels.len();
        if n == 0 {
            return Err(Error::InvalidArg("state machine has no states".into()));
        }
        if self.transition.len() != n {
            return Err(Error::InvalidArg(format!(
                "transition matrix has {} rows for {} states",
                self.transition.len(),
                n
            )));
        }
        for (i, row) in self.transition.iter().enumerate() {
            if row.len() != n {
                return Err(Error::InvalidArg(format!("transition row {i} has {} entries", row.len())));
            }
            if row.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
                return Err(Error::InvalidArg(format!("transition row {i} has probabilities outside [0,1]")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidArg(format!("transition row {i} sums to {sum}, expected 1")));
            }
        }
        if self.initial_state >= n {
            return Err(Error::InvalidArg(format!("initial_state {} out of range", self.initial_state)));
        }
        Ok(())
    }

    pub fn n_states(&self) -> usize {
        self.levels.len()
    }
}

/// Sample the successor of `current`. Rows with a probability-1 outcome
/// return it without consuming randomness.
pub fn next_state(machine: &StateMachine, current: usize, rng: &mut ChaCha8Rng) -> Result<usize> {
    if current >= machine.n_states() {
        return Err(Error::InvalidArg(format!(
            "state {current} outside the machine's {} states",
            machine.n_states()
        )));
    }
    let row = &machine.transition[current];
    if let Some(det) = row.iter().position(|&p| p == 1.0) {
        return Ok(det);
    }
    let u: f64 = rng.random();
    let mut cum = 0.0;
    for (j, &p) in row.iter().enumerate() {
        cum += p;
        if u < cum {
            return Ok(j);
        }
    }
    // Rounding can leave cum marginally below 1; the tail state absorbs it.
    Ok(row.len() - 1)
}

/// A generated series plus its per-event ground truth.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledSeries {
    pub values: Vec<f64>,
    /// State index of each placed event, in order.
    pub event_states: Vec<usize>,
    /// Step index where each placed event starts.
    pub event_start_indices: Vec<usize>,
}

impl LabeledSeries {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Index into `event_states` of the event starting at `start`, if any.
    pub fn event_at(&self, start: usize) -> Option<usize> {
        self.event_start_indices.binary_search(&start).ok()
    }
}

/// Generate carrier + events + noise. Only events whose full span fits in
/// the series are placed and labeled; the state machine still advances once
/// per period so label streams are seed-stable across length changes.
pub fn generate_toy(config: &ToySeriesConfig, machine: &StateMachine) -> Result<LabeledSeries> {
    config.validate()?;
    machine.validate()?;
    let span = config.event_span();
    let mut values: Vec<f64> = (0..config.length).map(|t| config.carrier_at(t)).collect();

    let mut machine_rng = stream(machine.rng_seed, "toy/machine");
    let mut state = machine.initial_state;
    let mut event_states = Vec::new();
    let mut event_start_indices = Vec::new();
    let mut start = config.event_offset;
    while start + span <= config.length {
        let height = config.event_amplitude_factor * machine.levels[state];
        for j in 0..span {
            values[start + j] += height * triangle_weight(j, span);
        }
        event_states.push(state);
        event_start_indices.push(start);
        state = next_state(machine, state, &mut machine_rng)?;
        start += config.event_period;
    }

    if config.noise_sigma > 0.0 {
        let mut noise_rng = stream(config.seed, "toy/noise");
        for v in values.iter_mut() {
            let z: f64 = noise_rng.sample(StandardNormal);
            *v += config.noise_sigma * z;
        }
    }

    Ok(LabeledSeries {
        values,
        event_states,
        event_start_indices,
    })
}

/// Recover the event's state level from a window of the series (or of a
/// forecast): integrate (window - carrier) over the event span and divide by
/// the unit-state integral. `window_start` is the absolute step of
/// `window[0]`; `event_start` is the absolute step the event starts at.
pub fn extract_event_amplitude(
    window: &[f64],
    window_start: usize,
    config: &ToySeriesConfig,
    event_start: usize,
) -> Result<f64> {
    let span = config.event_span();
    if event_start < window_start || event_start + span > window_start + window.len() {
        return Err(Error::InvalidArg(format!(
            "event span [{event_start}, {}) not contained in window [{window_start}, {})",
            event_start + span,
            window_start + window.len()
        )));
    }
    let mut integral = 0.0;
    for j in 0..span {
        let t = event_start + j;
        integral += window[t - window_start] - config.carrier_at(t);
    }
    Ok(integral / config.unit_event_integral())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn noiseless(length: usize) -> ToySeriesConfig {
        ToySeriesConfig {
            noise_sigma: 0.0,
            length,
            ..ToySeriesConfig::default()
        }
    }

    #[test]
    fn carrier_peak_at_quarter_period() {
        let cfg = noiseless(400);
        let all_zero = StateMachine {
            transition: vec![vec![1.0]],
            levels: vec![0.0],
            initial_state: 0,
            rng_seed: 0,
        };
        let s = generate_toy(&cfg, &all_zero).unwrap();
        // t=25 is a quarter period: sin(2*pi*0.01*25) = 1.
        assert!((s.values[25] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mid_event_peak_adds_half_state() {
        // Force state 2 from the start: every transition leads to state 2.
        let cfg = noiseless(400);
        let machine = StateMachine {
            levels: vec![0.0, 1.0, 2.0, 3.0],
            transition: vec![
                vec![0.0, 0.0, 1.0, 0.0],
                vec![0.0, 0.0, 1.0, 0.0],
                vec![0.0, 0.0, 1.0, 0.0],
                vec![0.0, 0.0, 1.0, 0.0],
            ],
            initial_state: 2,
            rng_seed: 0,
        };
        let s = generate_toy(&cfg, &machine).unwrap();
        let apex = cfg.event_span() / 2;
        let expect = cfg.carrier_at(apex) + 0.5 * 2.0;
        assert!((s.values[apex] - expect).abs() < 1e-12);
    }

    #[test]
    fn deterministic_rows_ignore_rng() {
        let machine = StateMachine::default();
        let mut rng = stream(9, "t");
        assert_eq!(next_state(&machine, 1, &mut rng).unwrap(), 2);
        assert_eq!(next_state(&machine, 2, &mut rng).unwrap(), 3);
        assert_eq!(next_state(&machine, 3, &mut rng).unwrap(), 0);
        // No randomness consumed: the stream is still at its first draw.
        let mut fresh = stream(9, "t");
        let a: f64 = rng.random();
        let b: f64 = fresh.random();
        assert_eq!(a, b);
    }

    #[test]
    fn identity_machine_stays_put() {
        let machine = StateMachine {
            levels: vec![0.0, 1.0],
            transition: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            initial_state: 0,
            rng_seed: 0,
        };
        let mut rng = stream(0, "t");
        assert_eq!(next_state(&machine, 0, &mut rng).unwrap(), 0);
        assert_eq!(next_state(&machine, 1, &mut rng).unwrap(), 1);
    }

    #[test]
    fn unknown_state_is_a_contract_error() {
        let machine = StateMachine::default();
        let mut rng = stream(0, "t");
        assert!(next_state(&machine, 4, &mut rng).is_err());
    }

    #[test]
    fn branching_row_matches_probabilities() {
        let machine = StateMachine::default();
        let mut rng = stream(3, "t");
        let mut ones = 0usize;
        let n = 10_000;
        for _ in 0..n {
            if next_state(&machine, 0, &mut rng).unwrap() == 1 {
                ones += 1;
            }
        }
        let frac = ones as f64 / n as f64;
        assert!((frac - 0.5).abs() < 0.02, "got {frac}");
    }

    #[test]
    fn amplitude_oracle_is_exact_without_noise() {
        let cfg = noiseless(2000);
        let machine = StateMachine::default();
        let s = generate_toy(&cfg, &machine).unwrap();
        assert!(!s.event_states.is_empty());
        for (k, &start) in s.event_start_indices.iter().enumerate() {
            let est = extract_event_amplitude(&s.values, 0, &cfg, start).unwrap();
            let truth = machine.levels[s.event_states[k]];
            assert!((est - truth).abs() < 1e-9, "event {k}: {est} vs {truth}");
        }
    }

    #[test]
    fn amplitude_oracle_rejects_clipped_span() {
        let cfg = noiseless(400);
        let machine = StateMachine::default();
        let s = generate_toy(&cfg, &machine).unwrap();
        // Window starts one step after the event does.
        assert!(extract_event_amplitude(&s.values[1..], 1, &cfg, 0).is_err());
    }

    #[test]
    fn noisy_estimator_is_nearly_unbiased() {
        let machine = StateMachine::default();
        // Enough length for 10^4 events.
        let cfg = ToySeriesConfig {
            length: 80 * 10_000 + 10,
            seed: 11,
            ..ToySeriesConfig::default()
        };
        let s = generate_toy(&cfg, &machine).unwrap();
        assert!(s.event_states.len() >= 10_000);
        let mut err_sum = 0.0;
        for (k, &start) in s.event_start_indices.iter().enumerate() {
            let est = extract_event_amplitude(&s.values, 0, &cfg, start).unwrap();
            err_sum += est - machine.levels[s.event_states[k]];
        }
        let bias = err_sum / s.event_states.len() as f64;
        assert!(bias.abs() < 0.05, "bias {bias}");
    }

    #[test]
    fn generation_is_bitwise_deterministic() {
        let cfg = ToySeriesConfig {
            seed: 5,
            ..ToySeriesConfig::default()
        };
        let machine = StateMachine::default();
        let a = generate_toy(&cfg, &machine).unwrap();
        let b = generate_toy(&cfg, &machine).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn stationary_distribution_reached() {
        // Brute-force chain simulation vs power-iteration oracle.
        let machine = StateMachine::default();
        let cycles = 100_000;
        let mut rng = stream(17, "stationary");
        let mut counts = vec![0usize; machine.n_states()];
        let mut state = machine.initial_state;
        for _ in 0..cycles {
            counts[state] += 1;
            state = next_state(&machine, state, &mut rng).unwrap();
        }
        // Power iteration on the transition matrix.
        let n = machine.n_states();
        let mut pi = vec![1.0 / n as f64; n];
        for _ in 0..10_000 {
            let mut next = vec![0.0; n];
            for i in 0..n {
                for j in 0..n {
                    next[j] += pi[i] * machine.transition[i][j];
                }
            }
            pi = next;
        }
        for (s, &c) in counts.iter().enumerate() {
            let freq = c as f64 / cycles as f64;
            assert!((freq - pi[s]).abs() < 0.01, "state {s}: {freq} vs {}", pi[s]);
        }
        // The documented default has a known stationary distribution.
        let expect = [0.4, 0.2, 0.2, 0.2];
        for (s, &e) in expect.iter().enumerate() {
            assert!((pi[s] - e).abs() < 1e-9);
        }
    }

    #[test]
    fn config_validation_catches_bad_geometry() {
        let bad = ToySeriesConfig {
            event_period: 81,
            ..ToySeriesConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = ToySeriesConfig {
            noise_sigma: -0.5,
            ..ToySeriesConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
