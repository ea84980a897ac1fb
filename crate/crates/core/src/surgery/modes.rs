//! Intervention vocabulary: attention replacement modes, the attenuation/noise
//! perturbation, and evaluation-time block smoothing.
//!
//! The perturbation acts on a module's pre-softmax (attention) or
//! pre-activation (feed-forward) rows. Per row i the noise is i.i.d.
//! N(0, sigma_i^2) with sigma_i^2 = eta * Var(row i) (population variance,
//! computed before any noise), and the result is blended toward the row mean
//! with weight alpha: attention rows blend toward the uniform 1/T row, the
//! feed-forward output toward each row's own mean.

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// What each block's attention matrix is computed from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionMode {
    /// Scaled dot-product attention from the current input.
    Raw,
    /// A = 0: the whole attention sublayer is dropped; residuals carry tokens.
    Zero,
    /// A = I: every token attends to itself only.
    Eye,
    /// A = 1/T everywhere: uniform mixing, independent of the input.
    Mean,
    /// A = row-softmax of a trained T x T logit matrix per head, independent
    /// of the current input.
    FixedTrainable,
}

impl AttentionMode {
    pub const ALL: [AttentionMode; 5] = [
        AttentionMode::Raw,
        AttentionMode::Zero,
        AttentionMode::Eye,
        AttentionMode::Mean,
        AttentionMode::FixedTrainable,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AttentionMode::Raw => "raw",
            AttentionMode::Zero => "zero",
            AttentionMode::Eye => "eye",
            AttentionMode::Mean => "mean",
            AttentionMode::FixedTrainable => "fixed_trainable",
        }
    }
}

impl std::fmt::Display for AttentionMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Which sublayer the perturbation targets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbTarget {
    Attention,
    Ffn,
}

impl PerturbTarget {
    pub fn name(self) -> &'static str {
        match self {
            PerturbTarget::Attention => "attention",
            PerturbTarget::Ffn => "ffn",
        }
    }
}

/// Attenuation strength `alpha`, relative noise scale `eta`, and the seed for
/// the evaluation noise stream.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerturbSpec {
    pub target: PerturbTarget,
    pub alpha: f64,
    pub eta: f64,
    pub seed: u64,
}

impl PerturbSpec {
    pub fn new(target: PerturbTarget, alpha: f64, eta: f64, seed: u64) -> Result<Self> {
        let spec = PerturbSpec { target, alpha, eta, seed };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::InvalidArg(format!(
                "perturbation alpha {} outside [0, 1]",
                self.alpha
            )));
        }
        if !self.eta.is_finite() || self.eta < 0.0 {
            return Err(Error::InvalidArg(format!("perturbation eta {} must be >= 0", self.eta)));
        }
        Ok(())
    }

    /// True when the spec provably changes nothing and can be skipped.
    pub fn is_identity(&self) -> bool {
        self.alpha == 0.0 && self.eta == 0.0
    }
}

/// Evaluation-time smoothing: the listed blocks swap their attention for the
/// uniform 1/T matrix; unlisted blocks are untouched.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SmoothingSpec {
    pub blocks: Vec<usize>,
}

impl SmoothingSpec {
    pub fn validate(&self, block_count: usize) -> Result<()> {
        for &b in &self.blocks {
            if b >= block_count {
                return Err(Error::InvalidArg(format!(
                    "smoothing block id {b} out of range for {block_count} blocks"
                )));
            }
        }
        Ok(())
    }
}

/// Inference-time modifications threaded through a forward pass. The default
/// is a plain unmodified evaluation.
#[derive(Clone, Debug, Default)]
pub struct EvalMods {
    pub perturb: Option<PerturbSpec>,
    pub smooth: SmoothingSpec,
}

impl EvalMods {
    pub fn none() -> Self {
        EvalMods::default()
    }

    pub fn perturbed(spec: PerturbSpec) -> Self {
        EvalMods { perturb: Some(spec), ..EvalMods::default() }
    }

    pub fn smoothed(blocks: Vec<usize>) -> Self {
        EvalMods { smooth: SmoothingSpec { blocks }, ..EvalMods::default() }
    }
}

/// Additive noise for (rows x cols) values: per row, i.i.d. N(0, sigma^2)
/// with sigma^2 = eta * Var(row). Zero-variance rows get zero noise. The
/// stream is consumed per element regardless of the data, so reproducibility
/// depends only on (seed, shape).
pub fn row_noise(values: &[f64], cols: usize, eta: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    debug_assert!(values.len() % cols == 0);
    let mut noise = vec![0.0; values.len()];
    if eta == 0.0 {
        return noise;
    }
    for (nrow, vrow) in noise.chunks_exact_mut(cols).zip(values.chunks_exact(cols)) {
        let sigma = (eta * row_variance(vrow)).sqrt();
        for n in nrow.iter_mut() {
            let z: f64 = StandardNormal.sample(rng);
            *n = sigma * z;
        }
    }
    noise
}

/// Population variance of one row.
pub fn row_variance(row: &[f64]) -> f64 {
    let n = row.len() as f64;
    let mean = row.iter().sum::<f64>() / n;
    row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / n
}

/// Reference implementation of the perturbed attention map on plain values:
/// softmax(logits + noise) per row, blended toward uniform with weight alpha.
/// Matrix layout is row-major (rows x cols); each row is one query.
pub fn perturb_attention(
    logits: &[f64],
    cols: usize,
    alpha: f64,
    eta: f64,
    rng: &mut ChaCha8Rng,
) -> Vec<f64> {
    let noise = row_noise(logits, cols, eta, rng);
    let mut out: Vec<f64> = if eta == 0.0 {
        logits.to_vec()
    } else {
        logits.iter().zip(&noise).map(|(&l, &n)| l + n).collect()
    };
    softmax_rows_in_place(&mut out, cols);
    if alpha != 0.0 {
        let uniform = alpha / cols as f64;
        for v in out.iter_mut() {
            *v = *v * (1.0 - alpha) + uniform;
        }
    }
    out
}

/// Row softmax with max-subtraction, matching the tape op bit for bit.
pub fn softmax_rows_in_place(values: &mut [f64], cols: usize) {
    for row in values.chunks_exact_mut(cols) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
}
