//! Forecaster geometry: architectures, patching, embeddings, and block stacks.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::surgery::AttentionMode;

/// How the input series is turned into tokens.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    /// Tokens are strided patches of one channel; channels share weights and
    /// flow through the blocks independently.
    PatchToken,
    /// Tokens are whole channels; attention mixes across channels.
    ChannelToken,
}

/// Patch geometry over a lookback window.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchSpec {
    pub lookback: usize,
    pub patch_length: usize,
    pub stride: usize,
    /// Cover a trailing remainder with one extra zero-padded patch instead of
    /// dropping it.
    #[serde(default)]
    pub pad_remainder: bool,
}

impl Default for PatchSpec {
    fn default() -> Self {
        PatchSpec { lookback: 336, patch_length: 16, stride: 16, pad_remainder: false }
    }
}

impl PatchSpec {
    pub fn validate(&self) -> Result<()> {
        if self.patch_length == 0 || self.stride == 0 || self.lookback == 0 {
            return Err(Error::InvalidArg("patch spec: zero dimension".into()));
        }
        if self.patch_length > self.lookback {
            return Err(Error::InvalidArg(format!(
                "patch length {} exceeds lookback {}",
                self.patch_length, self.lookback
            )));
        }
        Ok(())
    }

    /// First time step covered by token `t`.
    pub fn token_start(&self, t: usize) -> usize {
        t * self.stride
    }

    /// Half-open time range covered by token `t`, clipped to the lookback.
    pub fn token_span(&self, t: usize) -> (usize, usize) {
        let start = self.token_start(t);
        (start, (start + self.patch_length).min(self.lookback))
    }
}

/// Number of tokens a patch spec yields: floor((L-P)/S)+1, plus one more when
/// a remainder is covered by padding.
pub fn count_tokens(spec: &PatchSpec) -> Result<usize> {
    spec.validate()?;
    let mut t = (spec.lookback - spec.patch_length) / spec.stride + 1;
    if spec.pad_remainder && (spec.lookback - spec.patch_length) % spec.stride != 0 {
        t += 1;
    }
    Ok(t)
}

/// Reference patchify on plain values: row-major (T x P) windows of `x`.
pub fn patchify(x: &[f64], spec: &PatchSpec) -> Result<Vec<f64>> {
    if x.len() != spec.lookback {
        return Err(Error::InvalidArg(format!(
            "patchify: {} values for lookback {}",
            x.len(),
            spec.lookback
        )));
    }
    let t = count_tokens(spec)?;
    let p = spec.patch_length;
    let mut out = vec![0.0; t * p];
    for ti in 0..t {
        let (start, end) = spec.token_span(ti);
        out[ti * p..ti * p + (end - start)].copy_from_slice(&x[start..end]);
    }
    Ok(out)
}

/// Token-to-latent map family.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingKind {
    /// Single affine map.
    Linear,
    /// Kernel-3 convolution over the token, mean-pooled: a weight-sharing
    /// linear map.
    Conv,
    /// Affine, activation, affine.
    Mlp,
    /// Mlp plus a linear skip connection.
    Residual,
}

impl EmbeddingKind {
    pub const ALL: [EmbeddingKind; 4] =
        [EmbeddingKind::Linear, EmbeddingKind::Conv, EmbeddingKind::Mlp, EmbeddingKind::Residual];

    pub fn name(self) -> &'static str {
        match self {
            EmbeddingKind::Linear => "linear",
            EmbeddingKind::Conv => "conv",
            EmbeddingKind::Mlp => "mlp",
            EmbeddingKind::Residual => "residual",
        }
    }
}

impl std::fmt::Display for EmbeddingKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Embedding choice; `frozen` keeps the parameters at their initialization
/// while still participating in the forward pass.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbeddingSpec {
    pub kind: EmbeddingKind,
    #[serde(default)]
    pub frozen: bool,
}

impl Default for EmbeddingSpec {
    fn default() -> Self {
        EmbeddingSpec { kind: EmbeddingKind::Linear, frozen: false }
    }
}

/// Transformer block stack: one attention mode per block.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockConfig {
    pub heads: usize,
    pub model_dim: usize,
    pub ffn_dim: usize,
    pub attention: Vec<AttentionMode>,
}

impl Default for BlockConfig {
    fn default() -> Self {
        BlockConfig {
            heads: 4,
            model_dim: 64,
            ffn_dim: 128,
            attention: vec![AttentionMode::Raw; 3],
        }
    }
}

impl BlockConfig {
    pub fn count(&self) -> usize {
        self.attention.len()
    }

    pub fn head_dim(&self) -> usize {
        self.model_dim / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || self.model_dim == 0 || self.ffn_dim == 0 {
            return Err(Error::InvalidArg("block config: zero dimension".into()));
        }
        if self.model_dim % self.heads != 0 {
            return Err(Error::InvalidArg(format!(
                "model_dim {} not divisible by {} heads",
                self.model_dim, self.heads
            )));
        }
        if self.attention.is_empty() {
            return Err(Error::InvalidArg("block config: no blocks".into()));
        }
        Ok(())
    }
}

/// Complete forecaster description; (config, seed) determines every weight.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForecastConfig {
    pub architecture: Architecture,
    pub channels: usize,
    pub horizon: usize,
    pub patch: PatchSpec,
    pub embedding: EmbeddingSpec,
    pub blocks: BlockConfig,
}

impl Default for ForecastConfig {
    fn default() -> Self {
        ForecastConfig {
            architecture: Architecture::PatchToken,
            channels: 1,
            horizon: 96,
            patch: PatchSpec::default(),
            embedding: EmbeddingSpec::default(),
            blocks: BlockConfig::default(),
        }
    }
}

impl ForecastConfig {
    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.horizon == 0 {
            return Err(Error::InvalidArg("forecast config: zero channels or horizon".into()));
        }
        self.blocks.validate()?;
        match self.architecture {
            Architecture::PatchToken => {
                self.patch.validate()?;
            }
            Architecture::ChannelToken => {
                if self.patch.lookback == 0 {
                    return Err(Error::InvalidArg("forecast config: zero lookback".into()));
                }
            }
        }
        Ok(())
    }

    pub fn lookback(&self) -> usize {
        self.patch.lookback
    }

    /// Token count per independent sequence.
    pub fn tokens(&self) -> Result<usize> {
        match self.architecture {
            Architecture::PatchToken => count_tokens(&self.patch),
            Architecture::ChannelToken => Ok(self.channels),
        }
    }

    /// Raw width of one token before embedding.
    pub fn token_width(&self) -> usize {
        match self.architecture {
            Architecture::PatchToken => self.patch.patch_length,
            Architecture::ChannelToken => self.patch.lookback,
        }
    }

    /// Patch-token models carry a learnable positional encoding.
    pub fn has_posenc(&self) -> bool {
        self.architecture == Architecture::PatchToken
    }
}
