//! Forecaster architectures: patch-token and channel-token transformers with
//! swappable embeddings and per-block attention modes.

mod config;
mod net;

pub use config::{
    Architecture, BlockConfig, EmbeddingKind, EmbeddingSpec, ForecastConfig, PatchSpec,
    count_tokens, patchify,
};
pub use net::{Forecaster, ForecastModel, ForwardCapture, fd_check_model};
