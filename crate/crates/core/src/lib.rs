//! Desk-scale laboratory for probing attention in time-series transformers:
//! a from-scratch autodiff engine, patch- and channel-token forecasters,
//! attention surgeries (replacement, perturbation, smoothing), a labeled
//! synthetic dataset, and the analysis tools that measure what the attention
//! layers actually do.

pub mod analysis;
pub mod autodiff;
pub mod dataset;
pub mod error;
pub mod model;
pub mod rng;
pub mod surgery;
pub mod trainer;

pub use error::{Error, Result};
