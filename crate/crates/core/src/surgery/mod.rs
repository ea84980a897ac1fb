//! Structural interventions on trained forecasters: attention replacement,
//! attenuation/noise perturbation, positional-encoding zeroing, and
//! evaluation-time attention smoothing.

mod modes;
mod rewire;

pub use modes::{
    AttentionMode, EvalMods, PerturbSpec, PerturbTarget, SmoothingSpec, perturb_attention,
    row_noise, row_variance, softmax_rows_in_place,
};
pub use rewire::{replace_attention, smooth_blocks, zero_positional_encoding};
