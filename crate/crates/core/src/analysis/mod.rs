//! Measurement layer: attention captures and their event statistics,
//! predicted-state densities, positional-similarity curves, degradation
//! surfaces, and the JSON experiment report.

mod capture;
mod density;
mod events;
mod report;
mod similarity;
mod surface;

pub use capture::{AttentionCapture, capture_attention, load_capture, save_capture};
pub use density::{
    DensityBins, StateDensity, model_forecasts, predicted_state_density,
    state_density_from_forecasts,
};
pub use events::{EventAttentionStats, event_attention_mass};
pub use report::{ExperimentReport, ParamCount, REPORT_SCHEMA_VERSION, config_hash};
pub use similarity::{SimilarityCurve, export_similarity, similarity_curve};
pub use surface::{PerturbationSurface, export_surface, perturbation_surface};
