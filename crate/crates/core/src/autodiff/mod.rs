//! Minimal reverse-mode automatic differentiation engine: exactly the
//! operators the forecasting models need, plus Adam and a finite-difference
//! oracle for self-verification.

pub mod adam;
pub mod gradcheck;
pub mod params;
pub mod tape;

pub use adam::{Adam, AdamConfig};
pub use gradcheck::{finite_diff, max_rel_err};
pub use params::{BoundParams, ParamEntry, ParamStore};
pub use tape::{Tape, TensorId};
