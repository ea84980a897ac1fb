//! Experiment driver around `tstlab-core`: TOML-configured runs, a directory
//! layout per run, and CSV/JSON outputs.

pub mod config;
pub mod experiments;
pub mod rundir;
