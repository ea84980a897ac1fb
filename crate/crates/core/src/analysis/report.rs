//! Experiment reports: one JSON document per run, with sorted maps
//! throughout so a repeated run serializes to the identical byte sequence.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::trainer::MetricSet;

use super::surface::PerturbationSurface;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub schema_version: u32,
    /// Experiment name, e.g. "replace" or "perturb-grid".
    pub experiment: String,
    /// Hash of the resolved run configuration.
    pub config_hash: String,
    pub seeds: Vec<u64>,
    /// Trainable/total parameter counts per model variant.
    pub parameter_counts: BTreeMap<String, ParamCount>,
    /// Test metrics keyed by variant (and seed where applicable).
    pub metrics: BTreeMap<String, MetricSet>,
    /// Free-form named scalars (fractions, flatness, deltas).
    pub scalars: BTreeMap<String, f64>,
    /// Degradation surfaces keyed by target.
    pub surfaces: BTreeMap<String, PerturbationSurface>,
    /// Human-oriented remarks, also echoed into summary.txt.
    pub notes: Vec<String>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamCount {
    pub trainable: usize,
    pub total: usize,
}

impl ExperimentReport {
    pub fn new(experiment: &str, config_hash: String, seeds: Vec<u64>) -> Self {
        ExperimentReport {
            schema_version: REPORT_SCHEMA_VERSION,
            experiment: experiment.to_string(),
            config_hash,
            seeds,
            ..ExperimentReport::default()
        }
    }

    /// Serialize to pretty JSON; key order is deterministic because every
    /// map is a BTreeMap.
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self)
            .map_err(|e| Error::FileFormat { path: "<report>".into(), message: e.to_string() })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut text = self.to_json()?;
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::FileFormat {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }
}

/// Hex SHA-256 of a value's canonical JSON, for tying reports to the exact
/// configuration that produced them.
pub fn config_hash<T: Serialize>(value: &T) -> Result<String> {
    let json = serde_json::to_string(value)
        .map_err(|e| Error::FileFormat { path: "<config>".into(), message: e.to_string() })?;
    let mut h = Sha256::new();
    h.update(json.as_bytes());
    Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
}
