//! Degradation surfaces: test MSE over an (attenuation, noise) grid applied
//! to one sublayer family, with each grid cell evaluated independently so
//! cell order cannot leak RNG state between cells.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{Split, WindowedDataset};
use crate::error::{Error, Result};
use crate::model::Forecaster;
use crate::rng::stream;
use crate::surgery::{EvalMods, PerturbSpec, PerturbTarget};
use crate::trainer::evaluate;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerturbationSurface {
    pub target: PerturbTarget,
    pub alphas: Vec<f64>,
    pub etas: Vec<f64>,
    /// Test MSE, indexed `[alpha][eta]`.
    pub mse: Vec<Vec<f64>>,
}

impl PerturbationSurface {
    pub fn cell(&self, ai: usize, ei: usize) -> f64 {
        self.mse[ai][ei]
    }

    /// Largest MSE anywhere on the grid.
    pub fn max_mse(&self) -> f64 {
        self.mse.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// MSE at the unperturbed corner, if the grid includes (0, 0).
    pub fn baseline(&self) -> Option<f64> {
        let ai = self.alphas.iter().position(|&a| a == 0.0)?;
        let ei = self.etas.iter().position(|&e| e == 0.0)?;
        Some(self.mse[ai][ei])
    }
}

/// Evaluate a model under every (alpha, eta) pair of the grid. Each cell
/// draws its noise from its own stream of `seed`, so results do not depend
/// on sweep order.
#[allow(clippy::too_many_arguments)]
pub fn perturbation_surface<M: Forecaster>(
    model: &M,
    data: &WindowedDataset,
    split: Split,
    batch_size: usize,
    predictions_normalized: bool,
    target: PerturbTarget,
    alphas: &[f64],
    etas: &[f64],
    seed: u64,
) -> Result<PerturbationSurface> {
    if alphas.is_empty() || etas.is_empty() {
        return Err(Error::InvalidArg("perturbation grid needs at least one alpha and eta".into()));
    }
    let mut mse = Vec::with_capacity(alphas.len());
    for (ai, &alpha) in alphas.iter().enumerate() {
        let mut row = Vec::with_capacity(etas.len());
        for (ei, &eta) in etas.iter().enumerate() {
            let mods = EvalMods::perturbed(PerturbSpec::new(target, alpha, eta, seed)?);
            let mut noise = stream(seed, &format!("cell-a{ai}-e{ei}"));
            let m = evaluate(model, data, split, batch_size, predictions_normalized, &mods, &mut noise)?;
            row.push(m.mse);
        }
        mse.push(row);
    }
    Ok(PerturbationSurface { target, alphas: alphas.to_vec(), etas: etas.to_vec(), mse })
}

/// Write a surface as a long-format CSV (target, alpha, eta, mse).
pub fn export_surface(surface: &PerturbationSurface, path: &Path) -> Result<()> {
    let display = path.display().to_string();
    let fail = |e: csv::Error| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::FileFormat { path: display.clone(), message: format!("{other:?}") },
    };
    let mut w = csv::Writer::from_path(path).map_err(fail)?;
    w.write_record(["target", "alpha", "eta", "mse"]).map_err(fail)?;
    for (ai, &alpha) in surface.alphas.iter().enumerate() {
        for (ei, &eta) in surface.etas.iter().enumerate() {
            w.write_record([
                surface.target.name().to_string(),
                alpha.to_string(),
                eta.to_string(),
                surface.mse[ai][ei].to_string(),
            ])
            .map_err(fail)?;
        }
    }
    w.flush()?;
    Ok(())
}
