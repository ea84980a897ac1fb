//! Positional-encoding similarity-by-distance curves. A curve that stays
//! near 1 at every distance carries no positional information; flatness is
//! its max-minus-min spread.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ForecastModel;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimilarityCurve {
    /// (token distance, mean cosine similarity) from distance 0 to T-1.
    pub points: Vec<(usize, f64)>,
    /// Max minus min similarity across distances.
    pub flatness: f64,
}

/// Similarity-by-distance curve of a model's positional encoding.
pub fn similarity_curve(model: &ForecastModel) -> Result<SimilarityCurve> {
    let points = model.posenc_similarity()?;
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &(_, s) in &points {
        lo = lo.min(s);
        hi = hi.max(s);
    }
    Ok(SimilarityCurve { points, flatness: hi - lo })
}

/// Write a curve as a two-column CSV (distance, similarity).
pub fn export_similarity(curve: &SimilarityCurve, path: &Path) -> Result<()> {
    let display = path.display().to_string();
    let fail = |e: csv::Error| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::FileFormat { path: display.clone(), message: format!("{other:?}") },
    };
    let mut w = csv::Writer::from_path(path).map_err(fail)?;
    w.write_record(["distance", "similarity"]).map_err(fail)?;
    for &(d, s) in &curve.points {
        w.write_record([d.to_string(), s.to_string()]).map_err(fail)?;
    }
    w.flush()?;
    Ok(())
}
