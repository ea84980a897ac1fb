//! Run-directory plumbing: a config snapshot, CSV tables, checkpoints,
//! captures, and the report land in one folder per run.

use std::path::{Path, PathBuf};

use tstlab_core::analysis::ExperimentReport;
use tstlab_core::error::{Error, Result};

pub struct RunDirectory {
    root: PathBuf,
}

impl RunDirectory {
    /// Create the directory skeleton (idempotent).
    pub fn create(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        for sub in ["tables", "checkpoints", "captures"] {
            std::fs::create_dir_all(root.join(sub))?;
        }
        Ok(RunDirectory { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn table(&self, name: &str) -> PathBuf {
        self.root.join("tables").join(format!("{name}.csv"))
    }

    pub fn checkpoint(&self, name: &str) -> PathBuf {
        self.root.join("checkpoints").join(format!("{name}.ckpt"))
    }

    pub fn capture(&self, name: &str) -> PathBuf {
        self.root.join("captures").join(format!("{name}.bin"))
    }

    /// Echo the resolved configuration for provenance.
    pub fn write_config(&self, toml_text: &str) -> Result<()> {
        std::fs::write(self.root.join("config.toml"), toml_text)?;
        Ok(())
    }

    /// Write report.json and its human-readable rendering.
    pub fn finish(&self, report: &ExperimentReport) -> Result<()> {
        report.save(&self.root.join("report.json"))?;
        std::fs::write(self.root.join("summary.txt"), summary_text(report))?;
        Ok(())
    }
}

/// Simple CSV writer for experiment tables.
pub fn write_table(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let display = path.display().to_string();
    let fail = |e: csv::Error| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::FileFormat { path: display.clone(), message: format!("{other:?}") },
    };
    let mut w = csv::Writer::from_path(path).map_err(fail)?;
    w.write_record(header).map_err(fail)?;
    for row in rows {
        w.write_record(row).map_err(fail)?;
    }
    w.flush()?;
    Ok(())
}

/// Deterministic plain-text rendering of a report.
pub fn summary_text(report: &ExperimentReport) -> String {
    let mut s = String::new();
    let mut line = |l: String| {
        s.push_str(&l);
        s.push('\n');
    };
    line(format!("experiment: {}", report.experiment));
    line(format!("config:     {}", report.config_hash));
    line(format!(
        "seeds:      [{}]",
        report.seeds.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(", ")
    ));
    if !report.parameter_counts.is_empty() {
        line(String::new());
        line("parameters (trainable / total):".into());
        for (name, c) in &report.parameter_counts {
            line(format!("  {name:<24} {:>10} / {}", c.trainable, c.total));
        }
    }
    if !report.metrics.is_empty() {
        line(String::new());
        line(format!("{:<32} {:>12} {:>12} {:>8}", "metrics", "mse", "mae", "mda"));
        for (name, m) in &report.metrics {
            line(format!("  {name:<30} {:>12.6} {:>12.6} {:>8.4}", m.mse, m.mae, m.mda));
        }
    }
    if !report.scalars.is_empty() {
        line(String::new());
        line("scalars:".into());
        for (name, v) in &report.scalars {
            line(format!("  {name:<40} {v:.6}"));
        }
    }
    if !report.surfaces.is_empty() {
        line(String::new());
        for (name, surf) in &report.surfaces {
            let baseline = surf
                .baseline()
                .map_or_else(|| "n/a".into(), |b| format!("{b:.6}"));
            line(format!(
                "surface {name}: {}x{} grid, baseline {baseline}, max {:.6}",
                surf.alphas.len(),
                surf.etas.len(),
                surf.max_mse()
            ));
        }
    }
    if !report.notes.is_empty() {
        line(String::new());
        for n in &report.notes {
            line(format!("note: {n}"));
        }
    }
    s
}
