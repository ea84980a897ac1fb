//! Perturbation surfaces: train (or load) one model, then sweep the
//! (attenuation, noise) grid for each target sublayer.

use tstlab_core::analysis::{ExperimentReport, export_surface, perturbation_surface};
use tstlab_core::dataset::Split;
use tstlab_core::error::Result;
use tstlab_core::model::ForecastModel;
use tstlab_core::trainer::{load_checkpoint, save_checkpoint};

use super::{report_for, test_metrics, train_variant};
use crate::config::ExperimentConfig;
use crate::rundir::{RunDirectory, write_table};

pub fn run(cfg: &ExperimentConfig, dir: &RunDirectory) -> Result<ExperimentReport> {
    let (data, _) = cfg.dataset.load()?;
    let spec = &cfg.perturb;
    let seed = cfg.seeds[0];

    let model: ForecastModel = match &spec.checkpoint {
        Some(path) => {
            let ckpt = load_checkpoint(path)?;
            ckpt.require_config(&cfg.model)?;
            ckpt.model
        }
        None => {
            let (model, outcome) = train_variant(&cfg.model, seed, &data, &cfg.train)?;
            save_checkpoint(
                &model,
                None,
                outcome.best_epoch,
                &outcome.val_history(),
                dir.checkpoint("model"),
            )?;
            model
        }
    };

    let mut report = report_for(cfg)?;
    let baseline = test_metrics(&model, &data, cfg)?;
    report.metrics.insert("baseline".into(), baseline);
    report.parameter_counts.insert("model".into(), super::param_count(&model));

    for &target in &spec.targets {
        let surface = perturbation_surface(
            &model,
            &data,
            Split::Test,
            cfg.train.batch_size,
            cfg.train.loss_on_normalized,
            target,
            &spec.alphas,
            &spec.etas,
            spec.noise_seed,
        )?;
        export_surface(&surface, &dir.table(&format!("surface_{}", target.name())))?;
        report.scalars.insert(format!("{}/max_mse", target.name()), surface.max_mse());
        if let Some(b) = surface.baseline() {
            report.scalars.insert(format!("{}/baseline_mse", target.name()), b);
        }
        report.surfaces.insert(target.name().to_string(), surface);
    }

    if let (Some(f), Some(a)) = (
        report.scalars.get("ffn/max_mse").copied(),
        report.scalars.get("attention/max_mse").copied(),
    ) {
        report.scalars.insert("ffn_over_attention_max_ratio".into(), f / a);
        report.scalars.insert(
            "attention_worst_over_baseline".into(),
            report.scalars["attention/max_mse"] / baseline.mse,
        );
    }

    // Flat summary table across targets.
    let rows: Vec<Vec<String>> = spec
        .targets
        .iter()
        .map(|t| {
            vec![
                t.name().to_string(),
                super::num(report.scalars[&format!("{}/max_mse", t.name())]),
                super::num(baseline.mse),
            ]
        })
        .collect();
    write_table(&dir.table("perturb_max"), &["target", "max_mse", "baseline_mse"], &rows)?;

    Ok(report)
}
