//! Attention-replacement comparison: train one model per (mode, seed) and
//! tabulate test metrics with mean and spread over seeds, plus parameter
//! counts per mode.

use tstlab_core::analysis::ExperimentReport;
use tstlab_core::error::Result;
use tstlab_core::surgery::AttentionMode;
use tstlab_core::trainer::save_checkpoint;

use super::{mean_std, num, param_count, report_for, run_cells, test_metrics, train_variant};
use crate::config::ExperimentConfig;
use crate::rundir::{RunDirectory, write_table};

pub fn run(cfg: &ExperimentConfig, dir: &RunDirectory) -> Result<ExperimentReport> {
    let (data, _) = cfg.dataset.load()?;
    let modes = &cfg.replace.modes;
    let cells: Vec<(AttentionMode, u64)> = modes
        .iter()
        .flat_map(|&m| cfg.seeds.iter().map(move |&s| (m, s)))
        .collect();

    let results = run_cells(cells.len(), |i| {
        let (mode, seed) = cells[i];
        let mut model_cfg = cfg.model.clone();
        model_cfg.blocks.attention = vec![mode; cfg.model.blocks.count()];
        let (model, outcome) = train_variant(&model_cfg, seed, &data, &cfg.train)?;
        let metrics = test_metrics(&model, &data, cfg)?;
        let count = param_count(&model);
        if cfg.save_checkpoints {
            save_checkpoint(
                &model,
                None,
                outcome.best_epoch,
                &outcome.val_history(),
                dir.checkpoint(&format!("{}-s{seed}", mode.name())),
            )?;
        }
        Ok((metrics, count, outcome))
    })?;

    let mut report = report_for(cfg)?;
    let mut cell_rows = Vec::new();
    let mut mode_rows = Vec::new();
    for (mi, &mode) in modes.iter().enumerate() {
        let per_seed = &results[mi * cfg.seeds.len()..(mi + 1) * cfg.seeds.len()];
        for ((metrics, _, outcome), &seed) in per_seed.iter().zip(&cfg.seeds) {
            report.metrics.insert(format!("{}/seed{seed}", mode.name()), *metrics);
            cell_rows.push(vec![
                mode.name().to_string(),
                seed.to_string(),
                num(metrics.mse),
                num(metrics.mae),
                num(metrics.mda),
                outcome.best_epoch.to_string(),
                num(outcome.best_val_mse),
            ]);
        }
        report.parameter_counts.insert(mode.name().to_string(), per_seed[0].1);
        let (mse_m, mse_s) = mean_std(&per_seed.iter().map(|r| r.0.mse).collect::<Vec<_>>());
        let (mae_m, mae_s) = mean_std(&per_seed.iter().map(|r| r.0.mae).collect::<Vec<_>>());
        let (mda_m, mda_s) = mean_std(&per_seed.iter().map(|r| r.0.mda).collect::<Vec<_>>());
        report.scalars.insert(format!("{}/mse_mean", mode.name()), mse_m);
        report.scalars.insert(format!("{}/mse_std", mode.name()), mse_s);
        mode_rows.push(vec![
            mode.name().to_string(),
            per_seed[0].1.trainable.to_string(),
            num(mse_m),
            num(mse_s),
            num(mae_m),
            num(mae_s),
            num(mda_m),
            num(mda_s),
        ]);
    }

    if let Some(raw_mean) = report.scalars.get("raw/mse_mean").copied() {
        for &mode in modes {
            if mode == AttentionMode::Raw {
                continue;
            }
            let mean = report.scalars[&format!("{}/mse_mean", mode.name())];
            report
                .scalars
                .insert(format!("{}/mse_rel_vs_raw", mode.name()), (mean - raw_mean) / raw_mean);
        }
        let raw_params = report.parameter_counts["raw"].trainable;
        for &mode in modes {
            let p = report.parameter_counts[mode.name()].trainable;
            if p != raw_params {
                report.notes.push(format!(
                    "{} trains {} parameters vs {} for raw",
                    mode.name(),
                    p,
                    raw_params
                ));
            }
        }
    }

    write_table(
        &dir.table("replace"),
        &["mode", "trainable_params", "mse_mean", "mse_std", "mae_mean", "mae_std", "mda_mean", "mda_std"],
        &mode_rows,
    )?;
    write_table(
        &dir.table("replace_cells"),
        &["mode", "seed", "mse", "mae", "mda", "best_epoch", "best_val_mse"],
        &cell_rows,
    )?;
    Ok(report)
}
