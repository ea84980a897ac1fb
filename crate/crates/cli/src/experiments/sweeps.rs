//! Geometry sweeps: patch length (with stride locked to it) and block count.

use tstlab_core::analysis::ExperimentReport;
use tstlab_core::error::Result;
use tstlab_core::model::count_tokens;

use super::{mean_std, num, param_count, report_for, run_cells, test_metrics, train_variant};
use crate::config::ExperimentConfig;
use crate::rundir::{RunDirectory, write_table};

pub fn run_patch(cfg: &ExperimentConfig, dir: &RunDirectory) -> Result<ExperimentReport> {
    let (data, _) = cfg.dataset.load()?;
    let lengths = &cfg.patch_sweep.patch_lengths;
    let cells: Vec<(usize, u64)> =
        lengths.iter().flat_map(|&p| cfg.seeds.iter().map(move |&s| (p, s))).collect();

    let results = run_cells(cells.len(), |i| {
        let (p, seed) = cells[i];
        let mut model_cfg = cfg.model.clone();
        model_cfg.patch.patch_length = p;
        model_cfg.patch.stride = p;
        let (model, _) = train_variant(&model_cfg, seed, &data, &cfg.train)?;
        let metrics = test_metrics(&model, &data, cfg)?;
        Ok((metrics, param_count(&model)))
    })?;

    let mut report = report_for(cfg)?;
    let mut rows = Vec::new();
    let mut cell_rows = Vec::new();
    let mut means = Vec::new();
    for (pi, &p) in lengths.iter().enumerate() {
        let per_seed = &results[pi * cfg.seeds.len()..(pi + 1) * cfg.seeds.len()];
        let tokens = count_tokens(&{
            let mut ps = cfg.model.patch;
            ps.patch_length = p;
            ps.stride = p;
            ps
        })?;
        for ((m, _), &seed) in per_seed.iter().zip(&cfg.seeds) {
            report.metrics.insert(format!("p{p}/seed{seed}"), *m);
            cell_rows.push(vec![p.to_string(), seed.to_string(), num(m.mse), num(m.mae), num(m.mda)]);
        }
        let (mse_m, mse_s) = mean_std(&per_seed.iter().map(|r| r.0.mse).collect::<Vec<_>>());
        report.scalars.insert(format!("p{p}/mse_mean"), mse_m);
        report.parameter_counts.insert(format!("p{p}"), per_seed[0].1);
        means.push(mse_m);
        rows.push(vec![
            p.to_string(),
            tokens.to_string(),
            per_seed[0].1.trainable.to_string(),
            num(mse_m),
            num(mse_s),
        ]);
    }
    let lo = means.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = means.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    report.scalars.insert("mse_spread_rel".into(), (hi - lo) / lo);

    write_table(
        &dir.table("patch_sweep"),
        &["patch", "tokens", "trainable_params", "mse_mean", "mse_std"],
        &rows,
    )?;
    write_table(&dir.table("patch_sweep_cells"), &["patch", "seed", "mse", "mae", "mda"], &cell_rows)?;
    Ok(report)
}

pub fn run_block(cfg: &ExperimentConfig, dir: &RunDirectory) -> Result<ExperimentReport> {
    let (data, _) = cfg.dataset.load()?;
    let counts = &cfg.block_sweep.block_counts;
    let base_mode = cfg.model.blocks.attention[0];
    let cells: Vec<(usize, u64)> =
        counts.iter().flat_map(|&n| cfg.seeds.iter().map(move |&s| (n, s))).collect();

    let results = run_cells(cells.len(), |i| {
        let (n, seed) = cells[i];
        let mut model_cfg = cfg.model.clone();
        model_cfg.blocks.attention = vec![base_mode; n];
        let (model, _) = train_variant(&model_cfg, seed, &data, &cfg.train)?;
        let metrics = test_metrics(&model, &data, cfg)?;
        Ok((metrics, param_count(&model)))
    })?;

    let mut report = report_for(cfg)?;
    let mut rows = Vec::new();
    for (ni, &n) in counts.iter().enumerate() {
        let per_seed = &results[ni * cfg.seeds.len()..(ni + 1) * cfg.seeds.len()];
        for ((m, _), &seed) in per_seed.iter().zip(&cfg.seeds) {
            report.metrics.insert(format!("blocks{n}/seed{seed}"), *m);
        }
        let (mse_m, mse_s) = mean_std(&per_seed.iter().map(|r| r.0.mse).collect::<Vec<_>>());
        report.scalars.insert(format!("blocks{n}/mse_mean"), mse_m);
        report.parameter_counts.insert(format!("blocks{n}"), per_seed[0].1);
        rows.push(vec![
            n.to_string(),
            per_seed[0].1.trainable.to_string(),
            num(mse_m),
            num(mse_s),
        ]);
    }
    write_table(
        &dir.table("block_sweep"),
        &["blocks", "trainable_params", "mse_mean", "mse_std"],
        &rows,
    )?;
    Ok(report)
}
