//! Evaluation-time block smoothing: train once per seed, then re-evaluate
//! the same weights with chosen blocks forced to uniform attention.

use tstlab_core::analysis::ExperimentReport;
use tstlab_core::error::Result;
use tstlab_core::surgery::{SmoothingSpec, smooth_blocks};

use super::{mean_std, num, param_count, report_for, run_cells, test_metrics, test_metrics_with, train_variant};
use crate::config::ExperimentConfig;
use crate::rundir::{RunDirectory, write_table};

fn subset_label(subset: &[usize]) -> String {
    let ids: Vec<String> = subset.iter().map(|b| b.to_string()).collect();
    format!("smooth[{}]", ids.join("+"))
}

pub fn run(cfg: &ExperimentConfig, dir: &RunDirectory) -> Result<ExperimentReport> {
    let (data, _) = cfg.dataset.load()?;
    let subsets = cfg.smooth.resolve(cfg.model.blocks.count());

    let results = run_cells(cfg.seeds.len(), |i| {
        let seed = cfg.seeds[i];
        let (model, _) = train_variant(&cfg.model, seed, &data, &cfg.train)?;
        let baseline = test_metrics(&model, &data, cfg)?;
        let mut smoothed = Vec::with_capacity(subsets.len());
        for subset in &subsets {
            let mods = smooth_blocks(&model, &SmoothingSpec { blocks: subset.clone() })?;
            smoothed.push(test_metrics_with(&model, &data, cfg, &mods, 0)?);
        }
        Ok((baseline, smoothed, param_count(&model)))
    })?;

    let mut report = report_for(cfg)?;
    report.parameter_counts.insert("model".into(), results[0].2);

    let mut rows = Vec::new();
    let base: Vec<f64> = results.iter().map(|r| r.0.mse).collect();
    let (base_mean, base_std) = mean_std(&base);
    for (r, &seed) in results.iter().zip(&cfg.seeds) {
        report.metrics.insert(format!("baseline/seed{seed}"), r.0);
    }
    report.scalars.insert("baseline/mse_mean".into(), base_mean);
    rows.push(vec!["baseline".into(), num(base_mean), num(base_std)]);

    for (si, subset) in subsets.iter().enumerate() {
        let label = subset_label(subset);
        let xs: Vec<f64> = results.iter().map(|r| r.1[si].mse).collect();
        for (r, &seed) in results.iter().zip(&cfg.seeds) {
            report.metrics.insert(format!("{label}/seed{seed}"), r.1[si]);
        }
        let (m, s) = mean_std(&xs);
        report.scalars.insert(format!("{label}/mse_mean"), m);
        report.scalars.insert(format!("{label}/mse_rel_vs_baseline"), (m - base_mean) / base_mean);
        rows.push(vec![label, num(m), num(s)]);
    }

    write_table(&dir.table("smooth_blocks"), &["variant", "mse_mean", "mse_std"], &rows)?;
    Ok(report)
}
