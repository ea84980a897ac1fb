//! Positional-encoding zeroing: train, measure, zero the encoding in place,
//! measure again, and record the similarity-by-distance curve.

use tstlab_core::analysis::ExperimentReport;
use tstlab_core::analysis::{export_similarity, similarity_curve};
use tstlab_core::error::Result;
use tstlab_core::surgery::zero_positional_encoding;

use super::{mean_std, num, param_count, report_for, run_cells, test_metrics, train_variant};
use crate::config::ExperimentConfig;
use crate::rundir::{RunDirectory, write_table};

pub fn run(cfg: &ExperimentConfig, dir: &RunDirectory) -> Result<ExperimentReport> {
    let (data, _) = cfg.dataset.load()?;

    let results = run_cells(cfg.seeds.len(), |i| {
        let seed = cfg.seeds[i];
        let (model, _) = train_variant(&cfg.model, seed, &data, &cfg.train)?;
        let trained = test_metrics(&model, &data, cfg)?;
        let curve = similarity_curve(&model)?;
        let zeroed_model = zero_positional_encoding(&model)?;
        let zeroed = test_metrics(&zeroed_model, &data, cfg)?;
        Ok((trained, zeroed, curve, param_count(&model)))
    })?;

    let mut report = report_for(cfg)?;
    let mut cell_rows = Vec::new();
    for ((trained, zeroed, _, _), &seed) in results.iter().zip(&cfg.seeds) {
        report.metrics.insert(format!("trained/seed{seed}"), *trained);
        report.metrics.insert(format!("zeroed/seed{seed}"), *zeroed);
        cell_rows.push(vec![
            seed.to_string(),
            num(trained.mse),
            num(zeroed.mse),
            num((zeroed.mse - trained.mse) / trained.mse),
        ]);
    }
    report.parameter_counts.insert("model".into(), results[0].3);

    let (t_mean, t_std) = mean_std(&results.iter().map(|r| r.0.mse).collect::<Vec<_>>());
    let (z_mean, z_std) = mean_std(&results.iter().map(|r| r.1.mse).collect::<Vec<_>>());
    let rel = (z_mean - t_mean).abs() / t_mean;
    report.scalars.insert("trained/mse_mean".into(), t_mean);
    report.scalars.insert("zeroed/mse_mean".into(), z_mean);
    report.scalars.insert("mse_rel_change".into(), rel);

    // The similarity curve of the first seed's trained encoding.
    let curve = &results[0].2;
    export_similarity(curve, &dir.table("posenc_similarity"))?;
    report.scalars.insert("similarity_flatness".into(), curve.flatness);

    write_table(
        &dir.table("posenc_zero"),
        &["variant", "mse_mean", "mse_std"],
        &[
            vec!["trained".into(), num(t_mean), num(t_std)],
            vec!["zeroed".into(), num(z_mean), num(z_std)],
        ],
    )?;
    write_table(
        &dir.table("posenc_zero_cells"),
        &["seed", "trained_mse", "zeroed_mse", "rel_change"],
        &cell_rows,
    )?;
    Ok(report)
}
