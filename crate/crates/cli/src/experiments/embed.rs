//! Embedding studies: frozen-vs-trained embeddings, and the grid of
//! embedding kinds crossed with attention modes.

use tstlab_core::analysis::ExperimentReport;
use tstlab_core::error::Result;
use tstlab_core::model::EmbeddingKind;
use tstlab_core::surgery::AttentionMode;

use super::{mean_std, num, param_count, report_for, run_cells, test_metrics, train_variant};
use crate::config::ExperimentConfig;
use crate::rundir::{RunDirectory, write_table};

pub fn run_freeze(cfg: &ExperimentConfig, dir: &RunDirectory) -> Result<ExperimentReport> {
    let (data, _) = cfg.dataset.load()?;
    let variants = [("trained", false), ("frozen", true)];
    let cells: Vec<(usize, u64)> = (0..variants.len())
        .flat_map(|v| cfg.seeds.iter().map(move |&s| (v, s)))
        .collect();

    let results = run_cells(cells.len(), |i| {
        let (v, seed) = cells[i];
        let mut model_cfg = cfg.model.clone();
        model_cfg.embedding.frozen = variants[v].1;
        let (model, _) = train_variant(&model_cfg, seed, &data, &cfg.train)?;
        let metrics = test_metrics(&model, &data, cfg)?;
        Ok((metrics, param_count(&model)))
    })?;

    let mut report = report_for(cfg)?;
    let mut rows = Vec::new();
    let mut means = Vec::new();
    for (v, &(name, _)) in variants.iter().enumerate() {
        let per_seed = &results[v * cfg.seeds.len()..(v + 1) * cfg.seeds.len()];
        for ((m, _), &seed) in per_seed.iter().zip(&cfg.seeds) {
            report.metrics.insert(format!("{name}/seed{seed}"), *m);
        }
        let (mse_m, mse_s) = mean_std(&per_seed.iter().map(|r| r.0.mse).collect::<Vec<_>>());
        report.scalars.insert(format!("{name}/mse_mean"), mse_m);
        report.parameter_counts.insert(name.to_string(), per_seed[0].1);
        means.push(mse_m);
        rows.push(vec![
            name.to_string(),
            per_seed[0].1.trainable.to_string(),
            num(mse_m),
            num(mse_s),
        ]);
    }
    report.scalars.insert("mse_rel_diff".into(), (means[1] - means[0]).abs() / means[0]);

    write_table(
        &dir.table("freeze_emb"),
        &["variant", "trainable_params", "mse_mean", "mse_std"],
        &rows,
    )?;
    Ok(report)
}

pub fn run_variants(cfg: &ExperimentConfig, dir: &RunDirectory) -> Result<ExperimentReport> {
    let (data, _) = cfg.dataset.load()?;
    let spec = &cfg.embed_variants;
    let cells: Vec<(EmbeddingKind, AttentionMode, u64)> = spec
        .kinds
        .iter()
        .flat_map(|&k| {
            spec.modes
                .iter()
                .flat_map(move |&m| cfg.seeds.iter().map(move |&s| (k, m, s)))
        })
        .collect();

    let results = run_cells(cells.len(), |i| {
        let (kind, mode, seed) = cells[i];
        let mut model_cfg = cfg.model.clone();
        model_cfg.embedding.kind = kind;
        model_cfg.blocks.attention = vec![mode; cfg.model.blocks.count()];
        let (model, _) = train_variant(&model_cfg, seed, &data, &cfg.train)?;
        let metrics = test_metrics(&model, &data, cfg)?;
        Ok((metrics, param_count(&model)))
    })?;

    let mut report = report_for(cfg)?;
    let mut rows = Vec::new();
    let seeds_n = cfg.seeds.len();
    for (ki, &kind) in spec.kinds.iter().enumerate() {
        for (mi, &mode) in spec.modes.iter().enumerate() {
            let base = (ki * spec.modes.len() + mi) * seeds_n;
            let per_seed = &results[base..base + seeds_n];
            let label = format!("{}-{}", kind.name(), mode.name());
            for ((m, _), &seed) in per_seed.iter().zip(&cfg.seeds) {
                report.metrics.insert(format!("{label}/seed{seed}"), *m);
            }
            let (mse_m, mse_s) = mean_std(&per_seed.iter().map(|r| r.0.mse).collect::<Vec<_>>());
            report.scalars.insert(format!("{label}/mse_mean"), mse_m);
            report.parameter_counts.insert(label.clone(), per_seed[0].1);
            rows.push(vec![
                kind.name().to_string(),
                mode.name().to_string(),
                per_seed[0].1.trainable.to_string(),
                num(mse_m),
                num(mse_s),
            ]);
        }
    }
    write_table(
        &dir.table("embed_variants"),
        &["embedding", "mode", "trainable_params", "mse_mean", "mse_std"],
        &rows,
    )?;
    Ok(report)
}
