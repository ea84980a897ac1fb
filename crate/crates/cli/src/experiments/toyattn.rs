//! Interpretability run on the labeled toy series: train, capture test-set
//! attention, score event-patch mass, and histogram decoded amplitude
//! predictions by true next state.

use tstlab_core::analysis::{
    ExperimentReport, capture_attention, event_attention_mass, predicted_state_density,
    save_capture,
};
use tstlab_core::dataset::{LabeledSeries, Split, WindowedDataset, generate_toy};
use tstlab_core::error::{Error, Result};
use tstlab_core::rng::stream;
use tstlab_core::surgery::EvalMods;
use tstlab_core::trainer::save_checkpoint;

use super::{num, param_count, report_for, test_metrics, train_variant};
use crate::config::ExperimentConfig;
use crate::rundir::{RunDirectory, write_table};

pub fn run(cfg: &ExperimentConfig, dir: &RunDirectory, paper_scale: bool) -> Result<ExperimentReport> {
    let (data, labels) = cfg.dataset.load()?;
    let labels = labels
        .ok_or_else(|| Error::InvalidArg("toy-attention requires the labeled toy dataset".into()))?;
    let toy = &cfg.dataset.toy;
    let spec = &cfg.toy_attention;
    let seed = cfg.seeds[0];

    let (model, outcome) = train_variant(&cfg.model, seed, &data, &cfg.train)?;
    let mut report = report_for(cfg)?;
    report.seeds = vec![seed];
    report.parameter_counts.insert("model".into(), param_count(&model));
    report.metrics.insert("test".into(), test_metrics(&model, &data, cfg)?);
    if cfg.save_checkpoints {
        save_checkpoint(&model, None, outcome.best_epoch, &outcome.val_history(), dir.checkpoint("model"))?;
    }

    // Attention capture over the test split, persisted for offline replay.
    let mut noise = stream(seed, "capture");
    let capture =
        capture_attention(&model, &data, Split::Test, cfg.train.batch_size, &EvalMods::none(), &mut noise)?;
    save_capture(&capture, dir.capture("attention"))?;
    let stats = event_attention_mass(&capture, &labels, toy.event_span(), spec.bootstrap_seed)?;

    report.scalars.insert("event_patch_fraction".into(), stats.event_patch_fraction);
    let mut block_rows = Vec::new();
    for b in 0..stats.blocks {
        report.scalars.insert(format!("block{b}/event_mass"), stats.pooled[b]);
        report.scalars.insert(format!("block{b}/event_mass_ci_lo"), stats.pooled_ci[b].0);
        report.scalars.insert(format!("block{b}/event_mass_ci_hi"), stats.pooled_ci[b].1);
        report.scalars.insert(format!("block{b}/recent_event_mass"), stats.recent_event_mass[b]);
        block_rows.push(vec![
            b.to_string(),
            num(stats.pooled[b]),
            num(stats.pooled_ci[b].0),
            num(stats.pooled_ci[b].1),
            num(stats.recent_event_mass[b]),
            num(stats.event_patch_fraction),
        ]);
    }
    write_table(
        &dir.table("event_mass"),
        &["block", "event_mass", "ci_lo", "ci_hi", "recent_event_mass", "event_patch_fraction"],
        &block_rows,
    )?;

    let mut head_rows = Vec::new();
    for b in 0..stats.blocks {
        for h in 0..stats.heads {
            head_rows.push(vec![b.to_string(), h.to_string(), num(stats.per_head[b][h])]);
        }
    }
    write_table(&dir.table("event_mass_heads"), &["block", "head", "event_mass"], &head_rows)?;

    let mut query_rows = Vec::new();
    for b in 0..stats.blocks {
        for t in 0..stats.tokens {
            query_rows.push(vec![
                b.to_string(),
                t.to_string(),
                num(stats.per_query_event[b][t]),
                num(stats.per_query_nonevent[b][t]),
            ]);
        }
    }
    write_table(
        &dir.table("event_mass_queries"),
        &["block", "query", "event_mass", "nonevent_mass"],
        &query_rows,
    )?;

    // Density over the test split; --paper-scale lifts the window count by
    // extending the same series generator.
    let (density_data, density_labels) = if paper_scale {
        extended_dataset(cfg, spec.paper_scale_density)?
    } else {
        (data, labels)
    };
    let mut noise = stream(seed, "density");
    let densities = predicted_state_density(
        &model,
        &density_data,
        &density_labels,
        toy,
        &cfg.dataset.machine,
        Split::Test,
        cfg.train.batch_size,
        cfg.train.loss_on_normalized,
        &EvalMods::none(),
        &mut noise,
        &spec.bins,
    )?;

    let mut density_rows = Vec::new();
    for d in &densities {
        report.scalars.insert(format!("state{}/mode_amplitude", d.state), d.mode_amplitude);
        report.scalars.insert(
            format!("state{}/degenerate", d.state),
            if d.degenerate { 1.0 } else { 0.0 },
        );
        if d.degenerate {
            report.notes.push(format!(
                "state {} density peaks at {:.2}, far from level {:.1}",
                d.state, d.mode_amplitude, d.level
            ));
        }
        for (bin, &count) in d.counts.iter().enumerate() {
            if count > 0 {
                density_rows.push(vec![
                    d.state.to_string(),
                    num(d.level),
                    num(d.bins.center(bin)),
                    count.to_string(),
                ]);
            }
        }
    }
    write_table(
        &dir.table("state_density"),
        &["state", "level", "amplitude", "count"],
        &density_rows,
    )?;
    let total: usize = densities.iter().map(|d| d.total).sum();
    report.scalars.insert("density_samples".into(), total as f64);
    Ok(report)
}

/// A longer run of the same generator so the test split reaches `target`
/// windows.
fn extended_dataset(
    cfg: &ExperimentConfig,
    target: usize,
) -> Result<(WindowedDataset, LabeledSeries)> {
    let w = &cfg.dataset.window;
    let mut toy = cfg.dataset.toy.clone();
    // test windows ~= test_frac * (length - lookback - horizon + 1)
    toy.length = (target as f64 / w.test_frac).ceil() as usize + w.lookback + w.horizon;
    loop {
        let labels = generate_toy(&toy, &cfg.dataset.machine)?;
        let data = WindowedDataset::new(labels.values.clone(), 1, *w)?;
        if data.len(Split::Test) >= target {
            return Ok((data, labels));
        }
        toy.length += target.max(64);
    }
}
