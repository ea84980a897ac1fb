//! One runner per experiment. Runners share the cell plumbing here: a cell
//! is one independent (variant, seed) training or evaluation, cells run on a
//! small work pool, and assembly is ordered by cell index so scheduling can
//! never change a byte of output.

mod embed;
mod perturb;
mod posenc;
mod replace;
mod smooth;
mod sweeps;
mod toyattn;

use std::sync::Mutex;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Instant;

use tstlab_core::analysis::{ExperimentReport, ParamCount};
use tstlab_core::dataset::{Split, WindowedDataset};
use tstlab_core::error::Result;
use tstlab_core::model::{ForecastConfig, ForecastModel, Forecaster};
use tstlab_core::rng::stream;
use tstlab_core::surgery::EvalMods;
use tstlab_core::trainer::{MetricSet, TrainConfig, TrainOutcome, evaluate, train};

use crate::config::{ExperimentConfig, ExperimentKind};
use crate::rundir::RunDirectory;

/// Run the experiment a config names, writing artifacts into `dir`.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    dir: &RunDirectory,
    paper_scale: bool,
) -> Result<ExperimentReport> {
    cfg.validate()?;
    let started = Instant::now();
    let report = match cfg.experiment {
        ExperimentKind::Replace => replace::run(cfg, dir)?,
        ExperimentKind::PerturbGrid => perturb::run(cfg, dir)?,
        ExperimentKind::PatchSweep => sweeps::run_patch(cfg, dir)?,
        ExperimentKind::BlockSweep => sweeps::run_block(cfg, dir)?,
        ExperimentKind::PosencZero => posenc::run(cfg, dir)?,
        ExperimentKind::FreezeEmb => embed::run_freeze(cfg, dir)?,
        ExperimentKind::EmbedVariants => embed::run_variants(cfg, dir)?,
        ExperimentKind::ToyAttention => toyattn::run(cfg, dir, paper_scale)?,
        ExperimentKind::SmoothBlocks => smooth::run(cfg, dir)?,
    };
    dir.finish(&report)?;
    eprintln!(
        "[timing] {}: {:.1}s total",
        cfg.experiment,
        started.elapsed().as_secs_f64()
    );
    Ok(report)
}

/// A fresh report stamped with this config's identity.
pub fn report_for(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    Ok(ExperimentReport::new(cfg.experiment.name(), cfg.hash()?, cfg.seeds.clone()))
}

/// Run `n` independent cells on a work pool sized to the machine; results
/// are returned in cell order regardless of scheduling.
pub fn run_cells<T, F>(n: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync,
{
    if n == 0 {
        return Ok(Vec::new());
    }
    let workers = std::thread::available_parallelism().map(|p| p.get()).unwrap_or(1).min(n);
    if workers <= 1 {
        return (0..n).map(&f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<T>>>> = Mutex::new((0..n).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| {
                loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    if i >= n {
                        break;
                    }
                    let r = f(i);
                    slots.lock().unwrap()[i] = Some(r);
                }
            });
        }
    });
    slots.into_inner().unwrap().into_iter().map(|s| s.expect("cell ran")).collect()
}

/// One trained model: fresh parameters from `seed`, trained with the shared
/// recipe reseeded to the same `seed`.
pub fn train_variant(
    model_cfg: &ForecastConfig,
    seed: u64,
    data: &WindowedDataset,
    tc: &TrainConfig,
) -> Result<(ForecastModel, TrainOutcome)> {
    let mut model = ForecastModel::new(model_cfg.clone(), seed)?;
    let mut tc = *tc;
    tc.seed = seed;
    let outcome = train(&mut model, data, &tc)?;
    Ok((model, outcome))
}

/// Unmodified test-set metrics for a trained model.
pub fn test_metrics(
    model: &ForecastModel,
    data: &WindowedDataset,
    cfg: &ExperimentConfig,
) -> Result<MetricSet> {
    test_metrics_with(model, data, cfg, &EvalMods::none(), 0)
}

/// Test-set metrics under evaluation-time modifications.
pub fn test_metrics_with(
    model: &ForecastModel,
    data: &WindowedDataset,
    cfg: &ExperimentConfig,
    mods: &EvalMods,
    noise_seed: u64,
) -> Result<MetricSet> {
    let mut noise = stream(noise_seed, "eval-noise");
    evaluate(
        model,
        data,
        Split::Test,
        cfg.train.batch_size,
        cfg.train.loss_on_normalized,
        mods,
        &mut noise,
    )
}

pub fn param_count(model: &ForecastModel) -> ParamCount {
    ParamCount {
        trainable: model.params().trainable_numel(),
        total: model.params().numel(),
    }
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|&x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Format a float for CSV cells: shortest round-trip digits.
pub fn num(v: f64) -> String {
    format!("{v}")
}
