//! `tstlab`: one subcommand per experiment, configured by TOML, writing
//! tables, reports, and checkpoints into a run directory.
//!
//! Exit codes: 0 on success, 1 on configuration or I/O errors, 2 when a
//! computation produced non-finite values.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use tstlab_cli::config::{ExperimentConfig, ExperimentKind};
use tstlab_cli::experiments::run_experiment;
use tstlab_cli::rundir::RunDirectory;
use tstlab_core::dataset::{export_toy_csv, generate_toy};
use tstlab_core::error::{Error, Result};

#[derive(Parser)]
#[command(name = "tstlab", version, about = "Transformer forecasting laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model per attention replacement and compare test error.
    Replace(RunArgs),
    /// Sweep attenuation and noise over attention or FFN sublayer outputs.
    PerturbGrid(RunArgs),
    /// Train across patch lengths and compare test error.
    PatchSweep(RunArgs),
    /// Zero the positional encoding at evaluation and measure the change.
    PosencZero(RunArgs),
    /// Train on the labeled toy series and analyze attention and decoding.
    ToyAttention(RunArgs),
    /// Compare trained against frozen-at-init input embeddings.
    FreezeEmb(RunArgs),
    /// Cross embedding kinds with attention replacements.
    EmbedVariants(RunArgs),
    /// Train across encoder depths and compare test error.
    BlockSweep(RunArgs),
    /// Replace trained attention with uniform averaging, per block subset.
    SmoothBlocks(RunArgs),
    /// Generate the toy series from a config and write it to CSV.
    ExportToy(ExportToyArgs),
}

impl Command {
    fn kind(&self) -> Option<ExperimentKind> {
        match self {
            Command::Replace(_) => Some(ExperimentKind::Replace),
            Command::PerturbGrid(_) => Some(ExperimentKind::PerturbGrid),
            Command::PatchSweep(_) => Some(ExperimentKind::PatchSweep),
            Command::PosencZero(_) => Some(ExperimentKind::PosencZero),
            Command::ToyAttention(_) => Some(ExperimentKind::ToyAttention),
            Command::FreezeEmb(_) => Some(ExperimentKind::FreezeEmb),
            Command::EmbedVariants(_) => Some(ExperimentKind::EmbedVariants),
            Command::BlockSweep(_) => Some(ExperimentKind::BlockSweep),
            Command::SmoothBlocks(_) => Some(ExperimentKind::SmoothBlocks),
            Command::ExportToy(_) => None,
        }
    }
}

#[derive(Args)]
struct RunArgs {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides the config's `out`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated seed list (overrides the config's `seeds`).
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Evaluate amplitude densities at publication sample counts.
    #[arg(long)]
    paper_scale: bool,
}

#[derive(Args)]
struct ExportToyArgs {
    /// Experiment configuration (TOML); only its dataset section is used.
    #[arg(long)]
    config: PathBuf,
    /// Destination CSV path.
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code: u8 = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::NonFinite { .. } => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}

fn execute(cli: Cli) -> Result<()> {
    let kind = cli.command.kind();
    match cli.command {
        Command::ExportToy(args) => export_toy(args),
        Command::Replace(args)
        | Command::PerturbGrid(args)
        | Command::PatchSweep(args)
        | Command::PosencZero(args)
        | Command::ToyAttention(args)
        | Command::FreezeEmb(args)
        | Command::EmbedVariants(args)
        | Command::BlockSweep(args)
        | Command::SmoothBlocks(args) => run(kind.expect("run subcommands carry a kind"), args),
    }
}

fn run(kind: ExperimentKind, args: RunArgs) -> Result<()> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if cfg.experiment != kind {
        return Err(Error::InvalidArg(format!(
            "config declares experiment '{}' but the subcommand is '{kind}'",
            cfg.experiment
        )));
    }
    if let Some(out) = args.out {
        cfg.out = Some(out);
    }
    if let Some(seeds) = args.seeds {
        cfg.seeds = seeds;
    }
    cfg.validate()?;
    let out = cfg
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from("runs").join(kind.name()));
    let dir = RunDirectory::create(&out)?;
    dir.write_config(&cfg.to_toml()?)?;
    run_experiment(&cfg, &dir, args.paper_scale)?;
    println!("{}", dir.root().display());
    Ok(())
}

fn export_toy(args: ExportToyArgs) -> Result<()> {
    let cfg = ExperimentConfig::load(&args.config)?;
    let labels = generate_toy(&cfg.dataset.toy, &cfg.dataset.machine)?;
    export_toy_csv(&args.out, &labels, cfg.dataset.toy.event_span())?;
    println!("{}", args.out.display());
    Ok(())
}
