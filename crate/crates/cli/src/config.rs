//! Run configuration: one TOML file pins the dataset, model, training
//! recipe, and intervention for an experiment. The file round-trips
//! losslessly and hashes identically regardless of key order.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tstlab_core::analysis::{DensityBins, config_hash};
use tstlab_core::dataset::{
    LabeledSeries, StateMachine, ToySeriesConfig, WindowSpec, WindowedDataset, generate_toy,
    load_csv,
};
use tstlab_core::error::{Error, Result};
use tstlab_core::model::{EmbeddingKind, ForecastConfig};
use tstlab_core::surgery::{AttentionMode, PerturbTarget};
use tstlab_core::trainer::TrainConfig;

/// One experiment per subcommand; the config names which one it is for.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Replace,
    PerturbGrid,
    PatchSweep,
    PosencZero,
    ToyAttention,
    FreezeEmb,
    EmbedVariants,
    BlockSweep,
    SmoothBlocks,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Replace => "replace",
            ExperimentKind::PerturbGrid => "perturb-grid",
            ExperimentKind::PatchSweep => "patch-sweep",
            ExperimentKind::PosencZero => "posenc-zero",
            ExperimentKind::ToyAttention => "toy-attention",
            ExperimentKind::FreezeEmb => "freeze-emb",
            ExperimentKind::EmbedVariants => "embed-variants",
            ExperimentKind::BlockSweep => "block-sweep",
            ExperimentKind::SmoothBlocks => "smooth-blocks",
        }
    }
}

impl std::fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    #[default]
    Toy,
    Csv,
}

/// Where the series comes from and how it is windowed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSpec {
    pub kind: DatasetKind,
    pub toy: ToySeriesConfig,
    pub machine: StateMachine,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub csv_path: Option<PathBuf>,
    /// Column holding timestamps in CSV files; ignored for the toy series.
    pub date_column: String,
    pub window: WindowSpec,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec {
            kind: DatasetKind::Toy,
            toy: ToySeriesConfig::default(),
            machine: StateMachine::default(),
            csv_path: None,
            date_column: "date".into(),
            window: WindowSpec::default(),
        }
    }
}

impl DatasetSpec {
    /// Materialize the windowed dataset (and event labels for the toy kind).
    pub fn load(&self) -> Result<(WindowedDataset, Option<LabeledSeries>)> {
        match self.kind {
            DatasetKind::Toy => {
                let labels = generate_toy(&self.toy, &self.machine)?;
                let data = WindowedDataset::new(labels.values.clone(), 1, self.window)?;
                Ok((data, Some(labels)))
            }
            DatasetKind::Csv => {
                let path = self.csv_path.as_ref().ok_or_else(|| {
                    Error::InvalidArg("dataset.kind = \"csv\" requires dataset.csv_path".into())
                })?;
                let series = load_csv(path, &self.date_column)?;
                let channels = series.names.len();
                let data = WindowedDataset::new(series.values, channels, self.window)?;
                Ok((data, None))
            }
        }
    }
}

/// Modes compared by the replace experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReplaceSpec {
    pub modes: Vec<AttentionMode>,
}

impl Default for ReplaceSpec {
    fn default() -> Self {
        ReplaceSpec { modes: AttentionMode::ALL.to_vec() }
    }
}

/// Grid and sourcing for the perturbation experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerturbGridSpec {
    pub alphas: Vec<f64>,
    pub etas: Vec<f64>,
    pub targets: Vec<PerturbTarget>,
    /// Load this checkpoint instead of training when set.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
    /// Allow training a model when no checkpoint is given.
    pub train: bool,
    /// Seed family for the grid's evaluation noise.
    pub noise_seed: u64,
}

impl Default for PerturbGridSpec {
    fn default() -> Self {
        PerturbGridSpec {
            alphas: vec![0.0, 0.25, 0.5, 0.75, 1.0],
            etas: vec![0.0, 0.5, 1.0, 1.5, 2.0],
            targets: vec![PerturbTarget::Attention, PerturbTarget::Ffn],
            checkpoint: None,
            train: true,
            noise_seed: 777,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PatchSweepSpec {
    /// Stride always equals the patch length in the sweep.
    pub patch_lengths: Vec<usize>,
}

impl Default for PatchSweepSpec {
    fn default() -> Self {
        PatchSweepSpec { patch_lengths: vec![16, 48, 112, 336] }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BlockSweepSpec {
    pub block_counts: Vec<usize>,
}

impl Default for BlockSweepSpec {
    fn default() -> Self {
        BlockSweepSpec { block_counts: vec![1, 2, 3, 4, 6] }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyAttentionSpec {
    pub bootstrap_seed: u64,
    pub bins: DensityBins,
    /// Test-window target for the density histogram under --paper-scale.
    pub paper_scale_density: usize,
}

impl Default for ToyAttentionSpec {
    fn default() -> Self {
        ToyAttentionSpec {
            bootstrap_seed: 42,
            bins: DensityBins::default(),
            paper_scale_density: 51_200,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbedVariantsSpec {
    pub kinds: Vec<EmbeddingKind>,
    pub modes: Vec<AttentionMode>,
}

impl Default for EmbedVariantsSpec {
    fn default() -> Self {
        EmbedVariantsSpec {
            kinds: EmbeddingKind::ALL.to_vec(),
            modes: vec![AttentionMode::Raw, AttentionMode::Mean],
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SmoothSpec {
    /// Block-id subsets to smooth; empty means every single block plus the
    /// full stack.
    pub subsets: Vec<Vec<usize>>,
}

impl SmoothSpec {
    /// The subsets actually evaluated for a stack of `blocks` blocks.
    pub fn resolve(&self, blocks: usize) -> Vec<Vec<usize>> {
        if !self.subsets.is_empty() {
            return self.subsets.clone();
        }
        let mut out: Vec<Vec<usize>> = (0..blocks).map(|b| vec![b]).collect();
        if blocks > 1 {
            out.push((0..blocks).collect());
        }
        out
    }
}

/// Everything a run needs; (config, seeds) determines every artifact byte.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub seeds: Vec<u64>,
    /// Default output directory; --out overrides, and neither affects the
    /// config hash.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    pub save_checkpoints: bool,
    pub dataset: DatasetSpec,
    pub model: ForecastConfig,
    pub train: TrainConfig,
    pub replace: ReplaceSpec,
    pub perturb: PerturbGridSpec,
    pub patch_sweep: PatchSweepSpec,
    pub block_sweep: BlockSweepSpec,
    pub toy_attention: ToyAttentionSpec,
    pub embed_variants: EmbedVariantsSpec,
    pub smooth: SmoothSpec,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            experiment: ExperimentKind::Replace,
            seeds: vec![0, 1, 2],
            out: None,
            save_checkpoints: false,
            dataset: DatasetSpec::default(),
            model: ForecastConfig::default(),
            train: TrainConfig::default(),
            replace: ReplaceSpec::default(),
            perturb: PerturbGridSpec::default(),
            patch_sweep: PatchSweepSpec::default(),
            block_sweep: BlockSweepSpec::default(),
            toy_attention: ToyAttentionSpec::default(),
            embed_variants: EmbedVariantsSpec::default(),
            smooth: SmoothSpec::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::FileFormat {
            path: "<config>".into(),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: ExperimentConfig = toml::from_str(&text).map_err(|e| Error::FileFormat {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::FileFormat {
            path: "<config>".into(),
            message: e.to_string(),
        })
    }

    /// Hash of everything that shapes the numbers; the output directory is
    /// excluded so the same run lands identically anywhere.
    pub fn hash(&self) -> Result<String> {
        let mut hashable = self.clone();
        hashable.out = None;
        config_hash(&hashable)
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::InvalidArg("seeds list is empty".into()));
        }
        self.model.validate()?;
        self.dataset.window.validate()?;
        self.dataset.toy.validate()?;
        self.dataset.machine.validate()?;
        if self.model.patch.lookback != self.dataset.window.lookback {
            return Err(Error::InvalidArg(format!(
                "model lookback {} disagrees with window lookback {}",
                self.model.patch.lookback, self.dataset.window.lookback
            )));
        }
        if self.model.horizon != self.dataset.window.horizon {
            return Err(Error::InvalidArg(format!(
                "model horizon {} disagrees with window horizon {}",
                self.model.horizon, self.dataset.window.horizon
            )));
        }
        match self.experiment {
            ExperimentKind::Replace => {
                if self.replace.modes.is_empty() {
                    return Err(Error::InvalidArg("replace.modes is empty".into()));
                }
            }
            ExperimentKind::PerturbGrid => {
                let p = &self.perturb;
                if p.alphas.is_empty() || p.etas.is_empty() || p.targets.is_empty() {
                    return Err(Error::InvalidArg("perturb grid has an empty axis".into()));
                }
                if p.checkpoint.is_none() && !p.train {
                    return Err(Error::InvalidArg(
                        "perturb: no checkpoint given and training disabled".into(),
                    ));
                }
            }
            ExperimentKind::PatchSweep => {
                if self.patch_sweep.patch_lengths.is_empty() {
                    return Err(Error::InvalidArg("patch_sweep.patch_lengths is empty".into()));
                }
                for &p in &self.patch_sweep.patch_lengths {
                    if p == 0 || p > self.model.patch.lookback {
                        return Err(Error::InvalidArg(format!(
                            "patch length {p} outside (0, lookback {}]",
                            self.model.patch.lookback
                        )));
                    }
                }
            }
            ExperimentKind::BlockSweep => {
                if self.block_sweep.block_counts.is_empty()
                    || self.block_sweep.block_counts.contains(&0)
                {
                    return Err(Error::InvalidArg("block_sweep.block_counts needs counts >= 1".into()));
                }
            }
            ExperimentKind::ToyAttention => {
                if self.dataset.kind != DatasetKind::Toy {
                    return Err(Error::InvalidArg(
                        "toy-attention requires the labeled toy dataset".into(),
                    ));
                }
            }
            ExperimentKind::EmbedVariants => {
                let e = &self.embed_variants;
                if e.kinds.is_empty() || e.modes.is_empty() {
                    return Err(Error::InvalidArg("embed_variants axes must be nonempty".into()));
                }
            }
            ExperimentKind::SmoothBlocks => {
                let n = self.model.blocks.count();
                for subset in &self.smooth.subsets {
                    for &b in subset {
                        if b >= n {
                            return Err(Error::InvalidArg(format!(
                                "smooth subset names block {b}, model has {n}"
                            )));
                        }
                    }
                }
            }
            ExperimentKind::PosencZero | ExperimentKind::FreezeEmb => {}
        }
        Ok(())
    }
}
