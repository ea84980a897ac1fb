//! Versioned binary checkpoints: magic + version + JSON header describing
//! the model and optimizer, followed by a little-endian f64 payload holding
//! parameter values and Adam moments. Saving the same state twice produces
//! byte-identical files.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::{Adam, AdamConfig};
use crate::error::{Error, Result};
use crate::model::{Forecaster, ForecastConfig, ForecastModel};

const MAGIC: &[u8; 8] = b"TSTLABCK";
const VERSION: u32 = 1;
/// magic + version + header length.
const PREAMBLE: usize = 8 + 4 + 8;

#[derive(Serialize, Deserialize)]
struct ParamMeta {
    name: String,
    rows: usize,
    cols: usize,
    trainable: bool,
}

#[derive(Serialize, Deserialize)]
struct AdamMeta {
    cfg: AdamConfig,
    step: u64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: ForecastConfig,
    seed: u64,
    epoch: usize,
    val_history: Vec<f64>,
    params: Vec<ParamMeta>,
    adam: Option<AdamMeta>,
    payload_sha256: String,
}

/// Everything a checkpoint restores: the model with its exact weights, the
/// optimizer state if training was in flight, and the validation trace.
#[derive(Debug)]
pub struct Checkpoint {
    pub model: ForecastModel,
    pub adam: Option<Adam>,
    pub epoch: usize,
    pub val_history: Vec<f64>,
}

impl Checkpoint {
    /// Guard for callers that expect a specific architecture: loading a
    /// checkpoint into a different configuration is an error, not a merge.
    pub fn require_config(&self, expected: &ForecastConfig) -> Result<()> {
        if self.model.config() != expected {
            return Err(Error::Incompatible(format!(
                "checkpoint holds a {:?}/{:?} model, caller expects {:?}/{:?}",
                self.model.config().architecture,
                self.model.config().blocks.attention,
                expected.architecture,
                expected.blocks.attention,
            )));
        }
        Ok(())
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn save_checkpoint(
    model: &ForecastModel,
    adam: Option<&Adam>,
    epoch: usize,
    val_history: &[f64],
    path: impl AsRef<Path>,
) -> Result<()> {
    let mut payload = Vec::new();
    for e in model.params().entries() {
        for &v in &e.data {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }
    if let Some(a) = adam {
        let (m, v) = a.moments();
        for buf in m.iter().chain(v.iter()) {
            for &x in buf.iter() {
                payload.extend_from_slice(&x.to_le_bytes());
            }
        }
    }
    let header = Header {
        config: model.config().clone(),
        seed: model.seed(),
        epoch,
        val_history: val_history.to_vec(),
        params: model
            .params()
            .entries()
            .iter()
            .map(|e| ParamMeta {
                name: e.name.clone(),
                rows: e.rows,
                cols: e.cols,
                trainable: e.trainable,
            })
            .collect(),
        adam: adam.map(|a| AdamMeta { cfg: a.cfg, step: a.step_count() }),
        payload_sha256: hex(&Sha256::digest(&payload)),
    };
    let hjson = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(PREAMBLE + hjson.len() + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(hjson.len() as u64).to_le_bytes());
    out.extend_from_slice(&hjson);
    out.extend_from_slice(&payload);
    fs::write(path, out)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let display = path.display().to_string();
    let bytes = fs::read(path)?;
    let corrupt = |message: String| Error::FileFormat { path: display.clone(), message };

    if bytes.len() < PREAMBLE || &bytes[..8] != MAGIC {
        return Err(corrupt("not a checkpoint file".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != VERSION {
        return Err(corrupt(format!("checkpoint version {version}, this build reads {VERSION}")));
    }
    let hlen = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    if bytes.len() < PREAMBLE + hlen {
        return Err(corrupt("truncated header".into()));
    }
    let header: Header = serde_json::from_slice(&bytes[PREAMBLE..PREAMBLE + hlen])
        .map_err(|e| corrupt(format!("unreadable header: {e}")))?;
    let payload = &bytes[PREAMBLE + hlen..];

    let param_scalars: usize = header.params.iter().map(|p| p.rows * p.cols).sum();
    let moment_scalars: usize = if header.adam.is_some() {
        2 * header.params.iter().filter(|p| p.trainable).map(|p| p.rows * p.cols).sum::<usize>()
    } else {
        0
    };
    if payload.len() != 8 * (param_scalars + moment_scalars) {
        return Err(corrupt(format!(
            "payload holds {} bytes, header promises {}",
            payload.len(),
            8 * (param_scalars + moment_scalars)
        )));
    }
    if hex(&Sha256::digest(payload)) != header.payload_sha256 {
        return Err(corrupt("payload checksum mismatch".into()));
    }

    let mut model = ForecastModel::new(header.config, header.seed)?;
    if model.params().len() != header.params.len() {
        return Err(Error::Incompatible(format!(
            "checkpoint stores {} parameters, the configured model has {}",
            header.params.len(),
            model.params().len()
        )));
    }
    for (entry, meta) in model.params().entries().iter().zip(&header.params) {
        if entry.name != meta.name
            || entry.rows != meta.rows
            || entry.cols != meta.cols
            || entry.trainable != meta.trainable
        {
            return Err(Error::Incompatible(format!(
                "checkpoint parameter {} ({}x{}) does not match model parameter {} ({}x{})",
                meta.name, meta.rows, meta.cols, entry.name, entry.rows, entry.cols
            )));
        }
    }

    let mut off = 0usize;
    let read_f64 = |n: usize, off: &mut usize| {
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            out.push(f64::from_le_bytes(payload[*off..*off + 8].try_into().unwrap()));
            *off += 8;
        }
        out
    };
    for entry in model.params_mut().entries_mut() {
        entry.data = read_f64(entry.numel(), &mut off);
    }
    let adam = header.adam.map(|meta| {
        let m: Vec<Vec<f64>> = model
            .params()
            .entries()
            .iter()
            .map(|e| if e.trainable { read_f64(e.numel(), &mut off) } else { Vec::new() })
            .collect();
        let v: Vec<Vec<f64>> = model
            .params()
            .entries()
            .iter()
            .map(|e| if e.trainable { read_f64(e.numel(), &mut off) } else { Vec::new() })
            .collect();
        Adam::from_parts(meta.cfg, meta.step, m, v)
    });

    Ok(Checkpoint { model, adam, epoch: header.epoch, val_history: header.val_history })
}
