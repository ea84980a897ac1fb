//! Recorded attention: every head's row-stochastic matrix for every
//! captured sequence, with the patch-to-time mapping needed to line tokens
//! up with series events, persisted as a versioned binary container.

use std::fs;
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::Tape;
use crate::dataset::{Split, WindowedDataset};
use crate::error::{Error, Result};
use crate::model::{Architecture, Forecaster, ForecastModel, ForwardCapture};
use crate::surgery::{AttentionMode, EvalMods};

const MAGIC: &[u8; 8] = b"TSTLABAC";
const VERSION: u32 = 1;
const PREAMBLE: usize = 8 + 4 + 8;

/// Attention matrices for a set of captured sequences. Values are stored
/// flat: sequence outermost, then block, head, query row, key column.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionCapture {
    pub blocks: usize,
    pub heads: usize,
    pub tokens: usize,
    /// Lookback-window start step of each sequence.
    pub window_starts: Vec<usize>,
    /// Half-open step range each token covers, relative to the window start.
    pub token_spans: Vec<(usize, usize)>,
    values: Vec<f64>,
}

impl AttentionCapture {
    pub fn sequences(&self) -> usize {
        self.window_starts.len()
    }

    /// One head's T x T row-major matrix.
    pub fn matrix(&self, sequence: usize, block: usize, head: usize) -> &[f64] {
        let t = self.tokens;
        let start = (((sequence * self.blocks) + block) * self.heads + head) * t * t;
        &self.values[start..start + t * t]
    }

    fn expected_len(&self) -> usize {
        self.sequences() * self.blocks * self.heads * self.tokens * self.tokens
    }

    /// Every row must be stochastic within the post-capture tolerance.
    fn validate(&self) -> Result<()> {
        if self.values.len() != self.expected_len() {
            return Err(Error::InvalidArg(format!(
                "capture holds {} values, geometry needs {}",
                self.values.len(),
                self.expected_len()
            )));
        }
        if self.token_spans.len() != self.tokens {
            return Err(Error::InvalidArg(format!(
                "{} token spans for {} tokens",
                self.token_spans.len(),
                self.tokens
            )));
        }
        for (r, row) in self.values.chunks_exact(self.tokens).enumerate() {
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-8 {
                return Err(Error::InvalidArg(format!(
                    "captured attention row {r} sums to {sum}"
                )));
            }
        }
        Ok(())
    }
}

/// Run the model over a split and record every attention matrix. Requires a
/// patch-token model whose blocks all produce attention (zero-attention
/// blocks have nothing to record).
pub fn capture_attention(
    model: &ForecastModel,
    data: &WindowedDataset,
    split: Split,
    batch_size: usize,
    mods: &EvalMods,
    noise: &mut ChaCha8Rng,
) -> Result<AttentionCapture> {
    if model.config().architecture != Architecture::PatchToken {
        return Err(Error::Unsupported(
            "attention capture maps tokens to time; channel tokens have no spans".into(),
        ));
    }
    if model.config().blocks.attention.contains(&AttentionMode::Zero) {
        return Err(Error::InvalidArg(
            "zero-attention blocks have no attention matrix to capture".into(),
        ));
    }
    if batch_size == 0 {
        return Err(Error::InvalidArg("batch_size must be positive".into()));
    }
    let n = data.len(split);
    if n == 0 {
        return Err(Error::InvalidArg(format!("cannot capture empty split {split:?}")));
    }

    let c = data.channels();
    let l = data.spec().lookback;
    let spec = model.config().patch;
    let tokens = model.tokens();
    let heads = model.config().blocks.heads;
    let blocks = model.config().blocks.count();
    let token_spans: Vec<(usize, usize)> = (0..tokens).map(|t| spec.token_span(t)).collect();

    let mut values = Vec::with_capacity(n * c * blocks * heads * tokens * tokens);
    let mut window_starts = Vec::with_capacity(n * c);
    let indices: Vec<usize> = (0..n).collect();
    for batch in indices.chunks(batch_size) {
        let mut input = Vec::with_capacity(batch.len() * c * l);
        for &i in batch {
            input.extend_from_slice(&data.sample(split, i).input);
        }
        let mut tape = Tape::new();
        let bound = model.params().bind(&mut tape, false);
        let x = tape.leaf(input, batch.len() * c, l)?;
        let mut cap = ForwardCapture::default();
        model.forward(&mut tape, &bound, x, mods, noise, Some(&mut cap))?;
        let rows_per_group = heads * tokens;
        for (gi, &i) in batch.iter().enumerate() {
            for ch in 0..c {
                let g = gi * c + ch;
                for block in &cap.blocks {
                    let start = g * rows_per_group * tokens;
                    values.extend_from_slice(&block[start..start + rows_per_group * tokens]);
                }
                window_starts.push(data.start_of(split, i));
            }
        }
    }

    let capture = AttentionCapture { blocks, heads, tokens, window_starts, token_spans, values };
    capture.validate()?;
    Ok(capture)
}

#[derive(Serialize, Deserialize)]
struct CaptureHeader {
    blocks: usize,
    heads: usize,
    tokens: usize,
    window_starts: Vec<usize>,
    token_spans: Vec<(usize, usize)>,
    payload_sha256: String,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn save_capture(capture: &AttentionCapture, path: impl AsRef<Path>) -> Result<()> {
    let mut payload = Vec::with_capacity(8 * capture.values.len());
    for &v in &capture.values {
        payload.extend_from_slice(&v.to_le_bytes());
    }
    let header = CaptureHeader {
        blocks: capture.blocks,
        heads: capture.heads,
        tokens: capture.tokens,
        window_starts: capture.window_starts.clone(),
        token_spans: capture.token_spans.clone(),
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

pub fn load_capture(path: impl AsRef<Path>) -> Result<AttentionCapture> {
    let path = path.as_ref();
    let display = path.display().to_string();
    let bytes = fs::read(path)?;
    let corrupt = |message: String| Error::FileFormat { path: display.clone(), message };

    if bytes.len() < PREAMBLE || &bytes[..8] != MAGIC {
        return Err(corrupt("not a capture file".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != VERSION {
        return Err(corrupt(format!("capture version {version}, this build reads {VERSION}")));
    }
    let hlen = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    if bytes.len() < PREAMBLE + hlen {
        return Err(corrupt("truncated header".into()));
    }
    let header: CaptureHeader = serde_json::from_slice(&bytes[PREAMBLE..PREAMBLE + hlen])
        .map_err(|e| corrupt(format!("unreadable header: {e}")))?;
    let payload = &bytes[PREAMBLE + hlen..];
    let scalars = header.window_starts.len() * header.blocks * header.heads * header.tokens
        * header.tokens;
    if payload.len() != 8 * scalars {
        return Err(corrupt(format!(
            "payload holds {} bytes, header promises {}",
            payload.len(),
            8 * scalars
        )));
    }
    if hex(&Sha256::digest(payload)) != header.payload_sha256 {
        return Err(corrupt("payload checksum mismatch".into()));
    }
    let values: Vec<f64> = payload
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
        .collect();
    let capture = AttentionCapture {
        blocks: header.blocks,
        heads: header.heads,
        tokens: header.tokens,
        window_starts: header.window_starts,
        token_spans: header.token_spans,
        values,
    };
    capture.validate()?;
    Ok(capture)
}

#[cfg(test)]
pub(crate) mod test_captures {
    use super::AttentionCapture;

    /// Capture where every head holds the same `matrix` for every sequence.
    pub fn constant(
        sequences: usize,
        blocks: usize,
        heads: usize,
        tokens: usize,
        window_starts: Vec<usize>,
        token_spans: Vec<(usize, usize)>,
        matrix: &[f64],
    ) -> AttentionCapture {
        assert_eq!(matrix.len(), tokens * tokens);
        assert_eq!(window_starts.len(), sequences);
        let mut values = Vec::new();
        for _ in 0..sequences * blocks * heads {
            values.extend_from_slice(matrix);
        }
        AttentionCapture { blocks, heads, tokens, window_starts, token_spans, values }
    }

    pub fn from_matrices(
        blocks: usize,
        heads: usize,
        tokens: usize,
        window_starts: Vec<usize>,
        token_spans: Vec<(usize, usize)>,
        per_sequence_block_head: Vec<Vec<f64>>,
    ) -> AttentionCapture {
        let values: Vec<f64> = per_sequence_block_head.concat();
        assert_eq!(values.len(), window_starts.len() * blocks * heads * tokens * tokens);
        AttentionCapture { blocks, heads, tokens, window_starts, token_spans, values }
    }
}

#[cfg(test)]
mod tests {
    use rand::Rng;

    use super::*;
    use crate::dataset::WindowSpec;
    use crate::model::{BlockConfig, EmbeddingKind, EmbeddingSpec, ForecastConfig, PatchSpec};
    use crate::rng::stream;

    fn capture_config(mode: AttentionMode) -> ForecastConfig {
        ForecastConfig {
            architecture: Architecture::PatchToken,
            channels: 1,
            horizon: 4,
            patch: PatchSpec { lookback: 16, patch_length: 4, stride: 4, pad_remainder: false },
            embedding: EmbeddingSpec { kind: EmbeddingKind::Linear, frozen: false },
            blocks: BlockConfig { heads: 2, model_dim: 8, ffn_dim: 16, attention: vec![mode; 2] },
        }
    }

    fn small_data() -> WindowedDataset {
        let values: Vec<f64> = (0..80).map(|i| (i as f64 * 0.4).sin()).collect();
        let spec = WindowSpec { lookback: 16, horizon: 4, normalize: false, ..WindowSpec::default() };
        WindowedDataset::new(values, 1, spec).unwrap()
    }

    #[test]
    fn captured_rows_are_stochastic_and_geometry_matches() {
        let model = ForecastModel::new(capture_config(AttentionMode::Raw), 3).unwrap();
        let data = small_data();
        let mut noise = stream(0, "cap");
        let cap =
            capture_attention(&model, &data, Split::Test, 5, &EvalMods::none(), &mut noise)
                .unwrap();
        assert_eq!(cap.sequences(), data.len(Split::Test));
        assert_eq!((cap.blocks, cap.heads, cap.tokens), (2, 2, 4));
        assert_eq!(cap.token_spans, vec![(0, 4), (4, 8), (8, 12), (12, 16)]);
        for s in 0..cap.sequences() {
            for b in 0..cap.blocks {
                for h in 0..cap.heads {
                    for row in cap.matrix(s, b, h).chunks_exact(cap.tokens) {
                        let sum: f64 = row.iter().sum();
                        assert!((sum - 1.0).abs() < 1e-8);
                    }
                }
            }
        }
        // Window starts follow the split's chronology.
        assert_eq!(cap.window_starts[0], data.start_of(Split::Test, 0));
    }

    #[test]
    fn batch_size_does_not_change_the_capture() {
        let model = ForecastModel::new(capture_config(AttentionMode::Raw), 5).unwrap();
        let data = small_data();
        let mut n1 = stream(0, "cap");
        let mut n2 = stream(0, "cap");
        let a = capture_attention(&model, &data, Split::Test, 1, &EvalMods::none(), &mut n1)
            .unwrap();
        let b = capture_attention(&model, &data, Split::Test, 7, &EvalMods::none(), &mut n2)
            .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_attention_and_channel_models_are_rejected() {
        let data = small_data();
        let mut noise = stream(0, "cap");
        let zero = ForecastModel::new(capture_config(AttentionMode::Zero), 3).unwrap();
        assert!(
            capture_attention(&zero, &data, Split::Test, 4, &EvalMods::none(), &mut noise)
                .is_err()
        );
        let channel = ForecastModel::new(
            ForecastConfig {
                architecture: Architecture::ChannelToken,
                ..capture_config(AttentionMode::Raw)
            },
            3,
        )
        .unwrap();
        assert!(matches!(
            capture_attention(&channel, &data, Split::Test, 4, &EvalMods::none(), &mut noise),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn capture_file_round_trips_bitwise() {
        let model = ForecastModel::new(capture_config(AttentionMode::Raw), 7).unwrap();
        let data = small_data();
        let mut noise = stream(0, "cap");
        let cap =
            capture_attention(&model, &data, Split::Test, 4, &EvalMods::none(), &mut noise)
                .unwrap();
        let dir = std::env::temp_dir().join("tstlab-capture-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("a.cap");
        save_capture(&cap, &path).unwrap();
        let loaded = load_capture(&path).unwrap();
        assert_eq!(cap, loaded);
        // Truncation is refused outright.
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(load_capture(&path), Err(Error::FileFormat { .. })));
        std::fs::remove_file(&path).unwrap();
    }

    #[test]
    fn non_stochastic_rows_fail_validation() {
        let mut values = vec![0.25; 16];
        values[0] = 0.5;
        let cap = AttentionCapture {
            blocks: 1,
            heads: 1,
            tokens: 4,
            window_starts: vec![0],
            token_spans: vec![(0, 4), (4, 8), (8, 12), (12, 16)],
            values,
        };
        assert!(cap.validate().is_err());
    }

    #[test]
    fn smoothed_captures_record_the_uniform_matrix() {
        let model = ForecastModel::new(capture_config(AttentionMode::Raw), 9).unwrap();
        let data = small_data();
        let mut noise = stream(0, "cap");
        let cap = capture_attention(
            &model,
            &data,
            Split::Test,
            4,
            &EvalMods::smoothed(vec![0]),
            &mut noise,
        )
        .unwrap();
        for v in cap.matrix(0, 0, 0) {
            assert_eq!(*v, 0.25);
        }
        // Block 1 still attends freely.
        let m = cap.matrix(0, 1, 0);
        assert!(m.iter().any(|&v| (v - 0.25).abs() > 1e-6));
    }

    #[test]
    fn random_capture_survives_its_own_validation() {
        // Random row-stochastic matrices through the file cycle.
        let mut rng = stream(21, "random-cap");
        let tokens = 5;
        let mut values = Vec::new();
        for _ in 0..3 * 2 * 2 {
            for _ in 0..tokens {
                let mut row: Vec<f64> = (0..tokens).map(|_| rng.random_range(0.01..1.0)).collect();
                let sum: f64 = row.iter().sum();
                for v in row.iter_mut() {
                    *v /= sum;
                }
                values.extend_from_slice(&row);
            }
        }
        let cap = AttentionCapture {
            blocks: 2,
            heads: 2,
            tokens,
            window_starts: vec![0, 7, 21],
            token_spans: (0..tokens).map(|t| (t * 3, t * 3 + 3)).collect(),
            values,
        };
        cap.validate().unwrap();
    }
}
