//! The forecaster: token embedding, pre-norm transformer blocks with
//! swappable attention, and a linear forecast head.
//!
//! Inputs and outputs use channel-major rows: a batch of B samples with C
//! channels enters as a (B*C x L) matrix, one row per (sample, channel) in
//! sample order, and leaves as (B*C x H). Patch-token models treat every row
//! as an independent sequence of patch tokens; channel-token models treat
//! each sample's C rows as one sequence of channel tokens.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::autodiff::{BoundParams, ParamStore, Tape, TensorId};
use crate::error::{Error, Result};
use crate::model::config::{Architecture, EmbeddingKind, ForecastConfig};
use crate::rng::stream;
use crate::surgery::{AttentionMode, EvalMods, PerturbTarget, row_noise};

const LN_EPS: f64 = 1e-5;

/// Per-block attention matrices recorded during one forward pass: each entry
/// is row-major (groups*heads*tokens x tokens), groups outermost.
#[derive(Clone, Debug, Default)]
pub struct ForwardCapture {
    pub groups: usize,
    pub heads: usize,
    pub tokens: usize,
    pub blocks: Vec<Vec<f64>>,
}

/// Anything the trainer can fit: owned parameters plus a forward pass.
pub trait Forecaster {
    fn params(&self) -> &ParamStore;
    fn params_mut(&mut self) -> &mut ParamStore;
    fn lookback(&self) -> usize;
    fn horizon(&self) -> usize;
    fn channels(&self) -> usize;
    /// Map a (B*C x L) input leaf to a (B*C x H) forecast on the tape.
    fn forward(
        &self,
        tape: &mut Tape,
        bound: &BoundParams,
        input: TensorId,
        mods: &EvalMods,
        noise: &mut ChaCha8Rng,
        capture: Option<&mut ForwardCapture>,
    ) -> Result<TensorId>;
}

/// A configured transformer forecaster. `(config, seed)` fixes every initial
/// weight: each parameter draws from its own named stream, so models sharing
/// a seed initialize shared parameters identically across attention modes.
#[derive(Clone, Debug)]
pub struct ForecastModel {
    config: ForecastConfig,
    seed: u64,
    params: ParamStore,
}

impl ForecastModel {
    pub fn new(config: ForecastConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut model = ForecastModel { config, seed, params: ParamStore::new() };
        model.init_params()?;
        Ok(model)
    }

    pub fn config(&self) -> &ForecastConfig {
        &self.config
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn tokens(&self) -> usize {
        self.config.tokens().expect("validated at construction")
    }

    fn init_params(&mut self) -> Result<()> {
        let cfg = self.config.clone();
        let d = cfg.blocks.model_dim;
        let width = cfg.token_width();
        let tokens = cfg.tokens()?;
        let train_embed = !cfg.embedding.frozen;

        match cfg.embedding.kind {
            EmbeddingKind::Linear => {
                self.add_uniform("embed.weight", width, d, width, train_embed)?;
                self.add_uniform("embed.bias", 1, d, width, train_embed)?;
            }
            EmbeddingKind::Conv => {
                self.add_uniform("embed.kernel", 3, d, 3, train_embed)?;
                self.add_uniform("embed.bias", 1, d, 3, train_embed)?;
            }
            EmbeddingKind::Mlp | EmbeddingKind::Residual => {
                self.add_uniform("embed.w1", width, d, width, train_embed)?;
                self.add_uniform("embed.b1", 1, d, width, train_embed)?;
                self.add_uniform("embed.w2", d, d, d, train_embed)?;
                self.add_uniform("embed.b2", 1, d, d, train_embed)?;
                if cfg.embedding.kind == EmbeddingKind::Residual {
                    self.add_uniform("embed.skip", width, d, width, train_embed)?;
                }
            }
        }

        if cfg.has_posenc() {
            let mut rng = stream(self.seed, "posenc");
            let data: Vec<f64> = (0..tokens * d)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    0.02 * z
                })
                .collect();
            self.params.add("posenc", tokens, d, data, true)?;
        }

        for (bi, &mode) in cfg.blocks.attention.iter().enumerate() {
            if mode != AttentionMode::Zero {
                self.add_layer_norm(&format!("block{bi}.ln1"), d)?;
                if mode == AttentionMode::Raw {
                    self.add_uniform(&format!("block{bi}.attn.wq"), d, d, d, true)?;
                    self.add_uniform(&format!("block{bi}.attn.bq"), 1, d, d, true)?;
                    self.add_uniform(&format!("block{bi}.attn.wk"), d, d, d, true)?;
                    self.add_uniform(&format!("block{bi}.attn.bk"), 1, d, d, true)?;
                }
                if mode == AttentionMode::FixedTrainable {
                    // Zero logits start every head at uniform attention.
                    let rows = cfg.blocks.heads * tokens;
                    self.params.add(
                        format!("block{bi}.attn.logits"),
                        rows,
                        tokens,
                        vec![0.0; rows * tokens],
                        true,
                    )?;
                }
                self.add_uniform(&format!("block{bi}.attn.wv"), d, d, d, true)?;
                self.add_uniform(&format!("block{bi}.attn.bv"), 1, d, d, true)?;
                self.add_uniform(&format!("block{bi}.attn.wo"), d, d, d, true)?;
                self.add_uniform(&format!("block{bi}.attn.bo"), 1, d, d, true)?;
            }
            self.add_layer_norm(&format!("block{bi}.ln2"), d)?;
            self.add_uniform(&format!("block{bi}.ffn.w1"), d, cfg.blocks.ffn_dim, d, true)?;
            self.add_uniform(&format!("block{bi}.ffn.b1"), 1, cfg.blocks.ffn_dim, d, true)?;
            self.add_uniform(&format!("block{bi}.ffn.w2"), cfg.blocks.ffn_dim, d, cfg.blocks.ffn_dim, true)?;
            self.add_uniform(&format!("block{bi}.ffn.b2"), 1, d, cfg.blocks.ffn_dim, true)?;
        }

        let head_in = match cfg.architecture {
            Architecture::PatchToken => tokens * d,
            Architecture::ChannelToken => d,
        };
        self.add_uniform("head.weight", head_in, cfg.horizon, head_in, true)?;
        self.add_uniform("head.bias", 1, cfg.horizon, head_in, true)?;
        Ok(())
    }

    /// U(-1/sqrt(fan_in), 1/sqrt(fan_in)) from the parameter's named stream.
    fn add_uniform(
        &mut self,
        name: &str,
        rows: usize,
        cols: usize,
        fan_in: usize,
        trainable: bool,
    ) -> Result<()> {
        let mut rng = stream(self.seed, name);
        let bound = 1.0 / (fan_in as f64).sqrt();
        let data: Vec<f64> = (0..rows * cols).map(|_| rng.random_range(-bound..bound)).collect();
        self.params.add(name, rows, cols, data, trainable)?;
        Ok(())
    }

    fn add_layer_norm(&mut self, prefix: &str, d: usize) -> Result<()> {
        self.params.add(format!("{prefix}.gain"), 1, d, vec![1.0; d], true)?;
        self.params.add(format!("{prefix}.bias"), 1, d, vec![0.0; d], true)?;
        Ok(())
    }

    fn pid(&self, bound: &BoundParams, name: &str) -> TensorId {
        bound.id(self.params.index_of(name).expect("parameter registered at construction"))
    }

    fn norm(&self, tape: &mut Tape, bound: &BoundParams, x: TensorId, prefix: &str) -> Result<TensorId> {
        let gain = self.pid(bound, &format!("{prefix}.gain"));
        let bias = self.pid(bound, &format!("{prefix}.bias"));
        tape.layer_norm(x, gain, bias, LN_EPS)
    }

    fn proj(
        &self,
        tape: &mut Tape,
        bound: &BoundParams,
        x: TensorId,
        bi: usize,
        w: &str,
        b: &str,
    ) -> Result<TensorId> {
        let wid = self.pid(bound, &format!("block{bi}.attn.{w}"));
        let bid = self.pid(bound, &format!("block{bi}.attn.{b}"));
        let y = tape.matmul(x, wid)?;
        tape.add_row_vec(y, bid)
    }

    fn embed(&self, tape: &mut Tape, bound: &BoundParams, tok: TensorId) -> Result<TensorId> {
        match self.config.embedding.kind {
            EmbeddingKind::Linear => {
                let w = self.pid(bound, "embed.weight");
                let b = self.pid(bound, "embed.bias");
                let y = tape.matmul(tok, w)?;
                tape.add_row_vec(y, b)
            }
            EmbeddingKind::Conv => {
                let k = self.pid(bound, "embed.kernel");
                let b = self.pid(bound, "embed.bias");
                tape.conv_embed(tok, k, b)
            }
            EmbeddingKind::Mlp | EmbeddingKind::Residual => {
                let w1 = self.pid(bound, "embed.w1");
                let b1 = self.pid(bound, "embed.b1");
                let w2 = self.pid(bound, "embed.w2");
                let b2 = self.pid(bound, "embed.b2");
                let h = tape.matmul(tok, w1)?;
                let h = tape.add_row_vec(h, b1)?;
                let z = tape.gelu(h);
                let y = tape.matmul(z, w2)?;
                let y = tape.add_row_vec(y, b2)?;
                if self.config.embedding.kind == EmbeddingKind::Residual {
                    let skip = self.pid(bound, "embed.skip");
                    let s = tape.matmul(tok, skip)?;
                    tape.add(y, s)
                } else {
                    Ok(y)
                }
            }
        }
    }

    /// Softmax the logits, optionally perturbing them first: additive per-row
    /// noise (eta) and a blend toward the uniform row (alpha).
    fn attention_map(
        &self,
        tape: &mut Tape,
        logits: TensorId,
        mods: &EvalMods,
        noise: &mut ChaCha8Rng,
    ) -> Result<TensorId> {
        let (rows, t) = tape.shape(logits);
        let mut logits = logits;
        let mut blend = None;
        if let Some(p) = &mods.perturb {
            if p.target == PerturbTarget::Attention && !p.is_identity() {
                if p.eta > 0.0 {
                    let eps = row_noise(tape.data(logits), t, p.eta, noise);
                    let eps = tape.leaf(eps, rows, t)?;
                    logits = tape.add(logits, eps)?;
                }
                if p.alpha != 0.0 {
                    blend = Some(p.alpha);
                }
            }
        }
        let a = tape.softmax_rows(logits)?;
        Ok(match blend {
            Some(alpha) => tape.affine(a, 1.0 - alpha, alpha / t as f64),
            None => a,
        })
    }

    /// Run the block stack, returning (token latents, forecast). The latents
    /// are the pre-head (groups*tokens x d) matrix.
    pub fn forward_tokens(
        &self,
        tape: &mut Tape,
        bound: &BoundParams,
        input: TensorId,
        mods: &EvalMods,
        noise: &mut ChaCha8Rng,
        mut capture: Option<&mut ForwardCapture>,
    ) -> Result<(TensorId, TensorId)> {
        let cfg = &self.config;
        let (rows, l) = tape.shape(input);
        if l != cfg.lookback() || rows == 0 || rows % cfg.channels != 0 {
            return Err(Error::ShapeMismatch {
                op: "forward",
                lhs: vec![rows, l],
                rhs: vec![cfg.channels, cfg.lookback()],
            });
        }
        if !tape.data(input).iter().all(|v| v.is_finite()) {
            return Err(Error::non_finite("forward input"));
        }
        if let Some(p) = &mods.perturb {
            p.validate()?;
        }
        mods.smooth.validate(cfg.blocks.count())?;

        let tokens = self.tokens();
        let heads = cfg.blocks.heads;
        let groups = match cfg.architecture {
            Architecture::PatchToken => rows,
            Architecture::ChannelToken => rows / cfg.channels,
        };
        if let Some(cap) = capture.as_deref_mut() {
            cap.groups = groups;
            cap.heads = heads;
            cap.tokens = tokens;
            cap.blocks.clear();
        }

        let tok = match cfg.architecture {
            Architecture::PatchToken => {
                tape.patchify(input, cfg.patch.patch_length, cfg.patch.stride, cfg.patch.pad_remainder)?
            }
            Architecture::ChannelToken => input,
        };
        let mut x = self.embed(tape, bound, tok)?;
        if cfg.has_posenc() {
            let pe = self.pid(bound, "posenc");
            let tiled = tape.tile_rows(pe, groups);
            x = tape.add(x, tiled)?;
        }

        for (bi, &mode) in cfg.blocks.attention.iter().enumerate() {
            if mode == AttentionMode::Zero {
                if let Some(cap) = capture.as_deref_mut() {
                    cap.blocks.push(vec![0.0; groups * heads * tokens * tokens]);
                }
            } else {
                let h = self.norm(tape, bound, x, &format!("block{bi}.ln1"))?;
                let gh = groups * heads;
                let smoothed = mods.smooth.blocks.contains(&bi);
                let a = if smoothed || mode == AttentionMode::Mean {
                    tape.leaf(vec![1.0 / tokens as f64; gh * tokens * tokens], gh * tokens, tokens)?
                } else {
                    match mode {
                        AttentionMode::Eye => {
                            let mut data = vec![0.0; gh * tokens * tokens];
                            for r in 0..gh * tokens {
                                data[r * tokens + r % tokens] = 1.0;
                            }
                            tape.leaf(data, gh * tokens, tokens)?
                        }
                        AttentionMode::Raw => {
                            let q = self.proj(tape, bound, h, bi, "wq", "bq")?;
                            let k = self.proj(tape, bound, h, bi, "wk", "bk")?;
                            let qh = tape.to_heads(q, groups, heads)?;
                            let kh = tape.to_heads(k, groups, heads)?;
                            let logits = tape.bmm(qh, kh, gh, true)?;
                            let scale = 1.0 / (cfg.blocks.head_dim() as f64).sqrt();
                            let scaled = tape.affine(logits, scale, 0.0);
                            self.attention_map(tape, scaled, mods, noise)?
                        }
                        AttentionMode::FixedTrainable => {
                            let logits = self.pid(bound, &format!("block{bi}.attn.logits"));
                            let tiled = tape.tile_rows(logits, groups);
                            self.attention_map(tape, tiled, mods, noise)?
                        }
                        _ => unreachable!("zero and mean handled above"),
                    }
                };
                if let Some(cap) = capture.as_deref_mut() {
                    cap.blocks.push(tape.data(a).to_vec());
                }
                let v = self.proj(tape, bound, h, bi, "wv", "bv")?;
                let vh = tape.to_heads(v, groups, heads)?;
                let ctx = tape.bmm(a, vh, gh, false)?;
                let merged = tape.from_heads(ctx, groups, heads)?;
                let o = self.proj(tape, bound, merged, bi, "wo", "bo")?;
                x = tape.add(x, o)?;
            }

            let h2 = self.norm(tape, bound, x, &format!("block{bi}.ln2"))?;
            let w1 = self.pid(bound, &format!("block{bi}.ffn.w1"));
            let b1 = self.pid(bound, &format!("block{bi}.ffn.b1"));
            let w2 = self.pid(bound, &format!("block{bi}.ffn.w2"));
            let b2 = self.pid(bound, &format!("block{bi}.ffn.b2"));
            let mut pre = tape.matmul(h2, w1)?;
            pre = tape.add_row_vec(pre, b1)?;
            let mut smooth = None;
            if let Some(p) = &mods.perturb {
                if p.target == PerturbTarget::Ffn && !p.is_identity() {
                    if p.eta > 0.0 {
                        let (r, c) = tape.shape(pre);
                        let eps = row_noise(tape.data(pre), c, p.eta, noise);
                        let eps = tape.leaf(eps, r, c)?;
                        pre = tape.add(pre, eps)?;
                    }
                    if p.alpha != 0.0 {
                        smooth = Some(p.alpha);
                    }
                }
            }
            let z = tape.gelu(pre);
            let mut y = tape.matmul(z, w2)?;
            y = tape.add_row_vec(y, b2)?;
            if let Some(alpha) = smooth {
                y = tape.smooth_rows(y, alpha)?;
            }
            x = tape.add(x, y)?;

            if !tape.data(x).iter().all(|v| v.is_finite()) {
                return Err(Error::non_finite(&format!("block{bi} output")));
            }
        }

        let hw = self.pid(bound, "head.weight");
        let hb = self.pid(bound, "head.bias");
        let flat = match cfg.architecture {
            Architecture::PatchToken => tape.reshape(x, groups, tokens * cfg.blocks.model_dim)?,
            Architecture::ChannelToken => x,
        };
        let out = tape.matmul(flat, hw)?;
        let out = tape.add_row_vec(out, hb)?;
        Ok((x, out))
    }

    /// Mean cosine similarity of positional-encoding rows per token distance,
    /// from distance 0 up to T-1.
    pub fn posenc_similarity(&self) -> Result<Vec<(usize, f64)>> {
        let pe = self
            .params
            .get("posenc")
            .ok_or_else(|| Error::Unsupported("positional encoding requires patch tokens".into()))?;
        let (t, d) = (pe.rows, pe.cols);
        let row = |i: usize| &pe.data[i * d..(i + 1) * d];
        let mut sums = vec![0.0; t];
        let mut counts = vec![0usize; t];
        for i in 0..t {
            for j in i..t {
                sums[j - i] += cosine(row(i), row(j));
                counts[j - i] += 1;
            }
        }
        Ok((0..t).map(|dist| (dist, sums[dist] / counts[dist] as f64)).collect())
    }
}

/// Compare analytic gradients of the mean-squared forecast loss against
/// central differences for `samples` randomly chosen trainable scalars.
/// Returns the worst relative error (1e-3 denominator floor).
pub fn fd_check_model(
    model: &ForecastModel,
    input: &[f64],
    rows: usize,
    target: &[f64],
    samples: usize,
    h: f64,
    seed: u64,
) -> Result<f64> {
    use rand::seq::SliceRandom;

    let cols = model.lookback();
    let horizon = model.horizon();
    let eval = |params: &ParamStore| -> Result<f64> {
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape, false);
        let x = tape.leaf(input.to_vec(), rows, cols)?;
        let mut noise = stream(0, "fd-unused");
        let out = model.forward(&mut tape, &bound, x, &EvalMods::none(), &mut noise, None)?;
        let t = tape.leaf(target.to_vec(), rows, horizon)?;
        let loss = tape.mse(out, t)?;
        Ok(tape.data(loss)[0])
    };

    let mut tape = Tape::new();
    let bound = model.params().bind(&mut tape, true);
    let x = tape.leaf(input.to_vec(), rows, cols)?;
    let mut noise = stream(0, "fd-unused");
    let out = model.forward(&mut tape, &bound, x, &EvalMods::none(), &mut noise, None)?;
    let t = tape.leaf(target.to_vec(), rows, horizon)?;
    let loss = tape.mse(out, t)?;
    tape.backward(loss)?;
    let grads = tape.take_grads(bound.ids());

    let mut coords: Vec<(usize, usize)> = Vec::new();
    for (ei, entry) in model.params().entries().iter().enumerate() {
        if entry.trainable {
            coords.extend((0..entry.numel()).map(|off| (ei, off)));
        }
    }
    let mut rng = stream(seed, "fd-subsample");
    coords.shuffle(&mut rng);
    coords.truncate(samples);

    let mut analytic = Vec::with_capacity(coords.len());
    let mut numeric = Vec::with_capacity(coords.len());
    let mut probe = model.params().clone();
    for &(ei, off) in &coords {
        let name = model.params().entries()[ei].name.clone();
        let base = model.params().entries()[ei].data[off];
        let set = |store: &mut ParamStore, v: f64| {
            store.get_mut(&name).expect("cloned store has entry").data[off] = v;
        };
        set(&mut probe, base + h);
        let up = eval(&probe)?;
        set(&mut probe, base - h);
        let down = eval(&probe)?;
        set(&mut probe, base);
        numeric.push((up - down) / (2.0 * h));
        analytic.push(grads[ei].as_ref().expect("trainable gradient present")[off]);
    }
    Ok(crate::autodiff::gradcheck::max_rel_err(&analytic, &numeric))
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(&x, &y)| x * y).sum();
    let na: f64 = a.iter().map(|&x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|&x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 { 0.0 } else { dot / (na * nb) }
}

impl Forecaster for ForecastModel {
    fn params(&self) -> &ParamStore {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    fn lookback(&self) -> usize {
        self.config.lookback()
    }

    fn horizon(&self) -> usize {
        self.config.horizon
    }

    fn channels(&self) -> usize {
        self.config.channels
    }

    fn forward(
        &self,
        tape: &mut Tape,
        bound: &BoundParams,
        input: TensorId,
        mods: &EvalMods,
        noise: &mut ChaCha8Rng,
        capture: Option<&mut ForwardCapture>,
    ) -> Result<TensorId> {
        let (_, out) = self.forward_tokens(tape, bound, input, mods, noise, capture)?;
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::config::{BlockConfig, EmbeddingSpec, PatchSpec};

    fn tiny_config(arch: Architecture, mode: AttentionMode, kind: EmbeddingKind) -> ForecastConfig {
        ForecastConfig {
            architecture: arch,
            channels: 2,
            horizon: 5,
            patch: PatchSpec { lookback: 12, patch_length: 4, stride: 4, pad_remainder: false },
            embedding: EmbeddingSpec { kind, frozen: false },
            blocks: BlockConfig { heads: 2, model_dim: 8, ffn_dim: 16, attention: vec![mode; 2] },
        }
    }

    fn run_forward(
        model: &ForecastModel,
        input: Vec<f64>,
        rows: usize,
        capture: Option<&mut ForwardCapture>,
    ) -> Vec<f64> {
        let mut tape = Tape::new();
        let bound = model.params().bind(&mut tape, false);
        let x = tape.leaf(input, rows, model.lookback()).unwrap();
        let mut noise = stream(0, "unused");
        let out = model
            .forward(&mut tape, &bound, x, &EvalMods::none(), &mut noise, capture)
            .unwrap();
        tape.data(out).to_vec()
    }

    fn set(model: &mut ForecastModel, name: &str, data: Vec<f64>) {
        let e = model.params_mut().get_mut(name).unwrap();
        assert_eq!(e.numel(), data.len(), "{name}");
        e.data = data;
    }

    #[test]
    fn forward_matches_a_hand_computed_trace() {
        // 1 block, 1 head, d=2, two tokens of width 2: small enough to walk
        // by hand with explicit scalar arithmetic.
        let cfg = ForecastConfig {
            architecture: Architecture::PatchToken,
            channels: 1,
            horizon: 2,
            patch: PatchSpec { lookback: 4, patch_length: 2, stride: 2, pad_remainder: false },
            embedding: EmbeddingSpec { kind: EmbeddingKind::Linear, frozen: false },
            blocks: BlockConfig { heads: 1, model_dim: 2, ffn_dim: 2, attention: vec![AttentionMode::Raw] },
        };
        let mut m = ForecastModel::new(cfg, 0).unwrap();
        let wq = [[0.3, -0.2], [0.1, 0.4]];
        let wk = [[0.2, 0.1], [-0.3, 0.25]];
        let wv = [[0.5, -0.1], [0.2, 0.3]];
        let wo = [[0.4, 0.2], [-0.1, 0.35]];
        let w1 = [[0.6, -0.4], [0.15, 0.5]];
        let w2 = [[0.3, 0.1], [-0.2, 0.45]];
        let wh = [[0.25, -0.1], [0.3, 0.2], [-0.15, 0.4], [0.1, 0.05]];
        let (bq, bk, bv, bo) = ([0.01, -0.02], [0.0, 0.03], [-0.01, 0.02], [0.02, -0.03]);
        let (b1, b2, bh) = ([0.05, -0.05], [0.01, 0.0], [0.03, -0.01]);
        let pe = [[0.1, -0.1], [0.05, 0.2]];
        set(&mut m, "embed.weight", vec![1.0, 0.0, 0.0, 1.0]);
        set(&mut m, "embed.bias", vec![0.0, 0.0]);
        set(&mut m, "posenc", pe.concat());
        set(&mut m, "block0.attn.wq", wq.concat());
        set(&mut m, "block0.attn.bq", bq.to_vec());
        set(&mut m, "block0.attn.wk", wk.concat());
        set(&mut m, "block0.attn.bk", bk.to_vec());
        set(&mut m, "block0.attn.wv", wv.concat());
        set(&mut m, "block0.attn.bv", bv.to_vec());
        set(&mut m, "block0.attn.wo", wo.concat());
        set(&mut m, "block0.attn.bo", bo.to_vec());
        set(&mut m, "block0.ffn.w1", w1.concat());
        set(&mut m, "block0.ffn.b1", b1.to_vec());
        set(&mut m, "block0.ffn.w2", w2.concat());
        set(&mut m, "block0.ffn.b2", b2.to_vec());
        set(&mut m, "head.weight", wh.concat());
        set(&mut m, "head.bias", bh.to_vec());

        let ln = |v: [f64; 2]| {
            let mean = (v[0] + v[1]) / 2.0;
            let var = ((v[0] - mean).powi(2) + (v[1] - mean).powi(2)) / 2.0;
            let inv = 1.0 / (var + 1e-5).sqrt();
            [(v[0] - mean) * inv, (v[1] - mean) * inv]
        };
        let mv = |v: [f64; 2], w: [[f64; 2]; 2], b: [f64; 2]| {
            [
                v[0] * w[0][0] + v[1] * w[1][0] + b[0],
                v[0] * w[0][1] + v[1] * w[1][1] + b[1],
            ]
        };
        let gelu = |x: f64| 0.5 * x * (1.0 + (0.7978845608028654 * (x + 0.044715 * x * x * x)).tanh());

        let input = [0.5, -0.3, 0.8, 0.1];
        let x0 = [input[0] + pe[0][0], input[1] + pe[0][1]];
        let x1 = [input[2] + pe[1][0], input[3] + pe[1][1]];
        let (h0, h1) = (ln(x0), ln(x1));
        let (q0, q1) = (mv(h0, wq, bq), mv(h1, wq, bq));
        let (k0, k1) = (mv(h0, wk, bk), mv(h1, wk, bk));
        let (v0, v1) = (mv(h0, wv, bv), mv(h1, wv, bv));
        let scale = 1.0 / 2.0f64.sqrt();
        let softmax = |a: f64, b: f64| {
            let m = a.max(b);
            let (ea, eb) = ((a - m).exp(), (b - m).exp());
            [ea / (ea + eb), eb / (ea + eb)]
        };
        let a0 = softmax(
            (q0[0] * k0[0] + q0[1] * k0[1]) * scale,
            (q0[0] * k1[0] + q0[1] * k1[1]) * scale,
        );
        let a1 = softmax(
            (q1[0] * k0[0] + q1[1] * k0[1]) * scale,
            (q1[0] * k1[0] + q1[1] * k1[1]) * scale,
        );
        let ctx0 = [a0[0] * v0[0] + a0[1] * v1[0], a0[0] * v0[1] + a0[1] * v1[1]];
        let ctx1 = [a1[0] * v0[0] + a1[1] * v1[0], a1[0] * v0[1] + a1[1] * v1[1]];
        let o0 = mv(ctx0, wo, bo);
        let o1 = mv(ctx1, wo, bo);
        let r0 = [x0[0] + o0[0], x0[1] + o0[1]];
        let r1 = [x1[0] + o1[0], x1[1] + o1[1]];
        let ffn = |r: [f64; 2]| {
            let g = ln(r);
            let pre = mv(g, w1, b1);
            let z = [gelu(pre[0]), gelu(pre[1])];
            let y = mv(z, w2, b2);
            [r[0] + y[0], r[1] + y[1]]
        };
        let (f0, f1) = (ffn(r0), ffn(r1));
        let flat = [f0[0], f0[1], f1[0], f1[1]];
        let expect: Vec<f64> = (0..2)
            .map(|j| flat.iter().zip(&wh).map(|(&v, w)| v * w[j]).sum::<f64>() + bh[j])
            .collect();

        let got = run_forward(&m, input.to_vec(), 1, None);
        for (g, e) in got.iter().zip(&expect) {
            assert!((g - e).abs() < 1e-9, "got {g}, hand trace {e}");
        }
    }

    #[test]
    fn every_architecture_embedding_and_mode_keeps_the_shape_contract() {
        let mut key = stream(1, "shape-matrix");
        for arch in [Architecture::PatchToken, Architecture::ChannelToken] {
            for kind in EmbeddingKind::ALL {
                for mode in AttentionMode::ALL {
                    let m = ForecastModel::new(tiny_config(arch, mode, kind), 3).unwrap();
                    let rows = 3 * 2;
                    let input: Vec<f64> =
                        (0..rows * 12).map(|_| key.random_range(-1.0..1.0)).collect();
                    let mut cap = ForwardCapture::default();
                    let out = run_forward(&m, input, rows, Some(&mut cap));
                    assert_eq!(out.len(), rows * 5, "{arch:?}/{kind}/{mode}");
                    assert_eq!(cap.blocks.len(), 2);
                    let expected_groups = match arch {
                        Architecture::PatchToken => rows,
                        Architecture::ChannelToken => 3,
                    };
                    assert_eq!(cap.groups, expected_groups);
                    for a in &cap.blocks {
                        assert_eq!(a.len(), cap.groups * cap.heads * cap.tokens * cap.tokens);
                    }
                }
            }
        }
    }

    #[test]
    fn captured_raw_attention_rows_sum_to_one() {
        let m = ForecastModel::new(
            tiny_config(Architecture::PatchToken, AttentionMode::Raw, EmbeddingKind::Linear),
            5,
        )
        .unwrap();
        let mut key = stream(2, "rowsum");
        let input: Vec<f64> = (0..2 * 12).map(|_| key.random_range(-2.0..2.0)).collect();
        let mut cap = ForwardCapture::default();
        run_forward(&m, input, 2, Some(&mut cap));
        for a in &cap.blocks {
            for row in a.chunks_exact(cap.tokens) {
                let s: f64 = row.iter().sum();
                assert!((s - 1.0).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn mean_mode_and_fresh_fixed_logits_attend_uniformly() {
        for mode in [AttentionMode::Mean, AttentionMode::FixedTrainable] {
            let m = ForecastModel::new(
                tiny_config(Architecture::PatchToken, mode, EmbeddingKind::Linear),
                5,
            )
            .unwrap();
            let input: Vec<f64> = (0..2 * 12).map(|v| (v as f64 * 0.31).cos()).collect();
            let mut cap = ForwardCapture::default();
            run_forward(&m, input, 2, Some(&mut cap));
            for a in &cap.blocks {
                assert!(a.iter().all(|&v| v == 1.0 / cap.tokens as f64), "{mode}");
            }
        }
    }

    #[test]
    fn zero_mode_captures_zero_matrices_and_still_forecasts() {
        let m = ForecastModel::new(
            tiny_config(Architecture::PatchToken, AttentionMode::Zero, EmbeddingKind::Linear),
            5,
        )
        .unwrap();
        let input: Vec<f64> = (0..2 * 12).map(|v| (v as f64 * 0.17).sin()).collect();
        let mut cap = ForwardCapture::default();
        let out = run_forward(&m, input, 2, Some(&mut cap));
        assert_eq!(out.len(), 2 * 5);
        assert!(cap.blocks.iter().all(|a| a.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn raw_equals_eye_when_there_is_one_token() {
        // With a single token the raw softmax is over one logit, exactly 1.
        let mut cfg = tiny_config(Architecture::PatchToken, AttentionMode::Raw, EmbeddingKind::Linear);
        cfg.patch = PatchSpec { lookback: 12, patch_length: 12, stride: 12, pad_remainder: false };
        let raw = ForecastModel::new(cfg.clone(), 9).unwrap();
        cfg.blocks.attention = vec![AttentionMode::Eye; 2];
        let eye = ForecastModel::new(cfg, 9).unwrap();
        let input: Vec<f64> = (0..2 * 12).map(|v| (v as f64 * 0.23).sin()).collect();
        let a = run_forward(&raw, input.clone(), 2, None);
        let b = run_forward(&eye, input, 2, None);
        assert_eq!(a, b);
    }

    #[test]
    fn patch_rows_are_processed_independently() {
        // Permuting (sample, channel) rows permutes forecasts identically.
        let m = ForecastModel::new(
            tiny_config(Architecture::PatchToken, AttentionMode::Raw, EmbeddingKind::Mlp),
            11,
        )
        .unwrap();
        let mut key = stream(4, "perm");
        let rows = 4;
        let input: Vec<f64> = (0..rows * 12).map(|_| key.random_range(-1.0..1.0)).collect();
        let mut reversed = Vec::with_capacity(input.len());
        for r in (0..rows).rev() {
            reversed.extend_from_slice(&input[r * 12..(r + 1) * 12]);
        }
        let out = run_forward(&m, input, rows, None);
        let out_rev = run_forward(&m, reversed, rows, None);
        for r in 0..rows {
            assert_eq!(out[r * 5..(r + 1) * 5], out_rev[(rows - 1 - r) * 5..(rows - r) * 5]);
        }
    }

    #[test]
    fn channel_token_attention_mixes_channels() {
        // Sanity check of the contrast: changing one channel's history moves
        // the other channel's forecast under channel tokens, never under
        // patch tokens.
        for (arch, expect_coupling) in
            [(Architecture::PatchToken, false), (Architecture::ChannelToken, true)]
        {
            let m = ForecastModel::new(
                tiny_config(arch, AttentionMode::Raw, EmbeddingKind::Linear),
                13,
            )
            .unwrap();
            let mut key = stream(5, "coupling");
            let mut input: Vec<f64> = (0..2 * 12).map(|_| key.random_range(-1.0..1.0)).collect();
            let base = run_forward(&m, input.clone(), 2, None);
            input[0] += 0.5;
            let bumped = run_forward(&m, input, 2, None);
            let other_moved = base[5..10]
                .iter()
                .zip(&bumped[5..10])
                .any(|(&a, &b)| (a - b).abs() > 1e-12);
            assert_eq!(other_moved, expect_coupling, "{arch:?}");
        }
    }

    #[test]
    fn frozen_embedding_gets_no_gradient() {
        let mut cfg = tiny_config(Architecture::PatchToken, AttentionMode::Raw, EmbeddingKind::Linear);
        cfg.embedding.frozen = true;
        let m = ForecastModel::new(cfg, 17).unwrap();
        let mut tape = Tape::new();
        let bound = m.params().bind(&mut tape, true);
        let input: Vec<f64> = (0..2 * 12).map(|v| (v as f64 * 0.4).sin()).collect();
        let x = tape.leaf(input, 2, 12).unwrap();
        let mut noise = stream(0, "unused");
        let out = m.forward(&mut tape, &bound, x, &EvalMods::none(), &mut noise, None).unwrap();
        let target = tape.leaf(vec![0.0; 2 * 5], 2, 5).unwrap();
        let loss = tape.mse(out, target).unwrap();
        tape.backward(loss).unwrap();
        let grads = tape.take_grads(bound.ids());
        for (entry, grad) in m.params().entries().iter().zip(&grads) {
            if entry.name.starts_with("embed.") {
                assert!(grad.is_none(), "{} should stay frozen", entry.name);
            } else {
                assert!(grad.is_some(), "{} should receive gradient", entry.name);
            }
        }
    }

    #[test]
    fn posenc_similarity_flags_known_geometries() {
        let mut m = ForecastModel::new(
            tiny_config(Architecture::PatchToken, AttentionMode::Raw, EmbeddingKind::Linear),
            19,
        )
        .unwrap();
        let t = m.tokens();
        let d = m.config().blocks.model_dim;
        // All-equal rows: similarity 1 at every distance.
        let row: Vec<f64> = (0..d).map(|v| 0.3 - v as f64 * 0.05).collect();
        set(&mut m, "posenc", row.repeat(t));
        for (_, s) in m.posenc_similarity().unwrap() {
            assert!((s - 1.0).abs() < 1e-12);
        }
        // One-hot rows: zero similarity at every distance > 0.
        let mut onehot = vec![0.0; t * d];
        for i in 0..t {
            onehot[i * d + i] = 1.0;
        }
        set(&mut m, "posenc", onehot);
        let sims = m.posenc_similarity().unwrap();
        assert_eq!(sims[0].1, 1.0);
        assert!(sims[1..].iter().all(|&(_, s)| s == 0.0));
    }

    #[test]
    fn random_posenc_carries_no_distance_structure() {
        // Fresh N(0, 0.02^2) encodings at T=21, d=64: random directions in
        // 64 dimensions concentrate near orthogonality.
        let m = ForecastModel::new(ForecastConfig::default(), 23).unwrap();
        let sims = m.posenc_similarity().unwrap();
        assert_eq!(sims.len(), 21);
        assert!(sims[1..].iter().all(|&(_, s)| s.abs() < 0.25));
    }

    #[test]
    fn channel_token_model_rejects_posenc_queries() {
        let cfg = tiny_config(Architecture::ChannelToken, AttentionMode::Raw, EmbeddingKind::Linear);
        let m = ForecastModel::new(cfg, 29).unwrap();
        assert!(matches!(m.posenc_similarity(), Err(Error::Unsupported(_))));
    }

    #[test]
    fn attention_replacement_shrinks_the_parameter_count() {
        let count = |mode| {
            ForecastModel::new(
                tiny_config(Architecture::PatchToken, mode, EmbeddingKind::Linear),
                31,
            )
            .unwrap()
            .params()
            .numel()
        };
        let raw = count(AttentionMode::Raw);
        let eye = count(AttentionMode::Eye);
        let zero = count(AttentionMode::Zero);
        let fixed = count(AttentionMode::FixedTrainable);
        assert!(zero < eye && eye < raw, "zero {zero} < eye {eye} < raw {raw}");
        assert!(eye < fixed && fixed < raw, "eye {eye} < fixed {fixed} < raw {raw}");
    }

    #[test]
    fn input_shape_and_finiteness_are_validated() {
        let m = ForecastModel::new(
            tiny_config(Architecture::PatchToken, AttentionMode::Raw, EmbeddingKind::Linear),
            37,
        )
        .unwrap();
        let mut tape = Tape::new();
        let bound = m.params().bind(&mut tape, false);
        let mut noise = stream(0, "unused");
        let bad_width = tape.leaf(vec![0.0; 2 * 10], 2, 10).unwrap();
        assert!(m.forward(&mut tape, &bound, bad_width, &EvalMods::none(), &mut noise, None).is_err());
        let mut v = vec![0.0; 2 * 12];
        v[3] = f64::NAN;
        let nan_input = tape.leaf(v, 2, 12).unwrap();
        assert!(matches!(
            m.forward(&mut tape, &bound, nan_input, &EvalMods::none(), &mut noise, None),
            Err(Error::NonFinite { .. })
        ));
    }
}
