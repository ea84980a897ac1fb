//! Model-level interventions: swapping attention modes and zeroing the
//! positional encoding. Both produce a new model; parameters whose names
//! survive the change carry their values over unchanged.

use crate::error::{Error, Result};
use crate::model::{Forecaster, ForecastModel};
use crate::surgery::modes::{AttentionMode, EvalMods, SmoothingSpec};

/// Rebuild the model with every block set to `mode`. Shared parameters
/// (embedding, norms, V/output projections, head, positional encoding) keep
/// their current values; parameters the new mode adds are freshly initialized
/// from the model's seed, and ones it drops disappear.
pub fn replace_attention(model: &ForecastModel, mode: AttentionMode) -> Result<ForecastModel> {
    let mut cfg = model.config().clone();
    cfg.blocks.attention = vec![mode; cfg.blocks.count()];
    let mut out = ForecastModel::new(cfg, model.seed())?;
    for entry in out.params_mut().entries_mut() {
        if let Some(src) = model.params().get(&entry.name) {
            if src.rows == entry.rows && src.cols == entry.cols {
                entry.data = src.data.clone();
            }
        }
    }
    Ok(out)
}

/// Copy the model with its positional encoding set to zero; every other
/// weight is untouched. Architectures without a positional encoding are
/// rejected.
pub fn zero_positional_encoding(model: &ForecastModel) -> Result<ForecastModel> {
    let mut out = model.clone();
    let pe = out
        .params_mut()
        .get_mut("posenc")
        .ok_or_else(|| Error::Unsupported("architecture has no positional encoding".into()))?;
    pe.data.fill(0.0);
    Ok(out)
}

/// Evaluation mods that swap the listed blocks' attention for the uniform
/// matrix, after validating the ids against the model.
pub fn smooth_blocks(model: &ForecastModel, spec: &SmoothingSpec) -> Result<EvalMods> {
    spec.validate(model.config().blocks.count())?;
    Ok(EvalMods { perturb: None, smooth: spec.clone() })
}

#[cfg(test)]
mod tests {
    use rand::Rng;

    use super::*;
    use crate::autodiff::Tape;
    use crate::model::{
        Architecture, BlockConfig, EmbeddingKind, EmbeddingSpec, ForecastConfig, PatchSpec,
    };
    use crate::rng::stream;
    use crate::surgery::modes::{PerturbSpec, PerturbTarget};

    fn cfg(mode: AttentionMode) -> ForecastConfig {
        ForecastConfig {
            architecture: Architecture::PatchToken,
            channels: 1,
            horizon: 4,
            patch: PatchSpec { lookback: 20, patch_length: 4, stride: 4, pad_remainder: false },
            embedding: EmbeddingSpec { kind: EmbeddingKind::Linear, frozen: false },
            blocks: BlockConfig { heads: 2, model_dim: 8, ffn_dim: 16, attention: vec![mode; 2] },
        }
    }

    fn forward_with(model: &ForecastModel, input: &[f64], rows: usize, mods: &EvalMods, noise_seed: u64) -> Vec<f64> {
        let mut tape = Tape::new();
        let bound = model.params().bind(&mut tape, false);
        let x = tape.leaf(input.to_vec(), rows, model.lookback()).unwrap();
        let mut noise = stream(noise_seed, "eval-noise");
        let out = model.forward(&mut tape, &bound, x, mods, &mut noise, None).unwrap();
        tape.data(out).to_vec()
    }

    fn probe(n: usize, role: &str) -> Vec<f64> {
        let mut rng = stream(71, role);
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    /// Scramble trainable weights so tests do not rely on init symmetry.
    fn scramble(model: &mut ForecastModel, role: &str) {
        let mut rng = stream(5, role);
        for e in model.params_mut().entries_mut() {
            for v in e.data.iter_mut() {
                *v += rng.random_range(-0.05..0.05);
            }
        }
    }

    #[test]
    fn replacement_on_a_fresh_model_equals_fresh_construction() {
        let raw = ForecastModel::new(cfg(AttentionMode::Raw), 3).unwrap();
        let swapped = replace_attention(&raw, AttentionMode::Mean).unwrap();
        let fresh = ForecastModel::new(cfg(AttentionMode::Mean), 3).unwrap();
        let input = probe(20, "fresh-mean");
        assert_eq!(
            forward_with(&swapped, &input, 1, &EvalMods::none(), 0),
            forward_with(&fresh, &input, 1, &EvalMods::none(), 0)
        );
    }

    #[test]
    fn replacement_migrates_trained_values_by_name() {
        let mut raw = ForecastModel::new(cfg(AttentionMode::Raw), 3).unwrap();
        scramble(&mut raw, "migrate");
        let eye = replace_attention(&raw, AttentionMode::Eye).unwrap();
        assert_eq!(
            raw.params().get("block1.ffn.w1").unwrap().data,
            eye.params().get("block1.ffn.w1").unwrap().data,
        );
        assert_eq!(
            raw.params().get("block0.attn.wv").unwrap().data,
            eye.params().get("block0.attn.wv").unwrap().data,
        );
        assert!(eye.params().get("block0.attn.wq").is_none());
    }

    #[test]
    fn smoothing_every_block_equals_mean_replacement_bitwise() {
        let mut raw = ForecastModel::new(cfg(AttentionMode::Raw), 7).unwrap();
        scramble(&mut raw, "smooth-vs-mean");
        let mean = replace_attention(&raw, AttentionMode::Mean).unwrap();
        let input = probe(3 * 20, "smooth-vs-mean");
        let smoothed = smooth_blocks(&raw, &SmoothingSpec { blocks: vec![0, 1] }).unwrap();
        assert_eq!(
            forward_with(&raw, &input, 3, &smoothed, 0),
            forward_with(&mean, &input, 3, &EvalMods::none(), 0)
        );
    }

    #[test]
    fn empty_smoothing_set_changes_nothing() {
        let mut raw = ForecastModel::new(cfg(AttentionMode::Raw), 7).unwrap();
        scramble(&mut raw, "empty-smooth");
        let input = probe(20, "empty-smooth");
        let mods = smooth_blocks(&raw, &SmoothingSpec::default()).unwrap();
        assert_eq!(
            forward_with(&raw, &input, 1, &mods, 0),
            forward_with(&raw, &input, 1, &EvalMods::none(), 0)
        );
    }

    #[test]
    fn out_of_range_smoothing_id_is_rejected() {
        let raw = ForecastModel::new(cfg(AttentionMode::Raw), 7).unwrap();
        assert!(smooth_blocks(&raw, &SmoothingSpec { blocks: vec![2] }).is_err());
    }

    #[test]
    fn uniform_attention_mixes_value_rows_exactly() {
        // One uniform-attention group: every context row must equal the
        // running sum of value rows scaled by 1/T, in accumulation order.
        let t = 4;
        let dk = 3;
        let mut tape = Tape::new();
        let v_data = probe(t * dk, "uniform-mix");
        let a = tape.leaf(vec![1.0 / t as f64; t * t], t, t).unwrap();
        let v = tape.leaf(v_data.clone(), t, dk).unwrap();
        let ctx = tape.bmm(a, v, 1, false).unwrap();
        let mut expect = vec![0.0; dk];
        for j in 0..t {
            for c in 0..dk {
                expect[c] += (1.0 / t as f64) * v_data[j * dk + c];
            }
        }
        for row in tape.data(ctx).chunks_exact(dk) {
            assert_eq!(row, &expect[..]);
        }
    }

    #[test]
    fn identity_perturbation_is_bitwise_invisible() {
        let mut raw = ForecastModel::new(cfg(AttentionMode::Raw), 11).unwrap();
        scramble(&mut raw, "identity-perturb");
        let input = probe(2 * 20, "identity-perturb");
        let base = forward_with(&raw, &input, 2, &EvalMods::none(), 0);
        for target in [PerturbTarget::Attention, PerturbTarget::Ffn] {
            let spec = PerturbSpec::new(target, 0.0, 0.0, 9).unwrap();
            assert_eq!(base, forward_with(&raw, &input, 2, &EvalMods::perturbed(spec), 9));
        }
    }

    #[test]
    fn full_attention_attenuation_equals_mean_replacement_bitwise() {
        let mut raw = ForecastModel::new(cfg(AttentionMode::Raw), 13).unwrap();
        scramble(&mut raw, "alpha-one");
        let mean = replace_attention(&raw, AttentionMode::Mean).unwrap();
        let input = probe(2 * 20, "alpha-one");
        let spec = PerturbSpec::new(PerturbTarget::Attention, 1.0, 0.0, 0).unwrap();
        assert_eq!(
            forward_with(&raw, &input, 2, &EvalMods::perturbed(spec), 0),
            forward_with(&mean, &input, 2, &EvalMods::none(), 0)
        );
    }

    #[test]
    fn perturbation_noise_is_reproducible_and_seed_sensitive() {
        let mut raw = ForecastModel::new(cfg(AttentionMode::Raw), 17).unwrap();
        scramble(&mut raw, "noise-repro");
        let input = probe(20, "noise-repro");
        for target in [PerturbTarget::Attention, PerturbTarget::Ffn] {
            let spec = PerturbSpec::new(target, 0.0, 2.0, 1).unwrap();
            let mods = EvalMods::perturbed(spec);
            let a = forward_with(&raw, &input, 1, &mods, 1);
            let b = forward_with(&raw, &input, 1, &mods, 1);
            let c = forward_with(&raw, &input, 1, &mods, 2);
            assert_eq!(a, b, "{target:?} same seed");
            assert_ne!(a, c, "{target:?} different seed");
        }
    }

    #[test]
    fn ffn_smoothing_at_full_alpha_flattens_rows() {
        let mut tape = Tape::new();
        let x = tape.leaf(probe(12, "flatten"), 3, 4).unwrap();
        let y = tape.smooth_rows(x, 1.0).unwrap();
        for (yrow, xrow) in tape.data(y).chunks_exact(4).zip(tape.data(x).chunks_exact(4)) {
            let mean = xrow.iter().sum::<f64>() / 4.0;
            assert!(yrow.iter().all(|&v| (v - mean).abs() < 1e-15));
        }
    }

    #[test]
    fn zeroing_posenc_is_idempotent_and_only_touches_posenc() {
        let mut m = ForecastModel::new(cfg(AttentionMode::Raw), 19).unwrap();
        scramble(&mut m, "zero-pe");
        let once = zero_positional_encoding(&m).unwrap();
        let twice = zero_positional_encoding(&once).unwrap();
        assert!(once.params().get("posenc").unwrap().data.iter().all(|&v| v == 0.0));
        let input = probe(20, "zero-pe");
        assert_eq!(
            forward_with(&once, &input, 1, &EvalMods::none(), 0),
            forward_with(&twice, &input, 1, &EvalMods::none(), 0)
        );
        assert_eq!(
            m.params().get("head.weight").unwrap().data,
            once.params().get("head.weight").unwrap().data
        );
    }

    #[test]
    fn zeroing_an_already_zero_posenc_changes_no_output() {
        let mut m = ForecastModel::new(cfg(AttentionMode::Raw), 23).unwrap();
        m.params_mut().get_mut("posenc").unwrap().data.fill(0.0);
        let zeroed = zero_positional_encoding(&m).unwrap();
        let input = probe(20, "zero-zero-pe");
        assert_eq!(
            forward_with(&m, &input, 1, &EvalMods::none(), 0),
            forward_with(&zeroed, &input, 1, &EvalMods::none(), 0)
        );
    }

    #[test]
    fn channel_token_models_have_no_posenc_to_zero() {
        let c = ForecastConfig {
            architecture: Architecture::ChannelToken,
            ..cfg(AttentionMode::Raw)
        };
        let m = ForecastModel::new(c, 29).unwrap();
        assert!(matches!(zero_positional_encoding(&m), Err(Error::Unsupported(_))));
    }
}
