//! End-to-end model checks: full-stack finite differences and the token
//! locality of attention-free blocks.

use rand::Rng;
use tstlab_core::autodiff::Tape;
use tstlab_core::model::{
    Architecture, BlockConfig, EmbeddingKind, EmbeddingSpec, Forecaster, ForecastConfig,
    ForecastModel, PatchSpec, fd_check_model,
};
use tstlab_core::rng::stream;
use tstlab_core::surgery::{AttentionMode, EvalMods};

fn config(mode: AttentionMode) -> ForecastConfig {
    ForecastConfig {
        architecture: Architecture::PatchToken,
        channels: 1,
        horizon: 4,
        patch: PatchSpec { lookback: 24, patch_length: 4, stride: 4, pad_remainder: false },
        embedding: EmbeddingSpec { kind: EmbeddingKind::Linear, frozen: false },
        blocks: BlockConfig { heads: 2, model_dim: 16, ffn_dim: 32, attention: vec![mode; 2] },
    }
}

fn probe(rows: usize, cols: usize, role: &str) -> Vec<f64> {
    let mut rng = stream(99, role);
    (0..rows * cols).map(|_| rng.random_range(-1.5..1.5)).collect()
}

#[test]
fn two_block_model_passes_finite_differences() {
    let model = ForecastModel::new(config(AttentionMode::Raw), 5).unwrap();
    let input = probe(2, 24, "fd-input");
    let target = probe(2, 4, "fd-target");
    let err = fd_check_model(&model, &input, 2, &target, 220, 1e-5, 7).unwrap();
    assert!(err < 1e-4, "max rel err {err:.3e}");
}

#[test]
fn fixed_trainable_logits_pass_finite_differences() {
    let model = ForecastModel::new(config(AttentionMode::FixedTrainable), 5).unwrap();
    let input = probe(2, 24, "fd-fixed-input");
    let target = probe(2, 4, "fd-fixed-target");
    let err = fd_check_model(&model, &input, 2, &target, 150, 1e-5, 11).unwrap();
    assert!(err < 1e-4, "max rel err {err:.3e}");
}

#[test]
fn zero_attention_blocks_are_token_local() {
    // d=16, five tokens, two attention-free blocks: the Jacobian of token
    // latent i with respect to input patch j must vanish exactly for i != j.
    let cfg = ForecastConfig {
        channels: 1,
        horizon: 3,
        patch: PatchSpec { lookback: 10, patch_length: 2, stride: 2, pad_remainder: false },
        blocks: BlockConfig {
            heads: 2,
            model_dim: 16,
            ffn_dim: 32,
            attention: vec![AttentionMode::Zero; 2],
        },
        ..config(AttentionMode::Zero)
    };
    let model = ForecastModel::new(cfg, 13).unwrap();
    let d = 16;
    let tokens = 5;
    let input = probe(1, 10, "locality");
    for i in 0..tokens {
        let mut tape = Tape::new();
        let bound = model.params().bind(&mut tape, false);
        let x = tape.param(input.clone(), 1, 10).unwrap();
        let mut noise = stream(0, "unused");
        let (latents, _) = model
            .forward_tokens(&mut tape, &bound, x, &EvalMods::none(), &mut noise, None)
            .unwrap();
        let mut mask = vec![0.0; tokens * d];
        mask[i * d..(i + 1) * d].fill(1.0);
        let mask = tape.leaf(mask, tokens, d).unwrap();
        let masked = tape.mul(latents, mask).unwrap();
        let loss = tape.sum_all(masked);
        tape.backward(loss).unwrap();
        let grad = tape.grad(x).expect("input gradient");
        for j in 0..tokens {
            let patch = &grad[j * 2..(j + 1) * 2];
            if j == i {
                assert!(patch.iter().any(|&g| g.abs() > 1e-8), "token {i} must see itself");
            } else {
                assert!(
                    patch.iter().all(|&g| g.abs() < 1e-12),
                    "token {i} leaked into patch {j}: {patch:?}"
                );
            }
        }
    }
}

#[test]
fn eye_attention_blocks_are_also_token_local() {
    let cfg = ForecastConfig {
        patch: PatchSpec { lookback: 10, patch_length: 2, stride: 2, pad_remainder: false },
        blocks: BlockConfig {
            heads: 2,
            model_dim: 16,
            ffn_dim: 32,
            attention: vec![AttentionMode::Eye; 2],
        },
        ..config(AttentionMode::Eye)
    };
    let model = ForecastModel::new(cfg, 17).unwrap();
    let input = probe(1, 10, "eye-locality");
    let mut tape = Tape::new();
    let bound = model.params().bind(&mut tape, false);
    let x = tape.param(input, 1, 10).unwrap();
    let mut noise = stream(0, "unused");
    let (latents, _) = model
        .forward_tokens(&mut tape, &bound, x, &EvalMods::none(), &mut noise, None)
        .unwrap();
    let mut mask = vec![0.0; 5 * 16];
    mask[2 * 16..3 * 16].fill(1.0);
    let mask = tape.leaf(mask, 5, 16).unwrap();
    let masked = tape.mul(latents, mask).unwrap();
    let loss = tape.sum_all(masked);
    tape.backward(loss).unwrap();
    let grad = tape.grad(x).expect("input gradient");
    for j in [0, 1, 3, 4] {
        assert!(grad[j * 2..(j + 1) * 2].iter().all(|&g| g.abs() < 1e-12));
    }
}
