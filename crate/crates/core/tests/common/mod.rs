#![allow(dead_code)]

use lpcsm_core::model::{init_params, ModelConfig, Toggles};
use lpcsm_core::ParameterStore;
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn below(rng: &mut ChaCha8Rng, n: usize) -> usize {
    (rng.next_u64() % n as u64) as usize
}

pub fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64
}

/// A small random configuration with the given toggles.
pub fn random_config(rng: &mut ChaCha8Rng, toggles: Toggles, max_seq_len: usize) -> ModelConfig {
    let heads = 1 + below(rng, 3);
    let head_dim = 1 + below(rng, 4);
    let width = heads * head_dim;
    ModelConfig {
        vocab_size: 5 + below(rng, 12),
        width,
        layers: 1 + below(rng, 3),
        window: 1 + below(rng, 8),
        heads,
        latent_dim: if below(rng, 3) == 0 { Some(1 + below(rng, width)) } else { None },
        chunk_size: 1 + below(rng, 8),
        refine_steps: below(rng, 4),
        alpha_n: if below(rng, 4) == 0 { 0.0 } else { uniform(rng, 0.0, 2.0) },
        max_seq_len,
        toggles,
        ..ModelConfig::default()
    }
}

pub fn random_tokens(rng: &mut ChaCha8Rng, vocab: usize, len: usize) -> Vec<usize> {
    (0..len).map(|_| below(rng, vocab)).collect()
}

pub fn store_for(cfg: &ModelConfig, seed: u64) -> ParameterStore {
    init_params(cfg, &mut rng(seed)).unwrap()
}

/// Two-layer, width-16 configuration used by the full-model gradient checks.
pub fn small_config(toggles: Toggles) -> ModelConfig {
    ModelConfig {
        vocab_size: 7,
        width: 16,
        layers: 2,
        window: 3,
        heads: 2,
        chunk_size: 3,
        refine_steps: 2,
        alpha_n: 0.5,
        max_seq_len: 8,
        toggles,
        ..ModelConfig::default()
    }
}
