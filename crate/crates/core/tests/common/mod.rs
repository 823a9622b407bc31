//! Fixtures shared by the integration tests.
#![allow(dead_code)]

use ltx_core::config::{ModelConfig, ModelKind, TrainSpec};
use ltx_core::tokenizer::{TokenSeq, RESERVED};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const TOY_VOCAB: usize = 20;

/// Vocab 20, 8 LSTM units, 4-dim code, a small discriminator.
pub fn toy_config(kind: ModelKind) -> ModelConfig {
    ModelConfig {
        lstm_units: 8,
        embed_dim: 6,
        latent_dim: 4,
        discriminator_layers: vec![6, 6],
        ..ModelConfig::desk(kind, TOY_VOCAB)
    }
}

/// A small but trainable configuration for short end-to-end runs.
pub fn small_config(kind: ModelKind, vocab: usize) -> ModelConfig {
    ModelConfig {
        lstm_units: 32,
        embed_dim: 16,
        latent_dim: 8,
        discriminator_layers: vec![32, 32],
        ..ModelConfig::desk(kind, vocab)
    }
}

pub fn short_spec(steps: u64, seed: u64) -> TrainSpec {
    TrainSpec {
        total_steps: steps,
        batch_size: 8,
        seed,
        eval_every: 0,
        ..TrainSpec::desk()
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random non-empty sentences over the non-reserved ids of `vocab`.
pub fn random_seqs(rng: &mut impl Rng, n: usize, vocab: usize, max_len: usize) -> Vec<TokenSeq> {
    (0..n)
        .map(|_| {
            let len = rng.random_range(1..=max_len);
            (0..len).map(|_| rng.random_range(RESERVED as u32..vocab as u32)).collect()
        })
        .collect()
}
