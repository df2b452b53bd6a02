//! Shared fixtures for the integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use v2f_core::data::{sample_dataset, Dataset, SplitSizes};
use v2f_core::world::{make_synthetic_world, SyntheticWorld, SyntheticWorldSpec};
use v2f_core::ModelConfig;

/// Small model whose token grid matches [`tiny_world`] embeddings.
pub fn tiny_config() -> ModelConfig {
    ModelConfig {
        voxel_counts_by_subject: BTreeMap::from([(0, 48), (1, 40)]),
        pooled_len: 16,
        base_channels: 2,
        ch_mult: vec![1, 2],
        num_res_blocks: 1,
        num_down_blocks: 1,
        hidden_tokens: 4,
        hidden_dim: 8,
        latent_dim: 8,
        projector_dim: 8,
        s2n_layers: 1,
        s2n_heads: 2,
        batch_size: 8,
        max_epochs: 4,
        s2n_steps: 30,
        s2n_eval_every: 10,
        adapt_epochs: 3,
        adapt_s2n_steps: 10,
        ..ModelConfig::desk()
    }
}

pub fn tiny_spec() -> SyntheticWorldSpec {
    SyntheticWorldSpec {
        concept_dim: 4,
        tokens: 4,
        embed_dim: 8,
        voxel_counts: BTreeMap::from([(0, 48), (1, 40)]),
        n_train_stimuli: 40,
        n_test_stimuli: 6,
        ..SyntheticWorldSpec::desk()
    }
}

pub fn tiny_world(seed: u64) -> SyntheticWorld {
    make_synthetic_world(&tiny_spec(), seed).unwrap()
}

pub fn tiny_data(seed: u64) -> Dataset {
    let world = tiny_world(seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_dataset(&world, SplitSizes { train: 40, test: 6, sessions: 4 }, &mut rng).unwrap()
}

/// The default desk world and its 200/20 dataset with 40 sessions.
pub fn desk_data(seed: u64) -> (SyntheticWorld, Dataset) {
    let world = make_synthetic_world(&SyntheticWorldSpec::desk(), seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = sample_dataset(&world, SplitSizes { train: 200, test: 20, sessions: 40 }, &mut rng).unwrap();
    (world, data)
}
