#![allow(dead_code)]

pub mod oracles;

use ddcn::data::{synth_traffic, Prepared, SynthSpec, TrafficDataset, DEFAULT_SPLIT};
use ddcn::model::ModelConfig;
use ddcn::train::TrainConfig;

/// 8×8 grid, 50 frames: 46 windows of which 32 train.
pub fn overfit_dataset() -> TrafficDataset {
    synth_traffic(&SynthSpec {
        height: 8,
        width: 8,
        steps: 50,
        seed: 1,
        ..Default::default()
    })
    .unwrap()
}

pub fn overfit_prepared() -> Prepared {
    Prepared::new(&overfit_dataset(), 4, DEFAULT_SPLIT).unwrap()
}

pub fn overfit_model() -> ModelConfig {
    ModelConfig {
        embed_dim: 16,
        depth: 1,
        patch_size: 2,
        ..ModelConfig::default().with_grid(8, 8)
    }
}

pub fn overfit_train() -> TrainConfig {
    TrainConfig {
        epochs: 200,
        ..Default::default()
    }
}

/// A cheap run for pipeline plumbing tests.
pub fn quick_model() -> ModelConfig {
    ModelConfig {
        embed_dim: 8,
        depth: 1,
        patch_size: 2,
        ..ModelConfig::default().with_grid(8, 8)
    }
}

pub fn quick_train(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 8,
        ..Default::default()
    }
}
