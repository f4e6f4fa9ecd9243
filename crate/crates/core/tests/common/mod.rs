#![allow(dead_code)]

use pona::data::{make_synthetic_dataset, SyntheticDataset, SyntheticSpec};
use pona::discriminator::DiscriminatorConfig;
use pona::generator::{FusionPlace, GeneratorConfig};
use pona::training::TrainingConfig;

pub fn toy_generator(fusion_place: FusionPlace) -> GeneratorConfig {
    GeneratorConfig {
        base_channels: 8,
        image_size: [32, 16],
        fusion_place,
        ..Default::default()
    }
}

pub fn toy_discriminator() -> DiscriminatorConfig {
    DiscriminatorConfig {
        base_channels: 8,
        ..Default::default()
    }
}

pub fn toy_training(iterations: u64, seed: u64) -> TrainingConfig {
    TrainingConfig {
        iterations,
        batch_size: 4,
        checkpoint_interval: iterations,
        sigma: 2.0,
        seed,
        ..Default::default()
    }
}

pub fn toy_dataset() -> SyntheticDataset {
    make_synthetic_dataset(&SyntheticSpec::default()).expect("default spec is valid")
}

/// A few-pixel model for fast tests.
pub fn tiny_generator(fusion_place: FusionPlace) -> GeneratorConfig {
    GeneratorConfig {
        base_channels: 2,
        image_size: [16, 8],
        num_blocks: 2,
        fusion_place,
        ..Default::default()
    }
}

pub fn tiny_discriminator() -> DiscriminatorConfig {
    DiscriminatorConfig {
        base_channels: 2,
        num_residual_blocks: 1,
        attention_after: 1,
        ..Default::default()
    }
}

pub fn tiny_dataset() -> SyntheticDataset {
    make_synthetic_dataset(&SyntheticSpec {
        num_identities: 3,
        poses_per_identity: 2,
        image_size: [16, 8],
        seed: 11,
    })
    .expect("valid spec")
}
