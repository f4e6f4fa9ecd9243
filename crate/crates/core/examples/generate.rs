//! Trains a toy model briefly, then renders one condition image in every
//! pose of the synthetic set and writes the strip as a PNG.
//!
//! ```text
//! cargo run --release --example generate -- [steps] [out.png]
//! ```

use pona::data::{make_synthetic_dataset, SyntheticSpec};
use pona::discriminator::DiscriminatorConfig;
use pona::generator::GeneratorConfig;
use pona::image::hstack;
use pona::pose::encode_pose;
use pona::training::{train, Trainer, TrainingConfig};

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let steps: u64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(50);
    let out = args
        .next()
        .map(std::path::PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("pona_generate.png"));

    let synthetic = make_synthetic_dataset(&SyntheticSpec::default())?;
    let data = &synthetic.dataset;
    let training = TrainingConfig {
        iterations: steps,
        checkpoint_interval: steps,
        sigma: 2.0,
        ..Default::default()
    };
    let mut trainer = Trainer::new(
        &GeneratorConfig {
            base_channels: 8,
            image_size: [32, 16],
            ..Default::default()
        },
        &DiscriminatorConfig {
            base_channels: 8,
            ..Default::default()
        },
        &training,
    )?;
    train(&mut trainer, data, &std::env::temp_dir().join("pona_generate_run"))?;

    let condition = &data.samples[0];
    let condition_pose = encode_pose(&condition.keypoints, training.sigma)?;
    let mut tiles = vec![condition.image.clone()];
    for target in &data.samples {
        let pose = encode_pose(&target.keypoints, training.sigma)?;
        tiles.push(trainer.model().generate(trainer.store(), &condition.image, &condition_pose, &pose)?);
    }
    hstack(&tiles)?.save(&out)?;
    println!("{} poses rendered to {}", tiles.len() - 1, out.display());
    Ok(())
}
