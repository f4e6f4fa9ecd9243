//! Trains a few steps, saves a checkpoint, restores it and checks the
//! restored trainer writes the same bytes.
//!
//! ```text
//! cargo run --release --example checkpoint -- [steps]
//! ```

use pona::checkpoint::Checkpoint;
use pona::data::{make_synthetic_dataset, SyntheticSpec};
use pona::discriminator::DiscriminatorConfig;
use pona::generator::GeneratorConfig;
use pona::training::{checkpoint_path, train, Trainer, TrainingConfig};

fn main() -> anyhow::Result<()> {
    let steps: u64 = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(4);
    let dir = std::env::temp_dir().join("pona_checkpoint_example");
    let synthetic = make_synthetic_dataset(&SyntheticSpec::default())?;
    let generator = GeneratorConfig {
        base_channels: 4,
        image_size: [32, 16],
        ..Default::default()
    };
    let discriminator = DiscriminatorConfig {
        base_channels: 4,
        ..Default::default()
    };
    let training = TrainingConfig {
        iterations: steps,
        checkpoint_interval: steps,
        sigma: 2.0,
        ..Default::default()
    };
    let mut trainer = Trainer::new(&generator, &discriminator, &training)?;
    train(&mut trainer, &synthetic.dataset, &dir)?;

    let path = checkpoint_path(&dir, steps);
    let restored = Trainer::from_checkpoint(Checkpoint::load(&path)?)?;
    let original = std::fs::read(&path)?;
    let rewritten = restored.checkpoint().to_bytes();
    println!("{} ({} bytes, step {})", path.display(), original.len(), restored.step());
    println!("save -> load -> save identical: {}", original == rewritten);
    Ok(())
}
