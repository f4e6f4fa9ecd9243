//! Trains a small generator on the synthetic stick-figure set and prints
//! the loss trace.
//!
//! ```text
//! cargo run --release --example train_toy -- [steps] [out_dir]
//! ```

use std::time::Instant;

use pona::data::{make_synthetic_dataset, SyntheticSpec};
use pona::discriminator::DiscriminatorConfig;
use pona::generator::GeneratorConfig;
use pona::training::{train, Trainer, TrainingConfig};

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let steps: u64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(200);
    let out = args
        .next()
        .map(std::path::PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("pona_train_toy"));

    let synthetic = make_synthetic_dataset(&SyntheticSpec::default())?;
    let generator = GeneratorConfig {
        base_channels: 8,
        image_size: [32, 16],
        ..Default::default()
    };
    let discriminator = DiscriminatorConfig {
        base_channels: 8,
        ..Default::default()
    };
    let training = TrainingConfig {
        iterations: steps,
        batch_size: 4,
        checkpoint_interval: steps,
        sigma: 2.0,
        ..Default::default()
    };
    let mut trainer = Trainer::new(&generator, &discriminator, &training)?;
    let start = Instant::now();
    let outcome = train(&mut trainer, &synthetic.dataset, &out)?;
    for r in outcome.reports.iter().step_by((steps as usize / 10).max(1)) {
        println!(
            "step {:>4}  d {:.4}  adv {:.4}  l1 {:.4}  percep {:.4}",
            r.step, r.d_loss, r.g_adv, r.l1, r.percep
        );
    }
    for (name, g) in trainer.generator_gammas() {
        println!("{name} = {g:+.5}");
    }
    println!("{} steps in {:.1?}, log at {}", steps, start.elapsed(), outcome.log_path.display());
    Ok(())
}
