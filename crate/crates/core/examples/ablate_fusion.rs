//! Compares fusion placements on the synthetic set with matched seeds and
//! prints the comparison table.
//!
//! ```text
//! cargo run --release --example ablate_fusion -- [steps] [seed]
//! ```

use pona::ablation::run_ablation;
use pona::config::{AblationAxes, AblationMatrix, RunConfig};
use pona::data::{make_synthetic_dataset, SyntheticSpec};
use pona::generator::FusionPlace;

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let steps: u64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(200);
    let seed: u64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(0);

    let mut base = RunConfig::default();
    base.generator.base_channels = 8;
    base.generator.image_size = [32, 16];
    base.discriminator.base_channels = 8;
    base.training.iterations = steps;
    base.training.checkpoint_interval = steps;
    base.training.sigma = 2.0;
    base.training.seed = seed;
    let matrix = AblationMatrix {
        base,
        axes: AblationAxes {
            num_blocks: vec![],
            fusion_place: FusionPlace::ALL.to_vec(),
            components: vec![],
        },
    };
    let data = make_synthetic_dataset(&SyntheticSpec::default())?;
    let out = std::env::temp_dir().join("pona_ablate_fusion");
    let table = run_ablation(&matrix, &data.dataset, &out)?;
    print!("{}", table.to_table());
    Ok(())
}
