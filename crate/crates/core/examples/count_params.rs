//! Prints parameter counts for a range of generator depths at full scale.
//!
//! ```text
//! cargo run --example count_params -- [base_channels]
//! ```

use pona::discriminator::DiscriminatorConfig;
use pona::generator::GeneratorConfig;
use pona::{block_parameter_count, count_parameters};

fn main() -> anyhow::Result<()> {
    let base: usize = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(64);
    let d = DiscriminatorConfig {
        base_channels: base,
        ..Default::default()
    };
    let block = block_parameter_count(&GeneratorConfig {
        base_channels: base,
        ..Default::default()
    })?;
    println!("one block: {:.3} M", block as f64 / 1e6);
    for n in 1..=5 {
        let g = GeneratorConfig {
            num_blocks: n,
            base_channels: base,
            ..Default::default()
        };
        println!("{n} blocks: {:.3} M", count_parameters(&g, &d)? as f64 / 1e6);
    }
    Ok(())
}
