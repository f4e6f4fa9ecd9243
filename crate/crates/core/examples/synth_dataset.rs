//! Writes the synthetic stick-figure dataset to a directory in the on-disk
//! layout the loader reads, then loads it back.
//!
//! ```text
//! cargo run --example synth_dataset -- [out_dir] [identities] [poses]
//! ```

use pona::data::{make_synthetic_dataset, Dataset, SyntheticSpec};

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = args
        .next()
        .map(std::path::PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("pona_synth"));
    let spec = SyntheticSpec {
        num_identities: args.next().map(|s| s.parse()).transpose()?.unwrap_or(8),
        poses_per_identity: args.next().map(|s| s.parse()).transpose()?.unwrap_or(2),
        ..Default::default()
    };
    let synthetic = make_synthetic_dataset(&spec)?;
    synthetic.dataset.write(&out)?;
    let loaded = Dataset::load(&out)?;
    anyhow::ensure!(loaded == synthetic.dataset, "round trip changed the dataset");

    println!("{} images, {} pairs in {}", loaded.samples.len(), loaded.len(), out.display());
    for (i, sig) in synthetic.signatures.iter().enumerate() {
        println!(
            "identity {i}: head {:?} torso {:?} arms {:?} legs {:?}",
            sig.head, sig.torso, sig.arms, sig.legs
        );
    }
    Ok(())
}
