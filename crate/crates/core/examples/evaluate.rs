//! Scores the synthetic targets against themselves, then against a
//! degraded copy, with the built-in stand-in backends.
//!
//! ```text
//! cargo run --example evaluate
//! ```

use pona::data::{make_synthetic_dataset, SyntheticSpec};
use pona::image::ImageTensor;
use pona::metrics::{evaluate_images, reference_pairs, Backends, ColorHistogramClassifier, NearestAnnotationEstimator};

fn main() -> anyhow::Result<()> {
    let synthetic = make_synthetic_dataset(&SyntheticSpec::default())?;
    let classifier = ColorHistogramClassifier::default();
    let estimator = NearestAnnotationEstimator::from_dataset(&synthetic.dataset)?;
    let backends = Backends {
        classifier: &classifier,
        pose_estimator: &estimator,
    };
    let pairs = reference_pairs(&synthetic.dataset);
    println!("targets vs themselves");
    print!("{}", evaluate_images(&pairs, &backends, 10)?.to_table());

    let darkened: Vec<_> = pairs
        .iter()
        .map(|p| {
            let mut q = p.clone();
            q.generated = ImageTensor::new(p.generated.data.mapv(|v| 0.7 * v - 0.3)).expect("finite");
            q
        })
        .collect();
    println!("\ntargets vs darkened copies");
    print!("{}", evaluate_images(&darkened, &backends, 10)?.to_table());
    Ok(())
}
