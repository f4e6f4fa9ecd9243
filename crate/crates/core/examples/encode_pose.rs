//! Encodes a skeleton as 18 Gaussian heatmaps and prints an ASCII view of
//! their channel-wise maximum.
//!
//! ```text
//! cargo run --example encode_pose -- [sigma]
//! ```

use pona::pose::{encode_pose, Joint, KeypointSet, JOINT_NAMES, NUM_JOINTS};

fn main() -> anyhow::Result<()> {
    let sigma: f64 = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(1.5);
    let (h, w) = (32, 16);
    let mut joints = [Joint::missing(); NUM_JOINTS];
    let coords = [
        (8.0, 3.0), (8.0, 7.0), (5.0, 7.0), (4.0, 12.0), (3.0, 16.0), (11.0, 7.0), (12.0, 12.0), (13.0, 16.0),
        (6.0, 17.0), (6.0, 23.0), (6.0, 29.0), (10.0, 17.0), (10.0, 23.0), (10.0, 29.0),
    ];
    for (j, &(x, y)) in joints.iter_mut().zip(&coords) {
        *j = Joint::visible(x, y);
    }
    // eyes and ears left out: their channels stay zero
    let keypoints = KeypointSet::new(joints, h, w)?;
    let heatmap = encode_pose(&keypoints, sigma)?;

    let shades = [' ', '.', ':', '-', '=', '+', '*', '#', '%', '@'];
    for y in 0..h {
        let row: String = (0..w)
            .map(|x| {
                let m = (0..NUM_JOINTS).map(|c| heatmap.data[[c, y, x]]).fold(0.0, f64::max);
                shades[((m * 9.0).round() as usize).min(9)]
            })
            .collect();
        println!("|{row}|");
    }
    for (c, name) in JOINT_NAMES.iter().enumerate() {
        let total: f64 = heatmap.data.index_axis(pona_tensor::ndarray::Axis(0), c).sum();
        println!("{c:>2} {name:<15} mass {total:8.3}");
    }
    Ok(())
}
