//! Builds a pose-guided attention map between two small codes and shows
//! where one target location draws its values from.
//!
//! ```text
//! cargo run --example attention_map -- [row] [col]
//! ```

use pona::attention::{apply_attention, compute_attention_map, AttentionParams, CodeRole, FeatureCode};
use pona_tensor::ndarray::{Array, IxDyn};
use pona_tensor::{Binding, ParamStore, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let row: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(2);
    let col: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(1);
    let (h, w, c) = (6, 4, 8);
    anyhow::ensure!(row < h && col < w, "location must lie inside the {h}x{w} grid");

    let params = AttentionParams::new("attn", c, c, 2);
    let mut store = ParamStore::init(&params.specs(), &mut ChaCha8Rng::seed_from_u64(7))?;
    // scale up the embeddings so the map is visibly peaked
    for name in ["attn.key.weight", "attn.query.weight"] {
        let v = store.value(name)?.mapv(|x| x * 60.0);
        store.set(name, v)?;
    }
    store.set("attn.gamma", Array::from_elem(IxDyn(&[1]), 1.0))?;

    // a pose code that is a smooth bump around (3, 2)
    let pose = Array::from_shape_fn(IxDyn(&[1, c, h, w]), |i| {
        let (ch, y, x) = (i[1] as f64, i[2] as f64, i[3] as f64);
        let d2 = (y - 3.0).powi(2) + (x - 2.0).powi(2);
        (-(d2) / 4.0).exp() * (1.0 + 0.1 * ch)
    });
    let image = Array::from_shape_fn(IxDyn(&[1, c, h, w]), |i| (i[2] * w + i[3]) as f64 / (h * w) as f64);

    let b = Binding::eval(&store);
    let pose_code = FeatureCode::new(Var::constant(pose), CodeRole::Pose)?;
    let image_code = FeatureCode::new(Var::constant(image), CodeRole::Image)?;
    let map = compute_attention_map(&b, &pose_code, &params)?;
    let mixed = apply_attention(&b, &image_code, &map, &params)?;

    let j = row * w + col;
    println!("weights target ({row}, {col}) puts on each source location:");
    for y in 0..h {
        let cells: Vec<String> = (0..w).map(|x| format!("{:6.3}", map.var.value()[[0, j, y * w + x]])).collect();
        println!("  {}", cells.join(" "));
    }
    let sums = map.row_sums();
    let worst = sums.iter().map(|s| (s - 1.0).abs()).fold(0.0, f64::max);
    println!("rows: {}, worst |row sum - 1| = {worst:.1e}", sums.len());
    println!("output code shape: {:?}", mixed.var.shape());
    Ok(())
}
