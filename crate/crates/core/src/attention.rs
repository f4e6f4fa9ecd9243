//! Non-local attention over feature codes.
//!
//! Two flavours share one parameter layout ([`AttentionParams`]):
//!
//! * [`self_attention`]: keys, queries and values all come from the same
//!   code. Used on the fused pose/image code and inside the discriminators.
//! * pose-guided cross-modal attention: [`compute_attention_map`] embeds
//!   keys and queries from the pose code only, and [`apply_attention`] uses
//!   that map to rearrange value embeddings of the image code.
//!
//! For a code flattened to `N = h·w` locations, with `f` and `g` the key
//! and query embeddings (1×1 convolutions),
//!
//! ```text
//! m[i, j]     = f(x_i) · g(x_j)
//! alpha[j, i] = exp(m[i, j]) / Σ_k exp(m[k, j])      (softmax over sources i)
//! o_j         = W_t( Σ_i alpha[j, i] · W_h(v_i) )
//! out         = gamma · o + v
//! ```
//!
//! Row `j` of the map is therefore a probability distribution over source
//! locations feeding output location `j`. `gamma` starts at exactly zero,
//! so a fresh module is the identity on its residual input.

use pona_tensor::nn::Conv2d;
use pona_tensor::{Binding, Init, ParamSpec, Var};

use crate::error::{PonaError, Result};

/// Key/query channel reduction used when none is configured.
pub const DEFAULT_REDUCTION: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CodeRole {
    Pose,
    Image,
    Fusion,
}

/// A batched `[B, C, h, w]` feature code.
#[derive(Debug, Clone)]
pub struct FeatureCode {
    pub var: Var,
    pub role: CodeRole,
}

impl FeatureCode {
    pub fn new(var: Var, role: CodeRole) -> Result<Self> {
        if var.shape().len() != 4 {
            return Err(PonaError::shape("feature code rank", var.shape(), &[0, 0, 0, 0]));
        }
        if var.value().iter().any(|v| !v.is_finite()) {
            return Err(PonaError::NonFinite("feature code"));
        }
        Ok(Self { var, role })
    }

    pub fn batch(&self) -> usize {
        self.var.shape()[0]
    }

    pub fn channels(&self) -> usize {
        self.var.shape()[1]
    }

    pub fn spatial(&self) -> (usize, usize) {
        (self.var.shape()[2], self.var.shape()[3])
    }

    pub fn locations(&self) -> usize {
        self.var.shape()[2] * self.var.shape()[3]
    }

    /// Channel-wise concatenation, `[first; second]`.
    pub fn concat(first: &FeatureCode, second: &FeatureCode) -> Result<FeatureCode> {
        if first.batch() != second.batch() || first.spatial() != second.spatial() {
            return Err(PonaError::shape("code concatenation", first.var.shape(), second.var.shape()));
        }
        Ok(FeatureCode {
            var: Var::concat(&[first.var.clone(), second.var.clone()], 1),
            role: CodeRole::Fusion,
        })
    }
}

/// `[B, N, N]` row-stochastic attention; row `j` sums to one over sources.
#[derive(Debug, Clone)]
pub struct AttentionMap {
    pub var: Var,
}

impl AttentionMap {
    pub fn locations(&self) -> usize {
        self.var.shape()[1]
    }

    /// Sum of every row, flattened over the batch.
    pub fn row_sums(&self) -> Vec<f64> {
        self.var
            .value()
            .lanes(pona_tensor::ndarray::Axis(2))
            .into_iter()
            .map(|row| row.sum())
            .collect()
    }
}

/// Parameter layout of one attention module.
///
/// `key_source_channels` is the width of the code keys and queries are
/// embedded from; `value_channels` the width of the code being mixed. For
/// self-attention they are equal.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    pub name: String,
    pub key_source_channels: usize,
    pub value_channels: usize,
    pub reduction: usize,
}

impl AttentionParams {
    pub fn new(name: impl Into<String>, key_source_channels: usize, value_channels: usize, reduction: usize) -> Self {
        Self {
            name: name.into(),
            key_source_channels,
            value_channels,
            reduction: reduction.max(1),
        }
    }

    pub fn self_attention(name: impl Into<String>, channels: usize, reduction: usize) -> Self {
        Self::new(name, channels, channels, reduction)
    }

    pub fn key_channels(&self) -> usize {
        (self.key_source_channels / self.reduction).max(1)
    }

    pub fn key(&self) -> Conv2d {
        Conv2d::pointwise(format!("{}.key", self.name), self.key_source_channels, self.key_channels())
    }

    pub fn query(&self) -> Conv2d {
        Conv2d::pointwise(format!("{}.query", self.name), self.key_source_channels, self.key_channels())
    }

    pub fn value(&self) -> Conv2d {
        Conv2d::pointwise(format!("{}.value", self.name), self.value_channels, self.value_channels)
    }

    pub fn output(&self) -> Conv2d {
        Conv2d::pointwise(format!("{}.output", self.name), self.value_channels, self.value_channels)
    }

    pub fn gamma_name(&self) -> String {
        format!("{}.gamma", self.name)
    }

    pub fn specs(&self) -> Vec<ParamSpec> {
        let mut specs = Vec::new();
        specs.extend(self.key().specs());
        specs.extend(self.query().specs());
        specs.extend(self.value().specs());
        specs.extend(self.output().specs());
        specs.push(ParamSpec::param(self.gamma_name(), &[1], Init::Constant(0.0)));
        specs
    }
}

fn flatten_locations(x: &Var) -> Var {
    let s = x.shape();
    x.reshape(&[s[0], s[1], s[2] * s[3]])
}

/// Softmax-normalized key/query affinities of `pose_code`.
pub fn compute_attention_map(b: &Binding, pose_code: &FeatureCode, params: &AttentionParams) -> Result<AttentionMap> {
    if pose_code.channels() != params.key_source_channels {
        return Err(PonaError::shape(
            "attention key source",
            &[pose_code.channels()],
            &[params.key_source_channels],
        ));
    }
    if pose_code.var.value().iter().any(|v| !v.is_finite()) {
        return Err(PonaError::NonFinite("attention key source"));
    }
    let keys = flatten_locations(&params.key().forward(b, &pose_code.var));
    let queries = flatten_locations(&params.query().forward(b, &pose_code.var));
    // [B, N(j), N(i)] with entry (j, i) = m[i, j]
    let logits = queries.transpose_last2().bmm(&keys);
    Ok(AttentionMap {
        var: logits.softmax_last(),
    })
}

/// Mixes the value embedding of `image_code` with `map` and adds the
/// gamma-gated result back onto `image_code`.
pub fn apply_attention(
    b: &Binding,
    image_code: &FeatureCode,
    map: &AttentionMap,
    params: &AttentionParams,
) -> Result<FeatureCode> {
    let n = image_code.locations();
    if map.var.shape() != [image_code.batch(), n, n] {
        return Err(PonaError::shape(
            "attention map vs code",
            map.var.shape(),
            &[image_code.batch(), n, n],
        ));
    }
    if image_code.channels() != params.value_channels {
        return Err(PonaError::shape(
            "attention value channels",
            &[image_code.channels()],
            &[params.value_channels],
        ));
    }
    let (h, w) = image_code.spatial();
    let values = flatten_locations(&params.value().forward(b, &image_code.var));
    let mixed = values
        .bmm(&map.var.transpose_last2())
        .reshape(&[image_code.batch(), params.value_channels, h, w]);
    let out = params.output().forward(b, &mixed);
    let gamma = b.param(&params.gamma_name());
    Ok(FeatureCode {
        var: out.gate(&gamma).add(&image_code.var),
        role: image_code.role,
    })
}

/// Self-attention with a zero-initialized residual gate.
pub fn self_attention(b: &Binding, code: &FeatureCode, params: &AttentionParams) -> Result<FeatureCode> {
    let map = compute_attention_map(b, code, params)?;
    apply_attention(b, code, &map, params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use pona_tensor::ndarray::IxDyn;
    use pona_tensor::{Array, ParamStore};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn code(shape: &[usize], seed: u64, role: CodeRole) -> FeatureCode {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let len = shape.iter().product();
        let data = (0..len).map(|_| rng.random_range(-1.0..1.0)).collect();
        FeatureCode::new(Var::constant(Array::from_shape_vec(IxDyn(shape), data).unwrap()), role).unwrap()
    }

    fn store(params: &AttentionParams, seed: u64) -> ParamStore {
        ParamStore::init(&params.specs(), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    #[test]
    fn gamma_zero_is_identity() {
        let p = AttentionParams::self_attention("sa", 8, 8);
        let s = store(&p, 1);
        let b = Binding::eval(&s);
        let x = code(&[2, 8, 3, 2], 2, CodeRole::Fusion);
        let y = self_attention(&b, &x, &p).unwrap();
        assert_eq!(y.var.value(), x.var.value());
    }

    #[test]
    fn constant_pose_code_gives_uniform_map() {
        let p = AttentionParams::new("x", 4, 4, 2);
        let s = store(&p, 3);
        let b = Binding::eval(&s);
        let pose = FeatureCode::new(Var::constant(Array::from_elem(IxDyn(&[1, 4, 2, 3]), 0.3)), CodeRole::Pose).unwrap();
        let map = compute_attention_map(&b, &pose, &p).unwrap();
        for v in map.var.value().iter() {
            assert!((v - 1.0 / 6.0).abs() < 1e-15);
        }
    }

    #[test]
    fn single_location_map_is_one() {
        let p = AttentionParams::self_attention("sa", 4, 1);
        let mut s = store(&p, 4);
        s.set("sa.gamma", Array::from_elem(IxDyn(&[1]), 0.7)).unwrap();
        let b = Binding::eval(&s);
        let x = code(&[1, 4, 1, 1], 5, CodeRole::Fusion);
        let map = compute_attention_map(&b, &x, &p).unwrap();
        assert_eq!(map.var.value().as_slice().unwrap(), &[1.0]);
        let y = self_attention(&b, &x, &p).unwrap();
        let direct = p
            .output()
            .forward(&b, &p.value().forward(&b, &x.var))
            .scale(0.7)
            .add(&x.var);
        for (a, e) in y.var.value().iter().zip(direct.value().iter()) {
            assert!((a - e).abs() < 1e-15);
        }
    }

    #[test]
    fn mismatched_map_is_rejected() {
        let p = AttentionParams::new("x", 4, 4, 2);
        let s = store(&p, 3);
        let b = Binding::eval(&s);
        let pose = code(&[1, 4, 2, 2], 1, CodeRole::Pose);
        let image = code(&[1, 4, 3, 2], 2, CodeRole::Image);
        let map = compute_attention_map(&b, &pose, &p).unwrap();
        assert!(matches!(
            apply_attention(&b, &image, &map, &p),
            Err(PonaError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn non_finite_code_is_rejected() {
        let arr = Array::from_elem(IxDyn(&[1, 2, 1, 1]), f64::NAN);
        assert!(matches!(
            FeatureCode::new(Var::constant(arr), CodeRole::Fusion),
            Err(PonaError::NonFinite(_))
        ));
    }

    #[test]
    fn reduction_floor_is_one_channel() {
        let p = AttentionParams::self_attention("sa", 4, 8);
        assert_eq!(p.key_channels(), 1);
    }
}
