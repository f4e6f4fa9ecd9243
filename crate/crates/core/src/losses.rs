//! Training objective: conditional adversarial, pixel L1 and perceptual
//! terms.

use pona_tensor::nn::Conv2d;
use pona_tensor::{Binding, ParamStore, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{PonaError, Result};

/// Scores are clamped into `[EPS, 1 - EPS]` before taking logs.
pub const SCORE_EPS: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    /// Adversarial term.
    pub lambda1: f64,
    /// Pixel L1 term.
    pub lambda2: f64,
    /// Perceptual term.
    pub lambda3: f64,
}

impl LossWeights {
    /// Weights for low-resolution (128×64) data.
    pub const MARKET: Self = Self {
        lambda1: 5.0,
        lambda2: 10.0,
        lambda3: 10.0,
    };
    /// Weights for high-resolution fashion data.
    pub const DEEPFASHION: Self = Self {
        lambda1: 5.0,
        lambda2: 1.0,
        lambda3: 1.0,
    };

    pub fn validate(&self) -> Result<()> {
        for (field, v) in [("lambda1", self.lambda1), ("lambda2", self.lambda2), ("lambda3", self.lambda3)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(PonaError::config(format!("training.weights.{field}"), "must be finite and nonnegative"));
            }
        }
        Ok(())
    }
}

impl Default for LossWeights {
    fn default() -> Self {
        Self::MARKET
    }
}

fn same_shape(a: &Var, b: &Var, context: &'static str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(PonaError::shape(context, a.shape(), b.shape()));
    }
    Ok(())
}

/// Mean absolute difference over all elements.
pub fn l1_loss(generated: &Var, target: &Var) -> Result<Var> {
    same_shape(generated, target, "l1 loss")?;
    Ok(generated.sub(target).abs().mean())
}

/// Fixed feature extractor for the perceptual term.
///
/// Given a `[B, 3, H, W]` image batch in `[-1, 1]`, returns feature maps as
/// `[B, C, h, w]` tensors. Extractors hold no trainable state; gradients
/// only flow back to the image.
pub trait FeatureExtractor {
    fn layer_tag(&self) -> &str;
    fn extract(&self, images: &Var) -> Result<Vec<Var>>;
}

/// Returns the image itself as a single 3-map feature stack.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityExtractor;

impl FeatureExtractor for IdentityExtractor {
    fn layer_tag(&self) -> &str {
        "identity"
    }

    fn extract(&self, images: &Var) -> Result<Vec<Var>> {
        Ok(vec![images.clone()])
    }
}

/// Two seeded 3×3 convolution + ReLU layers, standing in for the first
/// block of a pretrained classification network.
#[derive(Debug, Clone)]
pub struct RandomConvExtractor {
    layers: [Conv2d; 2],
    store: ParamStore,
    tag: String,
}

impl RandomConvExtractor {
    pub fn new(channels: usize, seed: u64) -> Self {
        let layers = [
            Conv2d::new("extractor.0", 3, channels, 3),
            Conv2d::new("extractor.1", channels, channels, 3),
        ];
        let specs: Vec<_> = layers.iter().flat_map(Conv2d::specs).collect();
        // unit-scale weights so features are not vanishingly small
        let mut store = ParamStore::init(&specs, &mut ChaCha8Rng::seed_from_u64(seed)).expect("static specs");
        for layer in &layers {
            let name = format!("{}.weight", layer.name);
            let fan_in = (layer.in_channels * 9) as f64;
            let w = store.value(&name).expect("declared").mapv(|v| v / 0.02 / fan_in.sqrt());
            store.set(&name, w).expect("same shape");
        }
        Self {
            layers,
            store,
            tag: format!("random_conv{channels}_seed{seed}"),
        }
    }
}

impl FeatureExtractor for RandomConvExtractor {
    fn layer_tag(&self) -> &str {
        &self.tag
    }

    fn extract(&self, images: &Var) -> Result<Vec<Var>> {
        if images.shape().len() != 4 || images.shape()[1] != 3 {
            return Err(PonaError::shape("extractor input", images.shape(), &[0, 3, 0, 0]));
        }
        let b = Binding::eval(&self.store);
        let x = self.layers[0].forward(&b, images).relu();
        Ok(vec![self.layers[1].forward(&b, &x).relu()])
    }
}

/// Sum over feature maps of the per-map mean absolute difference.
pub fn perceptual_loss(generated: &Var, target: &Var, extractor: &dyn FeatureExtractor) -> Result<Var> {
    same_shape(generated, target, "perceptual loss")?;
    let fg = extractor.extract(generated)?;
    let ft = extractor.extract(target)?;
    if fg.len() != ft.len() || fg.is_empty() {
        return Err(PonaError::Metric(format!(
            "extractor `{}` returned {} vs {} feature stacks",
            extractor.layer_tag(),
            fg.len(),
            ft.len()
        )));
    }
    let mut total: Option<Var> = None;
    for (a, b) in fg.iter().zip(&ft) {
        same_shape(a, b, "feature maps")?;
        let s = a.shape();
        let per_map = (s[0] * s[2..].iter().product::<usize>()).max(1) as f64;
        let term = a.sub(b).abs().sum().scale(1.0 / per_map);
        total = Some(match total {
            Some(t) => t.add(&term),
            None => term,
        });
    }
    Ok(total.expect("nonempty"))
}

/// Discriminator outputs for one set of candidates.
#[derive(Debug, Clone)]
pub struct Scores {
    pub appearance: Var,
    pub pose: Var,
}

fn log_clamped(s: &Var) -> Var {
    s.clamp(SCORE_EPS, 1.0 - SCORE_EPS).ln()
}

fn log_one_minus_clamped(s: &Var) -> Var {
    s.neg().add_scalar(1.0).clamp(SCORE_EPS, 1.0 - SCORE_EPS).ln()
}

/// Adversarial objectives `(d_loss, g_loss)`.
///
/// `d_loss = -E[log S^A_r + log S^P_r] - E[log(1 - S^A_f) + log(1 - S^P_f)]`,
/// the negated conditional GAN objective with the product of the two
/// discriminators split into a sum of logs. `g_loss` is the non-saturating
/// `-E[log S^A_f + log S^P_f]`.
pub fn adversarial_losses(real: &Scores, fake: &Scores) -> Result<(Var, Var)> {
    same_shape(&real.appearance, &real.pose, "real scores")?;
    same_shape(&fake.appearance, &fake.pose, "fake scores")?;
    let real_term = log_clamped(&real.appearance).add(&log_clamped(&real.pose)).mean();
    let fake_term = log_one_minus_clamped(&fake.appearance)
        .add(&log_one_minus_clamped(&fake.pose))
        .mean();
    let d_loss = real_term.add(&fake_term).neg();
    Ok((d_loss, generator_adversarial_loss(fake)?))
}

/// The generator half of [`adversarial_losses`].
pub fn generator_adversarial_loss(fake: &Scores) -> Result<Var> {
    same_shape(&fake.appearance, &fake.pose, "fake scores")?;
    Ok(log_clamped(&fake.appearance).add(&log_clamped(&fake.pose)).mean().neg())
}

/// The three generator-side terms.
#[derive(Debug, Clone)]
pub struct LossComponents {
    pub adversarial: Var,
    pub l1: Var,
    pub perceptual: Var,
}

/// `λ1·adversarial + λ2·L1 + λ3·perceptual`.
pub fn full_loss(c: &LossComponents, w: &LossWeights) -> Var {
    c.adversarial
        .scale(w.lambda1)
        .add(&c.l1.scale(w.lambda2))
        .add(&c.perceptual.scale(w.lambda3))
}

#[cfg(test)]
mod tests {
    use super::*;
    use pona_tensor::ndarray::IxDyn;
    use pona_tensor::Array;

    fn filled(shape: &[usize], v: f64) -> Var {
        Var::constant(Array::from_elem(IxDyn(shape), v))
    }

    fn scores(a: f64, p: f64) -> Scores {
        Scores {
            appearance: filled(&[2], a),
            pose: filled(&[2], p),
        }
    }

    #[test]
    fn l1_examples() {
        let x = filled(&[1, 3, 4, 4], 0.3);
        assert_eq!(l1_loss(&x, &x).unwrap().item(), 0.0);
        let z = filled(&[1, 3, 4, 4], 0.0);
        let h = filled(&[1, 3, 4, 4], 0.5);
        assert_eq!(l1_loss(&z, &h).unwrap().item(), 0.5);
        assert_eq!(l1_loss(&h, &z).unwrap().item(), 0.5);
        assert!(l1_loss(&z, &filled(&[1, 3, 4, 2], 0.0)).is_err());
    }

    #[test]
    fn identity_extractor_is_channel_sum_of_l1() {
        let a = filled(&[2, 3, 4, 4], 0.1);
        let b = filled(&[2, 3, 4, 4], -0.4);
        let p = perceptual_loss(&a, &b, &IdentityExtractor).unwrap().item();
        let l1 = l1_loss(&a, &b).unwrap().item();
        assert!((p - 3.0 * l1).abs() < 1e-12);
        assert_eq!(perceptual_loss(&a, &a, &IdentityExtractor).unwrap().item(), 0.0);
    }

    #[test]
    fn adversarial_examples() {
        let eps = SCORE_EPS;
        let (d, _) = adversarial_losses(&scores(1.0 - eps, 1.0 - eps), &scores(eps, eps)).unwrap();
        assert!(d.item().abs() < 1e-6);
        let (d, g) = adversarial_losses(&scores(0.5, 0.5), &scores(0.5, 0.5)).unwrap();
        assert!((d.item() - 4.0 * std::f64::consts::LN_2).abs() < 1e-12);
        assert!((g.item() - 2.0 * std::f64::consts::LN_2).abs() < 1e-12);
        // exact 0/1 scores are clamped rather than producing infinities
        let (d, g) = adversarial_losses(&scores(0.0, 1.0), &scores(1.0, 0.0)).unwrap();
        assert!(d.item().is_finite() && g.item().is_finite());
    }

    #[test]
    fn generator_loss_falls_as_fake_scores_rise() {
        let real = scores(0.9, 0.9);
        let mut last = f64::INFINITY;
        for k in 1..20 {
            let s = k as f64 / 20.0;
            let (_, g) = adversarial_losses(&real, &scores(s, s)).unwrap();
            assert!(g.item() < last);
            last = g.item();
        }
    }

    #[test]
    fn full_loss_weighting() {
        let one = || filled(&[], 1.0);
        let c = LossComponents {
            adversarial: one(),
            l1: one(),
            perceptual: one(),
        };
        let zero = LossWeights {
            lambda1: 0.0,
            lambda2: 0.0,
            lambda3: 0.0,
        };
        assert_eq!(full_loss(&c, &zero).item(), 0.0);
        assert_eq!(full_loss(&c, &LossWeights::MARKET).item(), 25.0);
        let c2 = LossComponents {
            adversarial: filled(&[], 2.0),
            l1: filled(&[], 3.0),
            perceptual: filled(&[], 0.5),
        };
        assert_eq!(full_loss(&c2, &LossWeights::DEEPFASHION).item(), 5.0 * 2.0 + 3.0 + 0.5);
    }

    #[test]
    fn weights_must_be_nonnegative() {
        let w = LossWeights {
            lambda1: -1.0,
            ..LossWeights::MARKET
        };
        assert!(w.validate().is_err());
    }
}
