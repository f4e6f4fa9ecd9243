//! Appearance and pose consistency discriminators.
//!
//! Both share one architecture and differ in input width: the appearance
//! discriminator sees `[candidate; condition image]` (6 channels), the pose
//! discriminator `[candidate; target heatmaps]` (21 channels).

use pona_tensor::nn::{Conv2d, NormKind};
use pona_tensor::{Binding, ParamSpec, Var};
use serde::{Deserialize, Serialize};

use crate::attention::{self_attention, AttentionParams, CodeRole, FeatureCode, DEFAULT_REDUCTION};
use crate::error::{PonaError, Result};
use crate::generator::{ConvUnit, NormChoice};
use crate::pose::NUM_JOINTS;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiscriminatorConfig {
    pub num_residual_blocks: usize,
    pub base_channels: usize,
    pub leaky_slope: f64,
    /// Self-attention is inserted after this many residual blocks.
    pub attention_after: usize,
    pub norm_kind: NormChoice,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        Self {
            num_residual_blocks: 3,
            base_channels: 64,
            leaky_slope: 0.2,
            attention_after: 2,
            norm_kind: NormChoice::Instance,
        }
    }
}

impl DiscriminatorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.leaky_slope > 0.0 && self.leaky_slope < 1.0) {
            return Err(PonaError::config("discriminator.leaky_slope", "must lie in (0, 1)"));
        }
        if self.base_channels == 0 {
            return Err(PonaError::config("discriminator.base_channels", "must be at least 1"));
        }
        if self.attention_after > self.num_residual_blocks {
            return Err(PonaError::config(
                "discriminator.attention_after",
                "cannot exceed num_residual_blocks",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
struct ResidualBlock {
    first: ConvUnit,
    second: ConvUnit,
    slope: f64,
}

impl ResidualBlock {
    fn new(name: &str, channels: usize, norm: NormKind, slope: f64) -> Self {
        Self {
            first: ConvUnit::new(&format!("{name}.0"), channels, channels, 3, 1, norm).leaky(slope),
            second: ConvUnit::new(&format!("{name}.1"), channels, channels, 3, 1, norm),
            slope,
        }
    }

    fn specs(&self) -> Vec<ParamSpec> {
        let mut s = self.first.specs();
        s.extend(self.second.specs());
        s
    }

    fn forward(&self, b: &Binding, x: &Var) -> Var {
        let y = self.second.forward_linear(b, &self.first.forward(b, x));
        x.add(&y).leaky_relu(self.slope)
    }
}

/// Which consistency a discriminator judges.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiscriminatorKind {
    Appearance,
    Pose,
}

impl DiscriminatorKind {
    pub fn prefix(self) -> &'static str {
        match self {
            Self::Appearance => "discriminator_appearance",
            Self::Pose => "discriminator_pose",
        }
    }

    /// Channels of the conditioning input concatenated to the candidate.
    pub fn condition_channels(self) -> usize {
        match self {
            Self::Appearance => 3,
            Self::Pose => NUM_JOINTS,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Discriminator {
    kind: DiscriminatorKind,
    stem: ConvUnit,
    down: ConvUnit,
    blocks: Vec<ResidualBlock>,
    attention: AttentionParams,
    attention_after: usize,
    head: Conv2d,
}

impl Discriminator {
    pub fn new(kind: DiscriminatorKind, config: &DiscriminatorConfig) -> Result<Self> {
        config.validate()?;
        let p = kind.prefix();
        let base = config.base_channels;
        let norm: NormKind = config.norm_kind.into();
        let slope = config.leaky_slope;
        Ok(Self {
            kind,
            stem: ConvUnit::new(&format!("{p}.stem"), 3 + kind.condition_channels(), base, 3, 1, norm).leaky(slope),
            down: ConvUnit::new(&format!("{p}.down"), base, 2 * base, 3, 2, norm).leaky(slope),
            blocks: (0..config.num_residual_blocks)
                .map(|i| ResidualBlock::new(&format!("{p}.res.{i}"), 2 * base, norm, slope))
                .collect(),
            attention: AttentionParams::self_attention(format!("{p}.attention"), 2 * base, DEFAULT_REDUCTION),
            attention_after: config.attention_after,
            head: Conv2d::pointwise(format!("{p}.head"), 2 * base, 1),
        })
    }

    pub fn kind(&self) -> DiscriminatorKind {
        self.kind
    }

    pub fn specs(&self) -> Vec<ParamSpec> {
        let mut s = self.stem.specs();
        s.extend(self.down.specs());
        for (i, block) in self.blocks.iter().enumerate() {
            if i == self.attention_after {
                s.extend(self.attention.specs());
            }
            s.extend(block.specs());
        }
        if self.attention_after == self.blocks.len() {
            s.extend(self.attention.specs());
        }
        s.extend(self.head.specs());
        s
    }

    /// Unsquashed scores, shape `[B]`.
    pub fn logits(&self, b: &Binding, candidate: &Var, condition: &Var) -> Result<Var> {
        let (cs, ks) = (candidate.shape(), condition.shape());
        if cs.len() != 4
            || ks.len() != 4
            || cs[1] != 3
            || ks[1] != self.kind.condition_channels()
            || cs[0] != ks[0]
            || cs[2..] != ks[2..]
        {
            return Err(PonaError::shape("discriminator inputs", cs, ks));
        }
        let batch = cs[0];
        let mut x = Var::concat(&[candidate.clone(), condition.clone()], 1);
        x = self.stem.forward(b, &x);
        x = self.down.forward(b, &x);
        for (i, block) in self.blocks.iter().enumerate() {
            if i == self.attention_after {
                x = self_attention(b, &FeatureCode::new(x, CodeRole::Image)?, &self.attention)?.var;
            }
            x = block.forward(b, &x);
        }
        if self.attention_after == self.blocks.len() {
            x = self_attention(b, &FeatureCode::new(x, CodeRole::Image)?, &self.attention)?.var;
        }
        let pooled = x.spatial_mean();
        let channels = pooled.shape()[1];
        let logit = self.head.forward(b, &pooled.reshape(&[batch, channels, 1, 1]));
        Ok(logit.reshape(&[batch]))
    }

    /// Consistency scores in `(0, 1)`, shape `[B]`.
    pub fn score(&self, b: &Binding, candidate: &Var, condition: &Var) -> Result<Var> {
        Ok(self.logits(b, candidate, condition)?.sigmoid())
    }
}

/// The appearance/pose discriminator pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Discriminators {
    pub appearance: Discriminator,
    pub pose: Discriminator,
    config: DiscriminatorConfig,
}

impl Discriminators {
    pub fn new(config: &DiscriminatorConfig) -> Result<Self> {
        Ok(Self {
            appearance: Discriminator::new(DiscriminatorKind::Appearance, config)?,
            pose: Discriminator::new(DiscriminatorKind::Pose, config)?,
            config: config.clone(),
        })
    }

    pub fn config(&self) -> &DiscriminatorConfig {
        &self.config
    }

    pub fn specs(&self) -> Vec<ParamSpec> {
        let mut s = self.appearance.specs();
        s.extend(self.pose.specs());
        s
    }

    /// `S^A` for a candidate given the condition image.
    pub fn score_appearance(&self, b: &Binding, condition_image: &Var, candidate: &Var) -> Result<Var> {
        self.appearance.score(b, candidate, condition_image)
    }

    /// `S^P` for a candidate given the target heatmaps.
    pub fn score_pose(&self, b: &Binding, candidate: &Var, target_pose: &Var) -> Result<Var> {
        self.pose.score(b, candidate, target_pose)
    }
}
