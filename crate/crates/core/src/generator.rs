//! The pose-transfer generator: two encoders, a cascade of PoNA blocks and
//! a decoder.

use pona_tensor::nn::{Conv2d, Norm, NormKind};
use pona_tensor::{Binding, ParamSpec, Var};
use serde::{Deserialize, Serialize};

use crate::attention::{
    apply_attention, compute_attention_map, self_attention, AttentionParams, CodeRole, FeatureCode, DEFAULT_REDUCTION,
};
use crate::error::{PonaError, Result};
use crate::pose::NUM_JOINTS;

/// Where the pose and image codes are concatenated inside a block's pose
/// pathway.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionPlace {
    /// Before the first pose-pathway layer.
    Head,
    /// Between the second and third layers.
    Middle,
    /// After the fourth layer, followed by a 1×1 halving projection.
    Tail,
    /// No fusion; the pose pathway sees the pose code alone.
    None,
}

impl FusionPlace {
    pub const ALL: [FusionPlace; 4] = [Self::Head, Self::Middle, Self::Tail, Self::None];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Head => "head",
            Self::Middle => "middle",
            Self::Tail => "tail",
            Self::None => "none",
        }
    }
}

impl std::str::FromStr for FusionPlace {
    type Err = PonaError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|f| f.as_str() == s)
            .ok_or_else(|| PonaError::config("generator.fusion_place", format!("unknown fusion place `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormChoice {
    Batch,
    Instance,
}

impl From<NormChoice> for NormKind {
    fn from(n: NormChoice) -> Self {
        match n {
            NormChoice::Batch => NormKind::Batch,
            NormChoice::Instance => NormKind::Instance,
        }
    }
}

/// Which pose code keys and queries of the cross-modal attention come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttentionSource {
    /// The pose code produced by this block's pose pathway.
    Updated,
    /// The pose code entering the block.
    Previous,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub num_blocks: usize,
    pub base_channels: usize,
    pub norm_kind: NormChoice,
    pub fusion_place: FusionPlace,
    pub use_self_attention: bool,
    pub use_cross_modal: bool,
    /// `[height, width]`, both divisible by 4.
    pub image_size: [usize; 2],
    pub attention_reduction: usize,
    pub attention_source: AttentionSource,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            num_blocks: 3,
            base_channels: 64,
            norm_kind: NormChoice::Batch,
            fusion_place: FusionPlace::Head,
            use_self_attention: true,
            use_cross_modal: true,
            image_size: [128, 64],
            attention_reduction: DEFAULT_REDUCTION,
            attention_source: AttentionSource::Updated,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_blocks == 0 {
            return Err(PonaError::config("generator.num_blocks", "must be at least 1"));
        }
        if self.base_channels == 0 {
            return Err(PonaError::config("generator.base_channels", "must be at least 1"));
        }
        if self.attention_reduction == 0 {
            return Err(PonaError::config("generator.attention_reduction", "must be at least 1"));
        }
        let [h, w] = self.image_size;
        if h == 0 || w == 0 || h % 4 != 0 || w % 4 != 0 {
            return Err(PonaError::config(
                "generator.image_size",
                format!("{h}x{w} must be nonzero and divisible by 4"),
            ));
        }
        Ok(())
    }

    /// Channel width of pose and image codes.
    pub fn code_channels(&self) -> usize {
        self.base_channels * 4
    }
}

/// Convolution, normalization, activation.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct ConvUnit {
    conv: Conv2d,
    norm: Norm,
    leaky_slope: Option<f64>,
}

impl ConvUnit {
    pub(crate) fn new(name: &str, in_c: usize, out_c: usize, kernel: usize, stride: usize, norm: NormKind) -> Self {
        Self {
            conv: Conv2d::new(format!("{name}.conv"), in_c, out_c, kernel)
                .with_stride(stride)
                .without_bias(),
            norm: Norm::new(format!("{name}.norm"), out_c, norm),
            leaky_slope: None,
        }
    }

    pub(crate) fn leaky(mut self, slope: f64) -> Self {
        self.leaky_slope = Some(slope);
        self
    }

    pub(crate) fn specs(&self) -> Vec<ParamSpec> {
        let mut s = self.conv.specs();
        s.extend(self.norm.specs());
        s
    }

    pub(crate) fn forward(&self, b: &Binding, x: &Var) -> Var {
        let y = self.forward_linear(b, x);
        match self.leaky_slope {
            Some(slope) => y.leaky_relu(slope),
            None => y.relu(),
        }
    }

    /// Convolution and normalization without the activation.
    pub(crate) fn forward_linear(&self, b: &Binding, x: &Var) -> Var {
        self.norm.forward(b, &self.conv.forward(b, x))
    }
}

fn stack_specs(units: &[ConvUnit]) -> Vec<ParamSpec> {
    units.iter().flat_map(ConvUnit::specs).collect()
}

fn run_stack(b: &Binding, units: &[ConvUnit], x: &Var) -> Var {
    units.iter().fold(x.clone(), |acc, u| u.forward(b, &acc))
}

/// Two stride-2 convolution units: `in → 2·base → 4·base` channels at
/// a quarter of the resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    in_channels: usize,
    units: Vec<ConvUnit>,
}

impl Encoder {
    fn new(name: &str, in_channels: usize, base: usize, norm: NormKind) -> Self {
        Self {
            in_channels,
            units: vec![
                ConvUnit::new(&format!("{name}.0"), in_channels, base * 2, 3, 2, norm),
                ConvUnit::new(&format!("{name}.1"), base * 2, base * 4, 3, 2, norm),
            ],
        }
    }

    pub fn specs(&self) -> Vec<ParamSpec> {
        stack_specs(&self.units)
    }

    pub fn forward(&self, b: &Binding, x: &Var) -> Var {
        run_stack(b, &self.units, x)
    }
}

/// Intermediate values of one block, exposed for inspection.
#[derive(Debug, Clone)]
pub struct BlockOutput {
    pub image_code: FeatureCode,
    pub pose_code: FeatureCode,
    /// Output of the four-layer image pathway before attention mixing.
    pub image_pathway: Var,
}

/// One pose-guided non-local attention block.
#[derive(Debug, Clone, PartialEq)]
pub struct PonaBlock {
    name: String,
    channels: usize,
    fusion_place: FusionPlace,
    attention_source: AttentionSource,
    pose_layers: Vec<ConvUnit>,
    /// Index of the pose layer the fusion is inserted before
    /// (`pose_layers.len()` for tail fusion).
    fusion_index: Option<usize>,
    fusion_attention: Option<AttentionParams>,
    tail_projection: Option<ConvUnit>,
    image_layers: Vec<ConvUnit>,
    cross_attention: Option<AttentionParams>,
}

impl PonaBlock {
    pub fn new(name: &str, config: &GeneratorConfig) -> Self {
        let c = config.code_channels();
        let norm: NormKind = config.norm_kind.into();
        let unit = |i: usize, in_c: usize, out_c: usize| ConvUnit::new(&format!("{name}.pose.{i}"), in_c, out_c, 3, 1, norm);
        let (pose_layers, fusion_index) = match config.fusion_place {
            FusionPlace::Head => (
                vec![unit(0, 2 * c, 2 * c), unit(1, 2 * c, 2 * c), unit(2, 2 * c, 2 * c), unit(3, 2 * c, c)],
                Some(0),
            ),
            FusionPlace::Middle => (
                vec![unit(0, c, c), unit(1, c, c), unit(2, 2 * c, 2 * c), unit(3, 2 * c, c)],
                Some(2),
            ),
            FusionPlace::Tail => ((0..4).map(|i| unit(i, c, c)).collect(), Some(4)),
            FusionPlace::None => ((0..4).map(|i| unit(i, c, c)).collect(), None),
        };
        let fusion_attention = (fusion_index.is_some() && config.use_self_attention)
            .then(|| AttentionParams::self_attention(format!("{name}.fusion_attention"), 2 * c, config.attention_reduction));
        let tail_projection = (config.fusion_place == FusionPlace::Tail)
            .then(|| ConvUnit::new(&format!("{name}.pose.tail_projection"), 2 * c, c, 1, 1, norm));
        let image_layers = (0..4)
            .map(|i| ConvUnit::new(&format!("{name}.image.{i}"), c, c, 3, 1, norm))
            .collect();
        let cross_attention = config
            .use_cross_modal
            .then(|| AttentionParams::new(format!("{name}.cross_attention"), c, c, config.attention_reduction));
        Self {
            name: name.to_string(),
            channels: c,
            fusion_place: config.fusion_place,
            attention_source: config.attention_source,
            pose_layers,
            fusion_index,
            fusion_attention,
            tail_projection,
            image_layers,
            cross_attention,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn fusion_attention(&self) -> Option<&AttentionParams> {
        self.fusion_attention.as_ref()
    }

    pub fn cross_attention(&self) -> Option<&AttentionParams> {
        self.cross_attention.as_ref()
    }

    pub fn specs(&self) -> Vec<ParamSpec> {
        let mut s = stack_specs(&self.pose_layers);
        if let Some(a) = &self.fusion_attention {
            s.extend(a.specs());
        }
        if let Some(p) = &self.tail_projection {
            s.extend(p.specs());
        }
        s.extend(stack_specs(&self.image_layers));
        if let Some(a) = &self.cross_attention {
            s.extend(a.specs());
        }
        s
    }

    fn fuse(&self, b: &Binding, pose: &Var, image: &FeatureCode) -> Result<Var> {
        let pose = FeatureCode::new(pose.clone(), CodeRole::Pose)?;
        let fused = FeatureCode::concat(&pose, image)?;
        Ok(match &self.fusion_attention {
            Some(params) => self_attention(b, &fused, params)?.var,
            None => fused.var,
        })
    }

    pub fn forward(&self, b: &Binding, image_code: &FeatureCode, pose_code: &FeatureCode) -> Result<BlockOutput> {
        if image_code.var.shape() != pose_code.var.shape() || image_code.channels() != self.channels {
            return Err(PonaError::shape(
                "PoNA block inputs",
                image_code.var.shape(),
                pose_code.var.shape(),
            ));
        }
        let mut pose = pose_code.var.clone();
        for (i, layer) in self.pose_layers.iter().enumerate() {
            if self.fusion_index == Some(i) {
                pose = self.fuse(b, &pose, image_code)?;
            }
            pose = layer.forward(b, &pose);
        }
        if self.fusion_index == Some(self.pose_layers.len()) {
            pose = self.fuse(b, &pose, image_code)?;
        }
        if let Some(proj) = &self.tail_projection {
            pose = proj.forward(b, &pose);
        }
        let new_pose = FeatureCode::new(pose, CodeRole::Pose)?;

        let pathway = run_stack(b, &self.image_layers, &image_code.var);
        let pathway_code = FeatureCode::new(pathway.clone(), CodeRole::Image)?;
        let new_image = match &self.cross_attention {
            Some(params) => {
                let source = match self.attention_source {
                    AttentionSource::Updated => &new_pose,
                    AttentionSource::Previous => pose_code,
                };
                let map = compute_attention_map(b, source, params)?;
                apply_attention(b, &pathway_code, &map, params)?
            }
            None => pathway_code,
        };
        Ok(BlockOutput {
            image_code: new_image,
            pose_code: new_pose,
            image_pathway: pathway,
        })
    }
}

/// Two nearest-upsample + convolution stages, then a 3×3 convolution to RGB
/// squashed by tanh.
#[derive(Debug, Clone, PartialEq)]
pub struct Decoder {
    units: Vec<ConvUnit>,
    to_rgb: Conv2d,
}

impl Decoder {
    fn new(name: &str, base: usize, norm: NormKind) -> Self {
        Self {
            units: vec![
                ConvUnit::new(&format!("{name}.0"), base * 4, base * 2, 3, 1, norm),
                ConvUnit::new(&format!("{name}.1"), base * 2, base, 3, 1, norm),
            ],
            to_rgb: Conv2d::new(format!("{name}.to_rgb"), base, 3, 3),
        }
    }

    pub fn specs(&self) -> Vec<ParamSpec> {
        let mut s = stack_specs(&self.units);
        s.extend(self.to_rgb.specs());
        s
    }

    pub fn forward(&self, b: &Binding, code: &Var) -> Var {
        let x = self
            .units
            .iter()
            .fold(code.clone(), |acc, u| u.forward(b, &acc.upsample_nearest(2)));
        self.to_rgb.forward(b, &x).tanh()
    }
}

/// Everything a forward pass produced.
#[derive(Debug, Clone)]
pub struct GeneratorTrace {
    pub image: Var,
    pub blocks: Vec<BlockOutput>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    config: GeneratorConfig,
    appearance_encoder: Encoder,
    pose_encoder: Encoder,
    blocks: Vec<PonaBlock>,
    decoder: Decoder,
}

impl Generator {
    pub const PREFIX: &'static str = "generator";

    pub fn new(config: &GeneratorConfig) -> Result<Self> {
        config.validate()?;
        let norm: NormKind = config.norm_kind.into();
        let p = Self::PREFIX;
        Ok(Self {
            config: config.clone(),
            appearance_encoder: Encoder::new(&format!("{p}.appearance_encoder"), 3, config.base_channels, norm),
            pose_encoder: Encoder::new(&format!("{p}.pose_encoder"), 2 * NUM_JOINTS, config.base_channels, norm),
            blocks: (0..config.num_blocks)
                .map(|i| PonaBlock::new(&format!("{p}.blocks.{i}"), config))
                .collect(),
            decoder: Decoder::new(&format!("{p}.decoder"), config.base_channels, norm),
        })
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.config
    }

    pub fn blocks(&self) -> &[PonaBlock] {
        &self.blocks
    }

    pub fn specs(&self) -> Vec<ParamSpec> {
        let mut s = self.appearance_encoder.specs();
        s.extend(self.pose_encoder.specs());
        for block in &self.blocks {
            s.extend(block.specs());
        }
        s.extend(self.decoder.specs());
        s
    }

    fn check_input(&self, x: &Var, channels: usize, what: &'static str) -> Result<()> {
        let [h, w] = self.config.image_size;
        let s = x.shape();
        if s.len() != 4 || s[1] != channels || s[2] != h || s[3] != w {
            return Err(PonaError::shape(what, s, &[s.first().copied().unwrap_or(0), channels, h, w]));
        }
        if x.value().iter().any(|v| !v.is_finite()) {
            return Err(PonaError::NonFinite(what));
        }
        Ok(())
    }

    /// `C_0^I` from a `[B, 3, H, W]` condition image batch.
    pub fn encode_appearance(&self, b: &Binding, images: &Var) -> Result<FeatureCode> {
        self.check_input(images, 3, "condition image")?;
        FeatureCode::new(self.appearance_encoder.forward(b, images), CodeRole::Image)
    }

    /// `C_0^P` from a `[B, 36, H, W]` condition/target heatmap pair.
    pub fn encode_pose_pair(&self, b: &Binding, pose_pair: &Var) -> Result<FeatureCode> {
        self.check_input(pose_pair, 2 * NUM_JOINTS, "pose pair")?;
        FeatureCode::new(self.pose_encoder.forward(b, pose_pair), CodeRole::Pose)
    }

    pub fn forward_traced(&self, b: &Binding, images: &Var, pose_pair: &Var) -> Result<GeneratorTrace> {
        if images.shape()[0] != pose_pair.shape()[0] {
            return Err(PonaError::shape("generator batch", images.shape(), pose_pair.shape()));
        }
        let mut image_code = self.encode_appearance(b, images)?;
        let mut pose_code = self.encode_pose_pair(b, pose_pair)?;
        let mut blocks = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let out = block.forward(b, &image_code, &pose_code)?;
            image_code = out.image_code.clone();
            pose_code = out.pose_code.clone();
            blocks.push(out);
        }
        // the final pose code is not decoded
        let image = self.decoder.forward(b, &image_code.var);
        Ok(GeneratorTrace { image, blocks })
    }

    /// `[B, 3, H, W]` generated images in `[-1, 1]`.
    pub fn forward(&self, b: &Binding, images: &Var, pose_pair: &Var) -> Result<Var> {
        Ok(self.forward_traced(b, images, pose_pair)?.image)
    }
}
