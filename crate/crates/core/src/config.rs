//! TOML run configuration and ablation matrices.
//!
//! ```toml
//! [generator]
//! num_blocks = 3
//! fusion_place = "head"
//!
//! [discriminator]
//! base_channels = 64
//!
//! [training]
//! iterations = 200
//! weights = { lambda1 = 5.0, lambda2 = 10.0, lambda3 = 10.0 }
//!
//! [evaluation]
//! is_splits = 10
//! ```
//!
//! Every section and field is optional and falls back to its default;
//! unknown fields are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::discriminator::DiscriminatorConfig;
use crate::error::{PonaError, Result};
use crate::generator::{FusionPlace, GeneratorConfig};
use crate::metrics::DEFAULT_IS_SPLITS;
use crate::training::TrainingConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationConfig {
    pub is_splits: usize,
    pub classifier: String,
    pub pose_estimator: String,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self {
            is_splits: DEFAULT_IS_SPLITS,
            classifier: "histogram".into(),
            pose_estimator: "nearest".into(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub generator: GeneratorConfig,
    pub discriminator: DiscriminatorConfig,
    pub training: TrainingConfig,
    pub evaluation: EvaluationConfig,
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

fn parse_toml<T: serde::de::DeserializeOwned>(text: &str, path: &Path) -> Result<T> {
    toml::from_str(text).map_err(|e| PonaError::Parse {
        path: path.to_path_buf(),
        line: e.span().map(|s| line_of(text, s.start)).unwrap_or(0),
        reason: e.message().to_string(),
    })
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.generator.validate()?;
        self.discriminator.validate()?;
        self.training.validate()?;
        if self.evaluation.is_splits == 0 {
            return Err(PonaError::config("evaluation.is_splits", "must be at least 1"));
        }
        Ok(())
    }

    /// Parses and validates. `path` only labels errors.
    pub fn from_toml_str(text: &str, path: &Path) -> Result<Self> {
        let cfg: Self = parse_toml(text, path)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| PonaError::io(path, e))?;
        Self::from_toml_str(&text, path)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

/// Which attention modules a block keeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Components {
    Full,
    NoCross,
    NoSelf,
}

impl Components {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Full => "full",
            Self::NoCross => "no-cross",
            Self::NoSelf => "no-self",
        }
    }

    fn apply(self, g: &mut GeneratorConfig) {
        g.use_cross_modal = self != Self::NoCross;
        g.use_self_attention = self != Self::NoSelf;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationAxes {
    pub num_blocks: Vec<usize>,
    pub fusion_place: Vec<FusionPlace>,
    pub components: Vec<Components>,
}

impl Default for AblationAxes {
    fn default() -> Self {
        Self {
            num_blocks: vec![1, 2, 3, 4, 5],
            fusion_place: FusionPlace::ALL.to_vec(),
            components: vec![Components::Full, Components::NoCross, Components::NoSelf],
        }
    }
}

/// A base configuration plus the settings to sweep, one axis at a time.
///
/// ```toml
/// [base.generator]
/// base_channels = 8
///
/// [axes]
/// num_blocks = [1, 2, 3]
/// fusion_place = ["head", "none"]
/// components = []
/// ```
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationMatrix {
    pub base: RunConfig,
    pub axes: AblationAxes,
}

/// One configuration of an ablation sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub axis: &'static str,
    pub setting: String,
    /// The setting the full model uses.
    pub is_default: bool,
    pub config: RunConfig,
}

impl AblationMatrix {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| PonaError::io(path, e))?;
        let m: Self = parse_toml(&text, path)?;
        m.base.validate()?;
        Ok(m)
    }

    /// Rows grouped by axis, in declaration order.
    pub fn rows(&self) -> Result<Vec<AblationRow>> {
        let defaults = GeneratorConfig::default();
        let mut rows = Vec::new();
        let mut push = |axis, setting: String, is_default, g: GeneratorConfig| -> Result<()> {
            let mut config = self.base.clone();
            config.generator = g;
            config.validate()?;
            rows.push(AblationRow {
                axis,
                setting,
                is_default,
                config,
            });
            Ok(())
        };
        for &n in &self.axes.num_blocks {
            let mut g = self.base.generator.clone();
            g.num_blocks = n;
            push("blocks", n.to_string(), n == defaults.num_blocks, g)?;
        }
        for &f in &self.axes.fusion_place {
            let mut g = self.base.generator.clone();
            g.fusion_place = f;
            push("fusion", f.as_str().to_string(), f == defaults.fusion_place, g)?;
        }
        for &c in &self.axes.components {
            let mut g = self.base.generator.clone();
            c.apply(&mut g);
            push("components", c.as_str().to_string(), c == Components::Full, g)?;
        }
        Ok(rows)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(RunConfig::from_toml_str("", Path::new("x.toml")).unwrap(), RunConfig::default());
    }

    #[test]
    fn round_trip() {
        let mut c = RunConfig::default();
        c.generator.fusion_place = FusionPlace::Tail;
        c.training.weights.lambda2 = 1.0;
        let back = RunConfig::from_toml_str(&c.to_toml_string(), Path::new("x")).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn errors_name_the_field() {
        let e = RunConfig::from_toml_str("[generator]\nnum_blokcs = 2\n", Path::new("c.toml")).unwrap_err();
        let msg = e.to_string();
        assert!(msg.contains("num_blokcs") && msg.contains("c.toml:2"), "{msg}");
        let e = RunConfig::from_toml_str("[generator]\nnum_blocks = 0\n", Path::new("c.toml")).unwrap_err();
        assert!(e.to_string().contains("generator.num_blocks"));
        let e = RunConfig::from_toml_str("[training]\nbeta1 = 1.5\n", Path::new("c.toml")).unwrap_err();
        assert!(e.to_string().contains("training.beta1"));
    }

    #[test]
    fn ablation_rows_flag_defaults() {
        let rows = AblationMatrix::default().rows().unwrap();
        assert_eq!(rows.len(), 5 + 4 + 3);
        let head = rows.iter().find(|r| r.axis == "fusion" && r.setting == "head").unwrap();
        assert!(head.is_default);
        assert_eq!(rows.iter().filter(|r| r.is_default).count(), 3);
        let no_cross = rows.iter().find(|r| r.setting == "no-cross").unwrap();
        assert!(!no_cross.config.generator.use_cross_modal && no_cross.config.generator.use_self_attention);
    }
}
