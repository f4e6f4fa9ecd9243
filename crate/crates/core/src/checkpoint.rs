//! Binary training checkpoints.
//!
//! Layout:
//!
//! ```text
//! b"PONACKPT"  u32 LE version  u64 LE header length  header JSON  tensor data
//! ```
//!
//! The JSON header echoes all three configs, the step counter and the
//! optimizer step counts, and lists every tensor (name, group, shape,
//! trainable) in the order their little-endian `f64` data follows. Tensors
//! are always written in sorted name order within each group, so saving a
//! loaded checkpoint reproduces the original bytes.

use std::collections::BTreeMap;
use std::path::Path;

use pona_tensor::ndarray::IxDyn;
use pona_tensor::{AdamState, Array, Entry, ParamStore};
use serde::{Deserialize, Serialize};

use crate::discriminator::DiscriminatorConfig;
use crate::error::{PonaError, Result};
use crate::generator::GeneratorConfig;
use crate::model::PonaModel;
use crate::training::TrainingConfig;

pub const MAGIC: &[u8; 8] = b"PONACKPT";
pub const FORMAT_VERSION: u32 = 1;

/// Everything needed to resume training exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub generator: GeneratorConfig,
    pub discriminator: DiscriminatorConfig,
    pub training: TrainingConfig,
    pub step: u64,
    pub params: ParamStore,
    pub generator_optimizer: AdamState,
    pub discriminator_optimizer: AdamState,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum Group {
    Param,
    GeneratorFirstMoment,
    GeneratorSecondMoment,
    DiscriminatorFirstMoment,
    DiscriminatorSecondMoment,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorHeader {
    name: String,
    group: Group,
    shape: Vec<usize>,
    trainable: bool,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    generator: GeneratorConfig,
    discriminator: DiscriminatorConfig,
    training: TrainingConfig,
    step: u64,
    generator_optimizer_step: u64,
    discriminator_optimizer_step: u64,
    tensors: Vec<TensorHeader>,
}

impl Checkpoint {
    fn tensors(&self) -> Vec<(TensorHeader, &Array)> {
        let mut out = Vec::new();
        for (name, entry) in self.params.iter() {
            out.push((
                TensorHeader {
                    name: name.to_string(),
                    group: Group::Param,
                    shape: entry.value.shape().to_vec(),
                    trainable: entry.trainable,
                },
                &entry.value,
            ));
        }
        for (group, map) in [
            (Group::GeneratorFirstMoment, &self.generator_optimizer.first_moment),
            (Group::GeneratorSecondMoment, &self.generator_optimizer.second_moment),
            (Group::DiscriminatorFirstMoment, &self.discriminator_optimizer.first_moment),
            (Group::DiscriminatorSecondMoment, &self.discriminator_optimizer.second_moment),
        ] {
            for (name, value) in map {
                out.push((
                    TensorHeader {
                        name: name.clone(),
                        group,
                        shape: value.shape().to_vec(),
                        trainable: true,
                    },
                    value,
                ));
            }
        }
        out
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let tensors = self.tensors();
        let mut data = Vec::new();
        let mut headers = Vec::with_capacity(tensors.len());
        for (h, value) in tensors {
            for v in value.iter() {
                data.extend_from_slice(&v.to_le_bytes());
            }
            headers.push(h);
        }
        let header = Header {
            generator: self.generator.clone(),
            discriminator: self.discriminator.clone(),
            training: self.training.clone(),
            step: self.step,
            generator_optimizer_step: self.generator_optimizer.step,
            discriminator_optimizer_step: self.discriminator_optimizer.step,
            tensors: headers,
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(20 + json.len() + data.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&data);
        out
    }

    /// Parses and validates a checkpoint. `path` is only used in errors.
    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let err = |reason: String| PonaError::Checkpoint {
            path: path.to_path_buf(),
            reason,
        };
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(err("not a checkpoint file".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(err(format!("unsupported format version {version}")));
        }
        let header_len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let json = bytes
            .get(20..20usize.saturating_add(header_len))
            .ok_or_else(|| err("truncated header".into()))?;
        let header: Header = serde_json::from_slice(json).map_err(|e| err(format!("bad header: {e}")))?;
        let mut data = &bytes[20 + header_len..];

        let mut params = ParamStore::default();
        let mut g = AdamState {
            step: header.generator_optimizer_step,
            ..Default::default()
        };
        let mut d = AdamState {
            step: header.discriminator_optimizer_step,
            ..Default::default()
        };
        for t in header.tensors {
            let n: usize = t.shape.iter().product();
            if data.len() < n * 8 {
                return Err(err(format!("data for `{}` is truncated", t.name)));
            }
            let values = data[..n * 8]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            data = &data[n * 8..];
            let value = Array::from_shape_vec(IxDyn(&t.shape), values).expect("length checked");
            let target: &mut BTreeMap<String, Array> = match t.group {
                Group::Param => {
                    if params.get(&t.name).is_some() {
                        return Err(err(format!("duplicate tensor `{}`", t.name)));
                    }
                    params.insert(
                        t.name,
                        Entry {
                            value,
                            trainable: t.trainable,
                        },
                    );
                    continue;
                }
                Group::GeneratorFirstMoment => &mut g.first_moment,
                Group::GeneratorSecondMoment => &mut g.second_moment,
                Group::DiscriminatorFirstMoment => &mut d.first_moment,
                Group::DiscriminatorSecondMoment => &mut d.second_moment,
            };
            if target.insert(t.name.clone(), value).is_some() {
                return Err(err(format!("duplicate optimizer tensor `{}`", t.name)));
            }
        }
        if !data.is_empty() {
            return Err(err(format!("{} trailing bytes", data.len())));
        }
        let model = PonaModel::new(&header.generator, &header.discriminator)?;
        model.check_store(&params).map_err(|e| err(e.to_string()))?;
        for (state, what) in [(&g, "generator"), (&d, "discriminator")] {
            for (name, m) in state.first_moment.iter().chain(&state.second_moment) {
                let p = params
                    .get(name)
                    .ok_or_else(|| err(format!("{what} optimizer state for unknown tensor `{name}`")))?;
                if p.value.shape() != m.shape() {
                    return Err(err(format!("{what} optimizer state for `{name}` has the wrong shape")));
                }
            }
        }
        Ok(Self {
            generator: header.generator,
            discriminator: header.discriminator,
            training: header.training,
            step: header.step,
            params,
            generator_optimizer: g,
            discriminator_optimizer: d,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(|e| PonaError::io(parent, e))?;
        }
        std::fs::write(path, self.to_bytes()).map_err(|e| PonaError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| PonaError::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }

    /// Rebuilds the model this checkpoint was trained with.
    pub fn model(&self) -> Result<PonaModel> {
        PonaModel::new(&self.generator, &self.discriminator)
    }
}
