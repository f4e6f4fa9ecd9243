use pona_tensor::{count_trainable, Binding, ParamSpec, ParamStore, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::discriminator::{DiscriminatorConfig, Discriminators};
use crate::error::{PonaError, Result};
use crate::generator::{Generator, GeneratorConfig, PonaBlock};
use crate::image::{stack_images, unstack_image, ImageTensor};
use crate::pose::{concat_pose_pair, PoseHeatmap};

/// Generator plus both discriminators.
#[derive(Debug, Clone, PartialEq)]
pub struct PonaModel {
    pub generator: Generator,
    pub discriminators: Discriminators,
}

impl PonaModel {
    pub fn new(generator: &GeneratorConfig, discriminator: &DiscriminatorConfig) -> Result<Self> {
        Ok(Self {
            generator: Generator::new(generator)?,
            discriminators: Discriminators::new(discriminator)?,
        })
    }

    pub fn specs(&self) -> Vec<ParamSpec> {
        let mut s = self.generator.specs();
        s.extend(self.discriminators.specs());
        s
    }

    /// Fresh parameters; the same seed always gives the same store.
    pub fn init_params(&self, seed: u64) -> Result<ParamStore> {
        Ok(ParamStore::init(&self.specs(), &mut ChaCha8Rng::seed_from_u64(seed))?)
    }

    /// Checks that `store` holds exactly this model's tensors.
    pub fn check_store(&self, store: &ParamStore) -> Result<()> {
        let specs = self.specs();
        if specs.len() != store.len() {
            return Err(PonaError::config(
                "parameters",
                format!("model declares {} tensors, store holds {}", specs.len(), store.len()),
            ));
        }
        for spec in specs {
            let entry = store
                .get(&spec.name)
                .ok_or_else(|| PonaError::config("parameters", format!("missing tensor `{}`", spec.name)))?;
            if entry.value.shape() != spec.shape.as_slice() || entry.trainable != spec.trainable {
                return Err(PonaError::shape("stored tensor vs config", entry.value.shape(), &spec.shape));
            }
        }
        Ok(())
    }

    /// Inference for a single triplet.
    pub fn generate(
        &self,
        store: &ParamStore,
        condition_image: &ImageTensor,
        condition_pose: &PoseHeatmap,
        target_pose: &PoseHeatmap,
    ) -> Result<ImageTensor> {
        let [h, w] = self.generator.config().image_size;
        if condition_image.height() != h || condition_image.width() != w {
            return Err(PonaError::shape(
                "condition image",
                &[condition_image.height(), condition_image.width()],
                &[h, w],
            ));
        }
        let pair = concat_pose_pair(condition_pose, target_pose)?;
        let pair = pair.insert_axis(pona_tensor::ndarray::Axis(0)).into_dyn();
        let b = Binding::eval(store);
        let out = self.generator.forward(
            &b,
            &Var::constant(stack_images(&[condition_image])?),
            &Var::constant(pair),
        )?;
        Ok(unstack_image(out.value(), 0))
    }
}

/// Exact trainable parameter count of the generator and both discriminators.
pub fn count_parameters(generator: &GeneratorConfig, discriminator: &DiscriminatorConfig) -> Result<usize> {
    Ok(count_trainable(&PonaModel::new(generator, discriminator)?.specs()))
}

/// Trainable parameters of a single PoNA block under `config`.
pub fn block_parameter_count(config: &GeneratorConfig) -> Result<usize> {
    config.validate()?;
    Ok(count_trainable(&PonaBlock::new("block", config).specs()))
}
