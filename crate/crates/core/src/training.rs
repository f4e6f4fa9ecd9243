//! Alternating adversarial training.
//!
//! Each step runs the generator once, updates both discriminators on the
//! real and (detached) generated candidates, then updates the generator on
//! the weighted full objective scored by the freshly updated
//! discriminators.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use pona_tensor::{Adam, Array, Binding, ParamStore, Var};
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::data::{assemble_batch, Batch, BatchSchedule, Dataset};
use crate::discriminator::DiscriminatorConfig;
use crate::error::{PonaError, Result};
use crate::generator::{Generator, GeneratorConfig};
use crate::losses::{adversarial_losses, full_loss, generator_adversarial_loss, l1_loss, perceptual_loss, LossComponents, LossWeights, RandomConvExtractor, Scores};
use crate::model::PonaModel;
use crate::pose::DEFAULT_SIGMA;

pub const LOSS_LOG_FILE: &str = "loss_log.jsonl";
pub const CHECKPOINT_DIR: &str = "checkpoints";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub iterations: u64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub weights: LossWeights,
    pub seed: u64,
    /// Steps between checkpoints; the final step is always saved.
    pub checkpoint_interval: u64,
    /// Heatmap spread in pixels.
    pub sigma: f64,
    /// Width of the perceptual feature extractor.
    pub extractor_channels: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            iterations: 90_000,
            batch_size: 4,
            learning_rate: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            weights: LossWeights::MARKET,
            seed: 0,
            checkpoint_interval: 5_000,
            sigma: DEFAULT_SIGMA,
            extractor_channels: 16,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(PonaError::config("training.iterations", "must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(PonaError::config("training.batch_size", "must be at least 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(PonaError::config("training.learning_rate", "must be positive"));
        }
        for (field, b) in [("training.beta1", self.beta1), ("training.beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(PonaError::config(field, "must lie in [0, 1)"));
            }
        }
        if self.checkpoint_interval == 0 {
            return Err(PonaError::config("training.checkpoint_interval", "must be at least 1"));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(PonaError::config("training.sigma", "must be positive"));
        }
        if self.extractor_channels == 0 {
            return Err(PonaError::config("training.extractor_channels", "must be at least 1"));
        }
        self.weights.validate()
    }

    fn extractor(&self) -> RandomConvExtractor {
        RandomConvExtractor::new(self.extractor_channels, self.seed.wrapping_add(0x9e37_79b9))
    }
}

/// One row of the loss log. `step` counts completed steps, starting at 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub step: u64,
    pub d_loss: f64,
    pub g_adv: f64,
    pub l1: f64,
    pub percep: f64,
    pub full: f64,
}

struct BatchVars {
    condition: Var,
    pose_pair: Var,
    target_pose: Var,
    target: Var,
}

impl BatchVars {
    fn new(batch: &Batch) -> Self {
        Self {
            condition: Var::constant(batch.condition_images.clone()),
            pose_pair: Var::constant(batch.pose_pairs.clone()),
            target_pose: Var::constant(batch.target_poses.clone()),
            target: Var::constant(batch.target_images.clone()),
        }
    }
}

fn finite(v: &Var, term: &'static str, step: u64) -> Result<f64> {
    let x = v.item();
    if x.is_finite() {
        Ok(x)
    } else {
        Err(PonaError::NonFiniteLoss { term, step })
    }
}

fn apply_buffers(store: &mut ParamStore, updates: BTreeMap<String, Array>) -> Result<()> {
    for (name, value) in updates {
        store.set(&name, value)?;
    }
    Ok(())
}

/// Model, parameters, both optimizers and the step counter.
pub struct Trainer {
    model: PonaModel,
    store: ParamStore,
    generator_optimizer: Adam,
    discriminator_optimizer: Adam,
    config: TrainingConfig,
    extractor: RandomConvExtractor,
    step: u64,
}

impl Trainer {
    pub fn new(generator: &GeneratorConfig, discriminator: &DiscriminatorConfig, config: &TrainingConfig) -> Result<Self> {
        config.validate()?;
        let model = PonaModel::new(generator, discriminator)?;
        let store = model.init_params(config.seed)?;
        let adam = || Adam::new(config.learning_rate, config.beta1, config.beta2);
        Ok(Self {
            model,
            store,
            generator_optimizer: adam(),
            discriminator_optimizer: adam(),
            extractor: config.extractor(),
            config: config.clone(),
            step: 0,
        })
    }

    pub fn from_checkpoint(ckpt: Checkpoint) -> Result<Self> {
        let mut t = Self::new(&ckpt.generator, &ckpt.discriminator, &ckpt.training)?;
        t.model.check_store(&ckpt.params)?;
        t.store = ckpt.params;
        t.generator_optimizer.state = ckpt.generator_optimizer;
        t.discriminator_optimizer.state = ckpt.discriminator_optimizer;
        t.step = ckpt.step;
        Ok(t)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            generator: self.model.generator.config().clone(),
            discriminator: self.discriminator_config().clone(),
            training: self.config.clone(),
            step: self.step,
            params: self.store.clone(),
            generator_optimizer: self.generator_optimizer.state.clone(),
            discriminator_optimizer: self.discriminator_optimizer.state.clone(),
        }
    }

    fn discriminator_config(&self) -> &DiscriminatorConfig {
        self.model.discriminators.config()
    }

    pub fn model(&self) -> &PonaModel {
        &self.model
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn config(&self) -> &TrainingConfig {
        &self.config
    }

    /// Completed steps.
    pub fn step(&self) -> u64 {
        self.step
    }

    /// Extends or shortens the run, e.g. when resuming.
    pub fn set_iterations(&mut self, iterations: u64) -> Result<()> {
        let mut c = self.config.clone();
        c.iterations = iterations;
        c.validate()?;
        self.config = c;
        Ok(())
    }

    /// Values of every generator attention gate, by parameter name.
    pub fn generator_gammas(&self) -> Vec<(String, f64)> {
        self.store
            .iter()
            .filter(|(n, _)| n.starts_with(Generator::PREFIX) && n.ends_with(".gamma"))
            .map(|(n, e)| (n.to_string(), e.value[0]))
            .collect()
    }

    fn generator_objective(&self, v: &BatchVars, fake: &Var) -> Result<(LossComponents, Var)> {
        let b = Binding::new(&self.store, true, false);
        let d = &self.model.discriminators;
        let fooled = Scores {
            appearance: d.score_appearance(&b, &v.condition, fake)?,
            pose: d.score_pose(&b, fake, &v.target_pose)?,
        };
        let adversarial = generator_adversarial_loss(&fooled)?;
        let c = LossComponents {
            adversarial,
            l1: l1_loss(fake, &v.target)?,
            perceptual: perceptual_loss(fake, &v.target, &self.extractor)?,
        };
        let full = full_loss(&c, &self.config.weights);
        Ok((c, full))
    }

    /// Generator gradients of the full objective against the current
    /// discriminators, without updating anything.
    pub fn generator_gradients(&self, batch: &Batch) -> Result<BTreeMap<String, Array>> {
        let v = BatchVars::new(batch);
        let b = Binding::train(&self.store);
        let fake = self.model.generator.forward(&b, &v.condition, &v.pose_pair)?;
        let (_, full) = self.generator_objective(&v, &fake)?;
        Ok(b.gradients(&full.backward()))
    }

    /// One discriminator update followed by one generator update.
    pub fn train_step(&mut self, batch: &Batch) -> Result<LossReport> {
        if batch.is_empty() {
            return Err(PonaError::config("training.batch_size", "empty batch"));
        }
        let step = self.step + 1;
        let v = BatchVars::new(batch);
        let (fake, gen_leaves, gen_buffers) = {
            let b = Binding::train(&self.store);
            let fake = self.model.generator.forward(&b, &v.condition, &v.pose_pair)?;
            let (leaves, buffers) = b.finish();
            (fake, leaves, buffers)
        };

        let (d_loss, d_grads, d_buffers) = {
            let b = Binding::train(&self.store);
            let d = &self.model.discriminators;
            let detached = fake.detach();
            let real = Scores {
                appearance: d.score_appearance(&b, &v.condition, &v.target)?,
                pose: d.score_pose(&b, &v.target, &v.target_pose)?,
            };
            let generated = Scores {
                appearance: d.score_appearance(&b, &v.condition, &detached)?,
                pose: d.score_pose(&b, &detached, &v.target_pose)?,
            };
            let (d_loss, _) = adversarial_losses(&real, &generated)?;
            let value = finite(&d_loss, "discriminator", step)?;
            let grads = b.gradients(&d_loss.backward());
            let (_, buffers) = b.finish();
            (value, grads, buffers)
        };
        self.discriminator_optimizer.step(&mut self.store, &d_grads)?;
        apply_buffers(&mut self.store, d_buffers)?;

        let (c, full) = self.generator_objective(&v, &fake)?;
        let report = LossReport {
            step,
            d_loss,
            g_adv: finite(&c.adversarial, "adversarial", step)?,
            l1: finite(&c.l1, "l1", step)?,
            percep: finite(&c.perceptual, "perceptual", step)?,
            full: finite(&full, "full", step)?,
        };
        let g_grads = gen_leaves.gradients(&full.backward());
        self.generator_optimizer.step(&mut self.store, &g_grads)?;
        apply_buffers(&mut self.store, gen_buffers)?;
        self.step = step;
        Ok(report)
    }
}

/// What a call to [`train`] wrote.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    /// Rows produced by this call (not earlier rows kept on resume).
    pub reports: Vec<LossReport>,
    pub checkpoints: Vec<PathBuf>,
    pub log_path: PathBuf,
}

pub fn checkpoint_path(out_dir: &Path, step: u64) -> PathBuf {
    out_dir.join(CHECKPOINT_DIR).join(format!("step_{step:08}.ckpt"))
}

fn at_step(step: u64) -> impl Fn(PonaError) -> PonaError {
    move |e| PonaError::AtStep {
        step,
        source: Box::new(e),
    }
}

/// Rows of an existing log with `step <= keep_through`.
fn kept_log_rows(path: &Path, keep_through: u64) -> Result<Vec<String>> {
    if keep_through == 0 || !path.exists() {
        return Ok(Vec::new());
    }
    let file = File::open(path).map_err(|e| PonaError::io(path, e))?;
    let mut rows = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| PonaError::io(path, e))?;
        let r: LossReport = serde_json::from_str(&line).map_err(|e| PonaError::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            reason: e.to_string(),
        })?;
        if r.step <= keep_through {
            rows.push(line);
        }
    }
    Ok(rows)
}

pub fn read_loss_log(path: &Path) -> Result<Vec<LossReport>> {
    kept_log_rows(path, u64::MAX)?
        .iter()
        .map(|l| serde_json::from_str(l).map_err(|e| PonaError::config("loss log", e.to_string())))
        .collect()
}

/// Runs `trainer` up to its configured iteration count on `dataset`,
/// appending to `out_dir/loss_log.jsonl` and writing checkpoints under
/// `out_dir/checkpoints/`. A trainer restored from a checkpoint continues
/// where it stopped; log rows past its step are dropped first.
pub fn train(trainer: &mut Trainer, dataset: &Dataset, out_dir: &Path) -> Result<TrainOutcome> {
    let cfg = trainer.config().clone();
    let ckpt_dir = out_dir.join(CHECKPOINT_DIR);
    std::fs::create_dir_all(&ckpt_dir).map_err(|e| at_step(trainer.step())(PonaError::io(&ckpt_dir, e)))?;
    let log_path = out_dir.join(LOSS_LOG_FILE);
    let kept = kept_log_rows(&log_path, trainer.step()).map_err(at_step(trainer.step()))?;
    let mut log = {
        let f = File::create(&log_path).map_err(|e| at_step(trainer.step())(PonaError::io(&log_path, e)))?;
        BufWriter::new(f)
    };
    for row in kept {
        writeln!(log, "{row}").map_err(|e| PonaError::io(&log_path, e))?;
    }
    let schedule = BatchSchedule::new(dataset.len(), cfg.batch_size, cfg.seed)?;
    let mut outcome = TrainOutcome {
        reports: Vec::new(),
        checkpoints: Vec::new(),
        log_path: log_path.clone(),
    };
    while trainer.step() < cfg.iterations {
        let s = trainer.step();
        let batch = assemble_batch(dataset, &schedule.batch(s), cfg.sigma).map_err(at_step(s + 1))?;
        let report = trainer.train_step(&batch).map_err(at_step(s + 1))?;
        let line = serde_json::to_string(&report).expect("plain struct");
        writeln!(log, "{line}")
            .and_then(|_| log.flush())
            .map_err(|e| at_step(report.step)(PonaError::io(&log_path, e)))?;
        outcome.reports.push(report);
        if report.step % cfg.checkpoint_interval == 0 || report.step == cfg.iterations {
            let path = checkpoint_path(out_dir, report.step);
            trainer.checkpoint().save(&path).map_err(at_step(report.step))?;
            outcome.checkpoints.push(path);
        }
    }
    Ok(outcome)
}
