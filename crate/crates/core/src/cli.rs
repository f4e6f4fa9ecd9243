//! The commands behind the `pona` binary, callable as plain functions.
//!
//! Each command that writes a run directory leaves a `manifest.json` in it
//! recording the resolved configuration, inputs and artifacts.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;

use crate::ablation::{run_ablation, AblationTable};
use crate::checkpoint::Checkpoint;
use crate::config::{AblationMatrix, RunConfig};
use crate::data::{make_synthetic_dataset, Dataset, SyntheticSpec};
use crate::error::{PonaError, Result};
use crate::image::{hstack, ImageTensor};
use crate::metrics::{
    classifier_by_name, evaluate_images, evaluate_model, reference_pairs, Backends, MetricReport,
    NearestAnnotationEstimator,
};
use crate::model::count_parameters;
use crate::pose::{encode_pose, read_annotations, AnnotationRecord, PoseHeatmap};
use crate::training::{checkpoint_path, train, LossReport, Trainer};

/// Environment variable naming the default root for run directories.
pub const OUT_ROOT_ENV: &str = "PONA_OUT_ROOT";
pub const MANIFEST_FILE: &str = "manifest.json";

/// `$PONA_OUT_ROOT/<command>`, or `runs/<command>` when unset.
pub fn default_out_dir(command: &str) -> PathBuf {
    std::env::var_os(OUT_ROOT_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("runs"))
        .join(command)
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub config: Option<RunConfig>,
    pub seed: Option<u64>,
    pub inputs: BTreeMap<String, PathBuf>,
    pub artifacts: Vec<PathBuf>,
    pub started_unix: u64,
    pub finished_unix: u64,
}

impl RunManifest {
    fn start(command: &str) -> Self {
        Self {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config: None,
            seed: None,
            inputs: BTreeMap::new(),
            artifacts: Vec::new(),
            started_unix: unix_now(),
            finished_unix: 0,
        }
    }

    fn input(mut self, name: &str, path: &Path) -> Self {
        self.inputs.insert(name.to_string(), path.to_path_buf());
        self
    }

    /// Checks every artifact exists, then writes `dir/manifest.json`.
    fn finish(mut self, dir: &Path) -> Result<PathBuf> {
        for a in &self.artifacts {
            if !a.exists() {
                return Err(PonaError::io(a, std::io::Error::new(std::io::ErrorKind::NotFound, "artifact missing")));
            }
        }
        self.finished_unix = unix_now();
        let path = dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(&self).expect("manifest serializes");
        std::fs::write(&path, text).map_err(|e| PonaError::io(&path, e))?;
        Ok(path)
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| PonaError::io(dir, e))
}

/// Config file (or defaults) with flag overrides applied, validated.
pub fn resolve_config(path: Option<&Path>, seed: Option<u64>, iterations: Option<u64>) -> Result<RunConfig> {
    let mut cfg = match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = seed {
        cfg.training.seed = s;
    }
    if let Some(n) = iterations {
        cfg.training.iterations = n;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn check_image_size(cfg: &RunConfig, dataset: &Dataset) -> Result<()> {
    let expected = cfg.generator.image_size;
    match dataset.image_size() {
        Some((h, w)) if [h, w] == expected => Ok(()),
        Some((h, w)) => Err(PonaError::config(
            "generator.image_size",
            format!("{:?} does not match dataset images of {h}x{w}", expected),
        )),
        None => Err(PonaError::config("data", "dataset has no pairs")),
    }
}

#[derive(Debug, Clone, Default)]
pub struct TrainArgs {
    pub config: Option<PathBuf>,
    pub data_dir: Option<PathBuf>,
    pub out: PathBuf,
    pub seed: Option<u64>,
    pub iterations: Option<u64>,
    pub dry_run: bool,
    /// Continue from this checkpoint instead of starting fresh.
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TrainSummary {
    DryRun { parameters: usize, config: RunConfig },
    Trained { final_checkpoint: PathBuf, last: Option<LossReport>, manifest: PathBuf },
}

pub fn cmd_train(args: &TrainArgs) -> Result<TrainSummary> {
    let cfg = resolve_config(args.config.as_deref(), args.seed, args.iterations)?;
    if args.dry_run {
        return Ok(TrainSummary::DryRun {
            parameters: count_parameters(&cfg.generator, &cfg.discriminator)?,
            config: cfg,
        });
    }
    let data_dir = args
        .data_dir
        .as_deref()
        .ok_or_else(|| PonaError::config("data", "a data directory is required to train"))?;
    let dataset = Dataset::load(data_dir)?;
    check_image_size(&cfg, &dataset)?;
    let mut trainer = match &args.resume {
        Some(path) => {
            let mut t = Trainer::from_checkpoint(Checkpoint::load(path)?)?;
            t.set_iterations(cfg.training.iterations)?;
            t
        }
        None => Trainer::new(&cfg.generator, &cfg.discriminator, &cfg.training)?,
    };
    create_dir(&args.out)?;
    let outcome = train(&mut trainer, &dataset, &args.out)?;
    let final_checkpoint = checkpoint_path(&args.out, trainer.step());
    if !final_checkpoint.exists() {
        trainer.checkpoint().save(&final_checkpoint)?;
    }
    let mut manifest = RunManifest::start("train").input("data_dir", data_dir);
    if let Some(c) = &args.config {
        manifest = manifest.input("config", c);
    }
    if let Some(r) = &args.resume {
        manifest = manifest.input("resume", r);
    }
    manifest.seed = Some(trainer.config().seed);
    manifest.config = Some(RunConfig {
        training: trainer.config().clone(),
        ..cfg
    });
    manifest.artifacts = outcome.checkpoints.clone();
    if !manifest.artifacts.contains(&final_checkpoint) {
        manifest.artifacts.push(final_checkpoint.clone());
    }
    manifest.artifacts.push(outcome.log_path.clone());
    let manifest = manifest.finish(&args.out)?;
    Ok(TrainSummary::Trained {
        final_checkpoint,
        last: outcome.reports.last().copied(),
        manifest,
    })
}

#[derive(Debug, Clone, Default)]
pub struct GenerateArgs {
    pub checkpoint: PathBuf,
    pub condition_image: PathBuf,
    /// Annotation file with the target poses.
    pub target_keypoints: PathBuf,
    /// Annotation file whose first record is the condition pose. When
    /// absent, the record in `target_keypoints` naming the condition image
    /// is used and excluded from the targets.
    pub condition_keypoints: Option<PathBuf>,
    pub out: PathBuf,
}

struct GenerationInputs {
    checkpoint: Checkpoint,
    condition: ImageTensor,
    condition_pose: PoseHeatmap,
    targets: Vec<PoseHeatmap>,
}

fn same_file_name(record: &AnnotationRecord, image: &Path) -> bool {
    Path::new(&record.image).file_name() == image.file_name()
}

fn generation_inputs(args: &GenerateArgs) -> Result<GenerationInputs> {
    let checkpoint = Checkpoint::load(&args.checkpoint)?;
    let [h, w] = checkpoint.generator.image_size;
    let sigma = checkpoint.training.sigma;
    let condition = ImageTensor::load(&args.condition_image)?;
    if (condition.height(), condition.width()) != (h, w) {
        return Err(PonaError::shape(
            "condition image vs model",
            &[condition.height(), condition.width()],
            &[h, w],
        ));
    }
    let mut records = read_annotations(&args.target_keypoints)?;
    let condition_record = match &args.condition_keypoints {
        Some(p) => read_annotations(p)?
            .into_iter()
            .next()
            .ok_or_else(|| PonaError::config("condition keypoints", format!("{} has no records", p.display())))?,
        None => {
            let idx = records
                .iter()
                .position(|r| same_file_name(r, &args.condition_image))
                .ok_or_else(|| {
                    PonaError::config(
                        "condition keypoints",
                        format!(
                            "no record for {} in {}; pass the condition pose explicitly",
                            args.condition_image.display(),
                            args.target_keypoints.display()
                        ),
                    )
                })?;
            records.remove(idx)
        }
    };
    if records.is_empty() {
        return Err(PonaError::config("target keypoints", "no target poses given"));
    }
    let condition_pose = encode_pose(&condition_record.to_keypoints(h, w)?, sigma)?;
    let targets = records
        .iter()
        .map(|r| encode_pose(&r.to_keypoints(h, w)?, sigma))
        .collect::<Result<Vec<_>>>()?;
    Ok(GenerationInputs {
        checkpoint,
        condition,
        condition_pose,
        targets,
    })
}

fn generate_all(inputs: &GenerationInputs) -> Result<Vec<ImageTensor>> {
    let model = inputs.checkpoint.model()?;
    inputs
        .targets
        .iter()
        .map(|t| model.generate(&inputs.checkpoint.params, &inputs.condition, &inputs.condition_pose, t))
        .collect()
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent().filter(|p| !p.as_os_str().is_empty()) {
        Some(p) => create_dir(p),
        None => Ok(()),
    }
}

/// `out.png` for a single target, `out_000.png, out_001.png, …` otherwise.
pub fn cmd_generate(args: &GenerateArgs) -> Result<Vec<PathBuf>> {
    let inputs = generation_inputs(args)?;
    let images = generate_all(&inputs)?;
    ensure_parent(&args.out)?;
    let paths: Vec<PathBuf> = if images.len() == 1 {
        vec![args.out.clone()]
    } else {
        let stem = args.out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let ext = args.out.extension().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "png".into());
        (0..images.len())
            .map(|i| args.out.with_file_name(format!("{stem}_{i:03}.{ext}")))
            .collect()
    };
    for (img, path) in images.iter().zip(&paths) {
        img.save(path)?;
    }
    Ok(paths)
}

/// One image: the condition followed by one generation per target pose.
pub fn cmd_pose_sweep(args: &GenerateArgs) -> Result<PathBuf> {
    let inputs = generation_inputs(args)?;
    let mut tiles = vec![inputs.condition.clone()];
    tiles.extend(generate_all(&inputs)?);
    ensure_parent(&args.out)?;
    hstack(&tiles)?.save(&args.out)?;
    Ok(args.out.clone())
}

#[derive(Debug, Clone, Default)]
pub struct EvaluateArgs {
    /// Required unless `reference` is set.
    pub checkpoint: Option<PathBuf>,
    pub data_dir: PathBuf,
    pub out: PathBuf,
    pub config: Option<PathBuf>,
    pub classifier: Option<String>,
    pub pose_estimator: Option<String>,
    /// Score the targets against themselves instead of generated images.
    pub reference: bool,
}

pub fn cmd_evaluate(args: &EvaluateArgs) -> Result<MetricReport> {
    let cfg = resolve_config(args.config.as_deref(), None, None)?;
    let dataset = Dataset::load(&args.data_dir)?;
    let classifier_name = args.classifier.as_deref().unwrap_or(&cfg.evaluation.classifier);
    let classifier = classifier_by_name(classifier_name)?;
    let estimator_name = args.pose_estimator.as_deref().unwrap_or(&cfg.evaluation.pose_estimator);
    if estimator_name != "nearest" {
        return Err(PonaError::config(
            "backend-pose-estimator",
            format!("unknown pose estimator `{estimator_name}` (available: nearest)"),
        ));
    }
    let estimator = NearestAnnotationEstimator::from_dataset(&dataset)?;
    let backends = Backends {
        classifier: classifier.as_ref(),
        pose_estimator: &estimator,
    };
    let splits = cfg.evaluation.is_splits;
    let mut manifest = RunManifest::start("evaluate").input("data_dir", &args.data_dir);
    let report = if args.reference {
        evaluate_images(&reference_pairs(&dataset), &backends, splits)?
    } else {
        let path = args
            .checkpoint
            .as_deref()
            .ok_or_else(|| PonaError::config("checkpoint", "required unless evaluating the reference images"))?;
        manifest = manifest.input("checkpoint", path);
        let ckpt = Checkpoint::load(path)?;
        evaluate_model(&ckpt.model()?, &ckpt.params, &dataset, &backends, ckpt.training.sigma, splits)?
    };
    create_dir(&args.out)?;
    let jsonl = args.out.join("report.jsonl");
    let table = args.out.join("report.txt");
    std::fs::write(&jsonl, report.to_jsonl()).map_err(|e| PonaError::io(&jsonl, e))?;
    std::fs::write(&table, report.to_table()).map_err(|e| PonaError::io(&table, e))?;
    manifest.config = Some(cfg);
    manifest.artifacts = vec![jsonl, table];
    manifest.finish(&args.out)?;
    Ok(report)
}

#[derive(Debug, Clone, Default)]
pub struct AblateArgs {
    pub matrix: PathBuf,
    pub data_dir: PathBuf,
    pub out: PathBuf,
    pub seed: Option<u64>,
}

pub fn cmd_ablate(args: &AblateArgs) -> Result<AblationTable> {
    let mut matrix = AblationMatrix::load(&args.matrix)?;
    if let Some(s) = args.seed {
        matrix.base.training.seed = s;
    }
    let dataset = Dataset::load(&args.data_dir)?;
    check_image_size(&matrix.base, &dataset)?;
    create_dir(&args.out)?;
    let table = run_ablation(&matrix, &dataset, &args.out)?;
    let jsonl = args.out.join("ablation.jsonl");
    let text = args.out.join("ablation.txt");
    std::fs::write(&jsonl, table.to_jsonl()).map_err(|e| PonaError::io(&jsonl, e))?;
    std::fs::write(&text, table.to_table()).map_err(|e| PonaError::io(&text, e))?;
    let mut manifest = RunManifest::start("ablate")
        .input("matrix", &args.matrix)
        .input("data_dir", &args.data_dir);
    manifest.seed = Some(matrix.base.training.seed);
    manifest.config = Some(matrix.base.clone());
    manifest.artifacts = vec![jsonl, text];
    manifest.finish(&args.out)?;
    Ok(table)
}

/// Writes a synthetic stick-figure dataset directory.
pub fn cmd_synth(spec: &SyntheticSpec, out: &Path) -> Result<usize> {
    let s = make_synthetic_dataset(spec)?;
    create_dir(out)?;
    s.dataset.write(out)?;
    Ok(s.dataset.len())
}
