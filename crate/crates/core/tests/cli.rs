use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use pona::cli::{MANIFEST_FILE, OUT_ROOT_ENV};
use pona::image::ImageTensor;
use pona::training::{read_loss_log, LOSS_LOG_FILE};

const TINY_CONFIG: &str = r#"
[generator]
base_channels = 2
num_blocks = 2
image_size = [16, 8]

[discriminator]
base_channels = 2
num_residual_blocks = 1
attention_after = 1

[training]
iterations = 3
batch_size = 2
checkpoint_interval = 3
sigma = 2.0
extractor_channels = 4
"#;

fn pona(args: &[&str], env: &[(&str, &Path)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_pona"));
    cmd.args(args).env_remove(OUT_ROOT_ENV);
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = pona(args, &[]);
    assert!(
        out.status.success(),
        "pona {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// A synthetic dataset, a tiny config and a checkpoint trained on them.
struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
    data: PathBuf,
    config: PathBuf,
}

impl Fixture {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        let data = root.join("data");
        let config = root.join("tiny.toml");
        std::fs::write(&config, TINY_CONFIG).unwrap();
        let out = ok(&["synth", "--out", s(&data), "--identities", "3", "--size", "16", "8", "--seed", "4"]);
        assert!(out.contains("6 pairs"), "{out}");
        Self {
            _dir: dir,
            root,
            data,
            config,
        }
    }

    fn trained(&self) -> PathBuf {
        let out = self.root.join("train");
        ok(&["train", "--config", s(&self.config), "--data", s(&self.data), "--out", s(&out)]);
        out.join("checkpoints").join("step_00000003.ckpt")
    }

    /// Annotation lines whose image path contains any of `names`.
    fn annotations(&self, names: &[&str], file: &str) -> PathBuf {
        let text = std::fs::read_to_string(self.data.join("annotations.csv")).unwrap();
        let kept: Vec<&str> = text
            .lines()
            .filter(|l| names.iter().any(|n| l.starts_with(&format!("images/{n}"))))
            .collect();
        let path = self.root.join(file);
        std::fs::write(&path, kept.join("\n") + "\n").unwrap();
        path
    }
}

#[test]
fn dry_run_reports_parameters_without_writing() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("run");
    let out = ok(&["train", "--dry-run", "--out", s(&out_dir)]);
    assert!(out.contains("parameters: "), "{out}");
    assert!(!out_dir.exists());
}

#[test]
fn train_writes_checkpoint_log_and_manifest() {
    let f = Fixture::new();
    let ckpt = f.trained();
    assert!(ckpt.is_file());
    let run = f.root.join("train");
    assert_eq!(read_loss_log(&run.join(LOSS_LOG_FILE)).unwrap().len(), 3);
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(run.join(MANIFEST_FILE)).unwrap()).unwrap();
    assert_eq!(manifest["command"], "train");
    assert_eq!(manifest["config"]["training"]["iterations"], 3);
    for a in manifest["artifacts"].as_array().unwrap() {
        assert!(Path::new(a.as_str().unwrap()).exists());
    }

    // flags override the file
    let again = f.root.join("train_seeded");
    ok(&[
        "train", "--config", s(&f.config), "--data", s(&f.data), "--out", s(&again), "--seed", "9", "--iterations", "2",
    ]);
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(again.join(MANIFEST_FILE)).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 9);
    assert_eq!(read_loss_log(&again.join(LOSS_LOG_FILE)).unwrap().len(), 2);
}

#[test]
fn generate_and_pose_sweep() {
    let f = Fixture::new();
    let ckpt = f.trained();
    let condition = f.data.join("images/0000_p00.png");
    let targets = f.annotations(&["0000_", "0001_p00"], "targets.csv");
    let out = f.root.join("gen/out.png");
    let printed = ok(&[
        "generate", "--checkpoint", s(&ckpt), "--condition", s(&condition), "--targets", s(&targets), "--out", s(&out),
    ]);
    assert_eq!(printed.lines().count(), 2, "{printed}");
    for i in 0..2 {
        let img = ImageTensor::load(&f.root.join(format!("gen/out_{i:03}.png"))).unwrap();
        assert_eq!((img.height(), img.width()), (16, 8));
    }

    let grid = f.root.join("sweep.png");
    ok(&[
        "pose-sweep", "--checkpoint", s(&ckpt), "--condition", s(&condition), "--poses", s(&targets), "--out", s(&grid),
    ]);
    let img = ImageTensor::load(&grid).unwrap();
    assert_eq!((img.height(), img.width()), (16, 3 * 8));

    // only the condition's own record: nothing to render
    let alone = f.annotations(&["0000_p00"], "alone.csv");
    let failed = pona(
        &["pose-sweep", "--checkpoint", s(&ckpt), "--condition", s(&condition), "--poses", s(&alone), "--out", s(&grid)],
        &[],
    );
    assert!(!failed.status.success());
    assert!(String::from_utf8_lossy(&failed.stderr).contains("no target poses"));
}

#[test]
fn evaluate_reference_and_checkpoint() {
    let f = Fixture::new();
    let out = f.root.join("eval_ref");
    let table = ok(&["evaluate", "--data", s(&f.data), "--out", s(&out), "--reference"]);
    assert!(table.contains("SSIM") && table.contains("PCKh"), "{table}");
    let report = std::fs::read_to_string(out.join("report.jsonl")).unwrap();
    let rows: Vec<serde_json::Value> = report.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    let ssim = rows.iter().find(|r| r["metric"] == "SSIM").unwrap();
    assert_eq!(ssim["value"].as_f64().unwrap(), 1.0);
    let pckh = rows.iter().find(|r| r["metric"] == "PCKh").unwrap();
    assert_eq!(pckh["value"].as_f64().unwrap(), 1.0);
    assert!(out.join(MANIFEST_FILE).is_file());

    // rerunning into the same directory gives the same report
    ok(&["evaluate", "--data", s(&f.data), "--out", s(&out), "--reference"]);
    assert_eq!(std::fs::read_to_string(out.join("report.jsonl")).unwrap(), report);

    let ckpt = f.trained();
    let out = f.root.join("eval_model");
    ok(&[
        "evaluate",
        "--checkpoint",
        s(&ckpt),
        "--data",
        s(&f.data),
        "--out",
        s(&out),
        "--backend-classifier",
        "histogram",
        "--backend-pose-estimator",
        "nearest",
    ]);
    assert_eq!(std::fs::read_to_string(out.join("report.jsonl")).unwrap().lines().count(), 6);

    let bad = pona(
        &["evaluate", "--data", s(&f.data), "--out", s(&out), "--reference", "--backend-classifier", "inception"],
        &[],
    );
    assert!(!bad.status.success());
    assert!(String::from_utf8_lossy(&bad.stderr).contains("inception"));
}

#[test]
fn ablate_writes_one_row_per_setting() {
    let f = Fixture::new();
    let matrix = f.root.join("matrix.toml");
    let base: String = TINY_CONFIG
        .replace("[generator]", "[base.generator]")
        .replace("[discriminator]", "[base.discriminator]")
        .replace("[training]", "[base.training]")
        .replace("iterations = 3", "iterations = 2");
    let text = format!("{base}\n[axes]\nnum_blocks = [1, 2]\nfusion_place = [\"head\", \"none\"]\ncomponents = [\"full\"]\n");
    std::fs::write(&matrix, text).unwrap();
    let out = f.root.join("ablate");
    let table = ok(&["ablate", "--config", s(&matrix), "--data", s(&f.data), "--out", s(&out), "--seed", "1"]);
    let rows: Vec<serde_json::Value> = std::fs::read_to_string(out.join("ablation.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(rows.len(), 5);
    let head = rows.iter().find(|r| r["axis"] == "fusion" && r["setting"] == "head").unwrap();
    assert_eq!(head["default"], true);
    let none = rows.iter().find(|r| r["setting"] == "none").unwrap();
    assert_eq!(none["default"], false);
    assert!(table.contains("head *"), "{table}");
    assert!(out.join(MANIFEST_FILE).is_file());
}

#[test]
fn out_root_comes_from_the_environment() {
    let f = Fixture::new();
    let root = f.root.join("runs_root");
    let out = pona(
        &["train", "--config", s(&f.config), "--data", s(&f.data), "--iterations", "1"],
        &[(OUT_ROOT_ENV, &root)],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(root.join("train").join(MANIFEST_FILE).is_file());
    assert!(root.join("train").join("checkpoints/step_00000001.ckpt").is_file());
}

#[test]
fn invalid_config_fails_with_the_field_name() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[training]\nbeta1 = 1.5\n").unwrap();
    let out = pona(&["train", "--dry-run", "--config", s(&cfg)], &[]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("training.beta1"));

    std::fs::write(&cfg, "[generator]\nfusion = \"head\"\n").unwrap();
    let out = pona(&["train", "--dry-run", "--config", s(&cfg)], &[]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("fusion") && err.contains("bad.toml:2"), "{err}");
}

#[test]
fn resume_continues_from_a_checkpoint() {
    let f = Fixture::new();
    let ckpt = f.trained();
    let out = f.root.join("train");
    ok(&[
        "train", "--config", s(&f.config), "--data", s(&f.data), "--out", s(&out), "--resume", s(&ckpt), "--iterations", "5",
    ]);
    let rows = read_loss_log(&out.join(LOSS_LOG_FILE)).unwrap();
    assert_eq!(rows.iter().map(|r| r.step).collect::<Vec<_>>(), vec![1, 2, 3, 4, 5]);
}
