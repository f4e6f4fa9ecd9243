use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use pona::cli::{
    cmd_ablate, cmd_evaluate, cmd_generate, cmd_pose_sweep, cmd_synth, cmd_train, default_out_dir, AblateArgs,
    EvaluateArgs, GenerateArgs, TrainArgs, TrainSummary, OUT_ROOT_ENV,
};
use pona::data::SyntheticSpec;

#[derive(Parser)]
#[command(name = "pona", version, about = "Pose-guided person image generation")]
struct Cli {
    /// Root for run directories when --out is not given.
    #[arg(long, global = true, env = OUT_ROOT_ENV, hide_env_values = true)]
    out_root: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model on a dataset directory.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        iterations: Option<u64>,
        /// Validate the configuration and print the parameter count.
        #[arg(long)]
        dry_run: bool,
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Render a condition image in one or more target poses.
    Generate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        condition: PathBuf,
        /// Annotation file with target poses.
        #[arg(long)]
        targets: PathBuf,
        #[arg(long)]
        condition_pose: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render a grid: condition image, then one image per target pose.
    PoseSweep {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        condition: PathBuf,
        #[arg(long)]
        poses: PathBuf,
        #[arg(long)]
        condition_pose: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a checkpoint on a dataset directory.
    Evaluate {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        backend_classifier: Option<String>,
        #[arg(long)]
        backend_pose_estimator: Option<String>,
        /// Score the target images against themselves.
        #[arg(long)]
        reference: bool,
    },
    /// Train and evaluate every row of an ablation matrix.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Write a synthetic stick-figure dataset.
    Synth {
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 8)]
        identities: usize,
        #[arg(long, default_value_t = 2)]
        poses: usize,
        #[arg(long, num_args = 2, value_names = ["H", "W"])]
        size: Option<Vec<usize>>,
    },
}

fn out_dir(explicit: Option<PathBuf>, root: &Option<PathBuf>, command: &str) -> PathBuf {
    explicit.unwrap_or_else(|| match root {
        Some(r) => r.join(command),
        None => default_out_dir(command),
    })
}

fn run(cli: Cli) -> pona::Result<()> {
    let root = cli.out_root;
    match cli.command {
        Command::Train {
            config,
            data,
            out,
            seed,
            iterations,
            dry_run,
            resume,
        } => {
            let args = TrainArgs {
                config,
                data_dir: data,
                out: out_dir(out, &root, "train"),
                seed,
                iterations,
                dry_run,
                resume,
            };
            match cmd_train(&args)? {
                TrainSummary::DryRun { parameters, .. } => {
                    println!("configuration ok");
                    println!("parameters: {parameters} ({:.2} M)", parameters as f64 / 1e6);
                }
                TrainSummary::Trained {
                    final_checkpoint, last, ..
                } => {
                    if let Some(r) = last {
                        println!(
                            "step {}: d {:.4} adv {:.4} l1 {:.4} percep {:.4}",
                            r.step, r.d_loss, r.g_adv, r.l1, r.percep
                        );
                    }
                    println!("checkpoint: {}", final_checkpoint.display());
                }
            }
        }
        Command::Generate {
            checkpoint,
            condition,
            targets,
            condition_pose,
            out,
        } => {
            let paths = cmd_generate(&GenerateArgs {
                checkpoint,
                condition_image: condition,
                target_keypoints: targets,
                condition_keypoints: condition_pose,
                out,
            })?;
            for p in paths {
                println!("{}", p.display());
            }
        }
        Command::PoseSweep {
            checkpoint,
            condition,
            poses,
            condition_pose,
            out,
        } => {
            let path = cmd_pose_sweep(&GenerateArgs {
                checkpoint,
                condition_image: condition,
                target_keypoints: poses,
                condition_keypoints: condition_pose,
                out,
            })?;
            println!("{}", path.display());
        }
        Command::Evaluate {
            checkpoint,
            data,
            out,
            config,
            backend_classifier,
            backend_pose_estimator,
            reference,
        } => {
            let report = cmd_evaluate(&EvaluateArgs {
                checkpoint,
                data_dir: data,
                out: out_dir(out, &root, "evaluate"),
                config,
                classifier: backend_classifier,
                pose_estimator: backend_pose_estimator,
                reference,
            })?;
            print!("{}", report.to_table());
        }
        Command::Ablate { config, data, out, seed } => {
            let table = cmd_ablate(&AblateArgs {
                matrix: config,
                data_dir: data,
                out: out_dir(out, &root, "ablate"),
                seed,
            })?;
            print!("{}", table.to_table());
        }
        Command::Synth {
            out,
            seed,
            identities,
            poses,
            size,
        } => {
            let mut spec = SyntheticSpec {
                num_identities: identities,
                poses_per_identity: poses,
                seed: seed.unwrap_or(0),
                ..Default::default()
            };
            if let Some(s) = size {
                spec.image_size = [s[0], s[1]];
            }
            let out = out_dir(out, &root, "synth");
            let n = cmd_synth(&spec, &out)?;
            println!("{n} pairs written to {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
