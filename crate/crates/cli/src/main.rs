use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};

use dogm_cli::stages::{self, EvalArgs, TrainArgs};
use dogm_cli::{default_seed, exit_code_for};
use dogm_cli::render::{RenderArgs, RenderMode};
use dogm_core::labels::LabelConfig;
use dogm_core::meas::InverseSensorConfig;
use dogm_core::pf::PfConfig;
use dogm_nn::loss::LossConfig;
use dogm_nn::model::ModelConfig;

/// Dynamic occupancy grid pipeline: synthetic lidar scenes, measurement
/// grids, a particle-filter baseline, network training and evaluation.
#[derive(Parser)]
#[command(name = "dogm", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a scenario: scans, ground-truth boxes, reference tracks.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build per-step measurement grids from simulated scans.
    Gridify {
        #[arg(long = "in")]
        in_dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0.7)]
        p_hit: f64,
        #[arg(long, default_value_t = 0.3)]
        p_free: f64,
        #[arg(long, default_value_t = 1)]
        hit_thickness: usize,
    },
    /// Run the particle-filter baseline over measurement grids.
    Pf {
        #[arg(long = "in")]
        in_dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Generate training labels from filter output and ground-truth boxes.
    Labels {
        #[arg(long)]
        grids: PathBuf,
        #[arg(long)]
        pf: PathBuf,
        #[arg(long)]
        boxes: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the recurrent estimator on prepared scenario data.
    Train {
        /// Directory of scenario subdirs, each holding meas/ and labels/.
        #[arg(long)]
        data: PathBuf,
        /// Model architecture JSON; omitted → desk-scale defaults.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        epochs: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        /// Sliding-window stride over each scenario's time steps.
        #[arg(long, default_value_t = 3)]
        stride: usize,
        #[arg(long, default_value_t = 1)]
        grad_accum: usize,
        /// Resume from an existing checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Loss-curve CSV output path.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Run the trained network over a measurement-grid sequence.
    Infer {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long = "in")]
        in_dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare network and filter against the reference trajectories.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        pf: PathBuf,
        /// Simulation output directory (boxes and reference tracks).
        #[arg(long = "ref")]
        ref_dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 2.0)]
        warmup_s: f64,
    },
    /// Render grid files to PGM/PNG frames.
    Render {
        #[arg(long = "in")]
        in_dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Color cells by velocity orientation.
        #[arg(long, conflicts_with = "arrows")]
        hue: bool,
        /// Draw velocity arrows.
        #[arg(long)]
        arrows: bool,
        #[arg(long, default_value_t = 0.7)]
        min_speed: f64,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate { config, out } => stages::run_simulate(&config, &out),
        Command::Gridify {
            in_dir,
            out,
            p_hit,
            p_free,
            hit_thickness,
        } => {
            let isc = InverseSensorConfig {
                p_hit,
                p_free,
                hit_thickness,
            };
            stages::run_gridify(&in_dir, &out, &isc)
        }
        Command::Pf { in_dir, out, seed } => stages::run_pf(
            &in_dir,
            &out,
            &PfConfig::default(),
            seed.unwrap_or_else(default_seed),
        ),
        Command::Labels {
            grids,
            pf,
            boxes,
            out,
        } => stages::run_labels(&grids, &pf, &boxes, &out, &LabelConfig::default()),
        Command::Train {
            data,
            model,
            epochs,
            seed,
            out,
            stride,
            grad_accum,
            resume,
            log,
        } => {
            let model_config = match model {
                Some(path) => {
                    let text = std::fs::read_to_string(&path)?;
                    serde_json::from_str::<ModelConfig>(&text).map_err(|e| {
                        anyhow::Error::from(dogm_core::CoreError::format(
                            path.display().to_string(),
                            e.to_string(),
                        ))
                    })?
                }
                None => ModelConfig::default(),
            };
            stages::run_train(&TrainArgs {
                data_dir: data,
                model_config,
                loss_config: LossConfig::default(),
                epochs,
                seed: seed.unwrap_or_else(default_seed),
                stride,
                grad_accum,
                out_ckpt: out,
                resume,
                log_csv: log,
            })
        }
        Command::Infer { ckpt, in_dir, out } => stages::run_infer(&ckpt, &in_dir, &out),
        Command::Eval {
            pred,
            pf,
            ref_dir,
            out,
            warmup_s,
        } => {
            let table = stages::run_eval(&EvalArgs {
                pred_dir: pred,
                pf_dir: pf,
                sim_dir: ref_dir,
                out_csv: out,
                warmup_s,
            })?;
            print!("{table}");
            Ok(())
        }
        Command::Render {
            in_dir,
            out,
            hue,
            arrows,
            min_speed,
        } => {
            let mode = if hue {
                RenderMode::Hue
            } else if arrows {
                RenderMode::Arrows
            } else {
                RenderMode::Gray
            };
            stages::run_render(&RenderArgs {
                in_dir,
                out_dir: out,
                mode,
                min_speed,
            })
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code_for(&err) as u8)
        }
    }
}
