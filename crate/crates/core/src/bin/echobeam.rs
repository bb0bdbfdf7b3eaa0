use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use echobeam::metrics::{render_report, RoiPair, FIXED_TX_DAS, LEARNED_RX, LEARNED_TX_DAS, LEARNED_TX_RX};
use echobeam::train::{
    build_dataset, default_cells, evaluate_models, load_checkpoint, run_cell, run_experiment_matrix, save_checkpoint,
    train_stage2_joint, DatasetSplit, ExperimentConfig, Model, SplitName, Stage, TrainState,
};

#[derive(Parser)]
#[command(name = "echobeam", version, about = "Joint transmit/receive learning on synthetic sector scans")]
struct Cli {
    /// Overrides the training seed of the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for simulation and focusing.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the dataset splits into <out>/dataset.
    Simulate {
        /// Experiment config JSON; the desk configuration when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Train one cell into <out>/<cell>; without --stage runs both stages.
    Train {
        /// Experiment config JSON; the desk configuration when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
        stage: Option<u8>,
    },
    /// Evaluate a checkpoint against delay-and-sum on one split.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        /// Defaults to config.json of the cell that holds the checkpoint.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Run the five-setting experiment matrix into <out>/<cell>.
    Matrix {
        /// Experiment config JSON; the desk configuration when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Render tables from a directory of completed cells.
    Report {
        #[arg(long)]
        run_dir: PathBuf,
    },
}

fn load_config(path: Option<&Path>, seed: Option<u64>) -> echobeam::Result<ExperimentConfig> {
    let mut cfg = match path {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::desk(),
    };
    if let Some(s) = seed {
        cfg.train.seed = s;
    }
    Ok(cfg)
}

/// Uses <out>/dataset when `simulate` has written one, otherwise simulates in memory.
fn dataset(cfg: &ExperimentConfig, out: &Path) -> echobeam::Result<DatasetSplit> {
    let dir = out.join("dataset");
    if dir.join("manifest.json").exists() {
        log::info!("loading dataset from {}", dir.display());
        DatasetSplit::load(&dir, cfg)
    } else {
        log::info!("simulating dataset");
        build_dataset(cfg)
    }
}

fn run(cli: Cli) -> echobeam::Result<()> {
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("thread pool already initialized: {e}");
        }
    }
    let out = &cli.out;
    match cli.command {
        Command::Simulate { config } => {
            let cfg = load_config(config.as_deref(), cli.seed)?;
            let split = build_dataset(&cfg)?;
            let dir = out.join("dataset");
            split.save(&dir)?;
            println!(
                "wrote {} train, {} validation, {} test and {} cyst frames to {}",
                split.train.len(),
                split.validation.len(),
                split.test.len(),
                split.cyst_test.len(),
                dir.display()
            );
        }
        Command::Train { config, stage } => {
            let mut cfg = load_config(config.as_deref(), cli.seed)?;
            let split = dataset(&cfg, out)?;
            let cell_dir = out.join(&cfg.name);
            match stage {
                Some(2) => {
                    let ckpt = cell_dir.join("checkpoints").join("stage1_pre.ckpt");
                    let (start, _) = load_checkpoint(&ckpt, Some(&cfg.training_hash()))?;
                    let outcome = train_stage2_joint(&cfg, &split, &start)?;
                    let hash = cfg.training_hash();
                    let dir = cell_dir.join("checkpoints");
                    save_checkpoint(&outcome.joint.final_state, &hash, dir.join("joint_final.ckpt"))?;
                    save_checkpoint(&outcome.joint.best, &hash, dir.join("joint_best.ckpt"))?;
                    save_checkpoint(&outcome.control.final_state, &hash, dir.join("control_final.ckpt"))?;
                    println!(
                        "final validation L1: joint {:.6}, control {:.6}",
                        outcome.joint.final_val_l1(),
                        outcome.control.final_val_l1()
                    );
                }
                _ => {
                    if stage == Some(1) {
                        cfg.train.stage = Stage::RxOnly;
                    }
                    let outcome = run_cell(&cfg, &split, &cell_dir)?;
                    for s in &outcome.test.settings {
                        println!("{:<18} PSNR {:>7.3} dB  SSIM {:.4}  L1 {:.5}", s.setting, s.mean.psnr, s.mean.ssim, s.mean.l1);
                    }
                    println!("outputs in {}", cell_dir.display());
                }
            }
        }
        Command::Evaluate { checkpoint, split, config } => {
            let config = match config {
                Some(c) => c,
                None => checkpoint
                    .parent()
                    .and_then(Path::parent)
                    .map(|d| d.join("config.json"))
                    .ok_or_else(|| echobeam::Error::Config("cannot locate config.json; pass --config".into()))?,
            };
            let cfg = load_config(Some(&config), cli.seed)?;
            let (state, _) = load_checkpoint(&checkpoint, Some(&cfg.training_hash()))?;
            let data = dataset(&cfg, out)?;
            let name = SplitName::parse(&split)?;
            let frames = data.get(name);
            let fixed = TrainState::initial(&cfg)?.scheme;
            let net = state.network()?;
            let mut models = vec![Model {
                setting: FIXED_TX_DAS,
                scheme: &fixed,
                network: None,
            }];
            if state.stage == Stage::Joint {
                models.push(Model {
                    setting: LEARNED_TX_DAS,
                    scheme: &state.scheme,
                    network: None,
                });
                models.push(Model {
                    setting: LEARNED_TX_RX,
                    scheme: &state.scheme,
                    network: Some(&net),
                });
            } else {
                models.push(Model {
                    setting: LEARNED_RX,
                    scheme: &state.scheme,
                    network: Some(&net),
                });
            }
            let roi = if name == SplitName::CystTest {
                let (target, background) = cfg.cyst_rois()?;
                Some(RoiPair { target, background })
            } else {
                None
            };
            let (report, _) = evaluate_models(&cfg, frames, &models, roi, &cfg.name, name.as_str())?;
            std::fs::create_dir_all(out).map_err(|e| echobeam::Error::Io { path: out.clone(), source: e })?;
            let path = out.join(format!("eval_{}_{}.json", cfg.name, name.as_str()));
            report.save(&path)?;
            for s in &report.settings {
                println!("{:<18} PSNR {:>7.3} dB  SSIM {:.4}  L1 {:.5}", s.setting, s.mean.psnr, s.mean.ssim, s.mean.l1);
            }
            println!("wrote {}", path.display());
        }
        Command::Matrix { config } => {
            let cfg = load_config(config.as_deref(), cli.seed)?;
            let split = dataset(&cfg, out)?;
            let (results, rendered) = run_experiment_matrix(&default_cells(&cfg), &split, out)?;
            for (name, r) in &results {
                match r {
                    Ok(_) => println!("{name}: done"),
                    Err(e) => println!("{name}: FAILED ({e})"),
                }
            }
            print!("{}", std::fs::read_to_string(&rendered.written[1]).unwrap_or_default());
        }
        Command::Report { run_dir } => {
            let rendered = render_report(&run_dir)?;
            print!("{}", std::fs::read_to_string(&rendered.written[1]).unwrap_or_default());
            if !rendered.cyst_rows.is_empty() {
                print!("\n{}", std::fs::read_to_string(&rendered.written[3]).unwrap_or_default());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
