//! Runs a short version of the five-setting matrix and renders the tables.

use echobeam::train::{build_dataset, default_cells, run_experiment_matrix, ExperimentConfig};

fn main() -> echobeam::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let mut base = ExperimentConfig::desk();
    base.dataset.train = 8;
    base.dataset.test = 4;
    base.dataset.cyst_test = 2;
    base.train.stage1_iterations = 40;
    base.train.stage2_iterations = 40;
    base.train.validation_interval = 20;
    let split = build_dataset(&base)?;

    let out = std::env::temp_dir().join("echobeam_matrix");
    let (_, rendered) = run_experiment_matrix(&default_cells(&base), &split, &out)?;
    print!("{}", std::fs::read_to_string(&rendered.written[1]).unwrap_or_default());
    println!("outputs in {}", out.display());
    Ok(())
}
