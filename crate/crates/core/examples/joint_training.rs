//! Stage 2: from a pre-convergence snapshot, trains ψ and the network jointly
//! next to a frozen-ψ control arm with the same budget.

use echobeam::train::{build_dataset, train_stage1, train_stage2_joint, ExperimentConfig};

fn main() -> echobeam::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let mut cfg = ExperimentConfig::desk();
    cfg.train.stage1_iterations = 250;
    cfg.train.stage2_iterations = 250;
    let split = build_dataset(&cfg)?;

    let start = train_stage1(&cfg, &split)?.preconvergence;
    let out = train_stage2_joint(&cfg, &split, &start)?;
    println!(
        "from iteration {}: joint validation L1 {:.4}, control {:.4}",
        start.iteration,
        out.joint.final_val_l1(),
        out.control.final_val_l1()
    );
    println!("ψ moved by {:.4} (Frobenius)", out.joint.final_state.scheme.distance(&start.scheme));
    Ok(())
}
