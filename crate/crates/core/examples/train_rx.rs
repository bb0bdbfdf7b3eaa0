//! Stage 1: trains the receive network with the 10-MLA transmit pattern fixed
//! and compares it with delay-and-sum on the test split.

use echobeam::metrics::{FIXED_TX_DAS, LEARNED_RX};
use echobeam::train::{build_dataset, evaluate_models, train_stage1, ExperimentConfig, Model};

fn main() -> echobeam::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let iterations = std::env::args().nth(1).map_or(Ok(300), |s| s.parse()).expect("iterations");
    let mut cfg = ExperimentConfig::desk();
    cfg.train.stage1_iterations = iterations;
    cfg.train.validation_interval = 50;
    let split = build_dataset(&cfg)?;

    let out = train_stage1(&cfg, &split)?;
    let first = out.arm.curve.first().unwrap().val_l1;
    println!("validation L1 {first:.4} -> {:.4}", out.arm.final_val_l1());

    let net = out.arm.best.network()?;
    let scheme = &out.arm.best.scheme;
    let models = [
        Model { setting: FIXED_TX_DAS, scheme, network: None },
        Model { setting: LEARNED_RX, scheme, network: Some(&net) },
    ];
    let (report, _) = evaluate_models(&cfg, &split.test, &models, None, &cfg.name, "test")?;
    for s in &report.settings {
        println!("{:<18} PSNR {:.2} dB  SSIM {:.3}", s.setting, s.mean.psnr, s.mean.ssim);
    }
    Ok(())
}
