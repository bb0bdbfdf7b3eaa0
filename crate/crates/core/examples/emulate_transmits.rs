//! Builds MLA, MLT and random transmit matrices and emulates the reduced
//! acquisitions from single-line data.

use echobeam::train::{simulate_frame, ExperimentConfig, Family};
use echobeam::tx::{emulate_acquisitions, TxScheme};

fn main() -> echobeam::Result<()> {
    let cfg = ExperimentConfig::desk();
    let lines = cfg.geometry.lines;
    let frame = simulate_frame(&cfg, Family::Cardiac, 3, "demo".into())?;

    for scheme in [TxScheme::mla(lines, 10)?, TxScheme::mlt(lines, 10)?, TxScheme::random(lines, 3, 9)?] {
        let data = emulate_acquisitions(&scheme, &frame.sla)?;
        let support: Vec<usize> = (0..lines).filter(|&l| scheme.row(0)[l] != 0.0).collect();
        println!(
            "{:<10} {} acquisitions, row 0 fires lines {:?}, emulated {:?}",
            scheme.name(),
            scheme.acquisitions,
            support,
            data.dims()
        );
    }
    Ok(())
}
