//! Effective transmit beam profiles of the MLA and MLT initializations,
//! written as CSV.

use echobeam::train::ExperimentConfig;
use echobeam::tx::{effective_beam_profile, write_beam_profiles_csv, TxScheme};

fn main() -> echobeam::Result<()> {
    let cfg = ExperimentConfig::desk();
    let (_, grid) = cfg.geometry.build()?;
    let (lo, hi) = (grid.first_angle(), grid.line_angles[grid.line_count - 1]);
    let thetas: Vec<f64> = (0..=200).map(|k| lo + (hi - lo) * k as f64 / 200.0).collect();

    for scheme in [TxScheme::mla(grid.line_count, 10)?, TxScheme::mlt(grid.line_count, 10)?] {
        let profiles = effective_beam_profile(&scheme, &cfg.pulse, &grid, &thetas)?;
        let width = profiles[0].iter().filter(|&&p| p >= 0.5 * profiles[0].iter().cloned().fold(0.0, f64::max)).count();
        let path = std::env::temp_dir().join(format!("echobeam_beams_{}.csv", scheme.name()));
        write_beam_profiles_csv(&path, &thetas, &profiles, "acq")?;
        println!(
            "{}: acquisition 0 above half maximum over {:.1} deg -> {}",
            scheme.name(),
            width as f64 * (hi - lo).to_degrees() / 200.0,
            path.display()
        );
    }
    Ok(())
}
