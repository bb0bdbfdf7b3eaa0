//! Delay-and-sum of a single point scatterer: the image peak lands on the
//! scatterer's line and at its two-way travel time.

use echobeam::phantom::{simulate_channel_data, Scatterer, ScattererField};
use echobeam::rx::das_reconstruct;
use echobeam::train::ExperimentConfig;
use echobeam::tx::TxScheme;

fn main() -> echobeam::Result<()> {
    let cfg = ExperimentConfig::desk();
    let (geom, grid) = cfg.geometry.build()?;
    let (line, range) = (9, 22e-3);
    let field = ScattererField {
        scatterers: vec![Scatterer {
            range,
            angle: grid.line_angles[line],
            reflectivity: 1.0,
        }],
        label: "point".into(),
        seed: 0,
        depth_window: (1e-3, 39e-3),
    };
    let sla = simulate_channel_data(&field, &geom, &grid, &cfg.pulse)?;
    let scheme = TxScheme::identity(grid.line_count)?;
    let img = das_reconstruct(&sla, &scheme, &geom, &grid, &cfg.window_for(&geom))?;

    let (k, _) = img
        .values
        .iter()
        .enumerate()
        .fold((0, f64::MIN), |best, (k, &v)| if v > best.1 { (k, v) } else { best });
    let expected = 2.0 * range / geom.speed_of_sound * geom.sample_rate;
    println!("peak at line {} sample {} (scatterer: line {line}, sample {expected:.1})", k / img.samples, k % img.samples);
    Ok(())
}
