//! Simulates single-line channel data of a cardiac-like phantom and writes it
//! as a `USIQ` file.

use echobeam::phantom::{make_cardiac_phantom, read_dataset, simulate_channel_data, write_dataset};
use echobeam::train::ExperimentConfig;

fn main() -> echobeam::Result<()> {
    let cfg = ExperimentConfig::desk();
    let (geom, grid) = cfg.geometry.build()?;
    let field = make_cardiac_phantom(cfg.dataset.speckle(&grid, &cfg.pulse), 42)?;
    println!("{} scatterers in {}", field.len(), field.label);

    let data = simulate_channel_data(&field, &geom, &grid, &cfg.pulse)?;
    let (l, e, t) = data.dims();
    let peak = data.i.iter().zip(&data.q).map(|(i, q)| i.hypot(*q)).fold(0.0f32, f32::max);
    println!("channel data: {l} transmits x {e} elements x {t} samples, peak |IQ| {peak:.3}");

    let path = std::env::temp_dir().join("echobeam_cardiac.usiq");
    write_dataset(&data, &path)?;
    assert_eq!(read_dataset(&path)?, data);
    println!("wrote {}", path.display());
    Ok(())
}
