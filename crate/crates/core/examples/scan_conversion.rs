//! Log-compresses an SLA image and its 10-MLA delay-and-sum counterpart and
//! scan-converts both to Cartesian PGM files.

use echobeam::rx::{das_reconstruct, log_compress, raster_extent, scan_convert_display};
use echobeam::train::{simulate_frame, ExperimentConfig, Family};
use echobeam::tx::{emulate_acquisitions, TxScheme};

fn main() -> echobeam::Result<()> {
    let cfg = ExperimentConfig::desk();
    let (geom, grid) = cfg.geometry.build()?;
    let frame = simulate_frame(&cfg, Family::Cyst, 11, "cyst".into())?;
    let scheme = TxScheme::mla(grid.line_count, 10)?;
    let das = das_reconstruct(&emulate_acquisitions(&scheme, &frame.sla)?, &scheme, &geom, &grid, &cfg.window_for(&geom))?;

    let (x_min, x_max, z_max) = raster_extent(&grid, &geom);
    let height = 400;
    let width = ((x_max - x_min) / z_max * height as f64).ceil() as usize;
    let dir = std::env::temp_dir();
    for (name, env) in [("sla", &frame.reference), ("mla10", &das)] {
        let polar = log_compress(env, cfg.dynamic_range_db)?;
        let img = scan_convert_display(&polar, &grid, &geom, (width, height))?;
        let path = dir.join(format!("echobeam_{name}.pgm"));
        img.write_pgm(&path)?;
        println!("{name}: {}x{} raster -> {}", width, height, path.display());
    }
    Ok(())
}
