//! PSNR, SSIM, L1, contrast and CNR of 10-MLA delay-and-sum against the SLA
//! reference of a cyst phantom.

use echobeam::metrics::{cnr, contrast_cr, l1_metric, psnr, ssim};
use echobeam::rx::{das_reconstruct, log_compress};
use echobeam::train::{simulate_frame, ExperimentConfig, Family};
use echobeam::tx::{emulate_acquisitions, TxScheme};

fn main() -> echobeam::Result<()> {
    let cfg = ExperimentConfig::desk();
    let (geom, grid) = cfg.geometry.build()?;
    let frame = simulate_frame(&cfg, Family::Cyst, 11, "cyst".into())?;
    let scheme = TxScheme::mla(grid.line_count, 10)?;
    let das = das_reconstruct(&emulate_acquisitions(&scheme, &frame.sla)?, &scheme, &geom, &grid, &cfg.window_for(&geom))?;

    let (a, r) = (log_compress(&das, cfg.dynamic_range_db)?, log_compress(&frame.reference, cfg.dynamic_range_db)?);
    println!("10-MLA vs SLA: PSNR {:.2} dB, SSIM {:.3}, L1 {:.4}", psnr(&a, &r)?, ssim(&a, &r)?, l1_metric(&das, &frame.reference)?);

    let (target, background) = cfg.cyst_rois()?;
    for (name, img) in [("SLA", &frame.reference), ("10-MLA", &das)] {
        let cr = contrast_cr(img, &target, &background)?;
        let c = cnr(img, &target, &background)?;
        println!("{name:<7} Cr {:.2} dB, CNR {:.3}", cr.unwrap_or(f64::NAN), c.unwrap_or(f64::NAN));
    }
    Ok(())
}
