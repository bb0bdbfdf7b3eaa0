use super::config::ExperimentConfig;
use super::dataset::Frame;
use super::trainer::Pipeline;
use crate::error::Result;
use crate::metrics::{cnr, contrast_cr, l1_metric, psnr, ssim, FrameRow, MetricsReport, RoiPair, SettingReport};
use crate::nn::ReconNetwork;
use crate::rx::{log_compress, DisplayImage, EnvelopeImage};
use crate::tx::TxScheme;

/// A reconstruction setting: which ψ feeds the receive chain and whether the
/// network follows delay-and-sum.
pub struct Model<'a> {
    pub setting: &'static str,
    pub scheme: &'a TxScheme,
    pub network: Option<&'a ReconNetwork>,
}

/// PSNR/SSIM on log-compressed display images, L1 and contrast on envelopes.
pub fn frame_metrics(cfg: &ExperimentConfig, id: &str, pred: &EnvelopeImage, reference: &EnvelopeImage, roi: Option<&RoiPair>) -> Result<FrameRow> {
    let dp = log_compress(pred, cfg.dynamic_range_db)?;
    let dr = log_compress(reference, cfg.dynamic_range_db)?;
    let mut row = FrameRow {
        id: id.to_string(),
        psnr: psnr(&dp, &dr)?,
        ssim: ssim(&dp, &dr)?,
        l1: l1_metric(pred, reference)?,
        cr: None,
        cnr: None,
        notes: Vec::new(),
    };
    if let Some(r) = roi {
        match contrast_cr(pred, &r.target, &r.background)? {
            Ok(v) => row.cr = Some(v),
            Err(u) => row.notes.push(format!("cr {u}")),
        }
        match cnr(pred, &r.target, &r.background)? {
            Ok(v) => row.cnr = Some(v),
            Err(u) => row.notes.push(format!("cnr {u}")),
        }
    }
    Ok(row)
}

/// Evaluates each model on `frames`; also returns the first frame's
/// reconstruction per model for image export.
pub fn evaluate_models(cfg: &ExperimentConfig, frames: &[Frame], models: &[Model], roi: Option<RoiPair>, cell: &str, split: &str) -> Result<(MetricsReport, Vec<EnvelopeImage>)> {
    let mut settings = Vec::with_capacity(models.len());
    let mut firsts = Vec::with_capacity(models.len());
    for m in models {
        let pipeline = Pipeline::new(cfg, m.scheme)?;
        let mut rows = Vec::with_capacity(frames.len());
        for (k, f) in frames.iter().enumerate() {
            let pred = pipeline.reconstruct(f, m.scheme, m.network)?;
            rows.push(frame_metrics(cfg, &f.id, &pred, &f.reference, roi.as_ref())?);
            if k == 0 {
                firsts.push(pred);
            }
        }
        settings.push(SettingReport::new(m.setting, rows, roi)?);
    }
    let report = MetricsReport {
        cell: cell.to_string(),
        split: split.to_string(),
        settings,
        artifacts: Vec::new(),
    };
    Ok((report, firsts))
}

/// Display image of an envelope with the configured dynamic range.
pub fn display(cfg: &ExperimentConfig, env: &EnvelopeImage) -> Result<DisplayImage> {
    log_compress(env, cfg.dynamic_range_db)
}
