//! Image quality measures and report rendering.

mod contrast;
mod quality;
mod report;

pub use contrast::{cnr, contrast_cr, RoiCircle, RoiRole, Undefined};
pub use quality::{difference_image, gaussian_taps, l1_metric, psnr, ssim, PSNR_CAP_DB, SSIM_SIGMA, SSIM_WINDOW};
pub use report::{
    render_report, table_csv, table_text, FrameRow, MeanRow, MetricsReport, RenderedReport, RoiPair, SettingReport,
    TableRow, CYST_METRICS_FILE, FIXED_TX_DAS, LEARNED_RX, LEARNED_TX_DAS, LEARNED_TX_RX, METRICS_FILE, SETTINGS,
};
