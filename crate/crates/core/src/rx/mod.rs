//! Receive side: dynamic focusing as a differentiable geometric transform,
//! envelope detection, log compression, scan conversion and the
//! delay-and-sum baseline.

mod delay;
mod focus;
mod image;

pub use delay::{compute_delay, phase_rotate, sample_delayed};
pub use focus::{dynamic_focus, ApodizationWindow, FocusOp, FocusSource, FocusedIQ, Focuser, WindowKind};
pub use image::{
    das_reconstruct, envelope, envelope_of, log_compress, raster_extent, scan_convert, scan_convert_display,
    DisplayImage, EnvelopeImage, DEFAULT_DYNAMIC_RANGE_DB,
};
