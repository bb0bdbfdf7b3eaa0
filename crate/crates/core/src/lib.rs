//! Joint learning of ultrasound transmit beam patterns and a differentiable
//! receive pipeline.
//!
//! The crate is organized along the imaging chain:
//!
//! - [`phantom`]: scatterer phantoms, array/scan geometry, the pulse-echo
//!   simulator and the `USIQ` channel-data container.
//! - [`tx`]: the transmit matrix ψ, its MLA/MLT/random initializers and the
//!   emulation of reduced-transmission acquisitions from single-line data.
//! - [`rx`]: dynamic focusing (delays, phase rotation, apodized sum), envelope,
//!   log compression, scan conversion and the delay-and-sum baseline.
//! - [`nn`]: a small reverse-mode autodiff engine, the dual-path encoder-decoder
//!   and the Adam / decaying-momentum optimizers.
//! - [`train`]: datasets, the two-stage training regime, checkpoints and the
//!   experiment matrix.
//! - [`metrics`]: PSNR, SSIM, L1, contrast and CNR plus report rendering.

pub mod error;
pub mod metrics;
pub mod nn;
pub mod phantom;
pub mod rx;
pub mod train;
pub mod tx;

pub use error::{Error, Result};
