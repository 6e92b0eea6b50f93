//! Multichannel speech enhancement with relative channel fusion.
//!
//! Each microphone channel is presented to a shared-weight U-Net together
//! with a reference channel, so inter-channel phase and level differences
//! are visible from the first convolution. The crate bundles everything
//! needed to train and evaluate such models from scratch:
//!
//! - [`signal`]: STFT/iSTFT, normalisation, segmentation and WAV I/O.
//! - [`autodiff`]: a small reverse-mode differentiation core with the layer
//!   primitives the network needs, Adam and a checkpoint container.
//! - [`model`]: the RelUNet / U-Net variants, optional GCN/GAT bottleneck,
//!   loss and training loop.
//! - [`beamform`]: correlation, GCC-PHAT, steering vectors and MVDR.
//! - [`scenesim`]: synthetic multichannel scenes with exact ground truth.
//! - [`metrics`]: SI-SDR, STOI and grouped evaluation reports.

pub mod autodiff;
pub mod beamform;
pub mod error;
pub mod metrics;
pub mod model;
pub mod scenesim;
pub mod signal;
pub mod util;

pub use error::{Error, Result};
