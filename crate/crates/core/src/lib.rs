//! Nighttime image dehazing with spatial/frequency bidomain blocks.
//!
//! The crate is organized bottom-up:
//!
//! - [`tensor`]: dense tensors and a reverse-mode differentiation tape.
//! - [`fourier`]: per-channel 2-D DFT and amplitude/phase algebra.
//! - [`sfii`]: spectrum filters, frequency-projected window attention and
//!   the spatial/frequency interaction block.
//! - [`network`]: the three-scale encoder-decoder.
//! - [`objectives`]: spatial, frequency and brightness losses plus PSNR/SSIM.
//! - [`data`]: nighttime haze synthesis, image I/O and dataset manifests.
//! - [`pipeline`]: configuration, Adam, two-stage training, pseudo-labels,
//!   inference, evaluation and gradient checking.

pub mod data;
pub mod error;
pub mod fourier;
pub mod network;
pub mod objectives;
pub mod params;
pub mod pipeline;
pub mod sfii;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{Tape, Tensor, Var};
