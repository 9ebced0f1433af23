//! Compressed-sensing MRI reconstruction with a structurally strengthened
//! generative adversarial network.
//!
//! The crate is organised bottom-up:
//!
//! - [`autodiff`]: dense tensors, a reverse-mode tape and the Adam optimizer.
//! - [`kspace`]: unitary 2-D Fourier transforms, sampling masks and the
//!   undersampled acquisition model `y = Ax + b`.
//! - [`model`]: residual-in-residual blocks, strengthened autoencoders, the
//!   strengthened generator and the discriminator.
//! - [`losses`]: adversarial, pixel, structural and gradient objectives.
//! - [`metrics`]: NMSE / PSNR / SSIM evaluation and report aggregation.
//! - [`data`]: slice datasets, augmentation, phantoms and batching.
//! - [`training`]: alternating GAN optimisation, early stopping and checkpoints.

// Comparisons that must also reject NaN are written `!(x > 0.0)`.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod data;
mod error;
pub mod grid;
pub mod kspace;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod training;

pub use autodiff::{AdamState, Float, Gradients, Tape, Tensor, Var};
pub use error::{Error, Result};
pub use grid::Image;
pub use kspace::{KSpaceGrid, Mask, MaskKind, MaskSpec, NoiseSpec};
pub use model::{Model, ModelParameters, SgConfig};
pub use training::{TrainConfig, TrainState};
