//! Coil-configuration adaptive parallel MRI reconstruction.
//!
//! A variable-splitting cascade (denoiser, k-space data consistency,
//! weighted average) whose U-Net denoiser is conditioned on a binary
//! coil-switching task vector through small hypernetworks, together with
//! data simulation, training, evaluation and task-similarity tooling.

pub mod cascade;
pub mod cli;
pub mod coil_sim;
pub mod denoiser;
pub mod error;
pub mod evaluator;
pub mod fft;
pub mod nn;
pub mod operators;
pub mod task_codec;
pub mod trainer;

pub use coil_sim::{ComplexImage, Mask, MaskKind, MultiCoilKspace, SensitivitySet};
pub use error::{Error, Result};
pub use task_codec::{EmbeddedTask, TaskVector};
