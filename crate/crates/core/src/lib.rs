//! Temporal neural cellular automata.
//!
//! A grid of cells whose visible channel starts as a pre-contrast image and
//! evolves by a learned, local, stochastic residual rule. Every update step
//! stands for a fixed slice of physical time, so a frame acquired `t`
//! seconds after injection is matched against the state after `t / Δt`
//! updates. Training only ever sees the few acquired frames; the steps in
//! between are free, which is what makes the learned evolution continuous.
//!
//! Modules, bottom-up:
//!
//! - [`grid`]: cell state, perception, masked update, rollouts
//! - [`autodiff`]: backpropagation through the unrolled rollout with
//!   segment recomputation, and a finite-difference oracle
//! - [`trainer`]: time-to-step mapping, sparse loss, Adam, epochs
//! - [`phantom`]: synthetic contrast-enhancement cases, intensity
//!   normalisation, patch cropping
//! - [`dataset`]: manifest + binary payload file format
//! - [`metrics`]: MSE, MAE, PSNR, SSIM, MS-SSIM and the pre-contrast baseline
//! - [`runner`]: config files, checkpoints and the command implementations
//!   behind the `tenca` binary

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::too_many_arguments)]

pub mod autodiff;
pub mod dataset;
pub mod error;
pub mod grid;
pub mod image;
pub mod metrics;
mod linalg;
pub mod params;
pub mod phantom;
pub mod rng;
pub mod runner;
mod step;
pub mod trainer;

pub use error::{Result, TencaError};
pub use grid::{init_state, perceive, rollout, sample_mask, update_step, CellGrid, FireMask, FireRule};
pub use image::Image;
pub use params::{param_count, ModelParams, ParamGradients};
pub use rng::RngKey;
pub use trainer::{TrainConfig, TrainingCase};
