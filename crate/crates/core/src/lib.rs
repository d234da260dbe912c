//! Core of a lightweight monocular depth-estimation stack.
//!
//! Everything in this crate is pure computation over in-memory tensors and
//! builds without `std` (only `alloc` is required). File formats, image IO
//! and the command line live in the companion `mininet` crate.
//!
//! Module map:
//! - [`tensor`], [`autodiff`], [`optim`]: dense tensors, reverse-mode AD and Adam.
//! - [`nn`]: SE, inverted residual, residual DSconv and upsample blocks.
//! - [`depthnet`], [`posenet`]: the two networks.
//! - [`geometry`], [`losses`]: view synthesis and the training objective.
//! - [`trainer`]: augmentation, schedule, synthetic scenes and `train_step`.
//! - [`eval`], [`profiler`], [`gradcheck`]: metrics, model accounting, FD checks.
#![cfg_attr(not(any(test, feature = "std")), no_std)]

extern crate alloc;

pub mod autodiff;
pub mod depthnet;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod gradcheck;
pub mod losses;
pub mod nn;
pub mod optim;
pub mod params;
pub mod posenet;
pub mod profiler;
pub mod scalar;
pub mod tensor;
pub mod trainer;

mod kernels;

pub use autodiff::{Gradients, Tape, Var};
pub use error::{Error, Result};
pub use scalar::{DType, Scalar};
pub use tensor::Tensor;
