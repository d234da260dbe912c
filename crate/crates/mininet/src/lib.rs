//! File formats, image IO, datasets and the `mininet` command line on top of
//! [`mininet_core`].
//!
//! - [`tensor_file`]: `MINITNSR` single-tensor files.
//! - [`checkpoint`]: `MININETW` checkpoints and [`checkpoint::Model`].
//! - [`image_io`]: PNG/PPM frames, 16-bit disparity images.
//! - [`dataset`]: numbered-frame sequences with intrinsics, depth and poses.
//! - [`config`]: model and training settings (JSON or `key = value`).
//! - [`cli`]: the subcommands.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod image_io;
pub mod inference;
pub mod tensor_file;
mod wire;

pub use error::{Error, Result};
pub use wire::AnyTensor;

/// Environment variable capping the worker threads of the matrix kernels.
pub const THREADS_ENV: &str = "MININET_THREADS";

/// Applies a thread cap to the matrix kernels. Must run before the first
/// large product, since the kernel library reads its setting once.
pub fn set_threads(n: usize) {
    std::env::set_var("MATMUL_NUM_THREADS", n.max(1).to_string());
}
