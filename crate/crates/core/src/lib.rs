//! Busy/quiet video disentangling.
//!
//! A clip is split into a *busy* stream (band-pass motion distilled by the
//! [`mbpm`] module: a per-channel Laplacian of Gaussian followed by a 3-tap
//! temporal high-pass) and a *quiet* stream (the temporally pooled clip minus
//! the busy stream, downsampled). The [`bqn`] module wires two small residual
//! pathways over these streams with alternating band-pass lateral
//! connections and late score fusion.

pub mod bench;
pub mod bqn;
pub mod check;
pub mod disentangle;
pub mod error;
pub mod io;
pub mod kernels;
pub mod mbpm;
pub mod synthetic;
pub mod tensor;
pub mod toy;

pub use bqn::{build_bqn, BqnConfig, BqnGraph};
pub use disentangle::{disentangle, DisentangleConfig, DisentangledPair};
pub use error::{Error, Result};
pub use kernels::{log_kernel, temporal_highpass_kernel, NormMode, SpatialKernel, TemporalKernel};
pub use mbpm::{MbpmConfig, MbpmGradients, MbpmParams};
pub use tensor::{ResizePolicy, TemporalBoundary, VideoClip};

/// Sizes the global rayon pool from `BQ_THREADS` (unset or 0 = one thread
/// per core). Returns the thread count in effect.
pub fn init_threads_from_env() -> Result<usize> {
    let n = match std::env::var("BQ_THREADS") {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .map_err(|_| Error::Config(format!("BQ_THREADS must be a non-negative integer, got {v:?}")))?,
        Err(_) => 0,
    };
    // a pool that is already built keeps its size
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(rayon::current_num_threads())
}
