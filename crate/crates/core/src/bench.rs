//! Timing harness comparing the separable module against the direct oracle.

use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mbpm::{bandpass_direct, count_macs, mbpm_apply, MbpmConfig, MbpmParams};
use crate::synthetic::random_clip;
use crate::tensor::Shape;

/// Largest separable/direct difference a benchmarked case may show.
pub const BENCH_TOLERANCE: f64 = 1e-5;
pub const MIN_REPEATS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Impl {
    Separable,
    Direct,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchCase {
    #[serde(rename = "impl")]
    pub implementation: Impl,
    pub shape: Shape,
    pub k: usize,
    pub median_seconds: f64,
    pub macs: u64,
    pub frames_per_second: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeSummary {
    pub shape: Shape,
    pub max_abs_diff: f64,
    pub within_tolerance: bool,
    pub faster: Impl,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub repeats: usize,
    pub cases: Vec<BenchCase>,
    pub summaries: Vec<ShapeSummary>,
}

impl BenchReport {
    pub fn all_within_tolerance(&self) -> bool {
        self.summaries.iter().all(|s| s.within_tolerance)
    }
}

fn median(mut xs: Vec<Duration>) -> Duration {
    xs.sort();
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        (xs[n / 2 - 1] + xs[n / 2]) / 2
    }
}

fn time<T>(repeats: usize, mut f: impl FnMut() -> Result<T>) -> Result<(Duration, T)> {
    let mut samples = Vec::with_capacity(repeats);
    let mut last = None;
    for _ in 0..repeats {
        let start = Instant::now();
        let out = f()?;
        samples.push(start.elapsed());
        last = Some(out);
    }
    Ok((median(samples), last.expect("repeats >= 1")))
}

/// Times both implementations on the same random [0, 1] clip per shape,
/// using untrained σ = 1.1 kernels of side `k` and stride 3.
pub fn run_bench(shapes: &[Shape], repeats: usize, k: usize) -> Result<BenchReport> {
    if repeats < MIN_REPEATS {
        return Err(Error::Config(format!("repeats must be at least {MIN_REPEATS}, got {repeats}")));
    }
    if shapes.is_empty() {
        return Err(Error::Config("no shapes to benchmark".into()));
    }
    let cfg = MbpmConfig { k, ..MbpmConfig::BUSY };
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut cases = Vec::new();
    let mut summaries = Vec::new();
    for &shape in shapes {
        let clip = random_clip(&mut rng, shape, 0.0, 1.0)?;
        let params = MbpmParams::init(shape.1, &cfg, false)?;
        let macs = count_macs(&params, shape)?;
        let (sep_time, sep) = time(repeats, || mbpm_apply(&clip, &params))?;
        let (dir_time, dir) = time(repeats, || bandpass_direct(&clip, cfg.sigma, k, cfg.stride, cfg.norm_mode))?;
        let diff = sep.max_abs_diff(&dir)?;
        for (implementation, t) in [(Impl::Separable, sep_time), (Impl::Direct, dir_time)] {
            let secs = t.as_secs_f64();
            cases.push(BenchCase {
                implementation,
                shape,
                k,
                median_seconds: secs,
                macs,
                frames_per_second: if secs > 0.0 { shape.0 as f64 / secs } else { f64::INFINITY },
            });
        }
        summaries.push(ShapeSummary {
            shape,
            max_abs_diff: diff,
            within_tolerance: diff <= BENCH_TOLERANCE,
            faster: if sep_time <= dir_time { Impl::Separable } else { Impl::Direct },
        });
    }
    Ok(BenchReport { repeats, cases, summaries })
}
