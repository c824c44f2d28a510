//! Self-check suites: oracle equivalence, gradients and lateral init-identity.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bqn::{build_bqn, BqnConfig, LateralDesign};
use crate::disentangle::DisentangledPair;
use crate::error::Result;
use crate::kernels::NormMode;
use crate::mbpm::{bandpass_direct, finite_diff_check, mbpm_apply, InputProbe, MbpmConfig, MbpmParams, FD_EPSILON};
use crate::synthetic::random_clip;

pub const EQUIVALENCE_TOLERANCE: f64 = 1e-5;
pub const GRADIENT_TOLERANCE: f64 = 1e-3;
pub const IDENTITY_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteResult {
    pub name: String,
    pub passed: bool,
    /// Worst observed error.
    pub worst: f64,
    pub tolerance: f64,
    pub cases: usize,
}

impl SuiteResult {
    fn new(name: &str, worst: f64, tolerance: f64, cases: usize) -> Self {
        Self {
            name: name.into(),
            passed: worst <= tolerance,
            worst,
            tolerance,
            cases,
        }
    }
}

/// Separable forward against the direct oracle on random clips of up to
/// 12x3x64x64, both strides, σ ∈ {0.9, 1.1}, k ∈ {3, 7, 9}.
pub fn equivalence_suite(cases: usize, seed: u64) -> Result<SuiteResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for i in 0..cases {
        let stride = if i % 4 == 3 { 1 } else { 3 };
        let t = 3 * rng.random_range(1..=4);
        let shape = (t, rng.random_range(1..=3), rng.random_range(8..=64), rng.random_range(8..=64));
        let cfg = MbpmConfig {
            sigma: [0.9, 1.1][i % 2],
            k: [3, 7, 9][i % 3],
            stride,
            norm_mode: NormMode::Sum1,
        };
        let clip = random_clip(&mut rng, shape, 0.0, 1.0)?;
        let params = MbpmParams::init(shape.1, &cfg, false)?;
        let sep = mbpm_apply(&clip, &params)?;
        let direct = bandpass_direct(&clip, cfg.sigma, cfg.k, cfg.stride, cfg.norm_mode)?;
        worst = worst.max(sep.max_abs_diff(&direct)?);
    }
    Ok(SuiteResult::new("oracle-equivalence", worst, EQUIVALENCE_TOLERANCE, cases))
}

/// Finite differences on every tap plus a sample of input elements, with
/// the taps perturbed away from their initial values.
pub fn gradient_suite(seeds: usize, base_seed: u64) -> Result<SuiteResult> {
    let mut worst: f64 = 0.0;
    for s in 0..seeds as u64 {
        let seed = base_seed + s;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let stride = if s % 2 == 0 { 3 } else { 1 };
        let cfg = MbpmConfig {
            k: [3, 5][s as usize % 2],
            stride,
            ..MbpmConfig::BUSY
        };
        let c = rng.random_range(1..=3);
        let clip = random_clip(&mut rng, (6, c, 10, 10), 0.0, 1.0)?;
        let mut params = MbpmParams::init(c, &cfg, true)?;
        for ch in 0..c {
            for w in params.spatial.channel_mut(ch) {
                *w += rng.random_range(-0.1..0.1);
            }
            for w in params.temporal.channel_mut(ch) {
                *w += rng.random_range(-0.1..0.1);
            }
        }
        let report = finite_diff_check(&clip, &params, InputProbe::Sample { count: 40, seed }, FD_EPSILON)?;
        worst = worst.max(report.max_rel_err);
    }
    Ok(SuiteResult::new("gradient", worst, GRADIENT_TOLERANCE, seeds))
}

/// Zero-initialized laterals leave the two-pathway scores unchanged.
pub fn init_identity_suite(seeds: usize, base_seed: u64) -> Result<SuiteResult> {
    let mut worst: f64 = 0.0;
    for s in 0..seeds as u64 {
        let seed = base_seed + s;
        let graph = build_bqn(&BqnConfig::toy(5, seed).with_laterals_everywhere(LateralDesign::Bplc))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pair = DisentangledPair {
            busy: random_clip(&mut rng, (2, 3, 32, 32), -1.0, 1.0)?,
            quiet: random_clip(&mut rng, (2, 3, 20, 20), 0.0, 1.0)?,
        };
        let with = graph.forward(&pair)?;
        let without = graph.forward_without_laterals(&pair)?;
        let diff = with.iter().zip(&without).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        worst = worst.max(diff);
    }
    Ok(SuiteResult::new("init-identity", worst, IDENTITY_TOLERANCE, seeds))
}

/// The three suites at their default sizes.
pub fn run_all(seed: u64) -> Result<Vec<SuiteResult>> {
    Ok(vec![
        equivalence_suite(20, seed)?,
        gradient_suite(20, seed)?,
        init_identity_suite(10, seed)?,
    ])
}
