use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{mbpm_apply, mbpm_backward, mbpm_forward, MbpmParams};
use crate::error::Result;
use crate::tensor::VideoClip;

pub const FD_EPSILON: f64 = 1e-3;

/// Denominator floor for relative errors; gradients below it compare absolutely.
const REL_FLOOR: f64 = 1e-6;

/// Which input elements are perturbed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputProbe {
    None,
    All,
    Sample { count: usize, seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FdReport {
    pub max_rel_err: f64,
    pub spatial_max_rel_err: f64,
    pub temporal_max_rel_err: f64,
    pub input_max_rel_err: f64,
    pub checked: usize,
    pub epsilon: f64,
}

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

fn loss(clip: &VideoClip, params: &MbpmParams) -> Result<f64> {
    Ok(mbpm_apply(clip, params)?.sum_squares())
}

/// Compares the analytic gradients of `sum(Γ²)` with central differences
/// over every spatial and temporal tap plus the probed input elements.
pub fn finite_diff_check(
    clip: &VideoClip,
    params: &MbpmParams,
    probe: InputProbe,
    eps: f64,
) -> Result<FdReport> {
    let mut params = params.clone();
    params.trainable = true;
    let fwd = mbpm_forward(clip, &params)?;
    let upstream = fwd.gamma.scale(2.0);
    let grads = mbpm_backward(&upstream, &params, fwd.cache.as_ref())?;

    let mut checked = 0;
    let mut spatial_err: f64 = 0.0;
    for c in 0..params.channels() {
        for i in 0..params.k() * params.k() {
            let orig = params.spatial.channel(c)[i];
            params.spatial.channel_mut(c)[i] = orig + eps;
            let up = loss(clip, &params)?;
            params.spatial.channel_mut(c)[i] = orig - eps;
            let down = loss(clip, &params)?;
            params.spatial.channel_mut(c)[i] = orig;
            spatial_err = spatial_err.max(rel_err(grads.d_spatial[c][i], (up - down) / (2.0 * eps)));
            checked += 1;
        }
    }

    let mut temporal_err: f64 = 0.0;
    for c in 0..params.channels() {
        for m in 0..3 {
            let orig = params.temporal.channel(c)[m];
            params.temporal.channel_mut(c)[m] = orig + eps;
            let up = loss(clip, &params)?;
            params.temporal.channel_mut(c)[m] = orig - eps;
            let down = loss(clip, &params)?;
            params.temporal.channel_mut(c)[m] = orig;
            temporal_err = temporal_err.max(rel_err(grads.d_temporal[c][m], (up - down) / (2.0 * eps)));
            checked += 1;
        }
    }

    let indices: Vec<usize> = match probe {
        InputProbe::None => Vec::new(),
        InputProbe::All => (0..clip.len()).collect(),
        InputProbe::Sample { count, seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            sample(&mut rng, clip.len(), count.min(clip.len())).into_vec()
        }
    };
    let mut input_err: f64 = 0.0;
    let mut probe_clip = clip.clone();
    for idx in indices {
        let orig = probe_clip.data()[idx];
        probe_clip.data_mut()[idx] = orig + eps;
        let up = loss(&probe_clip, &params)?;
        probe_clip.data_mut()[idx] = orig - eps;
        let down = loss(&probe_clip, &params)?;
        probe_clip.data_mut()[idx] = orig;
        input_err = input_err.max(rel_err(grads.d_input.data()[idx], (up - down) / (2.0 * eps)));
        checked += 1;
    }

    Ok(FdReport {
        max_rel_err: spatial_err.max(temporal_err).max(input_err),
        spatial_max_rel_err: spatial_err,
        temporal_max_rel_err: temporal_err,
        input_max_rel_err: input_err,
        checked,
        epsilon: eps,
    })
}
