//! Splits a clip into the two pathway inputs.
//!
//! * busy: the stride-3 band-pass output Γ, one frame per three input
//!   frames, kept at the input resolution;
//! * quiet: `downsample(avg3(clip) - Γ)`. The subtraction happens at the busy
//!   resolution and resizing comes last.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mbpm::{mbpm_apply, MbpmConfig, MbpmParams};
use crate::tensor::{bilinear_resize, temporal_avg_pool, ResizePolicy, VideoClip};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DisentangleConfig {
    pub mbpm: MbpmConfig,
    /// Optional busy-stream resize; `None` keeps the input resolution.
    pub busy_size: Option<(usize, usize)>,
    pub quiet_size: (usize, usize),
    pub segments: usize,
}

impl Default for DisentangleConfig {
    /// Busy stream at the input resolution, 160² quiet, 8 segments.
    fn default() -> Self {
        Self {
            mbpm: MbpmConfig::BUSY,
            busy_size: None,
            quiet_size: (160, 160),
            segments: 8,
        }
    }
}

impl DisentangleConfig {
    pub fn validate(&self, clip: &VideoClip) -> Result<()> {
        if self.mbpm.stride != 3 {
            return Err(Error::Config(format!(
                "busy stream needs a stride-3 module, got stride {}",
                self.mbpm.stride
            )));
        }
        if clip.t() != 3 * self.segments {
            return Err(Error::Dimension(format!(
                "clip has {} frames, expected 3 x {} segments",
                clip.t(),
                self.segments
            )));
        }
        let (bh, bw) = self.busy_size.unwrap_or((clip.h(), clip.w()));
        let (qh, qw) = self.quiet_size;
        if qh == 0 || qw == 0 || qh > bh || qw > bw {
            return Err(Error::Config(format!(
                "quiet size {qh}x{qw} must be non-empty and no larger than busy size {bh}x{bw}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DisentangledPair {
    pub busy: VideoClip,
    pub quiet: VideoClip,
}

/// Frame indices for uniform segment sampling: the video is cut into
/// `segments` equal parts and three consecutive frames are taken from the
/// middle of each.
pub fn segment_indices(total: usize, segments: usize) -> Result<Vec<usize>> {
    if segments == 0 {
        return Err(Error::Config("need at least one segment".into()));
    }
    if total < 3 * segments {
        return Err(Error::Dimension(format!(
            "{total} frames cannot supply {segments} segments of 3"
        )));
    }
    let len = total as f64 / segments as f64;
    Ok((0..segments)
        .flat_map(|s| {
            let lo = (s as f64 * len).floor() as usize;
            let hi = ((s + 1) as f64 * len).floor() as usize;
            // centre a 3-frame window in [lo, hi)
            let start = (lo + (hi - lo).saturating_sub(3) / 2).min(total - 3);
            [start, start + 1, start + 2]
        })
        .collect())
}

/// Γ from a stride-3 module.
pub fn busy_input(clip: &VideoClip, params: &MbpmParams) -> Result<VideoClip> {
    if params.stride() != 3 {
        return Err(Error::Config(format!(
            "busy stream needs a stride-3 module, got stride {}",
            params.stride()
        )));
    }
    mbpm_apply(clip, params)
}

/// `avg3(clip) - Γ` at the busy resolution.
pub fn quiet_raw(clip: &VideoClip, gamma: &VideoClip) -> Result<VideoClip> {
    let avg = temporal_avg_pool(clip)?;
    if avg.shape() != gamma.shape() {
        return Err(Error::Dimension(format!(
            "pooled clip {:?} and busy stream {:?} differ",
            avg.shape(),
            gamma.shape()
        )));
    }
    avg.sub(gamma)
}

pub fn quiet_input(clip: &VideoClip, gamma: &VideoClip, quiet_size: &ResizePolicy) -> Result<VideoClip> {
    bilinear_resize(&quiet_raw(clip, gamma)?, quiet_size)
}

pub fn disentangle(clip: &VideoClip, config: &DisentangleConfig, params: &MbpmParams) -> Result<DisentangledPair> {
    config.validate(clip)?;
    let gamma = busy_input(clip, params)?;
    let (qh, qw) = config.quiet_size;
    let quiet = quiet_input(clip, &gamma, &ResizePolicy::bilinear(qh, qw)?)?;
    let busy = match config.busy_size {
        Some((bh, bw)) => bilinear_resize(&gamma, &ResizePolicy::bilinear(bh, bw)?)?,
        None => gamma,
    };
    Ok(DisentangledPair { busy, quiet })
}

/// Fraction of `sum(Γ²)` lying in columns within `radius` pixels of the
/// edge positions seen by each output frame. `edges[t]` is the first dark
/// column of input frame `t`, so the boundary sits at `edges[t] - 0.5`.
pub fn edge_energy_fraction(gamma: &VideoClip, edges: &[usize], radius: f64) -> f64 {
    let (t, c, h, w) = gamma.shape();
    let stride = edges.len() / t;
    let (mut near, mut total) = (0.0, 0.0);
    for j in 0..t {
        let window = &edges[j * stride..(j + 1) * stride];
        for ch in 0..c {
            let plane = gamma.plane(j, ch);
            for x in 0..w {
                let close = window
                    .iter()
                    .any(|&e| ((x as f64 + 0.5) - e as f64).abs() <= radius);
                let energy: f64 = (0..h).map(|y| plane[y * w + x].powi(2)).sum();
                total += energy;
                if close {
                    near += energy;
                }
            }
        }
    }
    if total == 0.0 {
        0.0
    } else {
        near / total
    }
}
