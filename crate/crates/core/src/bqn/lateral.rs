//! Lateral connections between the busy (`x_f`) and quiet (`x_c`) pathways.
//!
//! Blocks are numbered from 1. For the alternating design, an even block
//! index fuses `BN(MBPM(x_c))` into the busy pathway and an odd index fuses
//! `BN(φ(x_f))` into the quiet pathway. When the two maps differ in size the
//! source is bilinearly resized to the destination before its branch runs.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::config::{LateralDesign, LateralSpec, Stage};
use super::layers::{pointwise, BnState};
use crate::error::{Error, Result};
use crate::kernels::NormMode;
use crate::mbpm::{mbpm_apply, MbpmConfig, MbpmParams};
use crate::tensor::{bilinear_resize, ResizePolicy, VideoClip};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pathway {
    Busy,
    Quiet,
}

/// Which pathways receive a fused branch at block `i`.
pub fn fusion_targets(design: LateralDesign, i: usize) -> &'static [Pathway] {
    let even = i % 2 == 0;
    match design {
        LateralDesign::Bplc | LateralDesign::LcV if even => &[Pathway::Busy],
        LateralDesign::Bplc | LateralDesign::LcV => &[Pathway::Quiet],
        LateralDesign::LcI => &[Pathway::Busy],
        LateralDesign::LcII => &[Pathway::Quiet],
        LateralDesign::LcIII => &[Pathway::Busy, Pathway::Quiet],
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LateralParams {
    pub i: usize,
    pub design: LateralDesign,
    pub stage: Stage,
    pub channels: usize,
    /// Stride-1 band-pass module on the quiet→busy branch; `None` means identity.
    pub mbpm: Option<MbpmParams>,
    /// `channels x channels` pointwise map on the busy→quiet branch.
    pub phi: Option<Vec<f64>>,
    pub bn_busy: BnState,
    pub bn_quiet: BnState,
}

impl LateralParams {
    /// Zero-initialized normalization on every branch; φ drawn from `rng`.
    pub fn init(spec: &LateralSpec, stage: Stage, channels: usize, rng: &mut impl Rng) -> Result<Self> {
        let targets = fusion_targets(spec.design, spec.i);
        let (sigma_default, k_default) = stage.lateral_defaults();
        let mbpm = if targets.contains(&Pathway::Busy) && spec.design != LateralDesign::LcV {
            let cfg = MbpmConfig {
                sigma: spec.sigma.unwrap_or(sigma_default),
                k: spec.k.unwrap_or(k_default),
                stride: 1,
                norm_mode: NormMode::Sum1,
            };
            Some(MbpmParams::init(channels, &cfg, false)?)
        } else {
            None
        };
        let phi = targets.contains(&Pathway::Quiet).then(|| {
            let normal = Normal::new(0.0, (1.0 / channels as f64).sqrt()).expect("finite std");
            (0..channels * channels).map(|_| normal.sample(rng)).collect()
        });
        Ok(Self {
            i: spec.i,
            design: spec.design,
            stage,
            channels,
            mbpm,
            phi,
            bn_busy: BnState::zero_init(channels),
            bn_quiet: BnState::zero_init(channels),
        })
    }

    pub fn targets(&self) -> &'static [Pathway] {
        fusion_targets(self.design, self.i)
    }

    /// Replaces both normalizations with identity maps (scale 1, unit
    /// statistics), exposing the raw branches.
    pub fn set_identity_bn(&mut self) {
        self.bn_busy = BnState::identity(self.channels);
        self.bn_quiet = BnState::identity(self.channels);
    }

    pub fn apply(&self, x_f: &VideoClip, x_c: &VideoClip) -> Result<(VideoClip, VideoClip)> {
        if x_f.c() != self.channels || x_c.c() != self.channels {
            return Err(Error::Config(format!(
                "lateral at block {} built for {} channels, got busy {} / quiet {}",
                self.i,
                self.channels,
                x_f.c(),
                x_c.c()
            )));
        }
        if x_f.t() != x_c.t() {
            return Err(Error::Dimension(format!(
                "pathways disagree in frame count: {} vs {}",
                x_f.t(),
                x_c.t()
            )));
        }
        let targets = self.targets();
        let y_f = if targets.contains(&Pathway::Busy) {
            let src = match_size(x_c, x_f)?;
            let branch = match &self.mbpm {
                Some(p) => mbpm_apply(&src, p)?,
                None if self.design == LateralDesign::LcV => src,
                None => {
                    return Err(Error::Config(format!(
                        "lateral at block {} has no band-pass weights",
                        self.i
                    )))
                }
            };
            self.bn_busy.forward(&branch)?.add(x_f)?
        } else {
            x_f.clone()
        };
        let y_c = if targets.contains(&Pathway::Quiet) {
            let phi = self.phi.as_ref().ok_or_else(|| {
                Error::Config(format!("lateral at block {} has no φ weights", self.i))
            })?;
            let src = match_size(x_f, x_c)?;
            self.bn_quiet.forward(&pointwise(&src, phi, self.channels)?)?.add(x_c)?
        } else {
            x_c.clone()
        };
        Ok((y_f, y_c))
    }
}

/// `src` resized to `dst`'s spatial size when they differ.
fn match_size(src: &VideoClip, dst: &VideoClip) -> Result<VideoClip> {
    if (src.h(), src.w()) == (dst.h(), dst.w()) {
        Ok(src.clone())
    } else {
        bilinear_resize(src, &ResizePolicy::bilinear(dst.h(), dst.w())?)
    }
}

/// The alternating band-pass lateral connection.
pub fn bplc(x_f: &VideoClip, x_c: &VideoClip, params: &LateralParams) -> Result<(VideoClip, VideoClip)> {
    if params.design != LateralDesign::Bplc {
        return Err(Error::Config(format!("expected BPLC weights, got {:?}", params.design)));
    }
    params.apply(x_f, x_c)
}

pub fn lc_variant(x_f: &VideoClip, x_c: &VideoClip, params: &LateralParams) -> Result<(VideoClip, VideoClip)> {
    params.apply(x_f, x_c)
}
