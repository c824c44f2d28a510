//! The motion band-pass module: a per-channel spatial LoG layer followed by a
//! per-channel 3-tap temporal high-pass layer.
//!
//! With stride 3 the module turns every three consecutive frames into one
//! output frame (the busy stream); with stride 1 and replicated ends it keeps
//! the temporal length, which is how the lateral connections use it.
//!
//! Both layers are linear, so the backward pass is two transposed
//! convolutions. The cache kept by a trainable forward holds the input and
//! the spatially filtered intermediate.

mod direct;
mod gradcheck;

pub use direct::bandpass_direct;
pub use gradcheck::{finite_diff_check, FdReport, InputProbe, FD_EPSILON};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{log_kernel, NormMode, SpatialKernel, TemporalKernel};
use crate::tensor::{
    channelwise_conv1d_temporal, channelwise_conv2d, correlate_plane, temporal_out_len,
    temporal_taps, Shape, TemporalBoundary, VideoClip,
};

/// Filter settings for one module instance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MbpmConfig {
    pub sigma: f64,
    pub k: usize,
    pub stride: usize,
    #[serde(default)]
    pub norm_mode: NormMode,
}

impl MbpmConfig {
    /// Busy-stream distiller defaults: σ = 1.1, 9x9, stride 3.
    pub const BUSY: MbpmConfig = MbpmConfig {
        sigma: 1.1,
        k: 9,
        stride: 3,
        norm_mode: NormMode::Sum1,
    };
}

impl Default for MbpmConfig {
    fn default() -> Self {
        Self::BUSY
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MbpmParams {
    pub spatial: SpatialKernel,
    pub temporal: TemporalKernel,
    pub trainable: bool,
}

impl MbpmParams {
    pub fn new(spatial: SpatialKernel, temporal: TemporalKernel, trainable: bool) -> Result<Self> {
        if spatial.channels() != temporal.channels() {
            return Err(Error::Dimension(format!(
                "spatial bank has {} channels, temporal bank has {}",
                spatial.channels(),
                temporal.channels()
            )));
        }
        Ok(Self {
            spatial,
            temporal,
            trainable,
        })
    }

    /// Freshly initialized LoG + high-pass banks for `channels` channels.
    pub fn init(channels: usize, config: &MbpmConfig, trainable: bool) -> Result<Self> {
        Self::new(
            log_kernel(config.sigma, config.k, channels, config.norm_mode)?,
            TemporalKernel::highpass(channels, config.stride)?,
            trainable,
        )
    }

    pub fn channels(&self) -> usize {
        self.spatial.channels()
    }

    pub fn k(&self) -> usize {
        self.spatial.k()
    }

    pub fn stride(&self) -> usize {
        self.temporal.stride()
    }

    pub fn boundary(&self) -> TemporalBoundary {
        TemporalBoundary::for_stride(self.stride()).expect("stride validated by TemporalKernel")
    }

    pub fn output_shape(&self, input: Shape) -> Result<Shape> {
        let (t, c, h, w) = input;
        if c != self.channels() {
            return Err(Error::Dimension(format!(
                "module has {} channels, input has {c}",
                self.channels()
            )));
        }
        Ok((temporal_out_len(t, self.stride(), self.boundary())?, c, h, w))
    }

    /// Plain gradient-descent update of every tap.
    pub fn apply_gradients(&mut self, grads: &MbpmGradients, lr: f64) {
        for c in 0..self.channels() {
            for (w, g) in self.spatial.channel_mut(c).iter_mut().zip(&grads.d_spatial[c]) {
                *w -= lr * g;
            }
            for (w, g) in self.temporal.channel_mut(c).iter_mut().zip(&grads.d_temporal[c]) {
                *w -= lr * g;
            }
        }
    }
}

/// Intermediates retained by a trainable forward pass.
#[derive(Debug, Clone)]
pub struct MbpmCache {
    input: VideoClip,
    spatial_out: VideoClip,
}

#[derive(Debug, Clone)]
pub struct MbpmForward {
    pub gamma: VideoClip,
    pub cache: Option<MbpmCache>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MbpmGradients {
    /// Per channel, row-major `k * k`.
    pub d_spatial: Vec<Vec<f64>>,
    pub d_temporal: Vec<[f64; 3]>,
    pub d_input: VideoClip,
}

/// Runs the two channel-wise layers; keeps a cache when `params.trainable`.
pub fn mbpm_forward(clip: &VideoClip, params: &MbpmParams) -> Result<MbpmForward> {
    params.output_shape(clip.shape())?;
    let spatial_out = channelwise_conv2d(clip, &params.spatial)?;
    let gamma = channelwise_conv1d_temporal(
        &spatial_out,
        &params.temporal,
        params.stride(),
        params.boundary(),
    )?;
    let cache = params.trainable.then(|| MbpmCache {
        input: clip.clone(),
        spatial_out,
    });
    Ok(MbpmForward { gamma, cache })
}

/// Forward pass without caching, for inference-only callers.
pub fn mbpm_apply(clip: &VideoClip, params: &MbpmParams) -> Result<VideoClip> {
    params.output_shape(clip.shape())?;
    let spatial_out = channelwise_conv2d(clip, &params.spatial)?;
    channelwise_conv1d_temporal(&spatial_out, &params.temporal, params.stride(), params.boundary())
}

/// Gradients of a scalar loss given `grad_output = dL/dΓ`.
pub fn mbpm_backward(
    grad_output: &VideoClip,
    params: &MbpmParams,
    cache: Option<&MbpmCache>,
) -> Result<MbpmGradients> {
    let cache = cache.ok_or_else(|| {
        Error::State("backward needs the cache from a trainable forward pass".into())
    })?;
    let (t, c, h, w) = cache.input.shape();
    grad_output.expect_shape(params.output_shape((t, c, h, w))?)?;
    let (stride, boundary) = (params.stride(), params.boundary());
    let (k, n) = (params.k(), h * w);
    let out_t = grad_output.t();

    // Per channel: scatter through the temporal taps, then the two spatial
    // gradients. Channels are independent.
    let per_channel: Vec<(Vec<f64>, [f64; 3], Vec<f64>)> = (0..c)
        .into_par_iter()
        .map(|ch| {
            let taps = params.temporal.channel(ch);
            let mut d_temporal = [0.0; 3];
            // dL/d(spatial_out) for this channel, all frames
            let mut g_mid = vec![0.0; t * n];
            for j in 0..out_t {
                let g = grad_output.plane(j, ch);
                for (m, &src) in temporal_taps(j, t, stride, boundary).iter().enumerate() {
                    let y = cache.spatial_out.plane(src, ch);
                    d_temporal[m] += g.iter().zip(y).map(|(a, b)| a * b).sum::<f64>();
                    let dst = &mut g_mid[src * n..(src + 1) * n];
                    for (d, gv) in dst.iter_mut().zip(g) {
                        *d += taps[m] * gv;
                    }
                }
            }

            let r = (k / 2) as isize;
            let mut d_spatial = vec![0.0; k * k];
            for ti in 0..t {
                let g = &g_mid[ti * n..(ti + 1) * n];
                let x = cache.input.plane(ti, ch);
                for i in 0..k {
                    for jj in 0..k {
                        let (dy, dx) = (i as isize - r, jj as isize - r);
                        let mut acc = 0.0;
                        for yy in 0..h as isize {
                            let sy = yy + dy;
                            if sy < 0 || sy >= h as isize {
                                continue;
                            }
                            let x_lo = (-dx).max(0);
                            let x_hi = (w as isize - dx).min(w as isize);
                            for xx in x_lo..x_hi {
                                acc += g[(yy * w as isize + xx) as usize]
                                    * x[(sy * w as isize + xx + dx) as usize];
                            }
                        }
                        d_spatial[i * k + jj] += acc;
                    }
                }
            }

            let kernel = params.spatial.channel(ch);
            let flipped: Vec<f64> = kernel.iter().rev().copied().collect();
            let mut d_input = vec![0.0; t * n];
            for ti in 0..t {
                correlate_plane(
                    &g_mid[ti * n..(ti + 1) * n],
                    &mut d_input[ti * n..(ti + 1) * n],
                    h,
                    w,
                    &flipped,
                    k,
                );
            }
            (d_spatial, d_temporal, d_input)
        })
        .collect();

    let mut d_input = vec![0.0; t * c * n];
    let mut d_spatial = Vec::with_capacity(c);
    let mut d_temporal = Vec::with_capacity(c);
    for (ch, (ds, dt, di)) in per_channel.into_iter().enumerate() {
        for ti in 0..t {
            let dst = ((ti * c + ch) * n)..((ti * c + ch + 1) * n);
            d_input[dst].copy_from_slice(&di[ti * n..(ti + 1) * n]);
        }
        d_spatial.push(ds);
        d_temporal.push(dt);
    }
    Ok(MbpmGradients {
        d_spatial,
        d_temporal,
        d_input: VideoClip::from_parts((t, c, h, w), d_input),
    })
}

/// `c·k² + 3c`.
pub fn count_params(params: &MbpmParams) -> u64 {
    let (c, k) = (params.channels() as u64, params.k() as u64);
    c * k * k + c * 3
}

/// Multiply-accumulates for one forward pass over an input of `shape`:
/// `t·c·h·w·k²` spatial plus `t'·c·h·w·3` temporal.
pub fn count_macs(params: &MbpmParams, shape: Shape) -> Result<u64> {
    let (out_t, c, h, w) = params.output_shape(shape)?;
    Ok(mac_breakdown(shape.0, out_t, c, h, w, params.k()).total())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MacBreakdown {
    pub spatial: u64,
    pub temporal: u64,
}

impl MacBreakdown {
    pub fn total(&self) -> u64 {
        self.spatial + self.temporal
    }
}

pub fn mac_breakdown(t: usize, out_t: usize, c: usize, h: usize, w: usize, k: usize) -> MacBreakdown {
    let plane = (c * h * w) as u64;
    MacBreakdown {
        spatial: t as u64 * plane * (k * k) as u64,
        temporal: out_t as u64 * plane * 3,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::NormMode;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit_clip(rng: &mut ChaCha8Rng, t: usize, c: usize, h: usize, w: usize) -> VideoClip {
        VideoClip::from_fn(t, c, h, w, |_, _, _, _| rng.random_range(0.0..1.0)).unwrap()
    }

    fn cfg(sigma: f64, k: usize, stride: usize) -> MbpmConfig {
        MbpmConfig {
            sigma,
            k,
            stride,
            norm_mode: NormMode::Sum1,
        }
    }

    #[test]
    fn static_clip_is_annihilated() {
        let frame: Vec<f64> = (0..3 * 16 * 16).map(|i| ((i * 37) % 101) as f64 / 100.0).collect();
        let clip = VideoClip::from_fn(9, 3, 16, 16, |_, c, y, x| frame[(c * 16 + y) * 16 + x]).unwrap();
        for stride in [1, 3] {
            let p = MbpmParams::init(3, &cfg(1.1, 9, stride), false).unwrap();
            let g = mbpm_forward(&clip, &p).unwrap().gamma;
            assert!(g.max_abs() <= 1e-6, "stride {stride}: {}", g.max_abs());
        }
    }

    #[test]
    fn stride_three_reduces_nine_to_three() {
        let p = MbpmParams::init(3, &MbpmConfig::BUSY, false).unwrap();
        let clip = VideoClip::zeros(9, 3, 8, 8).unwrap();
        assert_eq!(mbpm_forward(&clip, &p).unwrap().gamma.t(), 3);
        let clip = VideoClip::zeros(24, 3, 8, 8).unwrap();
        assert_eq!(mbpm_forward(&clip, &p).unwrap().gamma.t(), 8);
        let p1 = MbpmParams::init(3, &cfg(0.9, 7, 1), false).unwrap();
        assert_eq!(mbpm_forward(&clip, &p1).unwrap().gamma.t(), 24);
    }

    #[test]
    fn separable_matches_direct() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let clip = unit_clip(&mut rng, 9, 3, 32, 32);
        let p = MbpmParams::init(3, &MbpmConfig::BUSY, false).unwrap();
        let fast = mbpm_forward(&clip, &p).unwrap().gamma;
        let slow = bandpass_direct(&clip, 1.1, 9, 3, NormMode::Sum1).unwrap();
        assert!(fast.max_abs_diff(&slow).unwrap() <= 1e-5);

        let clip = unit_clip(&mut rng, 5, 2, 12, 10);
        let p = MbpmParams::init(2, &cfg(0.9, 7, 1), false).unwrap();
        let fast = mbpm_forward(&clip, &p).unwrap().gamma;
        let slow = bandpass_direct(&clip, 0.9, 7, 1, NormMode::Sum1).unwrap();
        assert!(fast.max_abs_diff(&slow).unwrap() <= 1e-5);
    }

    #[test]
    fn cache_only_when_trainable() {
        let clip = VideoClip::zeros(3, 1, 4, 4).unwrap();
        let frozen = MbpmParams::init(1, &cfg(1.1, 3, 3), false).unwrap();
        let fwd = mbpm_forward(&clip, &frozen).unwrap();
        assert!(fwd.cache.is_none());
        assert!(matches!(
            mbpm_backward(&fwd.gamma, &frozen, fwd.cache.as_ref()),
            Err(Error::State(_))
        ));
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let clip = unit_clip(&mut rng, 6, 2, 8, 8);
        let p = MbpmParams::init(2, &cfg(1.1, 5, 3), true).unwrap();
        let fwd = mbpm_forward(&clip, &p).unwrap();
        let zero = VideoClip::zeros(2, 2, 8, 8).unwrap();
        let g = mbpm_backward(&zero, &p, fwd.cache.as_ref()).unwrap();
        assert!(g.d_spatial.iter().flatten().all(|&v| v == 0.0));
        assert!(g.d_temporal.iter().flatten().all(|&v| v == 0.0));
        assert_eq!(g.d_input.max_abs(), 0.0);
    }

    #[test]
    fn input_gradient_of_sum_with_delta_kernel() {
        // With a 1x1-equivalent (delta) spatial kernel, d sum(Γ) / dI at
        // frame 3j+m is the temporal tap m, and for stride 1 with replicated
        // ends the edge frames collect the taps that point past the ends.
        let mut delta = vec![0.0; 9];
        delta[4] = 1.0;
        let spatial = SpatialKernel::from_weights(3, vec![delta]).unwrap();
        let taps = [0.2, -0.7, 1.3];
        let clip = VideoClip::from_fn(6, 1, 3, 3, |t, _, y, x| (t + y * 3 + x) as f64 * 0.01).unwrap();

        let p = MbpmParams::new(spatial.clone(), TemporalKernel::from_taps(vec![taps], 3).unwrap(), true).unwrap();
        let fwd = mbpm_forward(&clip, &p).unwrap();
        let ones = fwd.gamma.map(|_| 1.0);
        let g = mbpm_backward(&ones, &p, fwd.cache.as_ref()).unwrap();
        for t in 0..6 {
            for v in g.d_input.frame(t) {
                assert!((v - taps[t % 3]).abs() < 1e-12);
            }
        }

        let p = MbpmParams::new(spatial, TemporalKernel::from_taps(vec![taps], 1).unwrap(), true).unwrap();
        let fwd = mbpm_forward(&clip, &p).unwrap();
        let ones = fwd.gamma.map(|_| 1.0);
        let g = mbpm_backward(&ones, &p, fwd.cache.as_ref()).unwrap();
        let s: f64 = taps.iter().sum();
        let want = [taps[0] + taps[1] + taps[0], s, s, s, s, taps[1] + taps[2] + taps[2]];
        for t in 0..6 {
            for v in g.d_input.frame(t) {
                assert!((v - want[t]).abs() < 1e-12, "frame {t}: {v} vs {}", want[t]);
            }
        }
    }

    #[test]
    fn counts_match_closed_form() {
        let p = MbpmParams::init(3, &MbpmConfig::BUSY, false).unwrap();
        assert_eq!(count_params(&p), 252);
        let macs = count_macs(&p, (24, 3, 224, 224)).unwrap();
        assert_eq!(macs, 24 * 3 * 224 * 224 * 81 + 8 * 3 * 224 * 224 * 3);

        let tiny = MbpmParams::new(
            SpatialKernel::from_weights(3, vec![vec![0.0; 9]]).unwrap(),
            TemporalKernel::highpass(1, 3).unwrap(),
            false,
        )
        .unwrap();
        assert_eq!(count_params(&tiny), 12);
        assert_eq!(count_macs(&tiny, (3, 1, 1, 1)).unwrap(), 30);
    }

    #[test]
    fn gradient_step_updates_taps() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let clip = unit_clip(&mut rng, 3, 1, 6, 6);
        let mut p = MbpmParams::init(1, &cfg(1.1, 3, 3), true).unwrap();
        let before = p.clone();
        let fwd = mbpm_forward(&clip, &p).unwrap();
        let g = mbpm_backward(&fwd.gamma.scale(2.0), &p, fwd.cache.as_ref()).unwrap();
        p.apply_gradients(&g, 1e-3);
        assert_ne!(p, before);
        let loss_before = fwd.gamma.sum_squares();
        let loss_after = mbpm_apply(&clip, &p).unwrap().sum_squares();
        assert!(loss_after < loss_before);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn forward_is_linear(seed in any::<u64>(), a in -2.0f64..2.0, b in -2.0f64..2.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = unit_clip(&mut rng, 6, 2, 10, 10);
            let y = unit_clip(&mut rng, 6, 2, 10, 10);
            let p = MbpmParams::init(2, &cfg(1.1, 5, 3), false).unwrap();
            let lhs = mbpm_apply(&x.scale(a).add(&y.scale(b)).unwrap(), &p).unwrap();
            let rhs = mbpm_apply(&x, &p).unwrap().scale(a)
                .add(&mbpm_apply(&y, &p).unwrap().scale(b)).unwrap();
            prop_assert!(lhs.max_abs_diff(&rhs).unwrap() <= 1e-6);
        }

        #[test]
        fn output_length_follows_stride(n in 1usize..6, stride in prop::sample::select(vec![1usize, 3])) {
            let p = MbpmParams::init(1, &cfg(1.1, 3, stride), false).unwrap();
            let clip = VideoClip::zeros(3 * n, 1, 4, 4).unwrap();
            let g = mbpm_apply(&clip, &p).unwrap();
            prop_assert_eq!(g.t(), 3 * n / stride);
        }
    }
}
