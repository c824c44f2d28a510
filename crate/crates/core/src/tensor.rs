//! Dense video tensors and the handful of primitives the filters and the
//! two-pathway network are built from.
//!
//! A [`VideoClip`] is stored frame-major: `data[((t * c + ch) * h + y) * w + x]`.
//! All primitives are pure; the per-plane loops run in parallel over
//! `(frame, channel)` planes but every output element is produced by exactly
//! one thread with a fixed summation order, so results are bit-reproducible
//! regardless of the thread count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{SpatialKernel, TemporalKernel};

/// A rank-4 `(time, channel, height, width)` block of reals.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoClip {
    t: usize,
    c: usize,
    h: usize,
    w: usize,
    data: Vec<f64>,
}

/// `(t, c, h, w)`.
pub type Shape = (usize, usize, usize, usize);

fn check_dims(t: usize, c: usize, h: usize, w: usize) -> Result<()> {
    if t == 0 || c == 0 || h == 0 || w == 0 {
        return Err(Error::Dimension(format!(
            "all dimensions must be >= 1, got ({t}, {c}, {h}, {w})"
        )));
    }
    Ok(())
}

impl VideoClip {
    /// Builds a clip from row-major data, rejecting length mismatches and
    /// non-finite values.
    pub fn new(t: usize, c: usize, h: usize, w: usize, data: Vec<f64>) -> Result<Self> {
        check_dims(t, c, h, w)?;
        let expected = t * c * h * w;
        if data.len() != expected {
            return Err(Error::Dimension(format!(
                "data length {} does not match {t}x{c}x{h}x{w} = {expected}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Validation(format!(
                "non-finite value {} at flat index {i}",
                data[i]
            )));
        }
        Ok(Self { t, c, h, w, data })
    }

    pub fn zeros(t: usize, c: usize, h: usize, w: usize) -> Result<Self> {
        check_dims(t, c, h, w)?;
        Ok(Self {
            t,
            c,
            h,
            w,
            data: vec![0.0; t * c * h * w],
        })
    }

    /// Builds a clip by evaluating `f(t, c, y, x)` at every position.
    pub fn from_fn(
        t: usize,
        c: usize,
        h: usize,
        w: usize,
        mut f: impl FnMut(usize, usize, usize, usize) -> f64,
    ) -> Result<Self> {
        check_dims(t, c, h, w)?;
        let mut data = Vec::with_capacity(t * c * h * w);
        for ti in 0..t {
            for ci in 0..c {
                for y in 0..h {
                    for x in 0..w {
                        data.push(f(ti, ci, y, x));
                    }
                }
            }
        }
        Self::new(t, c, h, w, data)
    }

    // Trusted constructor for primitives whose outputs are finite by construction.
    pub(crate) fn from_parts(shape: Shape, data: Vec<f64>) -> Self {
        let (t, c, h, w) = shape;
        debug_assert_eq!(data.len(), t * c * h * w);
        Self { t, c, h, w, data }
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn c(&self) -> usize {
        self.c
    }

    pub fn h(&self) -> usize {
        self.h
    }

    pub fn w(&self) -> usize {
        self.w
    }

    pub fn shape(&self) -> Shape {
        (self.t, self.c, self.h, self.w)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn index(&self, t: usize, c: usize, y: usize, x: usize) -> usize {
        ((t * self.c + c) * self.h + y) * self.w + x
    }

    #[inline]
    pub fn get(&self, t: usize, c: usize, y: usize, x: usize) -> f64 {
        self.data[self.index(t, c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, t: usize, c: usize, y: usize, x: usize, v: f64) {
        let i = self.index(t, c, y, x);
        self.data[i] = v;
    }

    /// The `h * w` plane for one frame and channel.
    pub fn plane(&self, t: usize, c: usize) -> &[f64] {
        let n = self.h * self.w;
        let start = (t * self.c + c) * n;
        &self.data[start..start + n]
    }

    /// The `c * h * w` block for one frame.
    pub fn frame(&self, t: usize) -> &[f64] {
        let n = self.c * self.h * self.w;
        &self.data[t * n..(t + 1) * n]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Largest absolute elementwise difference; shapes must agree.
    pub fn max_abs_diff(&self, other: &VideoClip) -> Result<f64> {
        self.expect_shape(other.shape())?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs())))
    }

    pub fn sum_squares(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> VideoClip {
        VideoClip::from_parts(self.shape(), self.data.iter().map(|&v| f(v)).collect())
    }

    /// Elementwise `f(self, other)`; shapes must agree.
    pub fn zip_with(&self, other: &VideoClip, f: impl Fn(f64, f64) -> f64) -> Result<VideoClip> {
        self.expect_shape(other.shape())?;
        Ok(VideoClip::from_parts(
            self.shape(),
            self.data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        ))
    }

    pub fn add(&self, other: &VideoClip) -> Result<VideoClip> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &VideoClip) -> Result<VideoClip> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn scale(&self, s: f64) -> VideoClip {
        self.map(|v| v * s)
    }

    pub(crate) fn expect_shape(&self, shape: Shape) -> Result<()> {
        if self.shape() != shape {
            return Err(Error::Dimension(format!(
                "shape mismatch: {:?} vs {:?}",
                self.shape(),
                shape
            )));
        }
        Ok(())
    }
}

/// Convenience wrapper matching the free-function style of the other primitives.
pub fn new_clip(t: usize, c: usize, h: usize, w: usize, data: Vec<f64>) -> Result<VideoClip> {
    VideoClip::new(t, c, h, w, data)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ResizeMode {
    /// Bilinear with half-pixel centers: `src = (dst + 0.5) * in / out - 0.5`,
    /// clamped to the valid range.
    #[default]
    Bilinear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ResizePolicy {
    pub mode: ResizeMode,
    pub out_h: usize,
    pub out_w: usize,
}

impl ResizePolicy {
    pub fn bilinear(out_h: usize, out_w: usize) -> Result<Self> {
        if out_h == 0 || out_w == 0 {
            return Err(Error::Config(format!(
                "resize target must be at least 1x1, got {out_h}x{out_w}"
            )));
        }
        Ok(Self {
            mode: ResizeMode::Bilinear,
            out_h,
            out_w,
        })
    }

    pub fn square(side: usize) -> Result<Self> {
        Self::bilinear(side, side)
    }
}

/// Source taps and weights along one axis: `(i0, i1, frac)` so that the
/// sample is `(1 - frac) * v[i0] + frac * v[i1]`.
fn axis_taps(in_len: usize, out_len: usize) -> Vec<(usize, usize, f64)> {
    let scale = in_len as f64 / out_len as f64;
    (0..out_len)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (in_len - 1) as f64);
            let i0 = src.floor() as usize;
            let i1 = (i0 + 1).min(in_len - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

pub fn bilinear_resize(clip: &VideoClip, policy: &ResizePolicy) -> Result<VideoClip> {
    let (t, c, h, w) = clip.shape();
    let ResizePolicy { out_h, out_w, .. } = *policy;
    if out_h == 0 || out_w == 0 {
        return Err(Error::Config("resize target must be at least 1x1".into()));
    }
    if (out_h, out_w) == (h, w) {
        return Ok(clip.clone());
    }
    let rows = axis_taps(h, out_h);
    let cols = axis_taps(w, out_w);
    let mut out = vec![0.0; t * c * out_h * out_w];
    out.par_chunks_mut(out_h * out_w)
        .enumerate()
        .for_each(|(p, dst)| {
            let src = &clip.data[p * h * w..(p + 1) * h * w];
            for (oy, &(y0, y1, fy)) in rows.iter().enumerate() {
                let r0 = &src[y0 * w..(y0 + 1) * w];
                let r1 = &src[y1 * w..(y1 + 1) * w];
                for (ox, &(x0, x1, fx)) in cols.iter().enumerate() {
                    let top = r0[x0] * (1.0 - fx) + r0[x1] * fx;
                    let bottom = r1[x0] * (1.0 - fx) + r1[x1] * fx;
                    dst[oy * out_w + ox] = top * (1.0 - fy) + bottom * fy;
                }
            }
        });
    Ok(VideoClip::from_parts((t, c, out_h, out_w), out))
}

pub const POOL_WINDOW: usize = 3;

/// Non-overlapping temporal mean over windows of three frames.
pub fn temporal_avg_pool(clip: &VideoClip) -> Result<VideoClip> {
    let (t, c, h, w) = clip.shape();
    if t % POOL_WINDOW != 0 {
        return Err(Error::Dimension(format!(
            "temporal pooling needs a frame count divisible by {POOL_WINDOW}, got {t}"
        )));
    }
    let frame = c * h * w;
    let out_t = t / POOL_WINDOW;
    let mut out = vec![0.0; out_t * frame];
    out.par_chunks_mut(frame).enumerate().for_each(|(j, dst)| {
        let base = j * POOL_WINDOW;
        let f0 = clip.frame(base);
        let f1 = clip.frame(base + 1);
        let f2 = clip.frame(base + 2);
        for (i, d) in dst.iter_mut().enumerate() {
            *d = (f0[i] + f1[i] + f2[i]) / 3.0;
        }
    });
    Ok(VideoClip::from_parts((out_t, c, h, w), out))
}

/// Same-size 2D cross-correlation of one plane with a `k x k` kernel under
/// zero padding. Taps are summed row-major per output element.
pub(crate) fn correlate_plane(src: &[f64], dst: &mut [f64], h: usize, w: usize, kernel: &[f64], k: usize) {
    let r = (k / 2) as isize;
    dst.fill(0.0);
    for y in 0..h {
        let out_row = &mut dst[y * w..(y + 1) * w];
        for i in 0..k {
            let sy = y as isize + i as isize - r;
            if sy < 0 || sy >= h as isize {
                continue;
            }
            let in_row = &src[sy as usize * w..(sy as usize + 1) * w];
            for j in 0..k {
                let wt = kernel[i * k + j];
                let dx = j as isize - r;
                // valid x range: 0 <= x + dx < w
                let x_lo = (-dx).max(0) as usize;
                let x_hi = (w as isize - dx).min(w as isize).max(0) as usize;
                for x in x_lo..x_hi {
                    out_row[x] += wt * in_row[(x as isize + dx) as usize];
                }
            }
        }
    }
}

/// Per-channel same-size 2D cross-correlation with zero padding.
pub fn channelwise_conv2d(clip: &VideoClip, bank: &SpatialKernel) -> Result<VideoClip> {
    let (t, c, h, w) = clip.shape();
    if bank.k() % 2 == 0 {
        return Err(Error::Config(format!("kernel side must be odd, got {}", bank.k())));
    }
    if bank.channels() != c {
        return Err(Error::Dimension(format!(
            "kernel bank has {} channels, clip has {c}",
            bank.channels()
        )));
    }
    let k = bank.k();
    let mut out = vec![0.0; t * c * h * w];
    out.par_chunks_mut(h * w).enumerate().for_each(|(p, dst)| {
        let ch = p % c;
        correlate_plane(&clip.data[p * h * w..(p + 1) * h * w], dst, h, w, bank.channel(ch), k);
    });
    Ok(VideoClip::from_parts((t, c, h, w), out))
}

/// How the 3-tap temporal kernel meets the ends of the sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TemporalBoundary {
    /// Windows `[3j, 3j+1, 3j+2]` tile the sequence exactly; requires stride 3.
    ValidAligned,
    /// Ends are replicated so the output keeps the input length; requires stride 1.
    Replicate,
}

impl TemporalBoundary {
    /// The boundary rule paired with a supported stride.
    pub fn for_stride(stride: usize) -> Result<Self> {
        match stride {
            3 => Ok(Self::ValidAligned),
            1 => Ok(Self::Replicate),
            s => Err(Error::Config(format!("unsupported temporal stride {s}"))),
        }
    }
}

/// Source frame indices feeding output frame `j` for the three taps.
pub(crate) fn temporal_taps(
    j: usize,
    t: usize,
    stride: usize,
    boundary: TemporalBoundary,
) -> [usize; 3] {
    match boundary {
        TemporalBoundary::ValidAligned => [j * stride, j * stride + 1, j * stride + 2],
        TemporalBoundary::Replicate => [j.saturating_sub(1), j, (j + 1).min(t - 1)],
    }
}

/// Output length of the temporal layer, validating the stride/boundary pair.
pub(crate) fn temporal_out_len(t: usize, stride: usize, boundary: TemporalBoundary) -> Result<usize> {
    match (stride, boundary) {
        (3, TemporalBoundary::ValidAligned) => {
            if t % 3 != 0 {
                return Err(Error::Dimension(format!(
                    "stride-3 temporal filtering needs a frame count divisible by 3, got {t}"
                )));
            }
            Ok(t / 3)
        }
        (1, TemporalBoundary::Replicate) => Ok(t),
        (s, b) => Err(Error::Config(format!(
            "unsupported temporal stride/boundary combination: stride {s} with {b:?}"
        ))),
    }
}

/// Per-channel 3-tap cross-correlation along time.
pub fn channelwise_conv1d_temporal(
    clip: &VideoClip,
    bank: &TemporalKernel,
    stride: usize,
    boundary: TemporalBoundary,
) -> Result<VideoClip> {
    let (t, c, h, w) = clip.shape();
    if bank.channels() != c {
        return Err(Error::Dimension(format!(
            "temporal bank has {} channels, clip has {c}",
            bank.channels()
        )));
    }
    let out_t = temporal_out_len(t, stride, boundary)?;
    let n = h * w;
    let mut out = vec![0.0; out_t * c * n];
    out.par_chunks_mut(n).enumerate().for_each(|(p, dst)| {
        let (j, ch) = (p / c, p % c);
        let taps = bank.channel(ch);
        let src = temporal_taps(j, t, stride, boundary);
        let planes = src.map(|ti| clip.plane(ti, ch));
        for (i, d) in dst.iter_mut().enumerate() {
            *d = taps[0] * planes[0][i] + taps[1] * planes[1][i] + taps[2] * planes[2][i];
        }
    });
    Ok(VideoClip::from_parts((out_t, c, h, w), out))
}
