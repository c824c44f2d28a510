//! Per-frame 2D layers for the toy residual pathways.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::VideoClip;

/// Dense `cout x cin x k x k` convolution (cross-correlation), zero padding
/// of `k / 2`, no bias.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    pub weights: Vec<f64>,
}

impl Conv2d {
    /// He-normal initialization.
    pub fn init(cin: usize, cout: usize, k: usize, stride: usize, rng: &mut impl Rng) -> Self {
        let std = (2.0 / (cin * k * k) as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("finite std");
        Self {
            cin,
            cout,
            k,
            stride,
            weights: (0..cout * cin * k * k).map(|_| normal.sample(rng)).collect(),
        }
    }

    pub fn out_size(&self, n: usize) -> usize {
        (n + 2 * (self.k / 2) - self.k) / self.stride + 1
    }

    pub fn forward(&self, x: &VideoClip) -> Result<VideoClip> {
        let (t, c, h, w) = x.shape();
        if c != self.cin {
            return Err(Error::Dimension(format!(
                "conv expects {} channels, got {c}",
                self.cin
            )));
        }
        let (oh, ow) = (self.out_size(h), self.out_size(w));
        let (k, s, r) = (self.k, self.stride, (self.k / 2) as isize);
        let mut out = vec![0.0; t * self.cout * oh * ow];
        out.par_chunks_mut(oh * ow).enumerate().for_each(|(p, dst)| {
            let (ti, co) = (p / self.cout, p % self.cout);
            for ci in 0..c {
                let src = x.plane(ti, ci);
                let kern = &self.weights[(co * self.cin + ci) * k * k..(co * self.cin + ci + 1) * k * k];
                for oy in 0..oh {
                    for i in 0..k {
                        let sy = (oy * s) as isize + i as isize - r;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        let row = &src[sy as usize * w..(sy as usize + 1) * w];
                        for j in 0..k {
                            let wt = kern[i * k + j];
                            for ox in 0..ow {
                                let sx = (ox * s) as isize + j as isize - r;
                                if sx >= 0 && sx < w as isize {
                                    dst[oy * ow + ox] += wt * row[sx as usize];
                                }
                            }
                        }
                    }
                }
            }
        });
        Ok(VideoClip::from_parts((t, self.cout, oh, ow), out))
    }
}

/// Inference-mode batch normalization from stored statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BnState {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub eps: f64,
}

impl BnState {
    pub const EPS: f64 = 1e-5;

    fn with_scale(c: usize, gamma: f64) -> Self {
        Self {
            gamma: vec![gamma; c],
            beta: vec![0.0; c],
            running_mean: vec![0.0; c],
            running_var: vec![1.0; c],
            eps: Self::EPS,
        }
    }

    /// Scale 1, shift 0, zero mean, unit variance.
    pub fn identity(c: usize) -> Self {
        let mut bn = Self::with_scale(c, 1.0);
        bn.eps = 0.0;
        bn
    }

    pub fn standard(c: usize) -> Self {
        Self::with_scale(c, 1.0)
    }

    /// Scale 0: the normalized branch contributes nothing until trained.
    pub fn zero_init(c: usize) -> Self {
        Self::with_scale(c, 0.0)
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    pub fn forward(&self, x: &VideoClip) -> Result<VideoClip> {
        let (t, c, h, w) = x.shape();
        if c != self.channels() {
            return Err(Error::Dimension(format!(
                "batch norm has {} channels, input has {c}",
                self.channels()
            )));
        }
        let scale: Vec<f64> = (0..c)
            .map(|ch| self.gamma[ch] / (self.running_var[ch] + self.eps).sqrt())
            .collect();
        let mut out = x.clone();
        let n = h * w;
        for ti in 0..t {
            for ch in 0..c {
                let start = (ti * c + ch) * n;
                for v in &mut out.data_mut()[start..start + n] {
                    *v = (*v - self.running_mean[ch]) * scale[ch] + self.beta[ch];
                }
            }
        }
        Ok(out)
    }
}

pub fn relu(x: &VideoClip) -> VideoClip {
    x.map(|v| v.max(0.0))
}

/// `cout x cin` pointwise channel mixing.
pub fn pointwise(x: &VideoClip, weights: &[f64], cout: usize) -> Result<VideoClip> {
    let (t, c, h, w) = x.shape();
    if weights.len() != cout * c {
        return Err(Error::Config(format!(
            "pointwise map has {} weights, expected {cout}x{c}",
            weights.len()
        )));
    }
    VideoClip::from_fn(t, cout, h, w, |ti, co, y, xx| {
        (0..c).map(|ci| weights[co * c + ci] * x.get(ti, ci, y, xx)).sum()
    })
}

/// Mean over time and space per channel.
pub fn global_avg_pool(x: &VideoClip) -> Vec<f64> {
    let (t, c, h, w) = x.shape();
    let n = (t * h * w) as f64;
    (0..c)
        .map(|ch| (0..t).map(|ti| x.plane(ti, ch).iter().sum::<f64>()).sum::<f64>() / n)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub inputs: usize,
    pub outputs: usize,
    /// Row-major `outputs x inputs`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Linear {
    pub fn init(inputs: usize, outputs: usize, rng: &mut impl Rng) -> Self {
        let normal = Normal::new(0.0, (1.0 / inputs as f64).sqrt()).expect("finite std");
        Self {
            inputs,
            outputs,
            weights: (0..inputs * outputs).map(|_| normal.sample(rng)).collect(),
            bias: vec![0.0; outputs],
        }
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.inputs {
            return Err(Error::Dimension(format!(
                "classifier expects {} features, got {}",
                self.inputs,
                x.len()
            )));
        }
        Ok((0..self.outputs)
            .map(|o| {
                self.bias[o]
                    + self.weights[o * self.inputs..(o + 1) * self.inputs]
                        .iter()
                        .zip(x)
                        .map(|(w, v)| w * v)
                        .sum::<f64>()
            })
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualBlock {
    pub conv1: Conv2d,
    pub bn1: BnState,
    pub conv2: Conv2d,
    pub bn2: BnState,
    /// 1x1 projection when the shape changes.
    pub shortcut: Option<(Conv2d, BnState)>,
}

impl ResidualBlock {
    pub fn init(cin: usize, cout: usize, stride: usize, rng: &mut impl Rng) -> Self {
        let conv1 = Conv2d::init(cin, cout, 3, stride, rng);
        let conv2 = Conv2d::init(cout, cout, 3, 1, rng);
        let shortcut = (cin != cout || stride != 1)
            .then(|| (Conv2d::init(cin, cout, 1, stride, rng), BnState::standard(cout)));
        Self {
            conv1,
            bn1: BnState::standard(cout),
            conv2,
            bn2: BnState::standard(cout),
            shortcut,
        }
    }

    pub fn forward(&self, x: &VideoClip) -> Result<VideoClip> {
        let y = relu(&self.bn1.forward(&self.conv1.forward(x)?)?);
        let y = self.bn2.forward(&self.conv2.forward(&y)?)?;
        let skip = match &self.shortcut {
            Some((conv, bn)) => bn.forward(&conv.forward(x)?)?,
            None => x.clone(),
        };
        Ok(relu(&y.add(&skip)?))
    }
}
