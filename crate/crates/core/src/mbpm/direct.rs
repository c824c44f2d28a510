use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::kernels::{NormMode, MIN_NORMALIZER};
use crate::tensor::VideoClip;

/// Reference band-pass filter with untrained weights, written as plain nested
/// loops: for every output position it samples the LoG, correlates it with
/// each of the three contributing frames and combines them with
/// `2/3 · centre − 1/3 · neighbours`.
///
/// Shares no filtering code with [`super::mbpm_forward`]; it is the oracle
/// the separable path is checked against and the baseline of the benchmark.
pub fn bandpass_direct(
    clip: &VideoClip,
    sigma: f64,
    k: usize,
    stride: usize,
    norm_mode: NormMode,
) -> Result<VideoClip> {
    if !(sigma > 0.0) || k < 3 || k % 2 == 0 {
        return Err(Error::Config(format!("invalid LoG settings sigma={sigma} k={k}")));
    }
    let (t, c, h, w) = clip.shape();
    let out_t = match stride {
        3 if t % 3 == 0 => t / 3,
        3 => {
            return Err(Error::Dimension(format!(
                "stride 3 needs a frame count divisible by 3, got {t}"
            )))
        }
        1 => t,
        s => return Err(Error::Config(format!("unsupported temporal stride {s}"))),
    };

    let r = (k / 2) as i64;
    let mut stencil = vec![0.0; k * k];
    for (i, dy) in (-r..=r).enumerate() {
        for (j, dx) in (-r..=r).enumerate() {
            let rr = (dx * dx + dy * dy) as f64 / (2.0 * sigma * sigma);
            stencil[i * k + j] = -(-rr).exp() / (PI * sigma * sigma * sigma * sigma) * (1.0 - rr);
        }
    }
    let norm = match norm_mode {
        NormMode::Sum1 => {
            let s: f64 = stencil.iter().sum();
            if s.abs() < MIN_NORMALIZER {
                return Err(Error::Normalization {
                    sum: s,
                    threshold: MIN_NORMALIZER,
                });
            }
            s
        }
        NormMode::L1 => stencil.iter().map(|v| v.abs()).sum(),
        NormMode::None => 1.0,
    };
    for v in &mut stencil {
        *v /= norm;
    }

    let mut out = VideoClip::zeros(out_t, c, h, w)?;
    for ot in 0..out_t {
        let (centre, prev, next) = if stride == 3 {
            (3 * ot + 1, 3 * ot, 3 * ot + 2)
        } else {
            (ot, ot.saturating_sub(1), (ot + 1).min(t - 1))
        };
        for ch in 0..c {
            for y in 0..h {
                for x in 0..w {
                    let mut acc = 0.0;
                    for (frame, weight) in [(prev, -1.0 / 3.0), (centre, 2.0 / 3.0), (next, -1.0 / 3.0)] {
                        let mut filtered = 0.0;
                        for i in 0..k {
                            for j in 0..k {
                                let sy = y as i64 + i as i64 - r;
                                let sx = x as i64 + j as i64 - r;
                                if sy < 0 || sx < 0 || sy >= h as i64 || sx >= w as i64 {
                                    continue;
                                }
                                filtered += stencil[i * k + j]
                                    * clip.get(frame, ch, sy as usize, sx as usize);
                            }
                        }
                        acc += weight * filtered;
                    }
                    out.set(ot, ch, y, x, acc);
                }
            }
        }
    }
    Ok(out)
}
