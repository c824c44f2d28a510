//! Filter banks for the motion band-pass module: the sampled Laplacian of
//! Gaussian used spatially and the 3-tap temporal high-pass.

use std::f64::consts::PI;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Raw sums smaller than this cannot be used as a `Sum1` divisor.
pub const MIN_NORMALIZER: f64 = 1e-8;

/// Initial temporal taps: a discrete second difference scaled to `[-1/3, 2/3, -1/3]`.
pub const HIGHPASS_TAPS: [f64; 3] = [-1.0 / 3.0, 2.0 / 3.0, -1.0 / 3.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum NormMode {
    /// Divide by the signed sum of the sampled taps.
    #[default]
    Sum1,
    /// Divide by the sum of absolute values.
    L1,
    /// Keep the raw samples.
    None,
}

impl std::str::FromStr for NormMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sum1" => Ok(NormMode::Sum1),
            "l1" => Ok(NormMode::L1),
            "none" => Ok(NormMode::None),
            other => Err(Error::Config(format!("unknown norm mode {other:?}"))),
        }
    }
}

/// Continuous Laplacian of Gaussian at offset `(x, y)`:
/// `-exp(-r²/2σ²) / (πσ⁴) · (1 - r²/2σ²)`.
pub fn log_value(sigma: f64, x: f64, y: f64) -> f64 {
    let q = (x * x + y * y) / (2.0 * sigma * sigma);
    -(-q).exp() / (PI * sigma.powi(4)) * (1.0 - q)
}

/// Per-channel `k x k` spatial weights.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialKernel {
    k: usize,
    sigma: Option<f64>,
    norm_mode: Option<NormMode>,
    weights: Vec<Vec<f64>>,
}

impl SpatialKernel {
    /// Wraps arbitrary per-channel weights (row-major, `k * k` each).
    pub fn from_weights(k: usize, weights: Vec<Vec<f64>>) -> Result<Self> {
        if k % 2 == 0 || k == 0 {
            return Err(Error::Config(format!("kernel side must be odd, got {k}")));
        }
        if weights.is_empty() {
            return Err(Error::Config("kernel bank needs at least one channel".into()));
        }
        for (c, w) in weights.iter().enumerate() {
            if w.len() != k * k {
                return Err(Error::Dimension(format!(
                    "channel {c} has {} weights, expected {}",
                    w.len(),
                    k * k
                )));
            }
            if w.iter().any(|v| !v.is_finite()) {
                return Err(Error::Validation(format!("channel {c} has non-finite weights")));
            }
        }
        Ok(Self {
            k,
            sigma: None,
            norm_mode: None,
            weights,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn channels(&self) -> usize {
        self.weights.len()
    }

    pub fn sigma(&self) -> Option<f64> {
        self.sigma
    }

    pub fn norm_mode(&self) -> Option<NormMode> {
        self.norm_mode
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        &self.weights[c]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f64] {
        &mut self.weights[c]
    }

    pub fn weights(&self) -> &[Vec<f64>] {
        &self.weights
    }

    pub fn to_json(&self) -> SpatialKernelJson {
        SpatialKernelJson {
            sigma: self.sigma,
            k: self.k,
            channels: self.channels(),
            norm_mode: self.norm_mode,
            weights: self
                .weights
                .iter()
                .map(|w| w.chunks(self.k).map(<[f64]>::to_vec).collect())
                .collect(),
        }
    }

    pub fn from_json(json: &SpatialKernelJson) -> Result<Self> {
        if json.weights.len() != json.channels {
            return Err(Error::Format(format!(
                "kernel declares {} channels but carries {}",
                json.channels,
                json.weights.len()
            )));
        }
        let flat = json
            .weights
            .iter()
            .map(|rows| {
                if rows.len() != json.k || rows.iter().any(|r| r.len() != json.k) {
                    return Err(Error::Format(format!("kernel rows are not {0}x{0}", json.k)));
                }
                Ok(rows.concat())
            })
            .collect::<Result<Vec<_>>>()?;
        let mut kernel = Self::from_weights(json.k, flat)?;
        kernel.sigma = json.sigma;
        kernel.norm_mode = json.norm_mode;
        Ok(kernel)
    }
}

/// JSON layout of a spatial kernel: `weights[c][row][col]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpatialKernelJson {
    pub sigma: Option<f64>,
    pub k: usize,
    pub channels: usize,
    pub norm_mode: Option<NormMode>,
    pub weights: Vec<Vec<Vec<f64>>>,
}

/// Samples the LoG on the integer grid `[-(k-1)/2, (k-1)/2]²`, normalizes it
/// and replicates it across `c` channels.
pub fn log_kernel(sigma: f64, k: usize, c: usize, norm_mode: NormMode) -> Result<SpatialKernel> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::Config(format!("sigma must be positive, got {sigma}")));
    }
    if k < 3 || k % 2 == 0 {
        return Err(Error::Config(format!("kernel side must be odd and >= 3, got {k}")));
    }
    if c == 0 {
        return Err(Error::Config("channel count must be >= 1".into()));
    }
    let r = (k / 2) as isize;
    let mut raw = Vec::with_capacity(k * k);
    for dy in -r..=r {
        for dx in -r..=r {
            raw.push(log_value(sigma, dx as f64, dy as f64));
        }
    }
    let divisor = match norm_mode {
        NormMode::Sum1 => {
            let sum: f64 = raw.iter().sum();
            if sum.abs() < MIN_NORMALIZER {
                return Err(Error::Normalization {
                    sum,
                    threshold: MIN_NORMALIZER,
                });
            }
            sum
        }
        NormMode::L1 => raw.iter().map(|v| v.abs()).sum(),
        NormMode::None => 1.0,
    };
    let base: Vec<f64> = raw.iter().map(|v| v / divisor).collect();
    Ok(SpatialKernel {
        k,
        sigma: Some(sigma),
        norm_mode: Some(norm_mode),
        weights: vec![base; c],
    })
}

/// Per-channel 3-tap temporal weights with the stride they are applied at.
#[derive(Debug, Clone, PartialEq)]
pub struct TemporalKernel {
    stride: usize,
    taps: Vec<[f64; 3]>,
}

fn check_stride(stride: usize) -> Result<()> {
    if stride == 1 || stride == 3 {
        Ok(())
    } else {
        Err(Error::Config(format!("temporal stride must be 1 or 3, got {stride}")))
    }
}

impl TemporalKernel {
    /// The initial high-pass bank: `[-1/3, 2/3, -1/3]` in every channel.
    pub fn highpass(c: usize, stride: usize) -> Result<Self> {
        check_stride(stride)?;
        if c == 0 {
            return Err(Error::Config("channel count must be >= 1".into()));
        }
        Ok(Self {
            stride,
            taps: vec![HIGHPASS_TAPS; c],
        })
    }

    pub fn from_taps(taps: Vec<[f64; 3]>, stride: usize) -> Result<Self> {
        check_stride(stride)?;
        if taps.is_empty() {
            return Err(Error::Config("temporal bank needs at least one channel".into()));
        }
        if taps.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Validation("non-finite temporal tap".into()));
        }
        Ok(Self { stride, taps })
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn channels(&self) -> usize {
        self.taps.len()
    }

    pub fn channel(&self, c: usize) -> &[f64; 3] {
        &self.taps[c]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f64; 3] {
        &mut self.taps[c]
    }

    pub fn taps(&self) -> &[[f64; 3]] {
        &self.taps
    }

    pub fn to_json(&self) -> TemporalKernelJson {
        TemporalKernelJson {
            stride: self.stride,
            channels: self.channels(),
            taps: self.taps.clone(),
        }
    }
}

pub fn temporal_highpass_kernel(c: usize, stride: usize) -> Result<TemporalKernel> {
    TemporalKernel::highpass(c, stride)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemporalKernelJson {
    pub stride: usize,
    pub channels: usize,
    pub taps: Vec<[f64; 3]>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ExportFormat {
    #[default]
    Json,
    /// Binary 8-bit PGM, channels tiled left to right.
    Pgm,
}

impl std::str::FromStr for ExportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(ExportFormat::Json),
            "pgm" | "pgm-heatmap" => Ok(ExportFormat::Pgm),
            other => Err(Error::Config(format!("unknown export format {other:?}"))),
        }
    }
}

/// A kernel that can be written out for inspection.
pub trait ExportableKernel {
    fn json_value(&self) -> serde_json::Value;
    /// `(width, height)` of one channel tile and the row-major tiles.
    fn tiles(&self) -> (usize, usize, Vec<&[f64]>);
}

impl ExportableKernel for SpatialKernel {
    fn json_value(&self) -> serde_json::Value {
        serde_json::to_value(self.to_json()).expect("kernel json is always serializable")
    }

    fn tiles(&self) -> (usize, usize, Vec<&[f64]>) {
        (self.k, self.k, self.weights.iter().map(Vec::as_slice).collect())
    }
}

impl ExportableKernel for TemporalKernel {
    fn json_value(&self) -> serde_json::Value {
        serde_json::to_value(self.to_json()).expect("kernel json is always serializable")
    }

    fn tiles(&self) -> (usize, usize, Vec<&[f64]>) {
        (3, 1, self.taps.iter().map(|t| t.as_slice()).collect())
    }
}

/// Min-max maps each tile to 0..=255; a constant tile maps to 128.
pub fn heatmap_pgm(kernel: &impl ExportableKernel) -> Vec<u8> {
    let (tw, th, tiles) = kernel.tiles();
    let width = tw * tiles.len();
    let mut pixels = vec![0u8; width * th];
    for (ci, tile) in tiles.iter().enumerate() {
        let (lo, hi) = tile
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        for y in 0..th {
            for x in 0..tw {
                let v = tile[y * tw + x];
                let g = if hi > lo {
                    ((v - lo) / (hi - lo) * 255.0).round() as u8
                } else {
                    128
                };
                pixels[y * width + ci * tw + x] = g;
            }
        }
    }
    let mut out = format!("P5\n{width} {th}\n255\n").into_bytes();
    out.extend_from_slice(&pixels);
    out
}

pub fn export_kernel(kernel: &impl ExportableKernel, path: &Path, format: ExportFormat) -> Result<()> {
    let bytes = match format {
        ExportFormat::Json => serde_json::to_vec_pretty(&kernel.json_value())
            .map_err(|e| Error::Format(e.to_string()))?,
        ExportFormat::Pgm => heatmap_pgm(kernel),
    };
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn load_spatial_kernel(path: &Path) -> Result<SpatialKernel> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let json: SpatialKernelJson =
        serde_json::from_str(&text).map_err(|e| Error::Format(e.to_string()))?;
    SpatialKernel::from_json(&json)
}
