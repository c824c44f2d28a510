use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Res2,
    Res3,
    Res4,
    Res5,
}

impl Stage {
    pub const ALL: [Stage; 4] = [Stage::Res2, Stage::Res3, Stage::Res4, Stage::Res5];

    /// Lateral band-pass defaults per stage: σ = 0.9 with a 7x7 kernel,
    /// shrinking to 3x3 in the last stage where maps are small.
    pub fn lateral_defaults(self) -> (f64, usize) {
        match self {
            Stage::Res5 => (0.9, 3),
            _ => (0.9, 7),
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Stage::Res2 => "res2",
            Stage::Res3 => "res3",
            Stage::Res4 => "res4",
            Stage::Res5 => "res5",
        };
        f.write_str(name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockSpec {
    pub stage: Stage,
    pub in_channels: usize,
    pub out_channels: usize,
    pub stride: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LateralDesign {
    /// Alternating: quiet→busy through a band-pass module at even blocks,
    /// busy→quiet through φ at odd blocks.
    #[serde(rename = "BPLC")]
    Bplc,
    /// Quiet→busy through a band-pass module at every placement.
    #[serde(rename = "LC-I")]
    LcI,
    /// Busy→quiet through φ at every placement.
    #[serde(rename = "LC-II")]
    LcII,
    /// Both directions at every placement.
    #[serde(rename = "LC-III")]
    LcIII,
    /// BPLC alternation with the band-pass module replaced by identity.
    #[serde(rename = "LC-V")]
    LcV,
}

impl std::str::FromStr for LateralDesign {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_string()))
            .map_err(|_| Error::Config(format!("unknown lateral design {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LateralSpec {
    /// 1-based block index the connection follows.
    pub i: usize,
    pub design: LateralDesign,
    #[serde(default)]
    pub sigma: Option<f64>,
    #[serde(default)]
    pub k: Option<usize>,
}

impl LateralSpec {
    pub fn new(i: usize, design: LateralDesign) -> Self {
        Self {
            i,
            design,
            sigma: None,
            k: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FusionMethod {
    AvgAfterFc,
    AvgBeforeFc,
    MaxAfterFc,
    ConcatBeforeFc,
}

impl FusionMethod {
    pub fn before_fc(self) -> bool {
        matches!(self, FusionMethod::AvgBeforeFc | FusionMethod::ConcatBeforeFc)
    }
}

fn default_in_channels() -> usize {
    3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BqnConfig {
    /// Residual blocks per stage (res2..res5); the same for both pathways.
    pub blocks: Vec<usize>,
    pub widths: Vec<usize>,
    #[serde(default = "default_in_channels")]
    pub in_channels: usize,
    #[serde(default)]
    pub laterals: Vec<LateralSpec>,
    pub fusion: FusionMethod,
    pub shared_fc: bool,
    pub classes: usize,
    #[serde(default)]
    pub seed: u64,
}

impl BqnConfig {
    /// Four stages of one block each, widths 16/32/64/128, no laterals,
    /// average fusion after a shared classifier.
    pub fn toy(classes: usize, seed: u64) -> Self {
        Self {
            blocks: vec![1, 1, 1, 1],
            widths: vec![16, 32, 64, 128],
            in_channels: 3,
            laterals: Vec::new(),
            fusion: FusionMethod::AvgAfterFc,
            shared_fc: true,
            classes,
            seed,
        }
    }

    pub fn block_count(&self) -> usize {
        self.blocks.iter().sum()
    }

    /// Places `design` after every block.
    pub fn with_laterals_everywhere(mut self, design: LateralDesign) -> Self {
        self.laterals = (1..=self.block_count()).map(|i| LateralSpec::new(i, design)).collect();
        self
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Self = serde_json::from_str(&text).map_err(|e| Error::Format(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.blocks.len() != 4 || self.widths.len() != 4 {
            return Err(Error::Config(
                "blocks and widths must list the four stages res2..res5".into(),
            ));
        }
        if self.blocks.contains(&0) || self.widths.contains(&0) {
            return Err(Error::Config("block counts and widths must be positive".into()));
        }
        if self.in_channels == 0 || self.classes == 0 {
            return Err(Error::Config("in_channels and classes must be positive".into()));
        }
        let b = self.block_count();
        let mut seen = vec![false; b + 1];
        for lat in &self.laterals {
            if lat.i == 0 || lat.i > b {
                return Err(Error::Config(format!(
                    "lateral index {} outside 1..={b}",
                    lat.i
                )));
            }
            if std::mem::replace(&mut seen[lat.i], true) {
                return Err(Error::Config(format!("two laterals at block {}", lat.i)));
            }
            if let Some(k) = lat.k {
                if k % 2 == 0 || k < 3 {
                    return Err(Error::Config(format!("lateral kernel side {k} must be odd and >= 3")));
                }
            }
            if let Some(s) = lat.sigma {
                if !(s > 0.0) {
                    return Err(Error::Config(format!("lateral sigma {s} must be positive")));
                }
            }
        }
        Ok(())
    }

    /// Block list in order; the first block of every stage after res2
    /// downsamples by 2.
    pub fn block_specs(&self) -> Vec<BlockSpec> {
        let mut specs = Vec::with_capacity(self.block_count());
        let mut prev = self.widths[0];
        for (s, stage) in Stage::ALL.into_iter().enumerate() {
            for b in 0..self.blocks[s] {
                specs.push(BlockSpec {
                    stage,
                    in_channels: prev,
                    out_channels: self.widths[s],
                    stride: if b == 0 && s > 0 { 2 } else { 1 },
                });
                prev = self.widths[s];
            }
        }
        specs
    }
}
