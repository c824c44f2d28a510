//! Forward-only two-pathway network at toy scale.
//!
//! Each pathway is a 3x3 stem followed by plain 2D residual blocks applied
//! frame by frame. Lateral connections run after the blocks they are
//! attached to; both pathways are then pooled over time and space and the
//! scores are fused.

pub mod config;
pub mod layers;
pub mod lateral;

pub use config::{BlockSpec, BqnConfig, FusionMethod, LateralDesign, LateralSpec, Stage};
pub use lateral::{bplc, fusion_targets, lc_variant, LateralParams, Pathway};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::disentangle::DisentangledPair;
use crate::error::{Error, Result};
use crate::tensor::VideoClip;
use layers::{global_avg_pool, relu, BnState, Conv2d, Linear, ResidualBlock};

#[derive(Debug, Clone, PartialEq)]
pub struct PathwayNet {
    pub stem: Conv2d,
    pub stem_bn: BnState,
    pub blocks: Vec<ResidualBlock>,
}

impl PathwayNet {
    fn init(config: &BqnConfig, rng: &mut ChaCha8Rng) -> Self {
        let stem = Conv2d::init(config.in_channels, config.widths[0], 3, 1, rng);
        let blocks = config
            .block_specs()
            .iter()
            .map(|b| ResidualBlock::init(b.in_channels, b.out_channels, b.stride, rng))
            .collect();
        Self {
            stem,
            stem_bn: BnState::standard(config.widths[0]),
            blocks,
        }
    }

    fn stem(&self, x: &VideoClip) -> Result<VideoClip> {
        Ok(relu(&self.stem_bn.forward(&self.stem.forward(x)?)?))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Classifier {
    Shared(Linear),
    Separate { busy: Linear, quiet: Linear },
}

#[derive(Debug, Clone, PartialEq)]
pub struct BqnGraph {
    pub config: BqnConfig,
    pub busy: PathwayNet,
    pub quiet: PathwayNet,
    /// Sorted by block index.
    pub laterals: Vec<LateralParams>,
    pub classifier: Classifier,
}

/// Deterministic construction from `config.seed`.
pub fn build_bqn(config: &BqnConfig) -> Result<BqnGraph> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let busy = PathwayNet::init(config, &mut rng);
    let quiet = PathwayNet::init(config, &mut rng);
    let specs = config.block_specs();
    let mut lateral_specs = config.laterals.clone();
    lateral_specs.sort_by_key(|l| l.i);
    let laterals = lateral_specs
        .iter()
        .map(|spec| {
            let block = &specs[spec.i - 1];
            LateralParams::init(spec, block.stage, block.out_channels, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;
    let width = *config.widths.last().expect("validated");
    let classifier = match (config.fusion, config.shared_fc) {
        (FusionMethod::ConcatBeforeFc, _) => Classifier::Shared(Linear::init(2 * width, config.classes, &mut rng)),
        (FusionMethod::AvgBeforeFc, _) | (_, true) => Classifier::Shared(Linear::init(width, config.classes, &mut rng)),
        (_, false) => Classifier::Separate {
            busy: Linear::init(width, config.classes, &mut rng),
            quiet: Linear::init(width, config.classes, &mut rng),
        },
    };
    Ok(BqnGraph {
        config: config.clone(),
        busy,
        quiet,
        laterals,
        classifier,
    })
}

/// Elementwise score fusion for the after-classifier methods.
pub fn fuse_scores(scores_f: &[f64], scores_c: &[f64], method: FusionMethod) -> Result<Vec<f64>> {
    if scores_f.len() != scores_c.len() {
        return Err(Error::Config(format!(
            "score lengths differ: {} vs {}",
            scores_f.len(),
            scores_c.len()
        )));
    }
    let pair = scores_f.iter().zip(scores_c);
    match method {
        FusionMethod::AvgAfterFc => Ok(pair.map(|(a, b)| (a + b) / 2.0).collect()),
        FusionMethod::MaxAfterFc => Ok(pair.map(|(a, b)| a.max(*b)).collect()),
        m => Err(Error::Config(format!("{m:?} fuses features, not scores"))),
    }
}

/// Feature fusion for the before-classifier methods.
pub fn fuse_features(feat_f: &[f64], feat_c: &[f64], method: FusionMethod) -> Result<Vec<f64>> {
    match method {
        FusionMethod::AvgBeforeFc if feat_f.len() == feat_c.len() => {
            Ok(feat_f.iter().zip(feat_c).map(|(a, b)| (a + b) / 2.0).collect())
        }
        FusionMethod::ConcatBeforeFc => Ok([feat_f, feat_c].concat()),
        m => Err(Error::Config(format!(
            "{m:?} cannot fuse features of widths {} and {}",
            feat_f.len(),
            feat_c.len()
        ))),
    }
}

impl BqnGraph {
    pub fn block_count(&self) -> usize {
        self.busy.blocks.len()
    }

    /// `(block index, receiving pathways)` for every lateral, in order.
    pub fn fusion_schedule(&self) -> Vec<(usize, &'static [Pathway])> {
        self.laterals.iter().map(|l| (l.i, l.targets())).collect()
    }

    pub fn forward(&self, pair: &DisentangledPair) -> Result<Vec<f64>> {
        self.run(pair, true)
    }

    /// The two pathways with every lateral skipped.
    pub fn forward_without_laterals(&self, pair: &DisentangledPair) -> Result<Vec<f64>> {
        self.run(pair, false)
    }

    fn run(&self, pair: &DisentangledPair, with_laterals: bool) -> Result<Vec<f64>> {
        let c = self.config.in_channels;
        if pair.busy.c() != c || pair.quiet.c() != c {
            return Err(Error::Dimension(format!(
                "graph expects {c}-channel streams, got busy {} / quiet {}",
                pair.busy.c(),
                pair.quiet.c()
            )));
        }
        if pair.busy.t() != pair.quiet.t() {
            return Err(Error::Dimension(format!(
                "busy has {} frames, quiet has {}",
                pair.busy.t(),
                pair.quiet.t()
            )));
        }
        let mut x_f = self.busy.stem(&pair.busy)?;
        let mut x_c = self.quiet.stem(&pair.quiet)?;
        let mut laterals = self.laterals.iter().peekable();
        for (idx, (bf, bc)) in self.busy.blocks.iter().zip(&self.quiet.blocks).enumerate() {
            x_f = bf.forward(&x_f)?;
            x_c = bc.forward(&x_c)?;
            if let Some(lat) = laterals.next_if(|l| l.i == idx + 1) {
                if with_laterals {
                    (x_f, x_c) = lat.apply(&x_f, &x_c)?;
                }
            }
        }
        self.classify(&global_avg_pool(&x_f), &global_avg_pool(&x_c))
    }

    pub fn classify(&self, feat_f: &[f64], feat_c: &[f64]) -> Result<Vec<f64>> {
        let method = self.config.fusion;
        match &self.classifier {
            Classifier::Shared(fc) if method.before_fc() => fc.forward(&fuse_features(feat_f, feat_c, method)?),
            Classifier::Shared(fc) => fuse_scores(&fc.forward(feat_f)?, &fc.forward(feat_c)?, method),
            Classifier::Separate { busy, quiet } => {
                fuse_scores(&busy.forward(feat_f)?, &quiet.forward(feat_c)?, method)
            }
        }
    }

    pub fn laterals_mut(&mut self) -> &mut [LateralParams] {
        &mut self.laterals
    }

    pub fn classifiers_mut(&mut self) -> Vec<&mut Linear> {
        match &mut self.classifier {
            Classifier::Shared(fc) => vec![fc],
            Classifier::Separate { busy, quiet } => vec![busy, quiet],
        }
    }
}
