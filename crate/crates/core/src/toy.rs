//! End-to-end trainability at desk scale: the band-pass module followed by a
//! pooled linear classifier, trained with plain gradient descent on
//! softmax cross-entropy.
//!
//! The head sees three pooled statistics per channel, averaged over all
//! output frames: the plain mean of Γ and its first spatial moments
//! `mean(x̃·Γ)`, `mean(ỹ·Γ)` with pixel coordinates centred on the frame.
//! The plain mean alone cannot separate motion directions: Γ is linear in
//! the clip, so its spatial sum only depends on per-frame sums, which a
//! translating object leaves unchanged.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mbpm::{mbpm_backward, mbpm_forward, MbpmConfig, MbpmParams};
use crate::synthetic::{direction_dataset, DirectionTask, LabeledClip};
use crate::tensor::VideoClip;

/// Pooled statistics per channel.
pub const FEATURES_PER_CHANNEL: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearHead {
    pub classes: usize,
    pub inputs: usize,
    /// Row-major `classes x inputs`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl LinearHead {
    /// Gaussian weights with standard deviation `scale`, zero bias.
    pub fn init(classes: usize, inputs: usize, scale: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, scale).expect("finite scale");
        Self {
            classes,
            inputs,
            weights: (0..classes * inputs).map(|_| normal.sample(&mut rng)).collect(),
            bias: vec![0.0; classes],
        }
    }

    pub fn logits(&self, features: &[f64]) -> Vec<f64> {
        (0..self.classes)
            .map(|k| {
                let row = &self.weights[k * self.inputs..(k + 1) * self.inputs];
                self.bias[k] + row.iter().zip(features).map(|(w, f)| w * f).sum::<f64>()
            })
            .collect()
    }
}

/// Centred pixel coordinate.
fn centred(i: usize, n: usize) -> f64 {
    i as f64 - (n as f64 - 1.0) / 2.0
}

/// `[mean, x-moment, y-moment]` per channel, averaged over output frames.
pub fn pooled_features(gamma: &VideoClip) -> Vec<f64> {
    let (t, c, h, w) = gamma.shape();
    let norm = (t * h * w) as f64;
    let mut out = vec![0.0; c * FEATURES_PER_CHANNEL];
    for ti in 0..t {
        for ch in 0..c {
            let plane = gamma.plane(ti, ch);
            let f = &mut out[ch * FEATURES_PER_CHANNEL..(ch + 1) * FEATURES_PER_CHANNEL];
            for y in 0..h {
                let cy = centred(y, h);
                for x in 0..w {
                    let v = plane[y * w + x];
                    f[0] += v;
                    f[1] += centred(x, w) * v;
                    f[2] += cy * v;
                }
            }
        }
    }
    out.iter_mut().for_each(|v| *v /= norm);
    out
}

/// Spreads `dL/dfeatures` back onto Γ.
fn pooled_features_backward(grad: &[f64], shape: (usize, usize, usize, usize)) -> VideoClip {
    let (t, c, h, w) = shape;
    let norm = (t * h * w) as f64;
    VideoClip::from_fn(t, c, h, w, |_, ch, y, x| {
        let g = &grad[ch * FEATURES_PER_CHANNEL..(ch + 1) * FEATURES_PER_CHANNEL];
        (g[0] + g[1] * centred(x, w) + g[2] * centred(y, h)) / norm
    })
    .expect("gradient of finite features is finite")
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyReport {
    /// Mean cross-entropy before each step, plus the loss after the last step.
    pub loss_curve: Vec<f64>,
    /// Running minimum of `loss_curve`.
    pub smoothed_loss_curve: Vec<f64>,
    pub initial_accuracy: f64,
    pub accuracy: f64,
    pub steps: usize,
    pub lr: f64,
}

struct Evaluation {
    loss: f64,
    accuracy: f64,
    head_weights: Vec<f64>,
    head_bias: Vec<f64>,
    mbpm: Option<(Vec<Vec<f64>>, Vec<[f64; 3]>)>,
}

fn evaluate(
    data: &[LabeledClip],
    params: &MbpmParams,
    head: &LinearHead,
    with_grads: bool,
) -> Result<Evaluation> {
    let n = data.len() as f64;
    let per_clip: Vec<Result<_>> = data
        .par_iter()
        .map(|example| {
            let fwd = mbpm_forward(&example.clip, params)?;
            let features = pooled_features(&fwd.gamma);
            let probs = softmax(&head.logits(&features));
            let loss = -probs[example.label].max(f64::MIN_POSITIVE).ln();
            let predicted = probs
                .iter()
                .enumerate()
                .fold(0, |best, (k, &p)| if p > probs[best] { k } else { best });
            let correct = (predicted == example.label) as usize;
            if !with_grads || !loss.is_finite() || probs.iter().any(|p| !p.is_finite()) {
                let loss = if probs.iter().all(|p| p.is_finite()) { loss } else { f64::NAN };
                return Ok((loss, correct, None));
            }
            // dL/dlogits = p - onehot, averaged over the dataset
            let dlogits: Vec<f64> = probs
                .iter()
                .enumerate()
                .map(|(k, p)| (p - (k == example.label) as usize as f64) / n)
                .collect();
            let mut dw = vec![0.0; head.weights.len()];
            let mut dfeat = vec![0.0; head.inputs];
            for (k, dl) in dlogits.iter().enumerate() {
                for i in 0..head.inputs {
                    dw[k * head.inputs + i] = dl * features[i];
                    dfeat[i] += dl * head.weights[k * head.inputs + i];
                }
            }
            let mbpm_grads = if params.trainable {
                let upstream = pooled_features_backward(&dfeat, fwd.gamma.shape());
                let g = mbpm_backward(&upstream, params, fwd.cache.as_ref())?;
                Some((g.d_spatial, g.d_temporal))
            } else {
                None
            };
            Ok((loss, correct, Some((dw, dlogits, mbpm_grads))))
        })
        .collect();

    let mut loss = 0.0;
    let mut correct = 0;
    let mut head_weights = vec![0.0; head.weights.len()];
    let mut head_bias = vec![0.0; head.classes];
    let mut mbpm: Option<(Vec<Vec<f64>>, Vec<[f64; 3]>)> = None;
    // sequential reduction keeps the sum order fixed
    for item in per_clip {
        let (l, ok, grads) = item?;
        loss += l;
        correct += ok;
        let Some((dw, db, dm)) = grads else { continue };
        head_weights.iter_mut().zip(&dw).for_each(|(a, b)| *a += b);
        head_bias.iter_mut().zip(&db).for_each(|(a, b)| *a += b);
        if let Some((ds, dt)) = dm {
            match &mut mbpm {
                None => mbpm = Some((ds, dt)),
                Some((acc_s, acc_t)) => {
                    for (a, b) in acc_s.iter_mut().zip(&ds) {
                        a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                    }
                    for (a, b) in acc_t.iter_mut().zip(&dt) {
                        a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                    }
                }
            }
        }
    }
    Ok(Evaluation {
        loss: loss / n,
        accuracy: correct as f64 / n,
        head_weights,
        head_bias,
        mbpm,
    })
}

/// Full-batch gradient descent on mean cross-entropy. A frozen module
/// (`trainable == false`) trains the head only.
pub fn train_toy(
    data: &[LabeledClip],
    params: &mut MbpmParams,
    head: &mut LinearHead,
    steps: usize,
    lr: f64,
) -> Result<ToyReport> {
    if data.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    if head.inputs != params.channels() * FEATURES_PER_CHANNEL {
        return Err(Error::Dimension(format!(
            "head expects {} inputs, module yields {}",
            head.inputs,
            params.channels() * FEATURES_PER_CHANNEL
        )));
    }
    if let Some(bad) = data.iter().find(|d| d.label >= head.classes) {
        return Err(Error::Config(format!("label {} exceeds class count", bad.label)));
    }
    let mut loss_curve = Vec::with_capacity(steps + 1);
    let mut initial_accuracy = 0.0;
    for step in 0..steps {
        let eval = evaluate(data, params, head, true)?;
        if !eval.loss.is_finite() {
            return Err(Error::Numeric {
                step,
                detail: format!("loss became {}", eval.loss),
            });
        }
        if step == 0 {
            initial_accuracy = eval.accuracy;
        }
        loss_curve.push(eval.loss);
        head.weights.iter_mut().zip(&eval.head_weights).for_each(|(w, g)| *w -= lr * g);
        head.bias.iter_mut().zip(&eval.head_bias).for_each(|(w, g)| *w -= lr * g);
        if let Some((ds, dt)) = eval.mbpm {
            for c in 0..params.channels() {
                for (w, g) in params.spatial.channel_mut(c).iter_mut().zip(&ds[c]) {
                    *w -= lr * g;
                }
                for (w, g) in params.temporal.channel_mut(c).iter_mut().zip(&dt[c]) {
                    *w -= lr * g;
                }
            }
        }
    }
    let last = evaluate(data, params, head, false)?;
    if !last.loss.is_finite() {
        return Err(Error::Numeric {
            step: steps,
            detail: format!("loss became {}", last.loss),
        });
    }
    if steps == 0 {
        initial_accuracy = last.accuracy;
    }
    loss_curve.push(last.loss);
    let smoothed_loss_curve = loss_curve
        .iter()
        .scan(f64::INFINITY, |m, &l| {
            *m = m.min(l);
            Some(*m)
        })
        .collect();
    Ok(ToyReport {
        loss_curve,
        smoothed_loss_curve,
        initial_accuracy,
        accuracy: last.accuracy,
        steps,
        lr,
    })
}

/// Everything needed to reproduce one toy run from a seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToyRun {
    pub task: DirectionTask,
    /// Module settings; a small kernel keeps the sum-normalized taps, and
    /// hence the gradients, moderate.
    pub mbpm: MbpmConfig,
    pub steps: usize,
    pub lr: f64,
    pub head_scale: f64,
    pub seed: u64,
}

impl Default for ToyRun {
    fn default() -> Self {
        Self {
            task: DirectionTask::default(),
            mbpm: MbpmConfig {
                k: 3,
                ..MbpmConfig::BUSY
            },
            steps: 500,
            lr: 0.5,
            head_scale: 0.1,
            seed: 0,
        }
    }
}

/// Builds the dataset, module and head from `run.seed` and trains them.
pub fn run_toy(run: &ToyRun) -> Result<(ToyReport, MbpmParams)> {
    let mut rng = ChaCha8Rng::seed_from_u64(run.seed);
    let data = direction_dataset(&run.task, &mut rng)?;
    let mut params = MbpmParams::init(1, &run.mbpm, true)?;
    let mut head = LinearHead::init(2, FEATURES_PER_CHANNEL, run.head_scale, run.seed.wrapping_add(1));
    let report = train_toy(&data, &mut params, &mut head, run.steps, run.lr)?;
    Ok((report, params))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{NormMode, TemporalKernel};

    fn small_task() -> DirectionTask {
        DirectionTask {
            clips: 24,
            ..DirectionTask::default()
        }
    }

    fn toy_config() -> MbpmConfig {
        MbpmConfig {
            sigma: 1.1,
            k: 3,
            stride: 3,
            norm_mode: NormMode::Sum1,
        }
    }

    #[test]
    fn moment_features_of_centred_impulse() {
        let mut g = VideoClip::zeros(1, 1, 5, 5).unwrap();
        g.set(0, 0, 2, 4, 25.0);
        assert_eq!(pooled_features(&g), vec![1.0, 2.0, 0.0]);
    }

    #[test]
    fn head_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let data = direction_dataset(&small_task(), &mut rng).unwrap();
        let mut params = MbpmParams::init(1, &toy_config(), true).unwrap();
        // break the time-reversal symmetry so every gradient is nonzero
        *params.temporal.channel_mut(0) = [-0.5, 0.6, -0.2];
        let head = LinearHead::init(2, 3, 0.5, 3);
        let eval = evaluate(&data, &params, &head, true).unwrap();
        let (ds, dt) = eval.mbpm.clone().unwrap();
        let eps = 1e-5;
        let loss_at = |p: &MbpmParams, h: &LinearHead| evaluate(&data, p, h, false).unwrap().loss;

        for m in 0..3 {
            let mut up = params.clone();
            up.temporal.channel_mut(0)[m] += eps;
            let mut down = params.clone();
            down.temporal.channel_mut(0)[m] -= eps;
            let numeric = (loss_at(&up, &head) - loss_at(&down, &head)) / (2.0 * eps);
            assert!((numeric - dt[0][m]).abs() <= 1e-6 + 1e-4 * numeric.abs(), "tap {m}");
        }
        for i in [0, 4, 7] {
            let mut up = params.clone();
            up.spatial.channel_mut(0)[i] += eps;
            let mut down = params.clone();
            down.spatial.channel_mut(0)[i] -= eps;
            let numeric = (loss_at(&up, &head) - loss_at(&down, &head)) / (2.0 * eps);
            assert!((numeric - ds[0][i]).abs() <= 1e-6 + 1e-4 * numeric.abs(), "spatial {i}");
        }
        for i in 0..head.weights.len() {
            let mut up = head.clone();
            up.weights[i] += eps;
            let mut down = head.clone();
            down.weights[i] -= eps;
            let numeric = (loss_at(&params, &up) - loss_at(&params, &down)) / (2.0 * eps);
            assert!((numeric - eval.head_weights[i]).abs() <= 1e-6 + 1e-4 * numeric.abs());
        }
    }

    #[test]
    fn zero_learning_rate_keeps_loss_constant() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let data = direction_dataset(&small_task(), &mut rng).unwrap();
        let mut params = MbpmParams::init(1, &toy_config(), true).unwrap();
        let mut head = LinearHead::init(2, 3, 0.1, 1);
        let report = train_toy(&data, &mut params, &mut head, 5, 0.0).unwrap();
        assert_eq!(report.loss_curve.len(), 6);
        assert!(report.loss_curve.iter().all(|&l| l == report.loss_curve[0]));
    }

    #[test]
    fn frozen_module_still_trains_head() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let data = direction_dataset(&small_task(), &mut rng).unwrap();
        // A frozen module with a forward-difference temporal kernel: the
        // x-moment then encodes direction and only the head has to learn.
        let mut params = MbpmParams::new(
            crate::kernels::log_kernel(1.1, 3, 1, NormMode::Sum1).unwrap(),
            TemporalKernel::from_taps(vec![[-0.5, 0.0, 0.5]], 3).unwrap(),
            false,
        )
        .unwrap();
        let before = params.clone();
        let mut head = LinearHead::init(2, 3, 0.01, 1);
        let report = train_toy(&data, &mut params, &mut head, 50, 0.5).unwrap();
        assert_eq!(params, before);
        assert!(report.loss_curve.last().unwrap() < &report.loss_curve[0]);
        assert!(report.accuracy >= 0.9);
    }

    #[test]
    fn divergence_is_reported_with_step() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let data = direction_dataset(&small_task(), &mut rng).unwrap();
        let mut params = MbpmParams::init(1, &toy_config(), true).unwrap();
        let mut head = LinearHead::init(2, 3, 1.0, 1);
        match train_toy(&data, &mut params, &mut head, 50, 1e12) {
            Err(Error::Numeric { step, .. }) => assert!(step > 0 && step <= 50),
            other => panic!("expected divergence, got {other:?}"),
        }
    }
}
