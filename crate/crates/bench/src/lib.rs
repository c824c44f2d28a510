//! Shared fixtures for the criterion benches.

use busyquiet::mbpm::{MbpmConfig, MbpmParams};
use busyquiet::synthetic::random_clip;
use busyquiet::tensor::Shape;
use busyquiet::VideoClip;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Clip sizes timed by default: a short low-resolution clip and one
/// eight-segment clip at 112².
pub const SHAPES: [Shape; 2] = [(6, 3, 64, 64), (24, 3, 112, 112)];

/// A seeded [0, 1] clip and untrained stride-3 weights of side `k`.
pub fn fixture(shape: Shape, k: usize) -> (VideoClip, MbpmParams) {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let clip = random_clip(&mut rng, shape, 0.0, 1.0).expect("valid shape");
    let params = MbpmParams::init(shape.1, &MbpmConfig { k, ..MbpmConfig::BUSY }, false).expect("valid config");
    (clip, params)
}
