//! Programmatic clips for tests, the toy training task and benchmarks.

use rand::Rng;

use crate::error::Result;
use crate::tensor::VideoClip;

/// Uniform `[lo, hi)` values.
pub fn random_clip(
    rng: &mut impl Rng,
    shape: (usize, usize, usize, usize),
    lo: f64,
    hi: f64,
) -> Result<VideoClip> {
    let (t, c, h, w) = shape;
    VideoClip::from_fn(t, c, h, w, |_, _, _, _| rng.random_range(lo..hi))
}

/// Every frame equal to `frame_of(c, y, x)`.
pub fn static_clip(
    shape: (usize, usize, usize, usize),
    frame_of: impl Fn(usize, usize, usize) -> f64,
) -> Result<VideoClip> {
    let (t, c, h, w) = shape;
    VideoClip::from_fn(t, c, h, w, |_, ch, y, x| frame_of(ch, y, x))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Square {
    pub side: usize,
    /// Top-left corner in frame 0; may start partially outside the frame.
    pub x0: i64,
    pub y0: i64,
    /// Pixels per frame.
    pub vx: i64,
    pub vy: i64,
    pub foreground: f64,
    pub background: f64,
}

/// A bright square translating at constant integer velocity, replicated
/// across channels.
pub fn moving_square(t: usize, c: usize, h: usize, w: usize, sq: &Square) -> Result<VideoClip> {
    VideoClip::from_fn(t, c, h, w, |ti, _, y, x| {
        let left = sq.x0 + sq.vx * ti as i64;
        let top = sq.y0 + sq.vy * ti as i64;
        let (x, y) = (x as i64, y as i64);
        let inside = x >= left && x < left + sq.side as i64 && y >= top && y < top + sq.side as i64;
        if inside {
            sq.foreground
        } else {
            sq.background
        }
    })
}

/// A vertical step edge moving right: columns `x < x0 + v·t` are bright.
/// Returns the clip and the edge column per frame.
pub fn moving_edge(
    t: usize,
    c: usize,
    h: usize,
    w: usize,
    x0: usize,
    velocity: usize,
) -> Result<(VideoClip, Vec<usize>)> {
    let edges: Vec<usize> = (0..t).map(|ti| x0 + velocity * ti).collect();
    let clip = VideoClip::from_fn(t, c, h, w, |ti, _, _, x| if x < edges[ti] { 0.9 } else { 0.1 })?;
    Ok((clip, edges))
}

/// One labelled example of the left/right motion task.
#[derive(Debug, Clone)]
pub struct LabeledClip {
    pub clip: VideoClip,
    pub label: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DirectionTask {
    pub clips: usize,
    pub frames: usize,
    pub size: usize,
    pub side: usize,
    pub speed: i64,
}

impl Default for DirectionTask {
    fn default() -> Self {
        Self {
            clips: 200,
            frames: 6,
            size: 32,
            side: 8,
            speed: 2,
        }
    }
}

/// Balanced left (label 0) versus right (label 1) moving squares on a dark
/// background, single channel. Start positions are drawn so the square stays
/// fully visible for the whole clip.
pub fn direction_dataset(task: &DirectionTask, rng: &mut impl Rng) -> Result<Vec<LabeledClip>> {
    let travel = task.speed * (task.frames as i64 - 1);
    let max_x = task.size as i64 - task.side as i64 - travel;
    let max_y = task.size as i64 - task.side as i64;
    assert!(max_x >= 0 && max_y >= 0, "task geometry does not fit the frame");
    (0..task.clips)
        .map(|i| {
            let label = i % 2;
            let start = rng.random_range(0..=max_x);
            let (x0, vx) = if label == 1 {
                (start, task.speed)
            } else {
                (start + travel, -task.speed)
            };
            let sq = Square {
                side: task.side,
                x0,
                y0: rng.random_range(0..=max_y),
                vx,
                vy: 0,
                foreground: 1.0,
                background: 0.0,
            };
            Ok(LabeledClip {
                clip: moving_square(task.frames, 1, task.size, task.size, &sq)?,
                label,
            })
        })
        .collect()
}
