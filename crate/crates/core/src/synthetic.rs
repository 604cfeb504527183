//! Deterministic synthetic test sequences: a smooth background with a few
//! piecewise-constant shapes, either drifting across the frame or static.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::video::{Frame, VideoSequence};

#[derive(Debug, Clone, Copy)]
struct Shape {
    disc: bool,
    cy: f64,
    cx: f64,
    half: f64,
    level: f64,
    vy: f64,
    vx: f64,
}

/// Scene with shapes moving by up to ~1 pixel per frame.
pub fn moving_scene(rows: usize, cols: usize, frames: usize, seed: u64) -> VideoSequence {
    scene(rows, cols, frames, seed, true)
}

/// Same construction with zero motion: every frame is identical.
pub fn static_scene(rows: usize, cols: usize, frames: usize, seed: u64) -> VideoSequence {
    scene(rows, cols, frames, seed, false)
}

/// A single smooth frame: low-frequency cosines over a ramp.
pub fn smooth_frame(rows: usize, cols: usize) -> Frame {
    Frame::from_fn(rows, cols, |r, c| {
        let y = r as f64 / rows as f64;
        let x = c as f64 / cols as f64;
        110.0
            + 50.0 * x
            + 30.0 * (std::f64::consts::PI * y).cos()
            + 20.0 * (2.0 * std::f64::consts::PI * x).sin() * y
    })
}

fn scene(rows: usize, cols: usize, frames: usize, seed: u64, moving: bool) -> VideoSequence {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = rows.min(cols) as f64;
    let shapes: Vec<Shape> = (0..4)
        .map(|i| {
            let speed = if moving { 0.6 } else { 0.0 };
            Shape {
                disc: i % 2 == 1,
                cy: rng.random_range(0.2..0.8) * rows as f64,
                cx: rng.random_range(0.2..0.8) * cols as f64,
                half: rng.random_range(0.08..0.18) * scale,
                level: rng.random_range(-70.0..70.0),
                vy: rng.random_range(-1.0..1.0) * speed,
                vx: rng.random_range(-1.0..1.0) * speed,
            }
        })
        .collect();
    let phase: f64 = rng.random_range(0.0..std::f64::consts::TAU);

    let frames = (0..frames)
        .map(|t| {
            let t = t as f64;
            Frame::from_fn(rows, cols, |r, c| {
                let y = r as f64 + 0.5;
                let x = c as f64 + 0.5;
                let mut v = 100.0
                    + 40.0 * x / cols as f64
                    + 25.0 * (std::f64::consts::PI * y / rows as f64 + phase).cos();
                for s in &shapes {
                    let dy = y - (s.cy + s.vy * t);
                    let dx = x - (s.cx + s.vx * t);
                    let inside = if s.disc {
                        dy * dy + dx * dx <= s.half * s.half
                    } else {
                        dy.abs() <= s.half && dx.abs() <= s.half
                    };
                    if inside {
                        v += s.level;
                    }
                }
                v.clamp(0.0, 255.0)
            })
        })
        .collect();
    VideoSequence::new(frames).expect("synthetic scene has at least one frame")
}
