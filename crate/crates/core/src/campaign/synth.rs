//! Synthetic cloud scenes: dark noisy background with a few bright disks.
//!
//! Background luminance is `Uniform[0, 0.4]` and cloud luminance
//! `Uniform[0.7, 1.0]`, so any threshold in `(0.4, 0.7)` separates them
//! perfectly. All three channels carry the same luminance.

use thiserror::Error;

use crate::metrics::Mask;
use crate::rng::{derive_seed, RngState};
use crate::tensor::Tensor;

pub const MIN_SCENE_EXTENT: usize = 16;
pub const BACKGROUND_MAX: f32 = 0.4;
pub const CLOUD_MIN: f32 = 0.7;
pub const CLOUD_SPAN: f32 = 0.3;
pub const MAX_CLOUDS: usize = 4;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("scene extents {height}x{width} are below the {MIN_SCENE_EXTENT}x{MIN_SCENE_EXTENT} minimum")]
pub struct SceneSizeError {
    pub height: usize,
    pub width: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub image: Tensor,
    pub mask: Mask,
}

pub fn gen_synthetic_scene(seed: u64, h: usize, w: usize) -> Result<Scene, SceneSizeError> {
    if h < MIN_SCENE_EXTENT || w < MIN_SCENE_EXTENT {
        return Err(SceneSizeError {
            height: h,
            width: w,
        });
    }
    let mut rng = RngState::new(seed);
    let draw = |rng: &mut RngState, n: usize| rng.index(n).expect("non-empty range");

    let short = h.min(w);
    let (r_min, r_span) = (short / 16, short / 4 - short / 16 + 1);
    let clouds = 1 + draw(&mut rng, MAX_CLOUDS);
    let disks: Vec<(i64, i64, i64)> = (0..clouds)
        .map(|_| {
            let cy = draw(&mut rng, h) as i64;
            let cx = draw(&mut rng, w) as i64;
            let r = (r_min + draw(&mut rng, r_span)) as i64;
            (cy, cx, r)
        })
        .collect();

    let mut covered = vec![false; h * w];
    for (y, row) in covered.chunks_exact_mut(w).enumerate() {
        for (x, cell) in row.iter_mut().enumerate() {
            *cell = disks.iter().any(|&(cy, cx, r)| {
                let (dy, dx) = (y as i64 - cy, x as i64 - cx);
                dy * dy + dx * dx <= r * r
            });
        }
    }

    let luminance: Vec<f32> = covered
        .iter()
        .map(|&cloud| {
            let u = rng.unit();
            if cloud {
                (CLOUD_MIN + CLOUD_SPAN * u).min(1.0)
            } else {
                BACKGROUND_MAX * u
            }
        })
        .collect();
    let mut data = Vec::with_capacity(3 * h * w);
    for _ in 0..3 {
        data.extend_from_slice(&luminance);
    }
    Ok(Scene {
        image: Tensor::new(vec![3, h, w], data).expect("positive extents"),
        mask: Mask::new(h, w, covered),
    })
}

/// `count` square scenes; scene `i` is seeded with `derive_seed(seed, [i])`.
pub fn synthetic_scenes(count: usize, size: usize, seed: u64) -> Result<Vec<Scene>, SceneSizeError> {
    (0..count)
        .map(|i| gen_synthetic_scene(derive_seed(seed, &[i as u64]), size, size))
        .collect()
}
