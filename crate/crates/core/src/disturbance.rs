//! Radiation-style sensor disturbances applied to `(c, h, w)` images in `[0, 1]`.
//!
//! Hot pixels and streaks saturate affected sites to 1.0 on every channel.
//! Dark current adds a fixed per-pixel offset pattern drawn once from its own
//! seed, so the same "sensor" produces the same pattern for every capture.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::rng::RngState;
use crate::tensor::{Tensor, TensorError};

pub const SATURATED: f32 = 1.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DisturbanceError {
    #[error("{count} hot pixels requested but the image has only {pixels}")]
    TooManyHotPixels { count: usize, pixels: usize },
    #[error("{count} streaks requested but the image has only {pixels} start pixels")]
    TooManyStreaks { count: usize, pixels: usize },
    #[error("dark-current magnitude {0} is outside [0, 1]")]
    Magnitude(f32),
    #[error("streak length must be at least 1")]
    ZeroStreakLength,
    #[error("pattern is {pattern:?} but image plane is {image:?}")]
    PatternShape {
        pattern: Vec<usize>,
        image: (usize, usize),
    },
    #[error("level {level} is not valid for {kind}")]
    Level { kind: DisturbanceKind, level: f64 },
    #[error("unknown disturbance kind {0:?} (expected hot, dark or streak)")]
    UnknownKind(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DisturbanceKind {
    HotPixels,
    DarkCurrent,
    Streaks,
}

impl DisturbanceKind {
    pub const ALL: [DisturbanceKind; 3] = [
        DisturbanceKind::HotPixels,
        DisturbanceKind::DarkCurrent,
        DisturbanceKind::Streaks,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DisturbanceKind::HotPixels => "hot",
            DisturbanceKind::DarkCurrent => "dark",
            DisturbanceKind::Streaks => "streak",
        }
    }

    pub fn code(self) -> u64 {
        match self {
            DisturbanceKind::HotPixels => 0,
            DisturbanceKind::DarkCurrent => 1,
            DisturbanceKind::Streaks => 2,
        }
    }
}

impl fmt::Display for DisturbanceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DisturbanceKind {
    type Err = DisturbanceError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "hot" => Ok(DisturbanceKind::HotPixels),
            "dark" => Ok(DisturbanceKind::DarkCurrent),
            "streak" => Ok(DisturbanceKind::Streaks),
            other => Err(DisturbanceError::UnknownKind(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DisturbanceSpec {
    HotPixels { count: usize },
    DarkCurrent { magnitude: f32, pattern_seed: u64 },
    Streaks { count: usize, length: usize },
}

impl DisturbanceSpec {
    /// Builds a spec from a sweep level: a pixel or streak count for `hot` and
    /// `streak`, an offset magnitude for `dark`.
    pub fn from_level(
        kind: DisturbanceKind,
        level: f64,
        streak_length: usize,
        pattern_seed: u64,
    ) -> Result<Self, DisturbanceError> {
        let bad = || DisturbanceError::Level { kind, level };
        let count = || {
            if level >= 0.0 && level.fract() == 0.0 && level <= u32::MAX as f64 {
                Ok(level as usize)
            } else {
                Err(bad())
            }
        };
        match kind {
            DisturbanceKind::HotPixels => Ok(Self::HotPixels { count: count()? }),
            DisturbanceKind::DarkCurrent => {
                if !(0.0..=1.0).contains(&level) {
                    return Err(DisturbanceError::Magnitude(level as f32));
                }
                Ok(Self::DarkCurrent {
                    magnitude: level as f32,
                    pattern_seed,
                })
            }
            DisturbanceKind::Streaks => {
                if streak_length == 0 {
                    return Err(DisturbanceError::ZeroStreakLength);
                }
                Ok(Self::Streaks {
                    count: count()?,
                    length: streak_length,
                })
            }
        }
    }

    pub fn kind(&self) -> DisturbanceKind {
        match self {
            Self::HotPixels { .. } => DisturbanceKind::HotPixels,
            Self::DarkCurrent { .. } => DisturbanceKind::DarkCurrent,
            Self::Streaks { .. } => DisturbanceKind::Streaks,
        }
    }
}

fn saturate_site(data: &mut [f32], plane: usize, site: usize) {
    for v in data.iter_mut().skip(site).step_by(plane) {
        *v = SATURATED;
    }
}

/// Draws `count` distinct pixel sites in order, redrawing repeats. The first
/// `n` sites for a given seed are the same for every `count >= n`.
pub fn hot_pixel_sites(
    plane: usize,
    count: usize,
    rng: &mut RngState,
) -> Result<Vec<usize>, DisturbanceError> {
    if count > plane {
        return Err(DisturbanceError::TooManyHotPixels {
            count,
            pixels: plane,
        });
    }
    let mut seen = HashSet::with_capacity(count);
    let mut sites = Vec::with_capacity(count);
    while sites.len() < count {
        let site = rng.index(plane).expect("plane is non-empty");
        if seen.insert(site) {
            sites.push(site);
        }
    }
    Ok(sites)
}

pub fn apply_hot_pixels(
    img: &Tensor,
    count: usize,
    rng: &mut RngState,
) -> Result<Tensor, DisturbanceError> {
    let (_, h, w) = img.chw()?;
    let plane = h * w;
    let sites = hot_pixel_sites(plane, count, rng)?;
    let mut out = img.clone();
    for site in sites {
        saturate_site(out.data_mut(), plane, site);
    }
    Ok(out)
}

/// Per-pixel offsets `magnitude * u` with `u` drawn in row-major order from `pattern_seed`.
pub fn gen_dark_current_pattern(
    h: usize,
    w: usize,
    magnitude: f32,
    pattern_seed: u64,
) -> Result<Tensor, DisturbanceError> {
    if !(0.0..=1.0).contains(&magnitude) {
        return Err(DisturbanceError::Magnitude(magnitude));
    }
    let mut rng = RngState::new(pattern_seed);
    let data = (0..h * w).map(|_| magnitude * rng.unit()).collect();
    Ok(Tensor::new(vec![1, h, w], data)?)
}

pub fn apply_dark_current(img: &Tensor, pattern: &Tensor) -> Result<Tensor, DisturbanceError> {
    let (_, h, w) = img.chw()?;
    if pattern.shape() != [1, h, w] {
        return Err(DisturbanceError::PatternShape {
            pattern: pattern.shape().to_vec(),
            image: (h, w),
        });
    }
    let mut out = img.clone();
    for plane in out.data_mut().chunks_exact_mut(h * w) {
        for (v, &offset) in plane.iter_mut().zip(pattern.data()) {
            *v = (*v + offset).clamp(0.0, 1.0);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Orientation {
    Horizontal,
    Vertical,
}

/// Pixel sites covered by a streak running right or down from `(y, x)`, clipped at the border.
pub fn streak_sites(
    h: usize,
    w: usize,
    y: usize,
    x: usize,
    orientation: Orientation,
    length: usize,
) -> Vec<usize> {
    match orientation {
        Orientation::Horizontal => (x..(x + length).min(w)).map(|xx| y * w + xx).collect(),
        Orientation::Vertical => (y..(y + length).min(h)).map(|yy| yy * w + x).collect(),
    }
}

/// Each streak draws a start pixel not used by an earlier streak (redrawing
/// repeats), then its orientation.
pub fn apply_streaks(
    img: &Tensor,
    count: usize,
    length: usize,
    rng: &mut RngState,
) -> Result<Tensor, DisturbanceError> {
    if length == 0 {
        return Err(DisturbanceError::ZeroStreakLength);
    }
    let (_, h, w) = img.chw()?;
    let plane = h * w;
    if count > plane {
        return Err(DisturbanceError::TooManyStreaks {
            count,
            pixels: plane,
        });
    }
    let mut out = img.clone();
    let mut starts = HashSet::with_capacity(count);
    for _ in 0..count {
        let start = loop {
            let site = rng.index(plane).expect("plane is non-empty");
            if starts.insert(site) {
                break site;
            }
        };
        let orientation = if rng.index(2).expect("non-empty") == 0 {
            Orientation::Horizontal
        } else {
            Orientation::Vertical
        };
        for site in streak_sites(h, w, start / w, start % w, orientation, length) {
            saturate_site(out.data_mut(), plane, site);
        }
    }
    Ok(out)
}

/// Applies one disturbance; dark current ignores `rng` and uses its own pattern seed.
pub fn apply_disturbance(
    img: &Tensor,
    spec: &DisturbanceSpec,
    rng: &mut RngState,
) -> Result<Tensor, DisturbanceError> {
    match *spec {
        DisturbanceSpec::HotPixels { count } => apply_hot_pixels(img, count, rng),
        DisturbanceSpec::DarkCurrent {
            magnitude,
            pattern_seed,
        } => {
            let (_, h, w) = img.chw()?;
            if magnitude == 0.0 {
                // Level 0 is the identity even for pixels outside [0, 1].
                return Ok(img.clone());
            }
            let pattern = gen_dark_current_pattern(h, w, magnitude, pattern_seed)?;
            apply_dark_current(img, &pattern)
        }
        DisturbanceSpec::Streaks { count, length } => apply_streaks(img, count, length, rng),
    }
}
