//! Pixel-wise binary segmentation metrics and trial aggregation.

use thiserror::Error;

use crate::tensor::Tensor;

pub const DEFAULT_THRESHOLD: f32 = 0.5;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MetricsError {
    #[error("mask shapes differ: {pred:?} vs {truth:?}")]
    ShapeMismatch {
        pred: (usize, usize),
        truth: (usize, usize),
    },
    #[error("prediction must be a single-channel (1, h, w) tensor, got {0:?}")]
    PredictionShape(Vec<usize>),
    #[error("no pixels to score")]
    Empty,
    #[error("cannot aggregate an empty trial list")]
    NoTrials,
}

/// Row-major boolean mask over an `h x w` plane.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    height: usize,
    width: usize,
    data: Vec<bool>,
}

impl Mask {
    pub fn new(height: usize, width: usize, data: Vec<bool>) -> Self {
        assert_eq!(data.len(), height * width, "mask length");
        Self {
            height,
            width,
            data,
        }
    }

    /// Reads a stored mask image: positive where the first channel is at least 0.5.
    pub fn from_tensor(t: &Tensor) -> Result<Self, MetricsError> {
        let (_, h, w) = t
            .chw()
            .map_err(|_| MetricsError::PredictionShape(t.shape().to_vec()))?;
        Ok(Self::new(h, w, t.data()[..h * w].iter().map(|&v| v >= 0.5).collect()))
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(
            vec![1, self.height, self.width],
            self.data.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
        )
        .expect("mask extents are positive")
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn count_positive(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Binarized {
    pub mask: Mask,
    pub nan_pixels: u64,
}

/// Positive iff the value is finite and `>= threshold`; non-finite pixels are
/// negative and counted.
pub fn binarize(pred: &Tensor, threshold: f32) -> Result<Binarized, MetricsError> {
    let (h, w) = match *pred.shape() {
        [1, h, w] => (h, w),
        _ => return Err(MetricsError::PredictionShape(pred.shape().to_vec())),
    };
    let mut nan_pixels = 0;
    let data = pred
        .data()
        .iter()
        .map(|&v| {
            if v.is_finite() {
                v >= threshold
            } else {
                nan_pixels += 1;
                false
            }
        })
        .collect();
    Ok(Binarized {
        mask: Mask::new(h, w, data),
        nan_pixels,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

pub fn confusion(pred: &Mask, truth: &Mask) -> Result<ConfusionCounts, MetricsError> {
    if (pred.height, pred.width) != (truth.height, truth.width) {
        return Err(MetricsError::ShapeMismatch {
            pred: (pred.height, pred.width),
            truth: (truth.height, truth.width),
        });
    }
    let mut c = ConfusionCounts::default();
    for (&p, &t) in pred.data.iter().zip(&truth.data) {
        match (p, t) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegMetrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub nan_pixels: u64,
}

/// Accuracy, precision and recall. Degenerate denominators resolve to:
/// precision 1 when nothing was predicted and nothing was missed, else 0;
/// recall 1 when there is nothing to find.
pub fn seg_metrics(counts: &ConfusionCounts) -> Result<SegMetrics, MetricsError> {
    let total = counts.total();
    if total == 0 {
        return Err(MetricsError::Empty);
    }
    let ConfusionCounts { tp, fp, fn_, tn } = *counts;
    let precision = if tp + fp > 0 {
        tp as f64 / (tp + fp) as f64
    } else if fn_ == 0 {
        1.0
    } else {
        0.0
    };
    let recall = if tp + fn_ > 0 {
        tp as f64 / (tp + fn_) as f64
    } else {
        1.0
    };
    Ok(SegMetrics {
        accuracy: (tp + tn) as f64 / total as f64,
        precision,
        recall,
        nan_pixels: 0,
    })
}

/// Binarizes `pred`, scores it against `truth`, and carries the NaN count.
pub fn score(pred: &Tensor, truth: &Mask, threshold: f32) -> Result<SegMetrics, MetricsError> {
    let Binarized { mask, nan_pixels } = binarize(pred, threshold)?;
    let mut m = seg_metrics(&confusion(&mask, truth)?)?;
    m.nan_pixels = nan_pixels;
    Ok(m)
}

/// Per-image metrics averaged over a set; NaN pixel counts are summed.
pub fn macro_average(per_image: &[SegMetrics]) -> Result<SegMetrics, MetricsError> {
    if per_image.is_empty() {
        return Err(MetricsError::NoTrials);
    }
    let n = per_image.len() as f64;
    Ok(SegMetrics {
        accuracy: per_image.iter().map(|m| m.accuracy).sum::<f64>() / n,
        precision: per_image.iter().map(|m| m.precision).sum::<f64>() / n,
        recall: per_image.iter().map(|m| m.recall).sum::<f64>() / n,
        nan_pixels: per_image.iter().map(|m| m.nan_pixels).sum(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct Summary {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    pub baseline: f64,
}

impl Summary {
    /// `values` must be non-empty.
    pub fn of(values: &[f64], baseline: f64) -> Self {
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        // Rounding in the mean can push it a ulp outside [min, max].
        Self {
            mean: mean.clamp(min, max),
            min,
            max,
            baseline,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AggregateStats {
    pub accuracy: Summary,
    pub precision: Summary,
    pub recall: Summary,
    pub nan_pixels: Summary,
}

pub fn aggregate(trials: &[SegMetrics], baseline: &SegMetrics) -> Result<AggregateStats, MetricsError> {
    if trials.is_empty() {
        return Err(MetricsError::NoTrials);
    }
    let pick = |f: fn(&SegMetrics) -> f64| trials.iter().map(f).collect::<Vec<_>>();
    Ok(AggregateStats {
        accuracy: Summary::of(&pick(|m| m.accuracy), baseline.accuracy),
        precision: Summary::of(&pick(|m| m.precision), baseline.precision),
        recall: Summary::of(&pick(|m| m.recall), baseline.recall),
        nan_pixels: Summary::of(&pick(|m| m.nan_pixels as f64), baseline.nan_pixels as f64),
    })
}
