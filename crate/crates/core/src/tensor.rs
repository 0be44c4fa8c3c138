//! Dense binary32 tensors with explicit row-major shapes.
//!
//! Images are channel-planar `(channels, height, width)`; conv kernels are
//! `(out_ch, in_ch, kh, kw)`. Values are never normalized or sanitized, so
//! non-finite weights produced by fault injection survive every round trip.

use thiserror::Error;

pub const MAX_RANK: usize = 4;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TensorError {
    #[error("rank {0} is outside 1..=4")]
    BadRank(usize),
    #[error("axis {axis} has zero extent")]
    ZeroExtent { axis: usize },
    #[error("shape {shape:?} needs {expected} values, got {found}")]
    LengthMismatch {
        shape: Vec<usize>,
        expected: usize,
        found: usize,
    },
    #[error("expected {expected} coordinates, got {found}")]
    CoordRank { expected: usize, found: usize },
    #[error("index {index} out of bounds on axis {axis} (extent {extent})")]
    OutOfBounds {
        axis: usize,
        index: usize,
        extent: usize,
    },
    #[error("expected a rank-{expected} tensor, got shape {shape:?}")]
    WrongRank { expected: usize, shape: Vec<usize> },
}

/// Row-major offset of `coords` within `shape`.
pub fn flat_index(shape: &[usize], coords: &[usize]) -> Result<usize, TensorError> {
    if coords.len() != shape.len() {
        return Err(TensorError::CoordRank {
            expected: shape.len(),
            found: coords.len(),
        });
    }
    let mut offset = 0usize;
    for (axis, (&index, &extent)) in coords.iter().zip(shape).enumerate() {
        if index >= extent {
            return Err(TensorError::OutOfBounds {
                axis,
                index,
                extent,
            });
        }
        offset = offset * extent + index;
    }
    Ok(offset)
}

fn check_shape(shape: &[usize]) -> Result<usize, TensorError> {
    if shape.is_empty() || shape.len() > MAX_RANK {
        return Err(TensorError::BadRank(shape.len()));
    }
    if let Some(axis) = shape.iter().position(|&e| e == 0) {
        return Err(TensorError::ZeroExtent { axis });
    }
    Ok(shape.iter().product())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self, TensorError> {
        let expected = check_shape(&shape)?;
        if data.len() != expected {
            return Err(TensorError::LengthMismatch {
                shape,
                expected,
                found: data.len(),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn filled(shape: Vec<usize>, value: f32) -> Result<Self, TensorError> {
        let len = check_shape(&shape)?;
        Ok(Self {
            shape,
            data: vec![value; len],
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Result<Self, TensorError> {
        Self::filled(shape, 0.0)
    }

    pub fn scalar(value: f32) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    /// Always false: every extent is at least one.
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn get(&self, coords: &[usize]) -> Result<f32, TensorError> {
        Ok(self.data[flat_index(&self.shape, coords)?])
    }

    /// `(channels, height, width)` of a rank-3 tensor.
    pub fn chw(&self) -> Result<(usize, usize, usize), TensorError> {
        match *self.shape.as_slice() {
            [c, h, w] => Ok((c, h, w)),
            _ => Err(TensorError::WrongRank {
                expected: 3,
                shape: self.shape.clone(),
            }),
        }
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Bitwise equality: distinguishes `0.0` from `-0.0` and compares NaN payloads.
    pub fn same_bits(&self, other: &Tensor) -> bool {
        self.shape == other.shape
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_index_examples() {
        assert_eq!(flat_index(&[3, 4, 4], &[0, 0, 0]).unwrap(), 0);
        assert_eq!(flat_index(&[3, 4, 4], &[2, 3, 3]).unwrap(), 47);
        assert_eq!(flat_index(&[2, 2], &[1, 0]).unwrap(), 2);
    }

    #[test]
    fn flat_index_names_the_offending_axis() {
        let err = flat_index(&[3, 4, 4], &[0, 4, 0]).unwrap_err();
        assert_eq!(
            err,
            TensorError::OutOfBounds {
                axis: 1,
                index: 4,
                extent: 4
            }
        );
    }

    #[test]
    fn flat_index_is_a_bijection_on_small_shapes() {
        for shape in [vec![5], vec![2, 3], vec![3, 1, 4], vec![2, 3, 2, 2]] {
            let total: usize = shape.iter().product();
            let mut seen = vec![false; total];
            let mut coords = vec![0usize; shape.len()];
            'outer: loop {
                let off = flat_index(&shape, &coords).unwrap();
                assert!(!seen[off], "offset {off} hit twice for {shape:?}");
                seen[off] = true;
                for axis in (0..shape.len()).rev() {
                    coords[axis] += 1;
                    if coords[axis] < shape[axis] {
                        continue 'outer;
                    }
                    coords[axis] = 0;
                }
                break;
            }
            assert!(seen.iter().all(|&s| s));
        }
    }

    #[test]
    fn constructor_enforces_invariants() {
        assert_eq!(Tensor::new(vec![], vec![]), Err(TensorError::BadRank(0)));
        assert_eq!(
            Tensor::new(vec![1, 1, 1, 1, 1], vec![0.0]),
            Err(TensorError::BadRank(5))
        );
        assert_eq!(
            Tensor::new(vec![2, 0], vec![]),
            Err(TensorError::ZeroExtent { axis: 1 })
        );
        assert!(matches!(
            Tensor::new(vec![2, 2], vec![0.0; 3]),
            Err(TensorError::LengthMismatch { .. })
        ));
        let t = Tensor::new(vec![1, 2], vec![f32::NAN, f32::INFINITY]).unwrap();
        assert!(t.data()[0].is_nan());
    }

    #[test]
    fn same_bits_separates_signed_zero() {
        let a = Tensor::scalar(0.0);
        let b = Tensor::scalar(-0.0);
        assert_eq!(a, b);
        assert!(!a.same_bits(&b));
    }
}
