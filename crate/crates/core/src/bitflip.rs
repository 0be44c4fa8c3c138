//! Single-bit faults in binary32 parameters.
//!
//! Bit 31 is the sign, bits 30..=23 the biased exponent and bits 22..=0 the
//! mantissa. Flips act on the raw pattern, so NaN, infinities and subnormals
//! are handled like any other value and faulty results are never resampled.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::bundle::WeightBundle;
use crate::graph::ModelGraph;
use crate::rng::RngState;
use crate::tensor::Tensor;

pub const SIGN_BIT: u32 = 31;
pub const EXPONENT_BITS: std::ops::RangeInclusive<u32> = 23..=30;
pub const MANTISSA_BITS: std::ops::RangeInclusive<u32> = 0..=22;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FaultError {
    #[error("bit index {0} is outside 0..=31")]
    BitOutOfRange(u32),
    #[error("bit {bit} is not a {class} bit")]
    ClassMismatch { bit: u32, class: FieldClass },
    #[error("unknown fault class {0:?} (expected exp, man or sign)")]
    UnknownClass(String),
    #[error("unknown tensor {0:?}")]
    UnknownTensor(String),
    #[error("flat index {index} out of range for tensor {name:?} of {len} elements")]
    IndexOutOfRange { name: String, index: usize, len: usize },
    #[error("layer {0} does not exist or owns no parameters")]
    NotParameterized(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FieldClass {
    Exponent,
    Mantissa,
    Sign,
}

impl FieldClass {
    pub const ALL: [FieldClass; 3] = [FieldClass::Exponent, FieldClass::Mantissa, FieldClass::Sign];

    pub fn name(self) -> &'static str {
        match self {
            FieldClass::Exponent => "exp",
            FieldClass::Mantissa => "man",
            FieldClass::Sign => "sign",
        }
    }

    /// Stable index used when deriving per-trial seeds.
    pub fn code(self) -> u64 {
        match self {
            FieldClass::Exponent => 0,
            FieldClass::Mantissa => 1,
            FieldClass::Sign => 2,
        }
    }

    pub fn contains(self, bit: u32) -> bool {
        classify_bit(bit) == Ok(self)
    }
}

impl fmt::Display for FieldClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FieldClass {
    type Err = FaultError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "exp" => Ok(FieldClass::Exponent),
            "man" => Ok(FieldClass::Mantissa),
            "sign" => Ok(FieldClass::Sign),
            other => Err(FaultError::UnknownClass(other.to_string())),
        }
    }
}

pub fn classify_bit(bit: u32) -> Result<FieldClass, FaultError> {
    match bit {
        SIGN_BIT => Ok(FieldClass::Sign),
        23..=30 => Ok(FieldClass::Exponent),
        0..=22 => Ok(FieldClass::Mantissa),
        _ => Err(FaultError::BitOutOfRange(bit)),
    }
}

pub fn flip_bit(pattern: u32, bit: u32) -> Result<u32, FaultError> {
    if bit > 31 {
        return Err(FaultError::BitOutOfRange(bit));
    }
    Ok(pattern ^ (1 << bit))
}

pub fn flip_f32(value: f32, bit: u32) -> Result<f32, FaultError> {
    flip_bit(value.to_bits(), bit).map(f32::from_bits)
}

/// Where a single bit-flip lands.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FaultSpec {
    pub layer_index: usize,
    pub tensor_name: String,
    pub flat_index: usize,
    pub bit_index: u32,
    pub class: FieldClass,
}

/// An applied fault with the parameter's bit pattern before and after.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FaultRecord {
    pub spec: FaultSpec,
    pub old_bits: u32,
    pub new_bits: u32,
}

/// Draws `(flat_index, bit_index)` over `len` elements.
///
/// Consumes exactly two draws: the element first, then the bit within the
/// class's field (the sign draw is taken and discarded).
pub fn sample_site(len: usize, class: FieldClass, rng: &mut RngState) -> (usize, u32) {
    debug_assert!(len > 0);
    let flat_index = (rng.next_u64() % len as u64) as usize;
    let draw = rng.next_u64();
    let bit_index = match class {
        FieldClass::Sign => SIGN_BIT,
        FieldClass::Exponent => 23 + (draw % 8) as u32,
        FieldClass::Mantissa => (draw % 23) as u32,
    };
    (flat_index, bit_index)
}

pub fn sample_fault_site(tensor: &Tensor, class: FieldClass, rng: &mut RngState) -> (usize, u32) {
    sample_site(tensor.len(), class, rng)
}

/// Picks a fault site uniformly over all parameter elements of one layer,
/// treating its weight and bias as one sequence (weight first).
pub fn sample_layer_fault(
    graph: &ModelGraph,
    bundle: &WeightBundle,
    layer_index: usize,
    class: FieldClass,
    rng: &mut RngState,
) -> Result<FaultSpec, FaultError> {
    let (weight, bias) = graph
        .layers()
        .get(layer_index)
        .and_then(|l| l.kind.params())
        .ok_or(FaultError::NotParameterized(layer_index))?;
    let lookup = |name: &str| {
        bundle
            .get(name)
            .ok_or_else(|| FaultError::UnknownTensor(name.to_string()))
    };
    let (nw, nb) = (lookup(weight)?.len(), lookup(bias)?.len());
    let (flat, bit_index) = sample_site(nw + nb, class, rng);
    let (tensor_name, flat_index) = if flat < nw {
        (weight, flat)
    } else {
        (bias, flat - nw)
    };
    Ok(FaultSpec {
        layer_index,
        tensor_name: tensor_name.to_string(),
        flat_index,
        bit_index,
        class,
    })
}

/// Returns a copy of `bundle` with one bit flipped; the input is untouched.
pub fn inject(bundle: &WeightBundle, spec: &FaultSpec) -> Result<(WeightBundle, FaultRecord), FaultError> {
    if classify_bit(spec.bit_index)? != spec.class {
        return Err(FaultError::ClassMismatch {
            bit: spec.bit_index,
            class: spec.class,
        });
    }
    let mut faulted = bundle.clone();
    let tensor = faulted
        .get_mut(&spec.tensor_name)
        .ok_or_else(|| FaultError::UnknownTensor(spec.tensor_name.clone()))?;
    let len = tensor.len();
    let slot = tensor
        .data_mut()
        .get_mut(spec.flat_index)
        .ok_or_else(|| FaultError::IndexOutOfRange {
            name: spec.tensor_name.clone(),
            index: spec.flat_index,
            len,
        })?;
    let old_bits = slot.to_bits();
    let new_bits = flip_bit(old_bits, spec.bit_index)?;
    *slot = f32::from_bits(new_bits);
    Ok((
        faulted,
        FaultRecord {
            spec: spec.clone(),
            old_bits,
            new_bits,
        },
    ))
}
