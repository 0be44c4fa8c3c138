//! On-disk formats: RIMG images, RFWB weight bundles and binary netpbm input.
//!
//! All numeric payloads are little-endian binary32.

mod pnm;
mod rfwb;
mod rimg;

pub use pnm::read_pnm;
pub use rfwb::{read_rfwb, write_rfwb, RFWB_MAGIC, RFWB_VERSION};
pub use rimg::{read_rimg, write_rimg, RIMG_MAGIC, RIMG_VERSION};

use thiserror::Error;

use crate::tensor::{Tensor, TensorError};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FormatError {
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: String, found: Vec<u8> },
    #[error("unsupported version {0}")]
    UnsupportedVersion(u32),
    #[error("truncated input at byte {offset}: needed {needed} more bytes")]
    Truncated { offset: usize, needed: usize },
    #[error("{0} unexpected trailing bytes")]
    TrailingBytes(usize),
    #[error("duplicate tensor name {0:?}")]
    DuplicateName(String),
    #[error("empty tensor name in entry {0}")]
    EmptyName(usize),
    #[error("tensor name in entry {0} is not valid UTF-8")]
    InvalidName(usize),
    #[error("unsupported dtype code {0}")]
    UnsupportedDtype(u8),
    #[error("ASCII netpbm variant {0} is not supported")]
    AsciiPnm(String),
    #[error("unsupported netpbm magic {0:?}")]
    UnsupportedPnm(String),
    #[error("netpbm maxval must be 255, got {0}")]
    MaxVal(u32),
    #[error("malformed netpbm header: {0}")]
    PnmHeader(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Reads an image tensor from either RIMG or binary netpbm bytes.
pub fn read_image(bytes: &[u8]) -> Result<Tensor, FormatError> {
    if bytes.starts_with(b"P") {
        read_pnm(bytes)
    } else {
        read_rimg(bytes)
    }
}

pub(crate) struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8], FormatError> {
        let available = self.bytes.len() - self.pos;
        if n > available {
            return Err(FormatError::Truncated {
                offset: self.pos,
                needed: n - available,
            });
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub(crate) fn magic(&mut self, expected: &[u8; 4]) -> Result<(), FormatError> {
        let found = self.take(4).map_err(|_| FormatError::BadMagic {
            expected: String::from_utf8_lossy(expected).into_owned(),
            found: self.bytes.to_vec(),
        })?;
        if found != expected {
            return Err(FormatError::BadMagic {
                expected: String::from_utf8_lossy(expected).into_owned(),
                found: found.to_vec(),
            });
        }
        Ok(())
    }

    pub(crate) fn u8(&mut self) -> Result<u8, FormatError> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn u32(&mut self) -> Result<u32, FormatError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    pub(crate) fn f32s(&mut self, count: usize) -> Result<Vec<f32>, FormatError> {
        let needed = count.checked_mul(4).ok_or(FormatError::Truncated {
            offset: self.pos,
            needed: usize::MAX,
        })?;
        Ok(self
            .take(needed)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect())
    }

    pub(crate) fn finish(self) -> Result<(), FormatError> {
        match self.bytes.len() - self.pos {
            0 => Ok(()),
            n => Err(FormatError::TrailingBytes(n)),
        }
    }
}

pub(crate) fn put_f32s(out: &mut Vec<u8>, data: &[f32]) {
    out.reserve(data.len() * 4);
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
}
