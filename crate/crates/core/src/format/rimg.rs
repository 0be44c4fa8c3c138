use super::{put_f32s, ByteReader, FormatError};
use crate::tensor::{Tensor, TensorError};

pub const RIMG_MAGIC: &[u8; 4] = b"RIMG";
pub const RIMG_VERSION: u32 = 1;

/// Layout: `"RIMG" | u32 version | u32 channels | u32 height | u32 width | planar f32 data`.
pub fn read_rimg(bytes: &[u8]) -> Result<Tensor, FormatError> {
    let mut r = ByteReader::new(bytes);
    r.magic(RIMG_MAGIC)?;
    let version = r.u32()?;
    if version != RIMG_VERSION {
        return Err(FormatError::UnsupportedVersion(version));
    }
    let c = r.u32()? as usize;
    let h = r.u32()? as usize;
    let w = r.u32()? as usize;
    let shape = vec![c, h, w];
    if let Some(axis) = shape.iter().position(|&e| e == 0) {
        return Err(TensorError::ZeroExtent { axis }.into());
    }
    let count = c.saturating_mul(h).saturating_mul(w);
    let data = r.f32s(count)?;
    r.finish()?;
    Ok(Tensor::new(shape, data)?)
}

pub fn write_rimg(image: &Tensor) -> Result<Vec<u8>, FormatError> {
    let (c, h, w) = image.chw()?;
    let mut out = Vec::with_capacity(20 + image.len() * 4);
    out.extend_from_slice(RIMG_MAGIC);
    for v in [RIMG_VERSION, c as u32, h as u32, w as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    put_f32s(&mut out, image.data());
    Ok(out)
}
