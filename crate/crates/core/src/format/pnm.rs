use super::{ByteReader, FormatError};
use crate::tensor::Tensor;

/// Parses binary PGM (`P5`) or PPM (`P6`) with maxval 255 into a planar
/// tensor with samples scaled to `value / 255`.
pub fn read_pnm(bytes: &[u8]) -> Result<Tensor, FormatError> {
    let magic = bytes.get(..2).ok_or(FormatError::Truncated {
        offset: 0,
        needed: 2usize.saturating_sub(bytes.len()),
    })?;
    let channels = match magic {
        b"P5" => 1,
        b"P6" => 3,
        b"P2" | b"P3" => {
            return Err(FormatError::AsciiPnm(
                String::from_utf8_lossy(magic).into_owned(),
            ))
        }
        other => {
            return Err(FormatError::UnsupportedPnm(
                String::from_utf8_lossy(other).into_owned(),
            ))
        }
    };

    let mut header = HeaderCursor { bytes, pos: 2 };
    let width = header.number("width")?;
    let height = header.number("height")?;
    let maxval = header.number("maxval")?;
    if maxval != 255 {
        return Err(FormatError::MaxVal(maxval));
    }
    // Exactly one whitespace byte separates the header from the raster.
    match bytes.get(header.pos) {
        Some(b) if b.is_ascii_whitespace() => header.pos += 1,
        Some(_) => return Err(FormatError::PnmHeader("missing raster separator".into())),
        None => {
            return Err(FormatError::Truncated {
                offset: header.pos,
                needed: 1,
            })
        }
    }

    let (h, w) = (height as usize, width as usize);
    let plane = h.saturating_mul(w);
    let mut reader = ByteReader::new(&bytes[header.pos..]);
    let raster = reader
        .take(plane.saturating_mul(channels))
        .map_err(|e| match e {
            FormatError::Truncated { offset, needed } => FormatError::Truncated {
                offset: offset + header.pos,
                needed,
            },
            other => other,
        })?;

    let mut data = vec![0.0f32; plane * channels];
    for (px, sample) in raster.chunks_exact(channels).enumerate() {
        for (ch, &v) in sample.iter().enumerate() {
            data[ch * plane + px] = f32::from(v) / 255.0;
        }
    }
    Ok(Tensor::new(vec![channels, h, w], data)?)
}

struct HeaderCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl HeaderCursor<'_> {
    fn skip_whitespace_and_comments(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while let Some(&c) = self.bytes.get(self.pos) {
                    self.pos += 1;
                    if c == b'\n' || c == b'\r' {
                        break;
                    }
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<u32, FormatError> {
        let before = self.pos;
        self.skip_whitespace_and_comments();
        if self.pos == before {
            return Err(FormatError::PnmHeader(format!("expected whitespace before {what}")));
        }
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        if start == self.pos {
            return if self.pos >= self.bytes.len() {
                Err(FormatError::Truncated {
                    offset: self.pos,
                    needed: 1,
                })
            } else {
                Err(FormatError::PnmHeader(format!("expected digits for {what}")))
            };
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| FormatError::PnmHeader(format!("{what} out of range")))
    }
}
