use super::{put_f32s, ByteReader, FormatError};
use crate::bundle::{BundleError, WeightBundle};
use crate::tensor::{Tensor, TensorError, MAX_RANK};

pub const RFWB_MAGIC: &[u8; 4] = b"RFWB";
pub const RFWB_VERSION: u32 = 1;

const DTYPE_F32_LE: u8 = 0;

/// Layout: `"RFWB" | u32 version | u32 count` followed per entry by
/// `u32 name_len | name | u8 dtype | u8 rank | rank x u32 dims | data`.
pub fn read_rfwb(bytes: &[u8]) -> Result<WeightBundle, FormatError> {
    let mut r = ByteReader::new(bytes);
    r.magic(RFWB_MAGIC)?;
    let version = r.u32()?;
    if version != RFWB_VERSION {
        return Err(FormatError::UnsupportedVersion(version));
    }
    let count = r.u32()? as usize;
    let mut bundle = WeightBundle::new();
    for entry in 0..count {
        let name_len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| FormatError::InvalidName(entry))?
            .to_owned();
        let dtype = r.u8()?;
        if dtype != DTYPE_F32_LE {
            return Err(FormatError::UnsupportedDtype(dtype));
        }
        let rank = r.u8()? as usize;
        if rank == 0 || rank > MAX_RANK {
            return Err(TensorError::BadRank(rank).into());
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32()? as usize);
        }
        if let Some(axis) = shape.iter().position(|&e| e == 0) {
            return Err(TensorError::ZeroExtent { axis }.into());
        }
        let numel = shape.iter().fold(1usize, |acc, &e| acc.saturating_mul(e));
        let data = r.f32s(numel)?;
        bundle
            .push(name, Tensor::new(shape, data)?)
            .map_err(|e| match e {
                BundleError::DuplicateName(n) => FormatError::DuplicateName(n),
                BundleError::EmptyName => FormatError::EmptyName(entry),
            })?;
    }
    r.finish()?;
    Ok(bundle)
}

pub fn write_rfwb(bundle: &WeightBundle) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(RFWB_MAGIC);
    out.extend_from_slice(&RFWB_VERSION.to_le_bytes());
    out.extend_from_slice(&(bundle.len() as u32).to_le_bytes());
    for (name, tensor) in bundle.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(DTYPE_F32_LE);
        out.push(tensor.rank() as u8);
        for &d in tensor.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        put_f32s(&mut out, tensor.data());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn single(name: &str, value: f32) -> WeightBundle {
        WeightBundle::from_entries([(name.to_string(), Tensor::scalar(value))]).unwrap()
    }

    #[test]
    fn scalar_bundle_layout() {
        let bytes = write_rfwb(&single("w", 1.0));
        let mut expected = b"RFWB".to_vec();
        expected.extend_from_slice(&1u32.to_le_bytes());
        expected.extend_from_slice(&1u32.to_le_bytes());
        expected.extend_from_slice(&1u32.to_le_bytes());
        expected.push(b'w');
        expected.push(0);
        expected.push(1);
        expected.extend_from_slice(&1u32.to_le_bytes());
        expected.extend_from_slice(&[0x00, 0x00, 0x80, 0x3F]);
        assert_eq!(bytes, expected);
    }

    #[test]
    fn nan_payload_survives() {
        let nan = f32::from_bits(0x7FC0_1234);
        let back = read_rfwb(&write_rfwb(&single("n", nan))).unwrap();
        assert_eq!(back.get("n").unwrap().data()[0].to_bits(), 0x7FC0_1234);
    }

    #[test]
    fn distinct_errors() {
        let good = write_rfwb(&single("w", 1.0));

        let mut dtype = good.clone();
        dtype[17] = 1;
        assert_eq!(read_rfwb(&dtype), Err(FormatError::UnsupportedDtype(1)));

        assert!(matches!(
            read_rfwb(&good[..good.len() - 2]),
            Err(FormatError::Truncated { .. })
        ));

        let mut magic = good.clone();
        magic[0] = b'X';
        assert!(matches!(read_rfwb(&magic), Err(FormatError::BadMagic { .. })));

        // Two entries both named "w".
        let mut dup = good.clone();
        dup[8] = 2;
        dup.extend_from_slice(&good[12..]);
        assert_eq!(read_rfwb(&dup), Err(FormatError::DuplicateName("w".into())));

        let mut extra = good.clone();
        extra.push(0);
        assert_eq!(read_rfwb(&extra), Err(FormatError::TrailingBytes(1)));
    }

    fn arb_bundle() -> impl Strategy<Value = WeightBundle> {
        let tensor = prop::collection::vec(1usize..4, 1..=4).prop_flat_map(|shape| {
            let n = shape.iter().product::<usize>();
            prop::collection::vec(any::<u32>(), n).prop_map(move |bits| {
                Tensor::new(shape.clone(), bits.into_iter().map(f32::from_bits).collect())
                    .unwrap()
            })
        });
        prop::collection::vec(tensor, 0..5).prop_map(|ts| {
            WeightBundle::from_entries(
                ts.into_iter()
                    .enumerate()
                    .map(|(i, t)| (format!("layer{i}.w"), t)),
            )
            .unwrap()
        })
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(bundle in arb_bundle()) {
            let bytes = write_rfwb(&bundle);
            let back = read_rfwb(&bytes).unwrap();
            prop_assert!(back.same_bits(&bundle));
            prop_assert_eq!(write_rfwb(&back), bytes);
        }
    }
}
