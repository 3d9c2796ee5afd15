//! Binary tensor files.
//!
//! Layout (little-endian): magic `MGT1`, rank `u32`, `rank` extents as `u32`,
//! then `product(extents)` `f64` values in row-major order.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"MGT1";

pub fn encode(t: &Tensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 4 * t.rank() + 8 * t.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
    for &e in t.shape() {
        out.extend_from_slice(&(e as u32).to_le_bytes());
    }
    for &v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode(mut bytes: &[u8]) -> Result<Tensor> {
    let mut word = [0u8; 4];
    bytes
        .read_exact(&mut word)
        .map_err(|_| Error::TensorFormat("truncated header".into()))?;
    if &word != MAGIC {
        return Err(Error::TensorFormat(format!("bad magic {word:?}")));
    }
    let mut read_u32 = |bytes: &mut &[u8]| -> Result<u32> {
        bytes
            .read_exact(&mut word)
            .map_err(|_| Error::TensorFormat("truncated header".into()))?;
        Ok(u32::from_le_bytes(word))
    };
    let rank = read_u32(&mut bytes)? as usize;
    let shape = (0..rank)
        .map(|_| read_u32(&mut bytes).map(|e| e as usize))
        .collect::<Result<Vec<_>>>()?;
    let count: usize = shape.iter().product();
    if bytes.len() != count * 8 {
        return Err(Error::TensorFormat(format!(
            "payload has {} bytes, shape {shape:?} needs {}",
            bytes.len(),
            count * 8
        )));
    }
    let data = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    Tensor::new(shape, data)
}

pub fn write_tensor(path: impl AsRef<Path>, t: &Tensor) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(&encode(t))?;
    Ok(())
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    let bytes = fs::read(path.as_ref())?;
    decode(&bytes).map_err(|e| match e {
        Error::TensorFormat(m) => Error::TensorFormat(format!("{}: {m}", path.as_ref().display())),
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout_is_exact() {
        let t = Tensor::new(vec![2, 1], vec![1.0, -2.5]).unwrap();
        let bytes = encode(&t);
        assert_eq!(&bytes[..4], b"MGT1");
        assert_eq!(&bytes[4..8], &2u32.to_le_bytes());
        assert_eq!(&bytes[8..12], &2u32.to_le_bytes());
        assert_eq!(&bytes[12..16], &1u32.to_le_bytes());
        assert_eq!(&bytes[16..24], &1.0f64.to_le_bytes());
        assert_eq!(bytes.len(), 32);
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        let t = Tensor::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap();
        let mut bytes = encode(&t);
        assert!(decode(&bytes[..bytes.len() - 1]).is_err());
        bytes[0] = b'X';
        assert!(matches!(decode(&bytes), Err(Error::TensorFormat(_))));
    }

    #[test]
    fn scalar_round_trip() {
        let t = Tensor::scalar(4.25);
        assert_eq!(decode(&encode(&t)).unwrap(), t);
    }

    proptest::proptest! {
        #[test]
        fn round_trip(shape in proptest::collection::vec(1usize..4, 0..4), seed in 0u64..1000) {
            let n: usize = shape.iter().product();
            let data: Vec<f64> = (0..n).map(|i| (i as f64 + seed as f64).sin() * 1e3).collect();
            let t = Tensor::new(shape, data).unwrap();
            proptest::prop_assert_eq!(decode(&encode(&t)).unwrap(), t);
        }
    }
}
