//! Binary parameter checkpoints.
//!
//! Layout (little-endian): `"PPC1"`, `u32` entry count, then per entry a
//! `u16` name length, UTF-8 name, `u8` rank, `u32` dims, and `f32` data in
//! row-major order.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::{Real, Tensor};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"PPC1";

/// Ordered collection of named float32 tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub entries: Vec<(String, Tensor<f32>)>,
}

impl Checkpoint {
    pub fn push<T: Real>(&mut self, name: impl Into<String>, t: &Tensor<T>) {
        self.entries.push((name.into(), t.cast()));
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<f32>> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&(self.entries.len() as u32).to_le_bytes())?;
        for (name, t) in &self.entries {
            let bytes = name.as_bytes();
            let len = u16::try_from(bytes.len())
                .map_err(|_| Error::Format(format!("parameter name too long: {name}")))?;
            w.write_all(&len.to_le_bytes())?;
            w.write_all(bytes)?;
            let rank = u8::try_from(t.rank())
                .map_err(|_| Error::Format(format!("rank too large for {name}")))?;
            w.write_all(&[rank])?;
            for &d in t.shape() {
                w.write_all(&(d as u32).to_le_bytes())?;
            }
            for v in t.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("not a PPC1 checkpoint".into()));
        }
        let count = read_u32(&mut r)?;
        let mut entries = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let mut len = [0u8; 2];
            r.read_exact(&mut len)?;
            let mut name = vec![0u8; u16::from_le_bytes(len) as usize];
            r.read_exact(&mut name)?;
            let name = String::from_utf8(name)
                .map_err(|_| Error::Format("parameter name is not UTF-8".into()))?;
            let mut rank = [0u8; 1];
            r.read_exact(&mut rank)?;
            let shape = (0..rank[0])
                .map(|_| read_u32(&mut r).map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let mut raw = vec![0u8; n * 4];
            r.read_exact(&mut raw)?;
            let data = raw
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect();
            let t = Tensor::new(shape, data).map_err(|e| Error::Format(e.to_string()))?;
            entries.push((name, t));
        }
        Ok(Checkpoint { entries })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(fs::read(path)?.as_slice())
    }
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let mut ck = Checkpoint::default();
        ck.push("w", &Tensor::<f32>::new(vec![2], vec![1.0, -2.5]).unwrap());
        let mut buf = Vec::new();
        ck.write_to(&mut buf).unwrap();
        let expected: Vec<u8> = [
            b"PPC1".as_slice(),
            &1u32.to_le_bytes(),
            &1u16.to_le_bytes(),
            b"w",
            &[1u8],
            &2u32.to_le_bytes(),
            &1.0f32.to_le_bytes(),
            &(-2.5f32).to_le_bytes(),
        ]
        .concat();
        assert_eq!(buf, expected);
    }

    #[test]
    fn rejects_bad_magic() {
        assert!(Checkpoint::read_from(&b"XXXX\0\0\0\0"[..]).is_err());
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(
            shapes in prop::collection::vec(prop::collection::vec(1usize..5, 1..4), 0..5),
            seed in any::<u32>(),
        ) {
            let mut ck = Checkpoint::default();
            for (i, shape) in shapes.iter().enumerate() {
                let t = Tensor::<f32>::from_fn(shape, |j| {
                    f32::from_bits(seed.wrapping_mul(2654435761).wrapping_add(j as u32 * 97 + i as u32) & 0x7f7f_ffff)
                });
                ck.entries.push((format!("layer{i}.weight"), t));
            }
            let mut buf = Vec::new();
            ck.write_to(&mut buf).unwrap();
            let back = Checkpoint::read_from(buf.as_slice()).unwrap();
            prop_assert_eq!(back.entries.len(), ck.entries.len());
            for ((na, ta), (nb, tb)) in ck.entries.iter().zip(&back.entries) {
                prop_assert_eq!(na, nb);
                prop_assert_eq!(ta.shape(), tb.shape());
                let bits_a: Vec<u32> = ta.data().iter().map(|v| v.to_bits()).collect();
                let bits_b: Vec<u32> = tb.data().iter().map(|v| v.to_bits()).collect();
                prop_assert_eq!(bits_a, bits_b);
            }
        }
    }
}
