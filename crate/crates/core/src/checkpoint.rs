//! Bit-exact binary checkpoint format.
//!
//! Layout: magic `ASMLPCK1`, u32 LE version, u32 LE tensor count, then per
//! tensor: u16 LE name length + UTF-8 name, u8 dtype code (1 = f32,
//! 2 = f64), u8 rank, rank x u32 LE dims, raw little-endian element bytes in
//! row-major order. The file ends with a u64 LE CRC-64 (XZ polynomial,
//! reflected, init/xorout all-ones) of every preceding byte.
//!
//! Integer state (steps, epochs, rng positions) rides along as f64 tensors;
//! values are split into u32 halves first so the encoding is lossless.

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};
use std::io::{Read, Write};
use std::path::Path;

pub const MAGIC: &[u8; 8] = b"ASMLPCK1";
pub const VERSION: u32 = 1;

/// CRC-64/XZ (reflected, poly 0x42F0E1EBA9EA3693).
pub fn crc64(bytes: &[u8]) -> u64 {
    const POLY_REFLECTED: u64 = 0xC96C_5795_D787_0F42;
    static TABLE: std::sync::OnceLock<[u64; 256]> = std::sync::OnceLock::new();
    let table = TABLE.get_or_init(|| {
        let mut t = [0u64; 256];
        for (i, slot) in t.iter_mut().enumerate() {
            let mut crc = i as u64;
            for _ in 0..8 {
                crc = if crc & 1 == 1 { (crc >> 1) ^ POLY_REFLECTED } else { crc >> 1 };
            }
            *slot = crc;
        }
        t
    });
    let mut crc = !0u64;
    for &b in bytes {
        crc = table[((crc ^ b as u64) & 0xff) as usize] ^ (crc >> 8);
    }
    !crc
}

/// A tensor of either precision, as stored on disk.
#[derive(Clone, Debug, PartialEq)]
pub enum AnyTensor {
    F32(Tensor<f32>),
    F64(Tensor<f64>),
}

impl AnyTensor {
    pub fn dtype_code(&self) -> u8 {
        match self {
            AnyTensor::F32(_) => f32::DTYPE_CODE,
            AnyTensor::F64(_) => f64::DTYPE_CODE,
        }
    }

    pub fn dims(&self) -> &[usize] {
        match self {
            AnyTensor::F32(t) => t.dims(),
            AnyTensor::F64(t) => t.dims(),
        }
    }

    pub fn as_f64(&self) -> Tensor<f64> {
        match self {
            AnyTensor::F32(t) => t.cast(),
            AnyTensor::F64(t) => t.clone(),
        }
    }

    pub fn as_f32(&self) -> Tensor<f32> {
        match self {
            AnyTensor::F32(t) => t.clone(),
            AnyTensor::F64(t) => t.cast(),
        }
    }
}

/// Ordered named-tensor container; order is the on-disk order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub entries: Vec<(String, AnyTensor)>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Checkpoint { entries: Vec::new() }
    }

    pub fn push<T: Real>(&mut self, name: impl Into<String>, tensor: Tensor<T>) {
        // dispatch on the dtype code to keep this generic
        let name = name.into();
        if T::DTYPE_CODE == f32::DTYPE_CODE {
            self.entries.push((name, AnyTensor::F32(tensor.cast())));
        } else {
            self.entries.push((name, AnyTensor::F64(tensor.cast())));
        }
    }

    pub fn get(&self, name: &str) -> Option<&AnyTensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// Store a u64 losslessly as a `[2]` f64 tensor of u32 halves.
    pub fn push_u64(&mut self, name: impl Into<String>, v: u64) {
        let t = Tensor::<f64>::from_vec(vec![2], vec![(v & 0xffff_ffff) as f64, (v >> 32) as f64])
            .expect("two elements");
        self.entries.push((name.into(), AnyTensor::F64(t)));
    }

    pub fn get_u64(&self, name: &str) -> Result<u64> {
        let t = self
            .get(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing entry '{name}'")))?
            .as_f64();
        if t.len() != 2 {
            return Err(Error::Checkpoint(format!("entry '{name}' is not a u64 pair")));
        }
        Ok((t.data()[0] as u64) | ((t.data()[1] as u64) << 32))
    }

    /// Store a u128 as four u32 halves (rng word positions).
    pub fn push_u128(&mut self, name: impl Into<String>, v: u128) {
        let parts: Vec<f64> = (0..4).map(|i| ((v >> (32 * i)) & 0xffff_ffff) as f64).collect();
        let t = Tensor::<f64>::from_vec(vec![4], parts).expect("four elements");
        self.entries.push((name.into(), AnyTensor::F64(t)));
    }

    pub fn get_u128(&self, name: &str) -> Result<u128> {
        let t = self
            .get(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing entry '{name}'")))?
            .as_f64();
        if t.len() != 4 {
            return Err(Error::Checkpoint(format!("entry '{name}' is not a u128 quad")));
        }
        let mut v = 0u128;
        for (i, &p) in t.data().iter().enumerate() {
            v |= (p as u128) << (32 * i);
        }
        Ok(v)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        buf.extend_from_slice(&u32::try_from(self.entries.len()).map_err(|_| {
            Error::Checkpoint("too many tensors".into())
        })?.to_le_bytes());
        for (name, tensor) in &self.entries {
            let name_bytes = name.as_bytes();
            let len = u16::try_from(name_bytes.len())
                .map_err(|_| Error::Checkpoint(format!("name '{name}' too long")))?;
            buf.extend_from_slice(&len.to_le_bytes());
            buf.extend_from_slice(name_bytes);
            buf.push(tensor.dtype_code());
            let dims = tensor.dims();
            let rank = u8::try_from(dims.len()).map_err(|_| Error::Checkpoint("rank too high".into()))?;
            buf.push(rank);
            for &d in dims {
                let d = u32::try_from(d).map_err(|_| Error::Checkpoint("dim too large".into()))?;
                buf.extend_from_slice(&d.to_le_bytes());
            }
            match tensor {
                AnyTensor::F32(t) => {
                    for v in t.data() {
                        buf.extend_from_slice(&v.to_le_bytes());
                    }
                }
                AnyTensor::F64(t) => {
                    for v in t.data() {
                        buf.extend_from_slice(&v.to_le_bytes());
                    }
                }
            }
        }
        let crc = crc64(&buf);
        buf.extend_from_slice(&crc.to_le_bytes());
        Ok(buf)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() + 4 + 4 + 8 {
            return Err(Error::Checkpoint("file too short".into()));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 8);
        let stored = u64::from_le_bytes(tail.try_into().expect("eight bytes"));
        let computed = crc64(body);
        if stored != computed {
            return Err(Error::Checkpoint(format!(
                "checksum mismatch: stored {stored:#018x}, computed {computed:#018x}"
            )));
        }
        let mut cur = body;
        let mut take = |n: usize| -> Result<&[u8]> {
            if cur.len() < n {
                return Err(Error::Checkpoint("truncated file".into()));
            }
            let (head, rest) = cur.split_at(n);
            cur = rest;
            Ok(head)
        };
        if take(8)? != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = u32::from_le_bytes(take(4)?.try_into().expect("four bytes"));
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let count = u32::from_le_bytes(take(4)?.try_into().expect("four bytes")) as usize;
        let mut entries = Vec::with_capacity(count);
        for _ in 0..count {
            let name_len = u16::from_le_bytes(take(2)?.try_into().expect("two bytes")) as usize;
            let name = std::str::from_utf8(take(name_len)?)
                .map_err(|_| Error::Checkpoint("name is not UTF-8".into()))?
                .to_string();
            let dtype = take(1)?[0];
            let rank = take(1)?[0] as usize;
            let mut dims = Vec::with_capacity(rank);
            for _ in 0..rank {
                dims.push(u32::from_le_bytes(take(4)?.try_into().expect("four bytes")) as usize);
            }
            let n: usize = dims.iter().product();
            let tensor = match dtype {
                1 => {
                    let raw = take(4 * n)?;
                    let data: Vec<f32> = raw
                        .chunks_exact(4)
                        .map(|c| f32::from_le_bytes(c.try_into().expect("four bytes")))
                        .collect();
                    AnyTensor::F32(Tensor::from_vec(dims, data).map_err(|e| Error::Checkpoint(e.to_string()))?)
                }
                2 => {
                    let raw = take(8 * n)?;
                    let data: Vec<f64> = raw
                        .chunks_exact(8)
                        .map(|c| f64::from_le_bytes(c.try_into().expect("eight bytes")))
                        .collect();
                    AnyTensor::F64(Tensor::from_vec(dims, data).map_err(|e| Error::Checkpoint(e.to_string()))?)
                }
                other => return Err(Error::Checkpoint(format!("unknown dtype code {other}"))),
            };
            entries.push((name, tensor));
        }
        if !cur.is_empty() {
            return Err(Error::Checkpoint("trailing bytes before checksum".into()));
        }
        Ok(Checkpoint { entries })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let bytes = self.to_bytes()?;
        let mut f = std::fs::File::create(path)?;
        f.write_all(&bytes)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn crc64_check_value() {
        // CRC-64/XZ check value for "123456789"
        assert_eq!(crc64(b"123456789"), 0x995D_C9BB_DF19_39FA);
        assert_eq!(crc64(b""), 0);
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let mut ck = Checkpoint::new();
        let mut rng = crate::rng::Stream::new(3, 1);
        let mut a = Tensor::<f32>::zeros(&[3, 4]);
        a.fill_uniform(&mut rng, -1.0, 1.0);
        let mut b = Tensor::<f64>::zeros(&[2, 2, 2, 2]);
        b.fill_uniform(&mut rng, -1.0, 1.0);
        // a few awkward values
        b.data_mut()[0] = f64::MIN_POSITIVE;
        b.data_mut()[1] = -0.0;
        ck.push("model.a", a.clone());
        ck.push("opt.b", b.clone());
        ck.push_u64("state.step", 0xdead_beef_0102_0304);
        ck.push_u128("state.pos", 0x0123_4567_89ab_cdef_0011_2233_4455_6677);

        let bytes = ck.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, ck);
        match back.get("model.a").unwrap() {
            AnyTensor::F32(t) => assert_eq!(t.data(), a.data()),
            _ => panic!("dtype changed"),
        }
        assert_eq!(back.get_u64("state.step").unwrap(), 0xdead_beef_0102_0304);
        assert_eq!(
            back.get_u128("state.pos").unwrap(),
            0x0123_4567_89ab_cdef_0011_2233_4455_6677
        );
        // serialization is deterministic
        assert_eq!(bytes, back.to_bytes().unwrap());
    }

    #[test]
    fn corruption_is_detected() {
        let mut ck = Checkpoint::new();
        ck.push("t", Tensor::<f32>::ones(&[4]));
        let mut bytes = ck.to_bytes().unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x40;
        let err = Checkpoint::from_bytes(&bytes);
        assert!(matches!(err, Err(Error::Checkpoint(_))), "{err:?}");
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("test.ckpt");
        let mut ck = Checkpoint::new();
        ck.push("w", Tensor::<f64>::full(&[2, 3], 0.25));
        ck.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back, ck);
    }
}
