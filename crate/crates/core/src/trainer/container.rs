//! Named-tensor container shared by checkpoints and feature archives.
//!
//! Little-endian layout: magic `SSCN`, format version (u32), entry count
//! (u32), then per entry the name length (u32), UTF-8 name, dtype code (u8,
//! 0 = f32, 1 = f64), rank (u8), dims (u64 each) and raw data. A CRC32 of all
//! preceding bytes closes the file.

use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::{Real, Tensor};

pub const MAGIC: [u8; 4] = *b"SSCN";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub enum StoredTensor {
    F32(Tensor<f32>),
    F64(Tensor<f64>),
}

impl StoredTensor {
    pub fn shape(&self) -> &[usize] {
        match self {
            StoredTensor::F32(t) => t.shape(),
            StoredTensor::F64(t) => t.shape(),
        }
    }

    pub fn dtype_code(&self) -> u8 {
        match self {
            StoredTensor::F32(_) => f32::DTYPE,
            StoredTensor::F64(_) => f64::DTYPE,
        }
    }

    /// The tensor converted to `F` (exact when the stored dtype is `F`).
    pub fn to_real<F: Real>(&self) -> Tensor<F> {
        match self {
            StoredTensor::F32(t) => t.cast(),
            StoredTensor::F64(t) => t.cast(),
        }
    }

    /// Exact access requiring the stored dtype to be `F`.
    pub fn exact<F: Real>(&self, name: &str) -> Result<Tensor<F>> {
        if self.dtype_code() != F::DTYPE {
            return Err(Error::Data(format!(
                "tensor {name} has dtype code {}, expected {}",
                self.dtype_code(),
                F::DTYPE
            )));
        }
        Ok(self.to_real())
    }
}

impl From<Tensor<f32>> for StoredTensor {
    fn from(t: Tensor<f32>) -> Self {
        StoredTensor::F32(t)
    }
}

impl From<Tensor<f64>> for StoredTensor {
    fn from(t: Tensor<f64>) -> Self {
        StoredTensor::F64(t)
    }
}

/// Ordered collection of uniquely named tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct NamedTensors {
    entries: Vec<(String, StoredTensor)>,
}

impl NamedTensors {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, t: impl Into<StoredTensor>) -> Result<()> {
        let name = name.into();
        if self.get(&name).is_some() {
            return Err(Error::arg(format!("duplicate tensor name {name:?}")));
        }
        let t = t.into();
        if t.shape().len() > usize::from(u8::MAX) {
            return Err(Error::arg(format!("tensor {name:?} has too many dimensions")));
        }
        self.entries.push((name, t));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&StoredTensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn require(&self, name: &str) -> Result<&StoredTensor> {
        self.get(name).ok_or_else(|| Error::Lookup(name.to_string()))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &StoredTensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (name, t) in &self.entries {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(t.dtype_code());
            out.push(t.shape().len() as u8);
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            match t {
                StoredTensor::F32(t) => t.data().iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
                StoredTensor::F64(t) => t.data().iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(4)?;
        if magic != MAGIC {
            return Err(Error::Format {
                offset: 0,
                message: format!("bad magic {magic:?}, expected \"SSCN\""),
            });
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Version {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        if bytes.len() < 16 {
            return Err(Error::Truncated {
                offset: bytes.len() as u64,
                needed: 16 - bytes.len() as u64,
                available: 0,
            });
        }
        let body = bytes.len() - 4;
        r.bytes = &bytes[..body];
        let count = r.u32()?;
        let mut out = NamedTensors::new();
        for _ in 0..count {
            let at = r.pos as u64;
            let len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| Error::Format {
                    offset: at + 4,
                    message: "tensor name is not valid UTF-8".into(),
                })?
                .to_string();
            let dtype_at = r.pos as u64;
            let dtype = r.u8()?;
            let rank = r.u8()? as usize;
            let mut dims = Vec::with_capacity(rank);
            for _ in 0..rank {
                let d = r.u64()?;
                dims.push(usize::try_from(d).map_err(|_| Error::Format {
                    offset: r.pos as u64 - 8,
                    message: format!("dimension {d} too large"),
                })?);
            }
            let n = dims.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
            let width = match dtype {
                0 => 4,
                1 => 8,
                other => {
                    return Err(Error::Format {
                        offset: dtype_at,
                        message: format!("unknown dtype code {other} for tensor {name:?}"),
                    })
                }
            };
            let Some(size) = n.and_then(|n| n.checked_mul(width)) else {
                return Err(Error::Format {
                    offset: dtype_at + 2,
                    message: format!("tensor {name:?} dimensions overflow"),
                });
            };
            let raw = r.take(size)?;
            let t = if dtype == 0 {
                let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
                StoredTensor::F32(Tensor::new(&dims, data)?)
            } else {
                let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
                StoredTensor::F64(Tensor::new(&dims, data)?)
            };
            if out.get(&name).is_some() {
                return Err(Error::Format {
                    offset: at,
                    message: format!("duplicate tensor name {name:?}"),
                });
            }
            out.entries.push((name, t));
        }
        if r.pos != body {
            return Err(Error::Format {
                offset: r.pos as u64,
                message: format!("{} unexpected bytes after the last entry", body - r.pos),
            });
        }
        let stored = u32::from_le_bytes(bytes[body..].try_into().unwrap());
        let computed = crc32fast::hash(&bytes[..body]);
        if stored != computed {
            return Err(Error::Checksum { stored, computed });
        }
        Ok(out)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let available = self.bytes.len() - self.pos;
        if n > available {
            return Err(Error::Truncated {
                offset: self.pos as u64,
                needed: n as u64,
                available: available as u64,
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> NamedTensors {
        let mut c = NamedTensors::new();
        c.push("a", Tensor::new(&[2, 3], vec![1.0f32, -2.5, 3.25, 0.0, f32::MIN_POSITIVE, 7.0]).unwrap())
            .unwrap();
        c.push("b.c", Tensor::new(&[1], vec![std::f64::consts::PI]).unwrap()).unwrap();
        c.push("empty", Tensor::<f32>::new(&[0, 4], vec![]).unwrap()).unwrap();
        c
    }

    #[test]
    fn layout_matches_by_hand() {
        let mut c = NamedTensors::new();
        c.push("x", Tensor::new(&[1], vec![1.0f32]).unwrap()).unwrap();
        let b = c.to_bytes();
        let mut want = b"SSCN".to_vec();
        want.extend([1, 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0, b'x', 0, 1]);
        want.extend(1u64.to_le_bytes());
        want.extend(1.0f32.to_le_bytes());
        let crc = crc32fast::hash(&want);
        want.extend(crc.to_le_bytes());
        assert_eq!(b, want);
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let c = sample();
        let b = c.to_bytes();
        let back = NamedTensors::from_bytes(&b).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_bytes(), b);
    }

    #[test]
    fn distinct_error_kinds() {
        let b = sample().to_bytes();
        let mut bad = b.clone();
        bad[0] = b'X';
        assert!(matches!(NamedTensors::from_bytes(&bad), Err(Error::Format { offset: 0, .. })));
        let mut bad = b.clone();
        bad[4] = 9;
        assert!(matches!(NamedTensors::from_bytes(&bad), Err(Error::Version { found: 9, .. })));
        assert!(matches!(NamedTensors::from_bytes(&b[..b.len() - 9]), Err(Error::Truncated { .. })));
        let mut bad = b.clone();
        let last_data = b.len() - 5;
        bad[last_data] ^= 0x01;
        assert!(matches!(NamedTensors::from_bytes(&bad), Err(Error::Checksum { .. })));
    }

    #[test]
    fn every_single_flipped_byte_is_rejected() {
        let b = sample().to_bytes();
        for i in 0..b.len() {
            let mut bad = b.clone();
            bad[i] ^= 0x10;
            assert!(NamedTensors::from_bytes(&bad).is_err(), "byte {i}");
        }
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut c = sample();
        assert!(c.push("a", Tensor::scalar(0.0f32)).is_err());
    }
}
