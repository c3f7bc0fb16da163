//! Self-describing little-endian tensor container.
//!
//! Layout: magic `ROCTENS\0`, `u32` version, `u8` dtype, `u32` metadata
//! count followed by (key, value) strings, `u32` tensor count followed by
//! records of (name, `u32` rank, `u64` dims, raw data). Strings are a `u32`
//! byte length plus UTF-8 bytes.

use crate::error::{NnError, Result};
use crate::tensor::Tensor;
use roc_core::Scalar;
use std::path::Path;

pub const MAGIC: &[u8; 8] = b"ROCTENS\0";
pub const FORMAT_VERSION: u32 = 1;

/// Named tensors plus string metadata, in insertion order.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorFile<T> {
    pub meta: Vec<(String, String)>,
    pub tensors: Vec<(String, Tensor<T>)>,
}

impl<T: Scalar> Default for TensorFile<T> {
    fn default() -> Self {
        TensorFile { meta: Vec::new(), tensors: Vec::new() }
    }
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len() as u32);
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let Some(end) = end else {
            return Err(NnError::Format(format!("truncated at byte {}", self.pos)));
        };
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|e| NnError::Format(e.to_string()))
    }
}

impl<T: Scalar> TensorFile<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set_meta(&mut self, key: impl Into<String>, value: impl Into<String>) {
        self.meta.push((key.into(), value.into()));
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn push(&mut self, name: impl Into<String>, t: Tensor<T>) {
        self.tensors.push((name.into(), t));
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, FORMAT_VERSION);
        out.push(T::DTYPE);
        put_u32(&mut out, self.meta.len() as u32);
        for (k, v) in &self.meta {
            put_str(&mut out, k);
            put_str(&mut out, v);
        }
        put_u32(&mut out, self.tensors.len() as u32);
        for (name, t) in &self.tensors {
            put_str(&mut out, name);
            put_u32(&mut out, t.shape().len() as u32);
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in t.data() {
                v.write_le(&mut out);
            }
        }
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader { buf, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(NnError::Format("bad magic".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(NnError::Format(format!("unsupported version {version}")));
        }
        let dtype = r.take(1)?[0];
        if dtype != T::DTYPE {
            return Err(NnError::Format(format!("file dtype {dtype}, expected {} ({})", T::DTYPE, T::NAME)));
        }
        let mut file = TensorFile::new();
        for _ in 0..r.u32()? {
            let k = r.string()?;
            let v = r.string()?;
            file.meta.push((k, v));
        }
        for _ in 0..r.u32()? {
            let name = r.string()?;
            let rank = r.u32()? as usize;
            let shape = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let numel: usize = shape.iter().product();
            let raw = r.take(numel.checked_mul(T::BYTES).ok_or_else(|| NnError::Format("tensor too large".into()))?)?;
            let data = raw.chunks_exact(T::BYTES).map(T::read_le).collect();
            let t = Tensor::new(shape, data).map_err(|e| NnError::Format(format!("tensor {name}: {e}")))?;
            file.tensors.push((name, t));
        }
        if r.pos != buf.len() {
            return Err(NnError::Format(format!("{} trailing bytes", buf.len() - r.pos)));
        }
        Ok(file)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> TensorFile<f64> {
        let mut f = TensorFile::new();
        f.set_meta("arch", "resnet");
        f.push("a", Tensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, -6.5]).unwrap());
        f.push("b", Tensor::scalar(f64::MIN_POSITIVE));
        f
    }

    #[test]
    fn round_trip_bytes() {
        let f = sample();
        assert_eq!(TensorFile::from_bytes(&f.to_bytes()).unwrap(), f);
    }

    #[test]
    fn round_trip_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.bin");
        sample().save(&path).unwrap();
        let back = TensorFile::<f64>::load(&path).unwrap();
        assert_eq!(back.meta("arch"), Some("resnet"));
        assert_eq!(back.get("a").unwrap().shape(), &[2, 3]);
    }

    #[test]
    fn rejects_wrong_dtype_and_truncation() {
        let bytes = sample().to_bytes();
        assert!(matches!(TensorFile::<f32>::from_bytes(&bytes), Err(NnError::Format(_))));
        assert!(matches!(TensorFile::<f64>::from_bytes(&bytes[..bytes.len() - 3]), Err(NnError::Format(_))));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(TensorFile::<f64>::from_bytes(&bad).is_err());
    }
}
