//! Flat named-tensor container.
//!
//! Little-endian layout:
//!
//! ```text
//! magic   8 bytes  "FSGCKPT1"
//! count   u64
//! entry*  name_len u32, name (UTF-8), ndim u32, dims u64 × ndim, values f64 × prod(dims)
//! ```
//!
//! Values are stored as raw IEEE-754 bits, so a save/load round trip is
//! bit-exact (NaN payloads and signed zeros included).

use std::fs;
use std::path::Path;

use crate::error::{LabError, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"FSGCKPT1";

#[derive(Clone, Debug, PartialEq)]
pub struct Entry {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    entries: Vec<Entry>,
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            LabError::Checkpoint(format!(
                "truncated at byte {} (wanted {n} more of {})",
                self.at,
                self.bytes.len()
            ))
        })?;
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn entries(&self) -> &[Entry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Appends an entry; names must be unique.
    pub fn insert(&mut self, name: impl Into<String>, shape: &[usize], data: Vec<f64>) -> Result<()> {
        let name = name.into();
        if self.get(&name).is_some() {
            return Err(LabError::Checkpoint(format!("duplicate entry `{name}`")));
        }
        if shape.iter().product::<usize>() != data.len() {
            return Err(LabError::dim("Checkpoint::insert", shape, &[data.len()]));
        }
        self.entries.push(Entry {
            name,
            shape: shape.to_vec(),
            data,
        });
        Ok(())
    }

    pub fn insert_tensor(&mut self, name: impl Into<String>, t: &Tensor) -> Result<()> {
        self.insert(name, t.shape(), t.data().to_vec())
    }

    pub fn get(&self, name: &str) -> Option<&Entry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn require(&self, name: &str) -> Result<&Entry> {
        self.get(name)
            .ok_or_else(|| LabError::Checkpoint(format!("missing entry `{name}`")))
    }

    /// Reads `name` as a tensor that must have shape `shape`.
    pub fn tensor(&self, name: &str, shape: &[usize]) -> Result<Tensor> {
        let e = self.require(name)?;
        if e.shape != shape {
            return Err(LabError::Checkpoint(format!(
                "entry `{name}` has shape {:?}, expected {shape:?}",
                e.shape
            )));
        }
        Tensor::new(e.shape.clone(), e.data.clone())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.entries.len() as u64).to_le_bytes());
        for e in &self.entries {
            out.extend_from_slice(&(e.name.len() as u32).to_le_bytes());
            out.extend_from_slice(e.name.as_bytes());
            out.extend_from_slice(&(e.shape.len() as u32).to_le_bytes());
            for &d in &e.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in &e.data {
                out.extend_from_slice(&v.to_bits().to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, at: 0 };
        if r.take(8)? != MAGIC {
            return Err(LabError::Checkpoint("bad magic".into()));
        }
        let count = r.u64()?;
        let mut ck = Checkpoint::new();
        for _ in 0..count {
            let len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|e| LabError::Checkpoint(format!("entry name is not UTF-8: {e}")))?
                .to_string();
            let ndim = r.u32()? as usize;
            let shape = (0..ndim)
                .map(|_| r.u64().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let raw = r.take(n.checked_mul(8).ok_or_else(|| {
                LabError::Checkpoint(format!("entry `{name}` is too large"))
            })?)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_bits(u64::from_le_bytes(c.try_into().expect("8 bytes"))))
                .collect();
            ck.insert(name, &shape, data)?;
        }
        if r.at != bytes.len() {
            return Err(LabError::Checkpoint(format!(
                "{} trailing bytes",
                bytes.len() - r.at
            )));
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let mut ck = Checkpoint::new();
        ck.insert("a", &[2, 2], vec![0.1, -0.0, f64::MIN_POSITIVE, 1e300]).unwrap();
        ck.insert("step", &[1], vec![3.0]).unwrap();
        let back = Checkpoint::from_bytes(&ck.to_bytes()).unwrap();
        let bits = |c: &Checkpoint| -> Vec<u64> {
            c.entries().iter().flat_map(|e| e.data.iter().map(|v| v.to_bits())).collect()
        };
        assert_eq!(bits(&ck), bits(&back));
        assert_eq!(back.get("a").unwrap().shape, vec![2, 2]);
    }

    #[test]
    fn rejects_corruption() {
        let mut ck = Checkpoint::new();
        ck.insert("x", &[3], vec![1.0, 2.0, 3.0]).unwrap();
        let bytes = ck.to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Checkpoint::from_bytes(&bad).is_err());
        assert!(ck.insert("x", &[1], vec![0.0]).is_err());
    }
}
