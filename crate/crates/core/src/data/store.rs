//! MVGF: binary map from string id to a `rows × dim` little-endian f32 matrix.
//!
//! ```text
//! "MVGF" | u32 version=1 | u32 dim | u64 count |
//!   count × ( u16 id_len | id bytes | u32 rows | rows·dim × f32 )
//! ```

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::error::{Result, StoreError};

pub const MAGIC: &[u8; 4] = b"MVGF";
pub const VERSION: u32 = 1;

/// Immutable id → matrix store; insertion order is preserved.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureStore {
    dim: usize,
    records: Vec<(String, Vec<f32>)>,
    index: HashMap<String, usize>,
}

impl FeatureStore {
    pub fn new(dim: usize, records: Vec<(String, Vec<f32>)>) -> Result<Self, StoreError> {
        let mut index = HashMap::with_capacity(records.len());
        for (i, (id, values)) in records.iter().enumerate() {
            if values.is_empty() {
                return Err(StoreError::EmptyRecord(id.clone()));
            }
            if dim == 0 || values.len() % dim != 0 {
                return Err(StoreError::RaggedRecord { id: id.clone(), len: values.len(), dim });
            }
            if id.len() > u16::MAX as usize {
                return Err(StoreError::IdTooLong(id.clone()));
            }
            if index.insert(id.clone(), i).is_some() {
                return Err(StoreError::DuplicateId(id.clone()));
            }
        }
        Ok(Self { dim, records, index })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Row-major values of a record.
    pub fn get(&self, id: &str) -> Option<&[f32]> {
        self.index.get(id).map(|&i| self.records[i].1.as_slice())
    }

    pub fn rows(&self, id: &str) -> Option<usize> {
        self.get(id).map(|v| v.len() / self.dim)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.records.iter().map(|(id, _)| id.as_str())
    }

    pub fn records(&self) -> &[(String, Vec<f32>)] {
        &self.records
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let payload: usize = self.records.iter().map(|(id, v)| 2 + id.len() + 4 + 4 * v.len()).sum();
        let mut out = Vec::with_capacity(20 + payload);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.records.len() as u64).to_le_bytes());
        for (id, values) in &self.records {
            out.extend_from_slice(&(id.len() as u16).to_le_bytes());
            out.extend_from_slice(id.as_bytes());
            out.extend_from_slice(&((values.len() / self.dim) as u32).to_le_bytes());
            for v in values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    /// Decodes a complete buffer; trailing bytes are an error.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, StoreError> {
        let (store, used) = Self::decode_prefix(bytes)?;
        if used != bytes.len() {
            return Err(StoreError::TrailingBytes);
        }
        Ok(store)
    }

    /// Decodes a store from the start of `bytes`, returning it and the bytes consumed.
    pub fn decode_prefix(bytes: &[u8]) -> Result<(Self, usize), StoreError> {
        let mut r = Reader { buf: bytes, pos: 0 };
        let magic: [u8; 4] = r.take(4, "magic")?.try_into().expect("4 bytes");
        if &magic != MAGIC {
            return Err(StoreError::BadMagic(magic));
        }
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(StoreError::Version(version));
        }
        let dim = r.u32("dim")? as usize;
        let count = r.u64("record count")?;
        let mut records = Vec::new();
        for _ in 0..count {
            let id_len = r.u16("id length")? as usize;
            let id = std::str::from_utf8(r.take(id_len, "id")?).map_err(|_| StoreError::Utf8)?.to_string();
            let rows = r.u32("row count")? as usize;
            let n = rows.checked_mul(dim).and_then(|n| n.checked_mul(4)).ok_or(StoreError::Truncated("rows"))?;
            let raw = r.take(n, "rows")?;
            let values = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
            records.push((id, values));
        }
        Ok((Self::new(dim, records)?, r.pos))
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], StoreError> {
        if self.buf.len() - self.pos < n {
            return Err(StoreError::Truncated(what));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u16(&mut self, what: &'static str) -> Result<u16, StoreError> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().expect("2 bytes")))
    }
    fn u32(&mut self, what: &'static str) -> Result<u32, StoreError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self, what: &'static str) -> Result<u64, StoreError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
}

pub fn write_feature_store(path: &Path, dim: usize, records: Vec<(String, Vec<f32>)>) -> Result<()> {
    let store = FeatureStore::new(dim, records)?;
    fs::write(path, store.to_bytes())?;
    Ok(())
}

pub fn read_feature_store(path: &Path) -> Result<FeatureStore> {
    Ok(FeatureStore::from_bytes(&fs::read(path)?)?)
}

/// Reads a store and checks its feature width.
pub fn read_feature_store_expecting(path: &Path, dim: usize) -> Result<FeatureStore> {
    let store = read_feature_store(path)?;
    if store.dim() != dim {
        return Err(StoreError::DimMismatch { expected: dim, found: store.dim() }.into());
    }
    Ok(store)
}
