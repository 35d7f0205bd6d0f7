// GDE1 embedding interchange format (all integers little-endian):
//
//   magic  "GDE1"            4 bytes
//   d      u32
//   count  u64
//   data   count * d * f32   row-major
//   index  count * (u32 byte length, UTF-8 id bytes)

use std::fs;
use std::path::Path;

use super::EncodeError;

pub const MAGIC: &[u8; 4] = b"GDE1";
const HEADER_LEN: usize = 4 + 4 + 8;

/// Read-only set of id-tagged vectors sharing one dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingStore {
    d: usize,
    ids: Vec<String>,
    data: Vec<f32>,
}

impl EmbeddingStore {
    pub fn new(d: usize, ids: Vec<String>, data: Vec<f32>) -> Result<Self, EncodeError> {
        if d == 0 || data.len() != ids.len() * d {
            return Err(EncodeError::InvalidHeader(format!(
                "{} values do not form {} rows of dimension {d}",
                data.len(),
                ids.len()
            )));
        }
        Ok(EmbeddingStore { d, ids, data })
    }

    pub fn from_rows<I, S>(d: usize, rows: I) -> Result<Self, EncodeError>
    where
        I: IntoIterator<Item = (S, Vec<f32>)>,
        S: Into<String>,
    {
        let mut ids = Vec::new();
        let mut data = Vec::new();
        for (id, v) in rows {
            if v.len() != d {
                return Err(EncodeError::DimensionMismatch { expected: d, found: v.len() });
            }
            ids.push(id.into());
            data.extend_from_slice(&v);
        }
        EmbeddingStore::new(d, ids, data)
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn id(&self, i: usize) -> &str {
        &self.ids[i]
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn vector(&self, i: usize) -> &[f32] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn find(&self, id: &str) -> Option<&[f32]> {
        self.ids.iter().position(|x| x == id).map(|i| self.vector(i))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f32])> {
        self.ids.iter().map(String::as_str).zip(self.data.chunks(self.d))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.data.len() * 4);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.d as u32).to_le_bytes());
        out.extend_from_slice(&(self.ids.len() as u64).to_le_bytes());
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for id in &self.ids {
            out.extend_from_slice(&(id.len() as u32).to_le_bytes());
            out.extend_from_slice(id.as_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, EncodeError> {
        if bytes.len() < 4 || &bytes[..4] != MAGIC {
            return Err(EncodeError::BadMagic(bytes.iter().take(4).copied().collect()));
        }
        if bytes.len() < HEADER_LEN {
            return Err(EncodeError::Truncated { needed: HEADER_LEN, available: bytes.len() });
        }
        let d = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let count = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        if d == 0 {
            return Err(EncodeError::InvalidHeader("dimension is zero".into()));
        }
        let payload = count
            .checked_mul(d)
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| EncodeError::InvalidHeader(format!("count {count} x d {d} overflows")))?;
        let mut pos = HEADER_LEN;
        if bytes.len() < pos + payload {
            return Err(EncodeError::Truncated { needed: pos + payload, available: bytes.len() });
        }
        let data = bytes[pos..pos + payload]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        pos += payload;
        let mut ids = Vec::with_capacity(count);
        for _ in 0..count {
            if bytes.len() < pos + 4 {
                return Err(EncodeError::Truncated { needed: pos + 4, available: bytes.len() });
            }
            let n = u32::from_le_bytes(bytes[pos..pos + 4].try_into().unwrap()) as usize;
            pos += 4;
            if bytes.len() < pos + n {
                return Err(EncodeError::Truncated { needed: pos + n, available: bytes.len() });
            }
            let id = std::str::from_utf8(&bytes[pos..pos + n]).map_err(|_| EncodeError::BadId(ids.len()))?;
            ids.push(id.to_string());
            pos += n;
        }
        if pos != bytes.len() {
            return Err(EncodeError::TrailingBytes(bytes.len() - pos));
        }
        EmbeddingStore::new(d, ids, data)
    }
}

pub fn save_embedding_store(store: &EmbeddingStore, path: &Path) -> Result<(), EncodeError> {
    fs::write(path, store.to_bytes())?;
    Ok(())
}

pub fn load_embedding_store(path: &Path) -> Result<EmbeddingStore, EncodeError> {
    EmbeddingStore::from_bytes(&fs::read(path)?)
}

/// Loads a store and rejects it unless its dimension is `expected_d`.
pub fn load_embedding_store_with_dim(path: &Path, expected_d: usize) -> Result<EmbeddingStore, EncodeError> {
    let s = load_embedding_store(path)?;
    if s.dim() != expected_d {
        return Err(EncodeError::DimensionMismatch { expected: expected_d, found: s.dim() });
    }
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(count: usize, d: usize) -> EmbeddingStore {
        EmbeddingStore::from_rows(d, (0..count).map(|i| (format!("id-{i}"), (0..d).map(|j| (i * d + j) as f32 * 0.5).collect())))
            .unwrap()
    }

    #[test]
    fn header_layout_is_exact() {
        let b = sample(2, 3).to_bytes();
        assert_eq!(&b[..4], b"GDE1");
        assert_eq!(&b[4..8], &3u32.to_le_bytes());
        assert_eq!(&b[8..16], &2u64.to_le_bytes());
        assert_eq!(&b[16..20], &0.0f32.to_le_bytes());
        assert_eq!(&b[20..24], &0.5f32.to_le_bytes());
        let idx = 16 + 2 * 3 * 4;
        assert_eq!(&b[idx..idx + 4], &4u32.to_le_bytes());
        assert_eq!(&b[idx + 4..idx + 8], b"id-0");
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.gde");
        let s = sample(5, 4);
        save_embedding_store(&s, &p).unwrap();
        assert_eq!(load_embedding_store(&p).unwrap(), s);
    }

    #[test]
    fn missing_row_is_truncation() {
        let s = sample(10, 4);
        let mut b = s.to_bytes();
        b.truncate(16 + 9 * 4 * 4);
        assert!(matches!(EmbeddingStore::from_bytes(&b), Err(EncodeError::Truncated { .. })));
    }

    #[test]
    fn bad_magic_and_dim_mismatch_are_distinct() {
        let mut b = sample(1, 2).to_bytes();
        b[0] = b'X';
        assert!(matches!(EmbeddingStore::from_bytes(&b), Err(EncodeError::BadMagic(_))));
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.gde");
        save_embedding_store(&sample(1, 2), &p).unwrap();
        assert!(matches!(
            load_embedding_store_with_dim(&p, 3),
            Err(EncodeError::DimensionMismatch { expected: 3, found: 2 })
        ));
    }

    #[test]
    fn trailing_bytes_rejected() {
        let mut b = sample(1, 2).to_bytes();
        b.push(0);
        assert!(matches!(EmbeddingStore::from_bytes(&b), Err(EncodeError::TrailingBytes(1))));
    }
}
