//! In-memory embedding store and its little-endian binary file format.
//!
//! ```text
//! magic     "IDAE"
//! version   u32 = 1
//! count     u32
//! dim       u32
//! labels    u8 (0 or 1)
//! rows      count * dim * f32, row-major
//! labels    count * u64 (only if the flag is 1)
//! ```
//!
//! Rows are held as `f64` for arithmetic, but every stored value is rounded to the
//! nearest `f32` on insertion so that save/load round-trips bit for bit.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::embedding::{l2_norm, normalize, Embedding, NORM_TOLERANCE};
use crate::error::{Error, Result};

pub const STORE_MAGIC: [u8; 4] = *b"IDAE";
pub const STORE_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 4 + 4 + 1;

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore {
    dim: usize,
    data: Vec<f64>,
    labels: Option<Vec<u64>>,
}

impl EmbeddingStore {
    /// An empty store. `labeled` decides whether every row must carry an identity label.
    pub fn new(dim: usize, labeled: bool) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("dim", "must be positive"));
        }
        Ok(EmbeddingStore {
            dim,
            data: Vec::new(),
            labels: labeled.then(Vec::new),
        })
    }

    pub fn from_embeddings(dim: usize, rows: &[Embedding], labels: Option<Vec<u64>>) -> Result<Self> {
        if let Some(l) = &labels {
            if l.len() != rows.len() {
                return Err(Error::invalid(
                    "labels",
                    format!("{} labels for {} rows", l.len(), rows.len()),
                ));
            }
        }
        let mut store = EmbeddingStore::new(dim, labels.is_some())?;
        store.data.reserve(rows.len() * dim);
        for (i, row) in rows.iter().enumerate() {
            store.push(row, labels.as_ref().map(|l| l[i]))?;
        }
        Ok(store)
    }

    /// Append a row. The label must be present exactly when the store is labeled.
    pub fn push(&mut self, e: &Embedding, label: Option<u64>) -> Result<()> {
        if e.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: e.dim(),
            });
        }
        match (&mut self.labels, label) {
            (Some(labels), Some(l)) => labels.push(l),
            (None, None) => {}
            (Some(_), None) => return Err(Error::invalid("label", "store is labeled; row has no label")),
            (None, Some(_)) => return Err(Error::invalid("label", "store is unlabeled; row has a label")),
        }
        self.data.extend(e.as_slice().iter().map(|&v| v as f32 as f64));
        Ok(())
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn embedding(&self, i: usize) -> Embedding {
        Embedding::from_unit_unchecked(self.row(i).to_vec())
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.data.chunks_exact(self.dim)
    }

    pub fn labels(&self) -> Option<&[u64]> {
        self.labels.as_deref()
    }

    pub fn label(&self, i: usize) -> Option<u64> {
        self.labels.as_ref().map(|l| l[i])
    }

    /// Flat row-major view of all values.
    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    /// A new store holding the given rows, in the given order.
    pub fn select(&self, indices: &[usize]) -> EmbeddingStore {
        let mut data = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        EmbeddingStore {
            dim: self.dim,
            data,
            labels: self.labels.as_ref().map(|l| indices.iter().map(|&i| l[i]).collect()),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let count = self.len();
        let mut out = Vec::with_capacity(HEADER_LEN + count * self.dim * 4 + count * 8);
        out.extend_from_slice(&STORE_MAGIC);
        out.extend_from_slice(&STORE_VERSION.to_le_bytes());
        out.extend_from_slice(&(count as u32).to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.push(self.labels.is_some() as u8);
        for &v in &self.data {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
        if let Some(labels) = &self.labels {
            for l in labels {
                out.extend_from_slice(&l.to_le_bytes());
            }
        }
        out
    }

    /// Parse the binary format. Rows whose norm is off by more than the unit tolerance
    /// are re-normalized; rows already on the sphere are kept exactly as stored.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        const WHAT: &str = "embedding store";
        if bytes.len() < 4 {
            return Err(Error::Truncated {
                what: WHAT,
                expected: HEADER_LEN,
                found: bytes.len(),
            });
        }
        let magic: [u8; 4] = bytes[..4].try_into().unwrap();
        if magic != STORE_MAGIC {
            return Err(Error::BadMagic {
                what: WHAT,
                expected: STORE_MAGIC,
                found: magic,
            });
        }
        if bytes.len() < HEADER_LEN {
            return Err(Error::Truncated {
                what: WHAT,
                expected: HEADER_LEN,
                found: bytes.len(),
            });
        }
        let version = read_u32(bytes, 4);
        if version != STORE_VERSION {
            return Err(Error::UnsupportedVersion { what: WHAT, version });
        }
        let count = read_u32(bytes, 8) as usize;
        let dim = read_u32(bytes, 12) as usize;
        let has_labels = match bytes[16] {
            0 => false,
            1 => true,
            other => {
                return Err(Error::HeaderMismatch {
                    what: WHAT,
                    detail: format!("label flag must be 0 or 1, found {other}"),
                })
            }
        };
        if dim == 0 {
            return Err(Error::HeaderMismatch {
                what: WHAT,
                detail: "dim must be positive".into(),
            });
        }
        let payload = count * dim * 4 + if has_labels { count * 8 } else { 0 };
        let expected = HEADER_LEN + payload;
        if bytes.len() < expected {
            return Err(Error::Truncated {
                what: WHAT,
                expected,
                found: bytes.len(),
            });
        }
        if bytes.len() > expected {
            return Err(Error::HeaderMismatch {
                what: WHAT,
                detail: format!(
                    "payload is {} bytes but header (count={count}, dim={dim}) implies {payload}",
                    bytes.len() - HEADER_LEN
                ),
            });
        }

        let mut data = Vec::with_capacity(count * dim);
        let body = &bytes[HEADER_LEN..HEADER_LEN + count * dim * 4];
        for row in body.chunks_exact(dim * 4) {
            let values: Vec<f64> = row
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
                .collect();
            if (l2_norm(&values) - 1.0).abs() <= NORM_TOLERANCE {
                data.extend_from_slice(&values);
            } else {
                data.extend(normalize(&values)?.as_slice().iter().map(|&v| v as f32 as f64));
            }
        }
        let labels = has_labels.then(|| {
            bytes[HEADER_LEN + count * dim * 4..]
                .chunks_exact(8)
                .map(|b| u64::from_le_bytes(b.try_into().unwrap()))
                .collect()
        });
        Ok(EmbeddingStore { dim, data, labels })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(fs::File::create(path)?);
        w.write_all(&self.to_bytes())?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&crate::io::read_file(path.as_ref())?)
    }
}

fn read_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap())
}
