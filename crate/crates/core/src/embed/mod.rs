//! Teacher/provider embeddings: on-disk vector stores, an int8-quantized
//! variant, and an HTTP embedding client with a persistent cache.
//!
//! Embeddings are stored unit-normalized so that cosine similarity reduces to
//! a dot product everywhere downstream. The one sanctioned exception is the
//! all-zero vector, which appears only as the reconstruction of an all-zero
//! quantized row.

use std::borrow::Cow;
use std::collections::HashMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

mod provider;
mod quant;
mod store;

pub use provider::{ProviderClient, ProviderConfig};
pub use quant::{quantize_store, QuantizedStore};
pub use store::EmbeddingStore;

/// Tolerance on |‖v‖₂ − 1| for vectors that claim to be unit-normalized.
pub const UNIT_NORM_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: bad magic (expected {expected:?})")]
    BadMagic { path: PathBuf, expected: [u8; 4] },
    #[error("{path}: unsupported version {version}")]
    BadVersion { path: PathBuf, version: u16 },
    #[error("{path}: corrupt store: {message}")]
    Corrupt { path: PathBuf, message: String },
    #[error("no embedding stored for id {id:?}")]
    NotFound { id: String },
    #[error("duplicate id {id:?}")]
    DuplicateId { id: String },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("vector is not unit-normalized (‖v‖ = {norm})")]
    NotUnit { norm: f64 },
    #[error("invalid vector: {0}")]
    InvalidVector(String),
    #[error("store is empty")]
    EmptyStore,
    #[error("{count} id(s) have no stored embedding (first: {first:?})")]
    MissingIds { count: usize, first: String },
    #[error("invalid provider config: {0}")]
    Config(String),
    #[error("provider returned HTTP {status}: {body}")]
    Provider { status: u16, body: String },
    #[error("transport error talking to provider: {0}")]
    Transport(String),
    #[error("malformed provider response: {0}")]
    BadResponse(String),
}

/// A fixed-dimension float32 vector, unit-normalized except for the sanctioned
/// all-zero value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Embedding {
    values: Vec<f32>,
}

impl Embedding {
    /// Normalize an arbitrary non-zero finite vector to unit length
    /// (accumulating in f64).
    pub fn unit(values: Vec<f32>) -> Result<Self, EmbedError> {
        if values.is_empty() {
            return Err(EmbedError::InvalidVector("empty vector".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(EmbedError::InvalidVector(
                "vector contains non-finite values".into(),
            ));
        }
        let norm = l2_norm(&values);
        if norm == 0.0 {
            return Err(EmbedError::InvalidVector(
                "cannot normalize the zero vector".into(),
            ));
        }
        let values = values.iter().map(|&v| (v as f64 / norm) as f32).collect();
        Ok(Self { values })
    }

    /// Wrap a vector that is already unit-normalized (within
    /// [`UNIT_NORM_TOLERANCE`]). The values are taken verbatim, so stored
    /// bytes survive round trips bit for bit.
    pub fn from_unit(values: Vec<f32>) -> Result<Self, EmbedError> {
        if values.is_empty() {
            return Err(EmbedError::InvalidVector("empty vector".into()));
        }
        let norm = l2_norm(&values);
        if (norm - 1.0).abs() > UNIT_NORM_TOLERANCE {
            return Err(EmbedError::NotUnit { norm });
        }
        Ok(Self { values })
    }

    /// The all-zero vector of the given dimension. Only quantized stores
    /// produce this, when reconstructing an all-zero row.
    pub fn zero(dim: usize) -> Self {
        Self {
            values: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }
}

pub(crate) fn l2_norm(values: &[f32]) -> f64 {
    values
        .iter()
        .map(|&v| {
            let v = v as f64;
            v * v
        })
        .sum::<f64>()
        .sqrt()
}

/// Read-only access to a dimension-homogeneous set of id-addressed vectors.
///
/// Implemented by [`EmbeddingStore`] (verbatim rows), [`QuantizedStore`]
/// (rows reconstructed on the fly), and [`SubsetSource`] (a corpus-restricted
/// view of either).
pub trait VectorSource: Sync {
    fn dim(&self) -> usize;
    fn len(&self) -> usize;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
    /// Ids in row order.
    fn ids(&self) -> &[String];
    /// Row `i` as unit-normalized values. Panics if out of range.
    fn row(&self, i: usize) -> Cow<'_, [f32]>;
    fn index_of(&self, id: &str) -> Option<usize>;
    fn vector_of(&self, id: &str) -> Result<Cow<'_, [f32]>, EmbedError> {
        match self.index_of(id) {
            Some(i) => Ok(self.row(i)),
            None => Err(EmbedError::NotFound { id: id.to_string() }),
        }
    }
}

/// A view of a [`VectorSource`] restricted to a chosen id subset, so ranking
/// can run against one dataset's corpus while embeddings live in a shared
/// store.
#[derive(Debug)]
pub struct SubsetSource<'a, S: VectorSource> {
    source: &'a S,
    ids: Vec<String>,
    rows: Vec<usize>,
    index: HashMap<String, usize>,
}

impl<'a, S: VectorSource> SubsetSource<'a, S> {
    /// Restrict `source` to `ids` (kept in the given order). Ids absent from
    /// the source are collected into one [`EmbedError::MissingIds`] error.
    pub fn new<I, T>(source: &'a S, ids: I) -> Result<Self, EmbedError>
    where
        I: IntoIterator<Item = T>,
        T: AsRef<str>,
    {
        let mut subset_ids = Vec::new();
        let mut rows = Vec::new();
        let mut index = HashMap::new();
        let mut missing: Vec<String> = Vec::new();
        for id in ids {
            let id = id.as_ref();
            match source.index_of(id) {
                Some(row) => {
                    if index.insert(id.to_string(), subset_ids.len()).is_some() {
                        return Err(EmbedError::DuplicateId { id: id.to_string() });
                    }
                    subset_ids.push(id.to_string());
                    rows.push(row);
                }
                None => missing.push(id.to_string()),
            }
        }
        if !missing.is_empty() {
            missing.sort();
            missing.dedup();
            return Err(EmbedError::MissingIds {
                count: missing.len(),
                first: missing.remove(0),
            });
        }
        Ok(Self {
            source,
            ids: subset_ids,
            rows,
            index,
        })
    }
}

impl<S: VectorSource> VectorSource for SubsetSource<'_, S> {
    fn dim(&self) -> usize {
        self.source.dim()
    }
    fn len(&self) -> usize {
        self.ids.len()
    }
    fn ids(&self) -> &[String] {
        &self.ids
    }
    fn row(&self, i: usize) -> Cow<'_, [f32]> {
        self.source.row(self.rows[i])
    }
    fn index_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }
}

/// Little-endian cursor over a loaded store file; all read failures become
/// [`EmbedError::Corrupt`] tagged with the file path.
pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(buf: &'a [u8], path: &'a Path) -> Self {
        Self { buf, pos: 0, path }
    }

    fn corrupt(&self, message: impl Into<String>) -> EmbedError {
        EmbedError::Corrupt {
            path: self.path.to_path_buf(),
            message: message.into(),
        }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8], EmbedError> {
        if self.buf.len() - self.pos < n {
            return Err(self.corrupt(format!(
                "unexpected end of file at byte {} (wanted {n} more)",
                self.pos
            )));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub(crate) fn u16(&mut self) -> Result<u16, EmbedError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    pub(crate) fn u32(&mut self) -> Result<u32, EmbedError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self) -> Result<u64, EmbedError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn f32(&mut self) -> Result<f32, EmbedError> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn string(&mut self) -> Result<String, EmbedError> {
        let len = self.u16()? as usize;
        let bytes = self.take(len)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| self.corrupt("id is not valid UTF-8"))
    }

    pub(crate) fn finish(&self) -> Result<(), EmbedError> {
        if self.pos != self.buf.len() {
            return Err(self.corrupt(format!(
                "{} trailing byte(s) after store payload",
                self.buf.len() - self.pos
            )));
        }
        Ok(())
    }

    pub(crate) fn path(&self) -> &Path {
        self.path
    }
}

/// Shared header parse/serialize for the two store formats.
pub(crate) fn read_header(
    r: &mut Reader<'_>,
    magic: [u8; 4],
) -> Result<(usize, usize), EmbedError> {
    let got = r.take(4)?;
    if got != magic {
        return Err(EmbedError::BadMagic {
            path: r.path().to_path_buf(),
            expected: magic,
        });
    }
    let version = r.u16()?;
    if version != 1 {
        return Err(EmbedError::BadVersion {
            path: r.path().to_path_buf(),
            version,
        });
    }
    let dim = r.u32()? as usize;
    if dim == 0 {
        return Err(EmbedError::Corrupt {
            path: r.path().to_path_buf(),
            message: "dimension must be positive".into(),
        });
    }
    let count = r.u64()? as usize;
    Ok((dim, count))
}

pub(crate) fn write_header(out: &mut Vec<u8>, magic: [u8; 4], dim: usize, count: usize) {
    out.extend_from_slice(&magic);
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&(dim as u32).to_le_bytes());
    out.extend_from_slice(&(count as u64).to_le_bytes());
}

pub(crate) fn write_id_table(out: &mut Vec<u8>, ids: &[String]) -> Result<(), EmbedError> {
    for id in ids {
        let bytes = id.as_bytes();
        if bytes.len() > u16::MAX as usize {
            return Err(EmbedError::InvalidVector(format!(
                "id longer than {} bytes: {:?}…",
                u16::MAX,
                &id[..32]
            )));
        }
        out.extend_from_slice(&(bytes.len() as u16).to_le_bytes());
        out.extend_from_slice(bytes);
    }
    Ok(())
}

pub(crate) fn read_id_table(
    r: &mut Reader<'_>,
    count: usize,
) -> Result<(Vec<String>, HashMap<String, usize>), EmbedError> {
    let mut ids = Vec::with_capacity(count);
    let mut index = HashMap::with_capacity(count);
    for row in 0..count {
        let id = r.string()?;
        if index.insert(id.clone(), row).is_some() {
            return Err(EmbedError::DuplicateId { id });
        }
        ids.push(id);
    }
    Ok((ids, index))
}
