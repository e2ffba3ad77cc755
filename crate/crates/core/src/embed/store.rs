//! The float32 on-disk vector store.
//!
//! Layout (little-endian): magic `"TFVS"`, u16 version (1), u32 dim,
//! u64 count, `count` rows of `dim` float32, then an id table of `count`
//! entries (u16 id byte length + UTF-8 id bytes) in row order.

use std::borrow::Cow;
use std::collections::HashMap;
use std::fs;
use std::path::Path;

use super::{
    l2_norm, read_header, read_id_table, write_header, write_id_table, EmbedError, Embedding,
    Reader, VectorSource, UNIT_NORM_TOLERANCE,
};
use crate::util::atomic_write;

const MAGIC: [u8; 4] = *b"TFVS";

/// An append-only, id-addressed matrix of unit-normalized float32 vectors.
#[derive(Debug, Clone)]
pub struct EmbeddingStore {
    dim: usize,
    ids: Vec<String>,
    index: HashMap<String, usize>,
    data: Vec<f32>,
}

impl EmbeddingStore {
    pub fn new(dim: usize) -> Result<Self, EmbedError> {
        if dim == 0 {
            return Err(EmbedError::InvalidVector(
                "store dimension must be positive".into(),
            ));
        }
        Ok(Self {
            dim,
            ids: Vec::new(),
            index: HashMap::new(),
            data: Vec::new(),
        })
    }

    /// Append one unit-normalized embedding under a fresh id.
    pub fn append(&mut self, id: impl Into<String>, emb: &Embedding) -> Result<(), EmbedError> {
        let id = id.into();
        if emb.dim() != self.dim {
            return Err(EmbedError::DimMismatch {
                expected: self.dim,
                got: emb.dim(),
            });
        }
        if emb.is_zero() {
            return Err(EmbedError::NotUnit { norm: 0.0 });
        }
        if self.index.contains_key(&id) {
            return Err(EmbedError::DuplicateId { id });
        }
        self.index.insert(id.clone(), self.ids.len());
        self.ids.push(id);
        self.data.extend_from_slice(emb.values());
        Ok(())
    }

    /// Fetch the stored embedding for `id`, bit-identical to what was
    /// appended.
    pub fn lookup(&self, id: &str) -> Result<Embedding, EmbedError> {
        match self.index.get(id) {
            Some(&row) => Embedding::from_unit(self.row_slice(row).to_vec()),
            None => Err(EmbedError::NotFound { id: id.to_string() }),
        }
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }

    fn row_slice(&self, row: usize) -> &[f32] {
        &self.data[row * self.dim..(row + 1) * self.dim]
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), EmbedError> {
        let path = path.as_ref();
        let mut out = Vec::with_capacity(18 + self.data.len() * 4);
        write_header(&mut out, MAGIC, self.dim, self.ids.len());
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        write_id_table(&mut out, &self.ids)?;
        atomic_write(path, &out).map_err(|source| EmbedError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn open(path: impl AsRef<Path>) -> Result<Self, EmbedError> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|source| EmbedError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut r = Reader::new(&bytes, path);
        let (dim, count) = read_header(&mut r, MAGIC)?;
        let mut data = Vec::with_capacity(count * dim);
        for row in 0..count {
            let raw = r.take(dim * 4)?;
            for chunk in raw.chunks_exact(4) {
                data.push(f32::from_le_bytes(chunk.try_into().unwrap()));
            }
            let norm = l2_norm(&data[row * dim..]);
            if (norm - 1.0).abs() > UNIT_NORM_TOLERANCE {
                return Err(EmbedError::Corrupt {
                    path: path.to_path_buf(),
                    message: format!("row {row} is not unit-normalized (‖v‖ = {norm})"),
                });
            }
        }
        let (ids, index) = read_id_table(&mut r, count)?;
        r.finish()?;
        Ok(Self {
            dim,
            ids,
            index,
            data,
        })
    }
}

impl VectorSource for EmbeddingStore {
    fn dim(&self) -> usize {
        self.dim
    }
    fn len(&self) -> usize {
        self.ids.len()
    }
    fn ids(&self) -> &[String] {
        &self.ids
    }
    fn row(&self, i: usize) -> Cow<'_, [f32]> {
        Cow::Borrowed(self.row_slice(i))
    }
    fn index_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }
}
