//! int8 max-abs quantization of a float store.
//!
//! Per row: `scale = max|v_i| / 127`, `codes_i = round(v_i / scale)` clamped
//! to [−127, 127], so every coordinate reconstructs within one scale of the
//! original. An all-zero row gets scale 0 and all-zero codes.
//!
//! Layout (little-endian): magic `"TFQ8"`, u16 version (1), u32 dim,
//! u64 count, `count` rows of `dim` int8 codes, `count` float32 scales, then
//! the id table (u16 id byte length + UTF-8 id bytes) in row order.

use std::borrow::Cow;
use std::collections::HashMap;
use std::fs;
use std::path::Path;

use super::{
    read_header, read_id_table, write_header, write_id_table, EmbedError, Embedding,
    EmbeddingStore, Reader, VectorSource,
};
use crate::util::atomic_write;

const MAGIC: [u8; 4] = *b"TFQ8";

/// Rows of int8 codes plus one max-abs scale per row.
#[derive(Debug, Clone)]
pub struct QuantizedStore {
    dim: usize,
    ids: Vec<String>,
    index: HashMap<String, usize>,
    codes: Vec<i8>,
    scales: Vec<f32>,
}

/// Quantize every row of a non-empty float store.
pub fn quantize_store(store: &EmbeddingStore) -> Result<QuantizedStore, EmbedError> {
    if store.is_empty() {
        return Err(EmbedError::EmptyStore);
    }
    let dim = store.dim();
    let mut codes = Vec::with_capacity(store.len() * dim);
    let mut scales = Vec::with_capacity(store.len());
    for i in 0..store.len() {
        let row = store.row(i);
        let max_abs = row.iter().fold(0.0f32, |m, &v| m.max(v.abs()));
        if max_abs == 0.0 {
            scales.push(0.0);
            codes.extend(std::iter::repeat_n(0i8, dim));
            continue;
        }
        let scale = max_abs / 127.0;
        scales.push(scale);
        for &v in row.iter() {
            let code = (v as f64 / scale as f64).round().clamp(-127.0, 127.0);
            codes.push(code as i8);
        }
    }
    Ok(QuantizedStore {
        dim,
        ids: store.ids().to_vec(),
        index: store
            .ids()
            .iter()
            .enumerate()
            .map(|(i, id)| (id.clone(), i))
            .collect(),
        codes,
        scales,
    })
}

impl QuantizedStore {
    fn codes_at(&self, row: usize) -> &[i8] {
        &self.codes[row * self.dim..(row + 1) * self.dim]
    }

    pub fn scale(&self, row: usize) -> f32 {
        self.scales[row]
    }

    /// Dequantized row `codes·scale` before renormalization.
    pub fn dequantize_at(&self, row: usize) -> Vec<f32> {
        let scale = self.scales[row];
        self.codes_at(row).iter().map(|&c| c as f32 * scale).collect()
    }

    /// Reconstruct a row as a unit vector (the zero vector for an all-zero
    /// row).
    pub fn reconstruct_at(&self, row: usize) -> Embedding {
        let raw = self.dequantize_at(row);
        if raw.iter().all(|&v| v == 0.0) {
            return Embedding::zero(self.dim);
        }
        Embedding::unit(raw).expect("non-zero dequantized row normalizes")
    }

    pub fn reconstruct(&self, id: &str) -> Result<Embedding, EmbedError> {
        match self.index.get(id) {
            Some(&row) => Ok(self.reconstruct_at(row)),
            None => Err(EmbedError::NotFound { id: id.to_string() }),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), EmbedError> {
        let path = path.as_ref();
        let mut out = Vec::with_capacity(18 + self.codes.len() + self.scales.len() * 4);
        write_header(&mut out, MAGIC, self.dim, self.ids.len());
        for &c in &self.codes {
            out.push(c as u8);
        }
        for s in &self.scales {
            out.extend_from_slice(&s.to_le_bytes());
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
        let raw = r.take(count * dim)?;
        let codes: Vec<i8> = raw.iter().map(|&b| b as i8).collect();
        let mut scales = Vec::with_capacity(count);
        for row in 0..count {
            let scale = r.f32()?;
            if !scale.is_finite() || scale < 0.0 {
                return Err(EmbedError::Corrupt {
                    path: path.to_path_buf(),
                    message: format!("row {row} has invalid scale {scale}"),
                });
            }
            scales.push(scale);
        }
        let (ids, index) = read_id_table(&mut r, count)?;
        r.finish()?;
        Ok(Self {
            dim,
            ids,
            index,
            codes,
            scales,
        })
    }
}

impl VectorSource for QuantizedStore {
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
        Cow::Owned(self.reconstruct_at(i).into_values())
    }
    fn index_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }
}
