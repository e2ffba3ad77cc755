//! The trainable toy encoder: a hashed bag-of-tokens linear map.
//!
//! Text is casefolded, split on whitespace, and each token FNV-1a-hashed
//! into one of `buckets` slots; the sparse count vector is multiplied by a
//! `buckets × dim` weight matrix and L2-normalized. A deliberately small
//! stand-in for a real text encoder — what matters is that it is
//! differentiable, deterministic, and fast enough to train on a desktop.
//!
//! Parameters persist as `TFEP` files: magic, u16 version, u32 buckets,
//! u32 dim, u64 seed, then the weight matrix row-major as little-endian
//! f32.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::TrainError;
use crate::embed::{EmbedError, Embedding, Reader};
use crate::data::casefold;
use crate::util::{atomic_write, derive_seed};

pub const DEFAULT_BUCKETS: usize = 1 << 14;
pub const DEFAULT_DIM: usize = 64;

const MAGIC: [u8; 4] = *b"TFEP";

/// FNV-1a, 64-bit.
pub fn hash_token(token: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in token.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x100_0000_01b3);
    }
    h
}

/// Sparse token counts over hash buckets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureVector {
    buckets: usize,
    counts: BTreeMap<usize, u32>,
}

impl FeatureVector {
    pub fn buckets(&self) -> usize {
        self.buckets
    }

    /// (bucket, count) pairs in ascending bucket order; counts are ≥ 1.
    pub fn counts(&self) -> impl Iterator<Item = (usize, u32)> + '_ {
        self.counts.iter().map(|(b, c)| (*b, *c))
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }
}

/// Casefold, split on whitespace, hash each token into a bucket.
pub fn featurize(text: &str, buckets: usize) -> FeatureVector {
    let mut counts = BTreeMap::new();
    for token in casefold(text).split_whitespace() {
        let bucket = (hash_token(token) % buckets as u64) as usize;
        *counts.entry(bucket).or_insert(0) += 1;
    }
    FeatureVector { buckets, counts }
}

/// The encoder's weight matrix plus the seed that initialized it.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    buckets: usize,
    dim: usize,
    seed: u64,
    weights: Vec<f64>,
}

impl EncoderParams {
    /// Fresh seeded Gaussian initialization, scaled by 1/√dim.
    pub fn init(buckets: usize, dim: usize, seed: u64) -> Result<Self, TrainError> {
        if buckets == 0 || buckets > u32::MAX as usize {
            return Err(TrainError::Config(format!(
                "buckets must be in 1..=u32::MAX, got {buckets}"
            )));
        }
        if dim == 0 || dim > u32::MAX as usize {
            return Err(TrainError::Config(format!(
                "dim must be in 1..=u32::MAX, got {dim}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "encoder-init"));
        let scale = 1.0 / (dim as f64).sqrt();
        let weights = (0..buckets * dim)
            .map(|_| <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng) * scale)
            .collect();
        Ok(Self {
            buckets,
            dim,
            seed,
            weights,
        })
    }

    pub fn buckets(&self) -> usize {
        self.buckets
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub(crate) fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub(crate) fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    fn row(&self, bucket: usize) -> &[f64] {
        &self.weights[bucket * self.dim..(bucket + 1) * self.dim]
    }

    /// The un-normalized encoder output Wᵀx; all zeros for an empty token
    /// set.
    pub fn encode_raw(&self, text: &str) -> Vec<f64> {
        let features = featurize(text, self.buckets);
        let mut out = vec![0.0; self.dim];
        for (bucket, count) in features.counts() {
            let row = self.row(bucket);
            for (o, w) in out.iter_mut().zip(row) {
                *o += f64::from(count) * w;
            }
        }
        out
    }

    /// L2-normalized embedding; texts with no tokens (or an exactly zero
    /// raw output) map to the fixed first basis vector so every text gets a
    /// deterministic unit embedding.
    pub fn encode(&self, text: &str) -> Embedding {
        let raw = self.encode_raw(text);
        let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            let mut basis = vec![0.0f32; self.dim];
            basis[0] = 1.0;
            return Embedding::from_unit(basis).expect("basis vector is unit");
        }
        let values: Vec<f32> = raw.iter().map(|v| (v / norm) as f32).collect();
        Embedding::unit(values).expect("normalized output is a valid unit vector")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), TrainError> {
        let path = path.as_ref();
        let mut out = Vec::with_capacity(22 + self.weights.len() * 4);
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&1u16.to_le_bytes());
        out.extend_from_slice(&(self.buckets as u32).to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&self.seed.to_le_bytes());
        for w in &self.weights {
            out.extend_from_slice(&(*w as f32).to_le_bytes());
        }
        atomic_write(path, &out).map_err(|source| TrainError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    /// Load saved parameters. Weights round-trip at f32 precision.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, TrainError> {
        let path = path.as_ref();
        let buf = fs::read(path).map_err(|source| TrainError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut r = Reader::new(&buf, path);
        let got = r.take(4)?;
        if got != MAGIC {
            return Err(EmbedError::BadMagic {
                path: path.to_path_buf(),
                expected: MAGIC,
            }
            .into());
        }
        let version = r.u16()?;
        if version != 1 {
            return Err(EmbedError::BadVersion {
                path: path.to_path_buf(),
                version,
            }
            .into());
        }
        let corrupt = |message: &str| EmbedError::Corrupt {
            path: path.to_path_buf(),
            message: message.into(),
        };
        let buckets = r.u32()? as usize;
        let dim = r.u32()? as usize;
        if buckets == 0 || dim == 0 {
            return Err(corrupt("buckets and dim must be positive").into());
        }
        let seed = r.u64()?;
        let mut weights = Vec::with_capacity(buckets * dim);
        for _ in 0..buckets * dim {
            let w = r.f32()?;
            if !w.is_finite() {
                return Err(corrupt("non-finite weight").into());
            }
            weights.push(f64::from(w));
        }
        r.finish()?;
        Ok(Self {
            buckets,
            dim,
            seed,
            weights,
        })
    }
}
