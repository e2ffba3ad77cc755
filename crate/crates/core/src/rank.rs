//! Exact cosine ranking of a corpus against a query.
//!
//! Scores are dot products of unit vectors (accumulated in f64, clamped to
//! [−1, 1]), the full corpus is sorted descending with ties broken by
//! ascending doc id, and ranks are 1-based. No approximation: mining windows
//! and positive-rank filters downstream depend on true ranks.

use rayon::prelude::*;
use serde::de::{self, Deserializer, SeqAccess, Visitor};
use serde::ser::{SerializeTuple, Serializer};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embed::{Embedding, VectorSource};

#[derive(Debug, Error)]
pub enum RankError {
    #[error("dimension mismatch: query has {query}, corpus has {corpus}")]
    DimMismatch { query: usize, corpus: usize },
    #[error("cannot rank an empty corpus")]
    EmptyCorpus,
}

/// One scored document: serialized compactly as a `[doc_id, score]` pair.
#[derive(Debug, Clone, PartialEq)]
pub struct RankEntry {
    pub doc_id: String,
    pub score: f32,
}

impl Serialize for RankEntry {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut t = serializer.serialize_tuple(2)?;
        t.serialize_element(&self.doc_id)?;
        t.serialize_element(&self.score)?;
        t.end()
    }
}

impl<'de> Deserialize<'de> for RankEntry {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct V;
        impl<'de> Visitor<'de> for V {
            type Value = RankEntry;
            fn expecting(&self, f: &mut std::fmt::Formatter) -> std::fmt::Result {
                f.write_str("a [doc_id, score] pair")
            }
            fn visit_seq<A: SeqAccess<'de>>(self, mut seq: A) -> Result<RankEntry, A::Error> {
                let doc_id = seq
                    .next_element()?
                    .ok_or_else(|| de::Error::invalid_length(0, &self))?;
                let score = seq
                    .next_element()?
                    .ok_or_else(|| de::Error::invalid_length(1, &self))?;
                if seq.next_element::<de::IgnoredAny>()?.is_some() {
                    return Err(de::Error::invalid_length(3, &self));
                }
                Ok(RankEntry { doc_id, score })
            }
        }
        deserializer.deserialize_tuple(2, V)
    }
}

/// A full descending ranking of one query over a corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedList {
    pub query_id: String,
    pub entries: Vec<RankEntry>,
}

impl RankedList {
    /// The leading `min(k, len)` entries; `k = 0` gives an empty list.
    pub fn top_k(&self, k: usize) -> RankedList {
        RankedList {
            query_id: self.query_id.clone(),
            entries: self.entries[..k.min(self.entries.len())].to_vec(),
        }
    }

    /// 1-based rank of a doc, or `None` if it is not in the list.
    pub fn rank_of(&self, doc_id: &str) -> Option<usize> {
        self.entries
            .iter()
            .position(|e| e.doc_id == doc_id)
            .map(|i| i + 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

pub(crate) fn dot_f64(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| x as f64 * y as f64)
        .sum::<f64>()
}

/// Cosine similarity of two unit vectors: their dot product, clamped to
/// [−1, 1].
pub fn cosine_similarity(a: &Embedding, b: &Embedding) -> Result<f64, RankError> {
    if a.dim() != b.dim() {
        return Err(RankError::DimMismatch {
            query: a.dim(),
            corpus: b.dim(),
        });
    }
    Ok(dot_f64(a.values(), b.values()).clamp(-1.0, 1.0))
}

/// Score every row of `source` against `query` and sort descending, ties by
/// ascending doc id. Output is identical across runs and thread counts.
pub fn rank_all(
    query_id: &str,
    query: &Embedding,
    source: &impl VectorSource,
) -> Result<RankedList, RankError> {
    if source.is_empty() {
        return Err(RankError::EmptyCorpus);
    }
    if query.dim() != source.dim() {
        return Err(RankError::DimMismatch {
            query: query.dim(),
            corpus: source.dim(),
        });
    }
    let ids = source.ids();
    let mut entries: Vec<RankEntry> = (0..source.len())
        .into_par_iter()
        .map(|i| {
            let score = dot_f64(query.values(), source.row(i).as_ref()).clamp(-1.0, 1.0);
            RankEntry {
                doc_id: ids[i].clone(),
                score: score as f32,
            }
        })
        .collect();
    entries.par_sort_unstable_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then_with(|| a.doc_id.cmp(&b.doc_id))
    });
    Ok(RankedList {
        query_id: query_id.to_string(),
        entries,
    })
}
