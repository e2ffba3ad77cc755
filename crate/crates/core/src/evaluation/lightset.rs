//! Light retrieval evaluation sets: a stratified query subsample plus the
//! union of each sampled query's teacher top-k documents (gold documents
//! force-included), shrinking the corpus while preserving top-10 rankings
//! for the sampled queries exactly — as long as evaluation uses the same
//! teacher embeddings.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::qrels::Qrels;
use super::EvalError;
use crate::data::Query;
use crate::embed::{EmbeddingStore, SubsetSource};
use crate::rank::rank_all;
use crate::util::{atomic_write, canonical_json_pretty, derive_seed};

pub const DEFAULT_LIGHT_K: usize = 50;
pub const DEFAULT_SAMPLE_FRACTION: f64 = 0.2;

/// Provenance marker for documents included because they are gold for some
/// sampled query rather than retrieved into a top-k.
pub const GOLD_PROVENANCE: &str = "gold";

/// A reduced evaluation universe: sampled queries, a light corpus, and the
/// reason each document made the cut.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LightSet {
    /// Sampled query ids, in original query order.
    pub query_ids: Vec<String>,
    /// Light corpus doc ids, ascending.
    pub corpus_ids: Vec<String>,
    /// doc id → the query id that first pulled it in, or `"gold"`.
    pub provenance: BTreeMap<String, String>,
}

impl LightSet {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), EvalError> {
        let path = path.as_ref();
        let text = canonical_json_pretty(self).map_err(|e| EvalError::Config(e.to_string()))?;
        atomic_write(path, text.as_bytes()).map_err(|source| EvalError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, EvalError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| EvalError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|e| EvalError::Malformed {
            path: path.to_path_buf(),
            line: e.line(),
            message: e.to_string(),
        })
    }

    /// Check containment invariants against the full corpus and qrels.
    pub fn validate(&self, full_corpus_ids: &[String], qrels: &Qrels) -> Result<(), EvalError> {
        let full: BTreeSet<&str> = full_corpus_ids.iter().map(String::as_str).collect();
        let light: BTreeSet<&str> = self.corpus_ids.iter().map(String::as_str).collect();
        if let Some(stray) = light.iter().find(|d| !full.contains(**d)) {
            return Err(EvalError::Validation(format!(
                "light corpus doc {stray:?} is not in the full corpus"
            )));
        }
        for query_id in &self.query_ids {
            for gold in qrels.relevant_ids(query_id) {
                if full.contains(gold) && !light.contains(gold) {
                    return Err(EvalError::Validation(format!(
                        "gold doc {gold:?} of sampled query {query_id:?} missing from light corpus"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Stratified query sampling: strata are the queries' labels (task kind
/// when unlabeled); each stratum contributes round(fraction · size), at
/// least 1. Returns ids in original query order.
pub fn sample_queries(
    queries: &[Query],
    fraction: f64,
    seed: u64,
) -> Result<Vec<String>, EvalError> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(EvalError::Config(format!(
            "sample fraction must be in (0, 1], got {fraction}"
        )));
    }
    let mut strata: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, q) in queries.iter().enumerate() {
        let key = q.label.clone().unwrap_or_else(|| q.task.to_string());
        strata.entry(key).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "query-sample"));
    let mut chosen = BTreeSet::new();
    for indices in strata.values() {
        let take = ((fraction * indices.len() as f64).round() as usize)
            .max(1)
            .min(indices.len());
        for pick in rand::seq::index::sample(&mut rng, indices.len(), take) {
            chosen.insert(indices[pick]);
        }
    }
    Ok(chosen.into_iter().map(|i| queries[i].id.clone()).collect())
}

/// Union of the sampled queries' teacher top-k documents over the full
/// corpus, with their gold documents force-included when `include_gold`.
/// The store must hold teacher embeddings for every query and corpus doc.
pub fn build_light_corpus(
    queries: &[Query],
    corpus_ids: &[String],
    store: &EmbeddingStore,
    k: usize,
    qrels: &Qrels,
    include_gold: bool,
) -> Result<LightSet, EvalError> {
    if k == 0 {
        return Err(EvalError::Config("top-k must be at least 1".into()));
    }
    if corpus_ids.is_empty() {
        return Err(EvalError::Config("full corpus is empty".into()));
    }
    let corpus = SubsetSource::new(store, corpus_ids.iter().cloned())?;
    let embeddings = queries
        .iter()
        .map(|q| store.lookup(&q.id))
        .collect::<Result<Vec<_>, _>>()?;

    let rankings = queries
        .par_iter()
        .zip(&embeddings)
        .map(|(q, emb)| rank_all(&q.id, emb, &corpus))
        .collect::<Result<Vec<_>, _>>()?;

    let mut provenance = BTreeMap::new();
    for (q, ranking) in queries.iter().zip(&rankings) {
        for entry in &ranking.top_k(k).entries {
            provenance
                .entry(entry.doc_id.clone())
                .or_insert_with(|| q.id.clone());
        }
    }
    if include_gold {
        let in_corpus: BTreeSet<&str> = corpus_ids.iter().map(String::as_str).collect();
        for q in queries {
            for gold in qrels.relevant_ids(&q.id) {
                if in_corpus.contains(gold) {
                    provenance
                        .entry(gold.to_string())
                        .or_insert_with(|| GOLD_PROVENANCE.to_string());
                }
            }
        }
    }

    Ok(LightSet {
        query_ids: queries.iter().map(|q| q.id.clone()).collect(),
        corpus_ids: provenance.keys().cloned().collect(),
        provenance,
    })
}
