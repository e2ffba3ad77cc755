//! Retrieval evaluation: qrels, nDCG/recall/MRR, light evaluation sets,
//! and full-vs-light report comparison.

mod lightset;
mod metrics;
mod qrels;

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use lightset::{
    build_light_corpus, sample_queries, LightSet, DEFAULT_LIGHT_K, DEFAULT_SAMPLE_FRACTION,
    GOLD_PROVENANCE,
};
pub use metrics::{mrr_at_k, ndcg_at_k, recall_at_k};
pub use qrels::Qrels;

use crate::data::{Document, Query};
use crate::embed::{EmbedError, Embedding, EmbeddingStore, SubsetSource, VectorSource};
use crate::rank::{rank_all, RankError, RankedList};
use crate::train::EncoderParams;
use crate::util::{atomic_write, canonical_json_pretty};

pub const DEFAULT_RECALL_KS: [usize; 3] = [1, 10, 100];

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("invalid evaluation config: {0}")]
    Config(String),
    #[error("{0}")]
    Validation(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Malformed {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Rank(#[from] RankError),
}

/// One query's metric values; `None` marks a metric that could not be
/// evaluated because the query has no positively graded document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryMetrics {
    pub query_id: String,
    pub values: BTreeMap<String, Option<f64>>,
}

/// Full evaluation output: per-query metric values plus means over the
/// evaluated (non-skipped) queries. Wall time is informational only and
/// deliberately excluded from serialization so reports stay
/// byte-deterministic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub corpus_size: usize,
    pub query_count: usize,
    pub evaluated_queries: usize,
    pub skipped_queries: usize,
    pub per_query: Vec<QueryMetrics>,
    pub means: BTreeMap<String, f64>,
    #[serde(skip)]
    pub wall_time_s: f64,
}

impl EvalReport {
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
}

fn metric_values(
    ranking: &RankedList,
    qrels: &Qrels,
    recall_ks: &[usize],
) -> BTreeMap<String, Option<f64>> {
    let mut values = BTreeMap::new();
    values.insert("ndcg@10".to_string(), ndcg_at_k(ranking, qrels, 10));
    values.insert("mrr@10".to_string(), mrr_at_k(ranking, qrels, 10));
    for k in recall_ks {
        values.insert(format!("recall@{k}"), recall_at_k(ranking, qrels, *k));
    }
    values
}

fn assemble_report(
    rankings: &[RankedList],
    corpus_size: usize,
    qrels: &Qrels,
    recall_ks: &[usize],
    started: Instant,
) -> EvalReport {
    let per_query: Vec<QueryMetrics> = rankings
        .iter()
        .map(|r| QueryMetrics {
            query_id: r.query_id.clone(),
            values: metric_values(r, qrels, recall_ks),
        })
        .collect();

    let skipped = per_query
        .iter()
        .filter(|q| q.values.values().all(Option::is_none))
        .count();

    let mut sums: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for q in &per_query {
        for (metric, value) in &q.values {
            if let Some(v) = value {
                let slot = sums.entry(metric.clone()).or_insert((0.0, 0));
                slot.0 += v;
                slot.1 += 1;
            }
        }
    }
    let means = sums
        .into_iter()
        .map(|(metric, (sum, n))| (metric, sum / n as f64))
        .collect();

    EvalReport {
        corpus_size,
        query_count: per_query.len(),
        evaluated_queries: per_query.len() - skipped,
        skipped_queries: skipped,
        per_query,
        means,
        wall_time_s: started.elapsed().as_secs_f64(),
    }
}

fn check_recall_ks(recall_ks: &[usize]) -> Result<(), EvalError> {
    if recall_ks.iter().any(|k| *k == 0) {
        return Err(EvalError::Config("recall cutoffs must be at least 1".into()));
    }
    Ok(())
}

fn rank_against<S: VectorSource>(
    queries: &[Query],
    embeddings: &[Embedding],
    corpus: &S,
) -> Result<Vec<RankedList>, EvalError> {
    let rankings = queries
        .par_iter()
        .zip(embeddings)
        .map(|(q, emb)| rank_all(&q.id, emb, corpus))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(rankings)
}

/// Evaluate against embeddings held in a store (float or quantized): the
/// store supplies both the query vectors (by query id) and the document
/// vectors for `corpus_ids`.
pub fn evaluate_with_store<S: VectorSource>(
    queries: &[Query],
    corpus_ids: &[String],
    store: &S,
    qrels: &Qrels,
    recall_ks: &[usize],
) -> Result<EvalReport, EvalError> {
    let started = Instant::now();
    check_recall_ks(recall_ks)?;
    if corpus_ids.is_empty() {
        return Err(EvalError::Config("corpus is empty".into()));
    }
    let corpus = SubsetSource::new(store, corpus_ids.iter().cloned())?;
    let embeddings = queries
        .iter()
        .map(|q| {
            store
                .vector_of(&q.id)
                .and_then(|row| Embedding::from_unit(row.into_owned()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let rankings = rank_against(queries, &embeddings, &corpus)?;
    Ok(assemble_report(&rankings, corpus_ids.len(), qrels, recall_ks, started))
}

/// Evaluate the toy encoder: embed the corpus documents and query texts
/// with it, then rank and score.
pub fn evaluate_with_encoder(
    params: &EncoderParams,
    queries: &[Query],
    corpus: &[Document],
    qrels: &Qrels,
    recall_ks: &[usize],
) -> Result<EvalReport, EvalError> {
    let started = Instant::now();
    check_recall_ks(recall_ks)?;
    if corpus.is_empty() {
        return Err(EvalError::Config("corpus is empty".into()));
    }
    let mut store = EmbeddingStore::new(params.dim())?;
    for doc in corpus {
        store.append(&doc.id, &params.encode(&doc.text))?;
    }
    let embeddings: Vec<Embedding> = queries
        .iter()
        .map(|q| params.encode(&q.embedding_text()))
        .collect();
    let rankings = rank_against(queries, &embeddings, &store)?;
    Ok(assemble_report(&rankings, corpus.len(), qrels, recall_ks, started))
}

/// Per-metric agreement between a full-corpus report and a light-set
/// report over the queries both evaluated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricDelta {
    pub mean_full: f64,
    pub mean_light: f64,
    /// |mean_full − mean_light|.
    pub mean_abs_delta: f64,
    /// Largest |full − light| over queries present and evaluated in both.
    pub max_query_abs_delta: f64,
}

pub fn compare_reports(
    full: &EvalReport,
    light: &EvalReport,
) -> BTreeMap<String, MetricDelta> {
    let full_by_id: BTreeMap<&str, &QueryMetrics> = full
        .per_query
        .iter()
        .map(|q| (q.query_id.as_str(), q))
        .collect();

    let mut out = BTreeMap::new();
    for (metric, light_mean) in &light.means {
        let Some(full_mean) = full.means.get(metric) else {
            continue;
        };
        let mut max_delta = 0.0f64;
        for lq in &light.per_query {
            let Some(fq) = full_by_id.get(lq.query_id.as_str()) else {
                continue;
            };
            if let (Some(Some(lv)), Some(Some(fv))) =
                (lq.values.get(metric), fq.values.get(metric))
            {
                max_delta = max_delta.max((lv - fv).abs());
            }
        }
        out.insert(
            metric.clone(),
            MetricDelta {
                mean_full: *full_mean,
                mean_light: *light_mean,
                mean_abs_delta: (full_mean - light_mean).abs(),
                max_query_abs_delta: max_delta,
            },
        );
    }
    out
}
