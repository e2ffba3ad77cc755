//! Retrieval metrics: nDCG, recall, and MRR at a cutoff.
//!
//! All three return `None` for a query with no positively graded document
//! in the qrels — such queries are counted but excluded from means, rather
//! than contributing silent zeros.

use super::qrels::Qrels;
use crate::rank::RankedList;

/// Normalized discounted cumulative gain at `k`: gain is the raw grade,
/// discount 1/log2(rank+1), normalized by the ideal DCG computed over the
/// query's full qrels (not just the ranked corpus).
pub fn ndcg_at_k(ranked: &RankedList, qrels: &Qrels, k: usize) -> Option<f64> {
    let graded = qrels.graded(&ranked.query_id)?;
    let mut ideal: Vec<u32> = graded.values().copied().filter(|g| *g > 0).collect();
    if ideal.is_empty() {
        return None;
    }
    ideal.sort_unstable_by(|a, b| b.cmp(a));

    let dcg: f64 = ranked
        .entries
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, e)| {
            let grade = f64::from(qrels.grade(&ranked.query_id, &e.doc_id));
            grade / ((i + 2) as f64).log2()
        })
        .sum();
    let idcg: f64 = ideal
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, g)| f64::from(*g) / ((i + 2) as f64).log2())
        .sum();
    Some(dcg / idcg)
}

/// Fraction of the query's relevant documents found in the top `k`.
pub fn recall_at_k(ranked: &RankedList, qrels: &Qrels, k: usize) -> Option<f64> {
    let relevant: Vec<&str> = qrels.relevant_ids(&ranked.query_id).collect();
    if relevant.is_empty() {
        return None;
    }
    let hits = ranked
        .entries
        .iter()
        .take(k)
        .filter(|e| qrels.grade(&ranked.query_id, &e.doc_id) >= 1)
        .count();
    Some(hits as f64 / relevant.len() as f64)
}

/// Reciprocal rank of the first relevant document within the top `k`, or
/// 0 when none appears there.
pub fn mrr_at_k(ranked: &RankedList, qrels: &Qrels, k: usize) -> Option<f64> {
    if !qrels.has_relevant(&ranked.query_id) {
        return None;
    }
    for (i, e) in ranked.entries.iter().take(k).enumerate() {
        if qrels.grade(&ranked.query_id, &e.doc_id) >= 1 {
            return Some(1.0 / (i + 1) as f64);
        }
    }
    Some(0.0)
}
