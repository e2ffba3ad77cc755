//! Triplet refinement: dedup, answer filtering, positive-rank filtering,
//! hard-negative mining in a teacher rank window, negative-rank filtering,
//! and false-negative margin filtering — composable into one per-task
//! pipeline with a full audit report.
//!
//! The pipeline runs its passes in a fixed order (dedup → answer →
//! positive rank → mining *or* negative rank filter → false negatives) and
//! is idempotent: refining an already-refined dataset drops nothing new and
//! reproduces the same examples.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{DataError, Dataset, Document, TaskFamily};
use crate::embed::{EmbedError, EmbeddingStore, SubsetSource, VectorSource};
use crate::rank::{dot_f64, rank_all, RankError, RankedList};

mod passes;
pub use passes::{
    dedup, filter_false_negatives, filter_negative_by_rank, filter_positive_by_answer,
    filter_positive_by_rank, mine_negatives, mine_pass, MineOutcome, PassOutcome,
};

pub const DEFAULT_MINE_RANGE: RankRange = RankRange { lo: 30, hi: 100 };
pub const DEFAULT_NEAR_THRESHOLD: f64 = 0.95;
pub const DEFAULT_FALSE_NEGATIVE_MARGIN: f64 = 0.02;

#[derive(Debug, Error)]
pub enum RefineError {
    #[error("invalid refine config: {0}")]
    Config(String),
    #[error(
        "missing teacher embeddings for {} id(s) (first: {:?})",
        ids.len(),
        ids.first().map(String::as_str).unwrap_or("")
    )]
    MissingEmbeddings { ids: Vec<String> },
    #[error("query {query_id:?} is not covered by this teacher view")]
    UncoveredQuery { query_id: String },
    #[error("{pass} pass failed: {source}")]
    PassFailed {
        pass: String,
        #[source]
        source: Box<RefineError>,
        /// Reports for the passes that completed before the failure.
        partial: Box<RefineReport>,
    },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Rank(#[from] RankError),
}

/// An inclusive 1-based teacher-rank window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankRange {
    pub lo: usize,
    pub hi: usize,
}

impl RankRange {
    pub fn new(lo: usize, hi: usize) -> Result<Self, RefineError> {
        let range = Self { lo, hi };
        range.validate()?;
        Ok(range)
    }

    pub fn validate(&self) -> Result<(), RefineError> {
        if self.lo < 1 || self.lo > self.hi {
            return Err(RefineError::Config(format!(
                "rank range requires 1 ≤ lo ≤ hi, got [{}, {}]",
                self.lo, self.hi
            )));
        }
        Ok(())
    }

    pub fn contains(&self, rank: usize) -> bool {
        (self.lo..=self.hi).contains(&rank)
    }
}

impl Default for RankRange {
    fn default() -> Self {
        DEFAULT_MINE_RANGE
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MineStrategy {
    /// The most query-similar window candidates, ascending rank.
    Top,
    /// A seeded uniform sample of the window, reported in ascending rank.
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MineConfig {
    pub range: RankRange,
    pub strategy: MineStrategy,
    /// Also exclude every other example's positive from the candidate pool
    /// (the example's own positive is always excluded).
    pub exclude_other_positives: bool,
}

impl Default for MineConfig {
    fn default() -> Self {
        Self {
            range: RankRange::default(),
            strategy: MineStrategy::Top,
            exclude_other_positives: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OnFail {
    /// Drop the whole example when any negative falls outside the window.
    Drop,
    /// Replace out-of-window negatives with fresh in-window ones.
    Remine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NegativeFilterConfig {
    pub range: RankRange,
    pub on_fail: OnFail,
}

impl Default for NegativeFilterConfig {
    fn default() -> Self {
        Self {
            range: RankRange::default(),
            on_fail: OnFail::Drop,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum DedupMode {
    Off,
    /// Key on content ids of the casefolded, whitespace-normalized
    /// (query text, positive text) pair; first occurrence wins.
    Exact,
    /// Exact keys plus a query-embedding cosine threshold against every
    /// retained example.
    Near {
        #[serde(default = "default_near_threshold")]
        threshold: f64,
    },
}

fn default_near_threshold() -> f64 {
    DEFAULT_NEAR_THRESHOLD
}

impl Default for DedupMode {
    fn default() -> Self {
        DedupMode::Off
    }
}

/// Per-task refinement switches. The default is the identity pipeline; use
/// [`recipe_for`] for per-task-family presets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RefineConfig {
    pub dedup: DedupMode,
    pub answer_filter: bool,
    pub answer_casefold: bool,
    /// Keep an example only if its positive ranks within the top n.
    pub positive_top_n: Option<usize>,
    /// Replace negatives by mining the teacher rank window. Mutually
    /// exclusive with `negative_filter`.
    pub mine: Option<MineConfig>,
    /// Validate existing negatives against a rank window instead of mining.
    pub negative_filter: Option<NegativeFilterConfig>,
    /// Drop negative n when cos(q,n) ≥ cos(q,positive) − margin.
    pub false_negative_margin: Option<f64>,
    pub negatives_per_query: usize,
    pub seed: u64,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self {
            dedup: DedupMode::Off,
            answer_filter: false,
            answer_casefold: true,
            positive_top_n: None,
            mine: None,
            negative_filter: None,
            false_negative_margin: None,
            negatives_per_query: 1,
            seed: 0,
        }
    }
}

impl RefineConfig {
    pub fn validate(&self) -> Result<(), RefineError> {
        if let DedupMode::Near { threshold } = self.dedup {
            if !(threshold > 0.0 && threshold < 1.0) {
                return Err(RefineError::Config(format!(
                    "near-dedup threshold must be in (0, 1), got {threshold}"
                )));
            }
        }
        if let Some(n) = self.positive_top_n {
            if n == 0 {
                return Err(RefineError::Config(
                    "positive_top_n must be at least 1".into(),
                ));
            }
        }
        if let Some(mine) = &self.mine {
            mine.range.validate()?;
        }
        if let Some(filter) = &self.negative_filter {
            filter.range.validate()?;
        }
        if self.mine.is_some() && self.negative_filter.is_some() {
            return Err(RefineError::Config(
                "mine and negative_filter are mutually exclusive; configure one".into(),
            ));
        }
        if let Some(margin) = self.false_negative_margin {
            if !(0.0..=2.0).contains(&margin) {
                return Err(RefineError::Config(format!(
                    "false_negative_margin must be in [0, 2], got {margin}"
                )));
            }
        }
        if self.negatives_per_query == 0 {
            return Err(RefineError::Config(
                "negatives_per_query must be at least 1".into(),
            ));
        }
        Ok(())
    }

    /// The passes in this config that cannot run without teacher embeddings.
    pub fn passes_needing_store(&self) -> Vec<&'static str> {
        let mut needs = Vec::new();
        if matches!(self.dedup, DedupMode::Near { .. }) {
            needs.push("dedup");
        }
        if self.positive_top_n.is_some() {
            needs.push("positive-rank");
        }
        if self.mine.is_some() {
            needs.push("mine");
        }
        if self.negative_filter.is_some() {
            needs.push("negative-rank");
        }
        if self.false_negative_margin.is_some() {
            needs.push("false-negative");
        }
        needs
    }
}

/// The per-task-family preset pipelines.
pub fn recipe_for(family: &TaskFamily) -> RefineConfig {
    let near = DedupMode::Near {
        threshold: DEFAULT_NEAR_THRESHOLD,
    };
    let base = RefineConfig::default();
    match family {
        TaskFamily::Retrieval => RefineConfig {
            dedup: near,
            answer_filter: true,
            mine: Some(MineConfig::default()),
            ..base
        },
        TaskFamily::Classification => RefineConfig {
            dedup: DedupMode::Exact,
            positive_top_n: Some(20),
            mine: Some(MineConfig::default()),
            ..base
        },
        TaskFamily::MatchingShort => RefineConfig {
            dedup: near,
            mine: Some(MineConfig::default()),
            ..base
        },
        TaskFamily::MatchingLong => RefineConfig {
            mine: Some(MineConfig::default()),
            false_negative_margin: Some(DEFAULT_FALSE_NEGATIVE_MARGIN),
            ..base
        },
        TaskFamily::Sts => RefineConfig {
            dedup: near,
            false_negative_margin: Some(DEFAULT_FALSE_NEGATIVE_MARGIN),
            ..base
        },
        TaskFamily::Bitext => RefineConfig {
            dedup: DedupMode::Exact,
            false_negative_margin: Some(DEFAULT_FALSE_NEGATIVE_MARGIN),
            ..base
        },
        TaskFamily::Benchmark(_) => base,
    }
}

/// Counters for one pass. `examples_in = kept + dropped` always holds;
/// `remined` counts kept examples whose negatives were replaced or repaired.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PassReport {
    pub pass: String,
    pub examples_in: usize,
    pub kept: usize,
    pub dropped: usize,
    pub remined: usize,
    /// Histogram of notable events; example-drop reasons plus advisory
    /// counts such as `answer-missing` or `false-negative-dropped`.
    pub reasons: std::collections::BTreeMap<String, usize>,
}

impl PassReport {
    pub(crate) fn new(pass: &str, examples_in: usize) -> Self {
        Self {
            pass: pass.to_string(),
            examples_in,
            kept: 0,
            dropped: 0,
            remined: 0,
            reasons: Default::default(),
        }
    }

    pub(crate) fn bump(&mut self, reason: &str) {
        self.bump_by(reason, 1);
    }

    pub(crate) fn bump_by(&mut self, reason: &str, n: usize) {
        if n > 0 {
            *self.reasons.entry(reason.to_string()).or_insert(0) += n;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefineReport {
    pub examples_in: usize,
    pub examples_out: usize,
    pub passes: Vec<PassReport>,
}

/// Teacher embeddings scoped to one dataset: the corpus as a ranked-against
/// subset of the store, plus a precomputed full ranking per unique query.
pub struct TeacherView<'a> {
    dataset: &'a Dataset,
    store: &'a EmbeddingStore,
    corpus: SubsetSource<'a, EmbeddingStore>,
    doc_index: HashMap<&'a str, usize>,
    rankings: HashMap<String, RankedList>,
}

impl<'a> TeacherView<'a> {
    /// Build the view, verifying that every query and corpus doc of the
    /// dataset has a stored embedding; missing ids are collected into one
    /// error.
    pub fn new(dataset: &'a Dataset, store: &'a EmbeddingStore) -> Result<Self, RefineError> {
        let mut missing: Vec<String> = Vec::new();
        for doc in &dataset.corpus {
            if !store.contains(&doc.id) {
                missing.push(doc.id.clone());
            }
        }
        for query in dataset.unique_queries() {
            if !store.contains(&query.id) {
                missing.push(query.id.clone());
            }
        }
        if !missing.is_empty() {
            missing.sort();
            missing.dedup();
            return Err(RefineError::MissingEmbeddings { ids: missing });
        }

        let corpus = SubsetSource::new(store, dataset.corpus_ids())?;
        let rankings: Vec<(String, RankedList)> = dataset
            .unique_queries()
            .into_par_iter()
            .map(|q| -> Result<(String, RankedList), RefineError> {
                let emb = store.lookup(&q.id)?;
                let ranked = rank_all(&q.id, &emb, &corpus)?;
                Ok((q.id.clone(), ranked))
            })
            .collect::<Result<_, _>>()?;
        Ok(Self {
            dataset,
            store,
            corpus,
            doc_index: dataset.doc_index(),
            rankings: rankings.into_iter().collect(),
        })
    }

    /// The query's full ranking over this dataset's corpus.
    pub fn ranking(&self, query_id: &str) -> Result<&RankedList, RefineError> {
        self.rankings.get(query_id).ok_or_else(|| RefineError::UncoveredQuery {
            query_id: query_id.to_string(),
        })
    }

    pub fn document(&self, doc_id: &str) -> Option<&Document> {
        self.doc_index.get(doc_id).map(|&i| &self.dataset.corpus[i])
    }

    pub fn corpus_len(&self) -> usize {
        self.corpus.len()
    }

    /// Cosine between any two embedded ids, straight from the store.
    pub fn cosine(&self, a: &str, b: &str) -> Result<f64, RefineError> {
        let va = self.store.vector_of(a)?;
        let vb = self.store.vector_of(b)?;
        Ok(dot_f64(va.as_ref(), vb.as_ref()).clamp(-1.0, 1.0))
    }

    pub fn query_vector(&self, query_id: &str) -> Result<Vec<f32>, RefineError> {
        Ok(self.store.vector_of(query_id)?.into_owned())
    }
}

/// Run the configured passes in fixed order over one dataset.
///
/// `store` is required whenever any configured pass consults the teacher
/// (see [`RefineConfig::passes_needing_store`]). A hard failure inside a
/// pass aborts with [`RefineError::PassFailed`] carrying the partial report.
/// The refined dataset shares the input's corpus; when every example is
/// filtered away the returned dataset has no examples and will fail
/// validation if saved.
pub fn refine_pipeline(
    dataset: &Dataset,
    cfg: &RefineConfig,
    store: Option<&EmbeddingStore>,
) -> Result<(Dataset, RefineReport), RefineError> {
    cfg.validate()?;
    let needed = cfg.passes_needing_store();
    let teacher = match (needed.is_empty(), store) {
        (false, None) => {
            return Err(RefineError::Config(format!(
                "these passes need a teacher store: {}",
                needed.join(", ")
            )))
        }
        (false, Some(s)) => Some(TeacherView::new(dataset, s)?),
        (true, _) => None,
    };

    let mut report = RefineReport {
        examples_in: dataset.examples.len(),
        examples_out: 0,
        passes: Vec::new(),
    };
    let mut examples = dataset.examples.clone();

    let fail = |pass: &str, source: RefineError, report: &RefineReport| RefineError::PassFailed {
        pass: pass.to_string(),
        source: Box::new(source),
        partial: Box::new(report.clone()),
    };

    if !matches!(cfg.dedup, DedupMode::Off) {
        let outcome = dedup(examples, &cfg.dedup, teacher.as_ref())
            .map_err(|e| fail("dedup", e, &report))?;
        examples = outcome.kept;
        report.passes.push(outcome.report);
    }
    if cfg.answer_filter {
        let outcome = filter_positive_by_answer(examples, cfg.answer_casefold);
        examples = outcome.kept;
        report.passes.push(outcome.report);
    }
    if let Some(top_n) = cfg.positive_top_n {
        let teacher = teacher.as_ref().expect("store checked above");
        let outcome = filter_positive_by_rank(examples, teacher, top_n)
            .map_err(|e| fail("positive-rank", e, &report))?;
        examples = outcome.kept;
        report.passes.push(outcome.report);
    }
    if let Some(mine_cfg) = &cfg.mine {
        let teacher = teacher.as_ref().expect("store checked above");
        let outcome = mine_pass(
            examples,
            teacher,
            mine_cfg,
            cfg.negatives_per_query,
            cfg.seed,
        )
        .map_err(|e| fail("mine", e, &report))?;
        examples = outcome.kept;
        report.passes.push(outcome.report);
    }
    if let Some(filter_cfg) = &cfg.negative_filter {
        let teacher = teacher.as_ref().expect("store checked above");
        let outcome = filter_negative_by_rank(examples, teacher, filter_cfg.range, filter_cfg.on_fail)
            .map_err(|e| fail("negative-rank", e, &report))?;
        examples = outcome.kept;
        report.passes.push(outcome.report);
    }
    if let Some(margin) = cfg.false_negative_margin {
        let teacher = teacher.as_ref().expect("store checked above");
        let outcome = filter_false_negatives(examples, teacher, margin)
            .map_err(|e| fail("false-negative", e, &report))?;
        examples = outcome.kept;
        report.passes.push(outcome.report);
    }

    report.examples_out = examples.len();
    let refined = Dataset {
        name: dataset.name.clone(),
        task: dataset.task.clone(),
        examples,
        corpus: dataset.corpus.clone(),
    };
    Ok((refined, report))
}
