//! Deterministic synthetic corpus generator for end-to-end exercises and
//! regression tests: six clustered task datasets with planted defects
//! (duplicate examples, unanswerable queries, paraphrase false negatives),
//! a teacher vector store covering every text, a 2k-document retrieval
//! benchmark with graded judgments, and a held-out query set for measuring
//! trained encoders.
//!
//! Everything is derived from one seed; two generations with the same spec
//! are identical, and the files written by [`Fixture::write_to_dir`] are
//! byte-for-byte reproducible.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{
    save_dataset, DataError, Dataset, Document, GroupId, Query, TaskFamily, TaskKind,
    TripletExample,
};
use crate::embed::{EmbedError, Embedding, EmbeddingStore};
use crate::evaluation::{EvalError, Qrels};
use crate::util::{atomic_write, canonical_json_pretty, derive_seed};

/// File name of the teacher vector store inside a written fixture directory.
pub const TEACHER_FILE: &str = "teacher.tfvs";
/// Benchmark dataset (queries + corpus) file name.
pub const EVAL_FILE: &str = "eval.jsonl";
/// Graded judgments for the benchmark queries.
pub const EVAL_QRELS_FILE: &str = "qrels_eval.tsv";
/// Held-out query set file name.
pub const HOLDOUT_FILE: &str = "holdout.jsonl";
/// Judgments (gold document per query) for the held-out set.
pub const HOLDOUT_QRELS_FILE: &str = "qrels_holdout.tsv";
/// Manifest describing sizes and planted defects.
pub const MANIFEST_FILE: &str = "fixture.json";

#[derive(Debug, Error)]
pub enum FixtureError {
    #[error("invalid fixture parameters: {0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

/// Knobs for one generated fixture. Use [`FixtureSpec::standard`] for the
/// full-size corpus or [`FixtureSpec::small`] for a fast test-sized one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureSpec {
    /// Embedding dimension of the synthetic teacher space.
    pub dim: usize,
    pub clusters_per_task: usize,
    pub docs_per_cluster: usize,
    pub examples_per_task: usize,
    /// Random negatives attached to each generated example.
    pub negatives_per_example: usize,
    /// Fraction of examples duplicated (exact and near copies appended).
    pub duplicate_rate: f64,
    /// Fraction of retrieval examples whose answer matches no document.
    pub answer_miss_rate: f64,
    /// Fraction of symmetric-task examples given a paraphrase-of-the-positive
    /// negative (a planted false negative).
    pub false_negative_rate: f64,
    /// Held-out queries per holdout task family.
    pub holdout_per_task: usize,
    pub eval_clusters: usize,
    pub eval_docs_per_cluster: usize,
    pub eval_queries: usize,
    /// Benchmark queries are spread over this many of the first clusters.
    pub eval_query_clusters: usize,
    /// Noise scale mixing a document away from its cluster center.
    pub doc_noise: f64,
    /// Noise scale mixing a query away from its gold document.
    pub query_noise: f64,
    pub seed: u64,
}

impl FixtureSpec {
    /// Full-size fixture: 6 tasks x 200 docs x 80 examples, a 2000-document
    /// benchmark with 200 queries, and 20 held-out queries per holdout task.
    pub fn standard(seed: u64) -> Self {
        FixtureSpec {
            dim: 32,
            clusters_per_task: 8,
            docs_per_cluster: 25,
            examples_per_task: 80,
            negatives_per_example: 2,
            duplicate_rate: 0.05,
            answer_miss_rate: 0.05,
            false_negative_rate: 0.10,
            holdout_per_task: 20,
            eval_clusters: 50,
            eval_docs_per_cluster: 40,
            eval_queries: 200,
            eval_query_clusters: 10,
            doc_noise: 0.5,
            query_noise: 0.35,
            seed,
        }
    }

    /// Miniature variant for unit tests; same structure, a fraction of the
    /// size.
    pub fn small(seed: u64) -> Self {
        FixtureSpec {
            dim: 16,
            clusters_per_task: 4,
            docs_per_cluster: 10,
            examples_per_task: 24,
            negatives_per_example: 2,
            holdout_per_task: 8,
            eval_clusters: 6,
            eval_docs_per_cluster: 8,
            eval_queries: 12,
            eval_query_clusters: 3,
            ..FixtureSpec::standard(seed)
        }
    }

    pub fn validate(&self) -> Result<(), FixtureError> {
        let err = |m: String| Err(FixtureError::Config(m));
        if self.dim < 2 {
            return err(format!("dim must be at least 2, got {}", self.dim));
        }
        if self.clusters_per_task < 2 || self.docs_per_cluster < 3 {
            return err("need at least 2 clusters of at least 3 documents each".into());
        }
        if self.examples_per_task == 0 || self.eval_queries == 0 || self.holdout_per_task == 0 {
            return err("examples_per_task, eval_queries and holdout_per_task must be positive".into());
        }
        let task_docs = self.clusters_per_task * self.docs_per_cluster;
        if self.examples_per_task > task_docs {
            return err(format!(
                "examples_per_task {} exceeds the {} distinct documents per task",
                self.examples_per_task, task_docs
            ));
        }
        if self.negatives_per_example == 0 || self.negatives_per_example + 1 >= task_docs {
            return err("negatives_per_example must be in 1..task corpus size".into());
        }
        for (name, rate) in [
            ("duplicate_rate", self.duplicate_rate),
            ("answer_miss_rate", self.answer_miss_rate),
            ("false_negative_rate", self.false_negative_rate),
        ] {
            if !(0.0..1.0).contains(&rate) {
                return err(format!("{name} must be in [0, 1), got {rate}"));
            }
        }
        if self.eval_query_clusters == 0 || self.eval_query_clusters > self.eval_clusters {
            return err("eval_query_clusters must be in 1..=eval_clusters".into());
        }
        if self.eval_queries > self.eval_query_clusters * self.eval_docs_per_cluster {
            return err("eval_queries exceeds the distinct gold documents available".into());
        }
        if self.eval_docs_per_cluster < 3 {
            return err("eval_docs_per_cluster must be at least 3 for graded neighbors".into());
        }
        if self.holdout_per_task > task_docs {
            return err("holdout_per_task exceeds the documents per task".into());
        }
        for (name, noise) in [("doc_noise", self.doc_noise), ("query_noise", self.query_noise)] {
            if !(noise > 0.0 && noise < 1.0) {
                return err(format!("{name} must be in (0, 1), got {noise}"));
            }
        }
        // Planted-defect windows (see build_task) must fit without overlap.
        let n = self.examples_per_task;
        let n_dup = planted_count(self.duplicate_rate, n);
        let miss_start = n / 8;
        let fn_start = n / 4;
        if n_dup > miss_start {
            return err("duplicate plants would overlap the answer-miss window".into());
        }
        if miss_start + planted_count(self.answer_miss_rate, n) > fn_start {
            return err("answer-miss plants would overlap the false-negative window".into());
        }
        if fn_start + planted_count(self.false_negative_rate, n) > n {
            return err("false-negative plants exceed the example count".into());
        }
        Ok(())
    }
}

/// Planted-defect inventory for one task dataset. Ids refer to query ids of
/// the planted copies (for duplicates) or `(query id, document id)` pairs
/// (for false negatives).
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlantedIds {
    /// Query ids of exact (case-only) copies. The copy's text normalizes to
    /// the original's dedup key but keeps its own content id, so refined
    /// datasets contain none of these ids.
    pub exact_duplicates: Vec<String>,
    /// Query ids of near-paraphrase copies (distinct ids, near-identical
    /// teacher vectors); refined datasets contain none of them.
    pub near_duplicates: Vec<String>,
    /// Query ids whose answer matches no document text.
    pub answer_misses: Vec<String>,
    /// `(query id, planted doc id)` pairs where the document paraphrases the
    /// query's positive and was attached as a negative.
    pub false_negative_pairs: Vec<(String, String)>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSummary {
    pub task: String,
    pub examples: usize,
    pub corpus_docs: usize,
    pub planted: PlantedIds,
}

/// Everything a consumer needs to assert against the generated data without
/// re-deriving it: sizes per section and the planted defects per task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureManifest {
    pub seed: u64,
    pub dim: usize,
    pub spec: FixtureSpec,
    /// Keyed by dataset name (`task_retrieval`, ...).
    pub tasks: BTreeMap<String, TaskSummary>,
    pub eval_queries: usize,
    pub eval_corpus_docs: usize,
    pub holdout_queries: usize,
    pub holdout_corpus_docs: usize,
}

/// A fully generated fixture held in memory.
pub struct Fixture {
    /// Six task datasets in family order: retrieval, classification,
    /// matching-short, matching-long, sts, bitext.
    pub tasks: Vec<Dataset>,
    /// Teacher vectors for every query and document id above, plus the
    /// benchmark and holdout sections.
    pub teacher: EmbeddingStore,
    /// Benchmark dataset (`benchmark:eval`): one example per query, gold
    /// document as positive, corpus of distractor clusters.
    pub eval: Dataset,
    pub eval_qrels: Qrels,
    /// Held-out queries (`benchmark:holdout`) over the merged corpora of the
    /// retrieval, classification and sts tasks.
    pub holdout: Dataset,
    pub holdout_qrels: Qrels,
    pub manifest: FixtureManifest,
}

fn families() -> [TaskFamily; 6] {
    [
        TaskFamily::Retrieval,
        TaskFamily::Classification,
        TaskFamily::MatchingShort,
        TaskFamily::MatchingLong,
        TaskFamily::Sts,
        TaskFamily::Bitext,
    ]
}

fn holdout_families() -> [TaskFamily; 3] {
    [TaskFamily::Retrieval, TaskFamily::Classification, TaskFamily::Sts]
}

fn planted_count(rate: f64, n: usize) -> usize {
    if rate == 0.0 {
        0
    } else {
        ((rate * n as f64).round() as usize).max(1)
    }
}

/// Vocabulary tag for a family: its display name without punctuation, so
/// tokens stay single words under text normalization.
fn family_tag(family: &TaskFamily) -> String {
    family.to_string().replace('-', "")
}

fn unit_gauss(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-9 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// A fresh unit vector `scale` away from `base` in a random direction.
fn noisy_unit(base: &Embedding, scale: f64, rng: &mut ChaCha8Rng) -> Result<Embedding, FixtureError> {
    let g = unit_gauss(rng, base.dim());
    let v: Vec<f32> = base
        .values()
        .iter()
        .zip(g)
        .map(|(b, gi)| (*b as f64 + scale * gi) as f32)
        .collect();
    Ok(Embedding::unit(v)?)
}

fn random_center(dim: usize, rng: &mut ChaCha8Rng) -> Result<Embedding, FixtureError> {
    let v: Vec<f32> = unit_gauss(rng, dim).into_iter().map(|x| x as f32).collect();
    Ok(Embedding::unit(v)?)
}

/// Insert an id -> vector mapping, rejecting contradictory re-insertions.
fn put_vector(
    map: &mut BTreeMap<String, Embedding>,
    id: &str,
    emb: &Embedding,
) -> Result<(), FixtureError> {
    match map.get(id) {
        None => {
            map.insert(id.to_string(), emb.clone());
            Ok(())
        }
        Some(prev) if prev.values() == emb.values() => Ok(()),
        Some(_) => Err(FixtureError::Config(format!(
            "conflicting teacher vectors generated for id {id}"
        ))),
    }
}

struct TaskBuild {
    dataset: Dataset,
    summary: TaskSummary,
}

fn build_task(
    spec: &FixtureSpec,
    family: &TaskFamily,
    vectors: &mut BTreeMap<String, Embedding>,
) -> Result<TaskBuild, FixtureError> {
    let tag = family_tag(family);
    let name = format!("task_{family}");
    let task = TaskKind::new(family.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, &format!("fixture:{family}")));

    let mut docs: Vec<Document> = Vec::new();
    let mut doc_embs: Vec<Embedding> = Vec::new();
    for c in 0..spec.clusters_per_task {
        let center = random_center(spec.dim, &mut rng)?;
        for k in 0..spec.docs_per_cluster {
            let text = format!(
                "w{tag}{c}d{k} w{tag}{c}common w{tag}{c}x{} {tag} passage",
                k % 7
            );
            let doc = Document::with_id(format!("{tag}-c{c}-d{k}"), &text)?;
            let emb = noisy_unit(&center, spec.doc_noise, &mut rng)?;
            put_vector(vectors, &doc.id, &emb)?;
            docs.push(doc);
            doc_embs.push(emb);
        }
    }

    let n = spec.examples_per_task;
    let dedup_enabled = !matches!(family, TaskFamily::MatchingLong | TaskFamily::Benchmark(_));
    let near_enabled = matches!(
        family,
        TaskFamily::Retrieval | TaskFamily::MatchingShort | TaskFamily::Sts
    );
    let n_dup = if dedup_enabled { planted_count(spec.duplicate_rate, n) } else { 0 };
    let n_near = if near_enabled { n_dup / 2 } else { 0 };
    let miss_range = if matches!(family, TaskFamily::Retrieval) {
        let start = n / 8;
        start..start + planted_count(spec.answer_miss_rate, n)
    } else {
        0..0
    };
    let fn_range = if matches!(
        family,
        TaskFamily::Sts | TaskFamily::Bitext | TaskFamily::MatchingLong
    ) {
        let start = n / 4;
        start..start + planted_count(spec.false_negative_rate, n)
    } else {
        0..0
    };

    let mut planted = PlantedIds::default();
    let mut examples: Vec<TripletExample> = Vec::new();
    let mut query_embs: Vec<Embedding> = Vec::new();
    for e in 0..n {
        let c = e % spec.clusters_per_task;
        let k = (e / spec.clusters_per_task) % spec.docs_per_cluster;
        let gold_idx = c * spec.docs_per_cluster + k;
        let gold = &docs[gold_idx];

        let qtext = format!("find w{tag}{c}common w{tag}{c}d{k} q{e}");
        let query = Query::new(&qtext, task.clone())?.with_label(format!("cluster{c}"));
        let qemb = noisy_unit(&doc_embs[gold_idx], spec.query_noise, &mut rng)?;
        put_vector(vectors, &query.id, &qemb)?;

        let mut used = BTreeSet::from([gold_idx]);
        let mut negatives = Vec::new();
        while negatives.len() < spec.negatives_per_example {
            let i = rng.random_range(0..docs.len());
            if used.insert(i) {
                negatives.push(docs[i].clone());
            }
        }

        let answer = if matches!(family, TaskFamily::Retrieval) {
            if miss_range.contains(&e) {
                planted.answer_misses.push(query.id.clone());
                Some(format!("xqmiss{e}"))
            } else {
                Some(format!("w{tag}{c}common"))
            }
        } else {
            None
        };

        examples.push(TripletExample {
            query,
            positive: gold.clone(),
            negatives,
            group: Some(GroupId::new(format!("src-{tag}-{}", gold.id))),
            answer,
        });
        query_embs.push(qemb);
    }

    // Paraphrase-of-the-positive negatives: the document joins the corpus and
    // the example's negative list; a margin filter should remove the pair.
    for (j, e) in fn_range.clone().enumerate() {
        let base = &examples[e];
        let text = format!("{} rephrased", base.positive.text);
        let doc = Document::with_id(format!("{tag}-fn{j}"), &text)?;
        let gold_idx = docs.iter().position(|d| d.id == base.positive.id).expect("positive is in corpus");
        let emb = noisy_unit(&doc_embs[gold_idx], 0.005, &mut rng)?;
        put_vector(vectors, &doc.id, &emb)?;
        planted
            .false_negative_pairs
            .push((base.query.id.clone(), doc.id.clone()));
        docs.push(doc.clone());
        doc_embs.push(emb);
        examples[e].negatives.push(doc);
    }

    // Duplicate copies of the first examples, appended at the end so the
    // originals are the retained first occurrences.
    for j in 0..n_dup {
        let base = examples[j].clone();
        if j < n_near {
            // Paraphrase: new text (new id), near-identical teacher vector.
            let qtext = format!("kindly {}", base.query.text);
            let query = Query::new(&qtext, task.clone())?
                .with_label(base.query.label.clone().unwrap_or_default());
            let qemb = noisy_unit(&query_embs[j], 0.005, &mut rng)?;
            put_vector(vectors, &query.id, &qemb)?;
            planted.near_duplicates.push(query.id.clone());
            examples.push(TripletExample { query, ..base });
        } else {
            // Same content in different case: the casefolded dedup key
            // matches the original's, the content id does not.
            let qtext = base.query.text.to_uppercase();
            let query = Query::new(&qtext, task.clone())?
                .with_label(base.query.label.clone().unwrap_or_default());
            put_vector(vectors, &query.id, &query_embs[j])?;
            planted.exact_duplicates.push(query.id.clone());
            examples.push(TripletExample { query, ..base });
        }
    }

    let dataset = Dataset::new(name.clone(), task, examples, docs)?;
    let summary = TaskSummary {
        task: family.to_string(),
        examples: dataset.examples.len(),
        corpus_docs: dataset.corpus.len(),
        planted,
    };
    Ok(TaskBuild { dataset, summary })
}

fn build_eval(
    spec: &FixtureSpec,
    vectors: &mut BTreeMap<String, Embedding>,
) -> Result<(Dataset, Qrels), FixtureError> {
    let task = TaskKind::new(TaskFamily::Benchmark("eval".into()));
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, "fixture:eval"));

    let mut docs: Vec<Document> = Vec::new();
    let mut doc_embs: Vec<Embedding> = Vec::new();
    for c in 0..spec.eval_clusters {
        let center = random_center(spec.dim, &mut rng)?;
        for k in 0..spec.eval_docs_per_cluster {
            let doc = Document::with_id(
                format!("ev-c{c}-d{k}"),
                &format!("v{c}d{k} v{c}common eval passage"),
            )?;
            let emb = noisy_unit(&center, spec.doc_noise, &mut rng)?;
            put_vector(vectors, &doc.id, &emb)?;
            docs.push(doc);
            doc_embs.push(emb);
        }
    }

    let mut examples = Vec::new();
    let mut grades: BTreeMap<String, BTreeMap<String, u32>> = BTreeMap::new();
    for i in 0..spec.eval_queries {
        let c = i % spec.eval_query_clusters;
        let k = (i / spec.eval_query_clusters) % spec.eval_docs_per_cluster;
        let gold_idx = c * spec.eval_docs_per_cluster + k;
        let gold = &docs[gold_idx];
        let query = Query::new(&format!("eval v{c}common v{c}d{k} q{i}"), task.clone())?
            .with_label(format!("cluster{c}"));
        let qemb = noisy_unit(&doc_embs[gold_idx], spec.query_noise, &mut rng)?;
        put_vector(vectors, &query.id, &qemb)?;

        let graded = grades.entry(query.id.clone()).or_default();
        graded.insert(gold.id.clone(), 2);
        for step in [1usize, 2] {
            let nk = (k + step) % spec.eval_docs_per_cluster;
            graded.insert(format!("ev-c{c}-d{nk}"), 1);
        }
        examples.push(TripletExample::new(query, gold.clone()));
    }

    let dataset = Dataset::new("eval", task, examples, docs)?;
    let qrels = Qrels::new(grades)?;
    Ok((dataset, qrels))
}

fn build_holdout(
    spec: &FixtureSpec,
    tasks: &[Dataset],
    vectors: &mut BTreeMap<String, Embedding>,
) -> Result<(Dataset, Qrels), FixtureError> {
    let task = TaskKind::new(TaskFamily::Benchmark("holdout".into()));
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, "fixture:holdout"));

    let mut corpus: Vec<Document> = Vec::new();
    let mut examples = Vec::new();
    let mut grades: BTreeMap<String, BTreeMap<String, u32>> = BTreeMap::new();
    for family in holdout_families() {
        let tag = family_tag(&family);
        let source = tasks
            .iter()
            .find(|d| d.task.family == family)
            .ok_or_else(|| FixtureError::Config(format!("no {family} dataset to hold out from")))?;
        corpus.extend(source.corpus.iter().cloned());
        for h in 0..spec.holdout_per_task {
            let c = h % spec.clusters_per_task;
            let k = (h / spec.clusters_per_task + 7) % spec.docs_per_cluster;
            let gold_id = format!("{tag}-c{c}-d{k}");
            let gold = source
                .corpus
                .iter()
                .find(|d| d.id == gold_id)
                .expect("generated cluster document exists");
            let query = Query::new(
                &format!("held w{tag}{c}common w{tag}{c}d{k} h{tag}{h}"),
                task.clone(),
            )?
            .with_label(family.to_string());
            let gold_emb = vectors
                .get(&gold.id)
                .cloned()
                .expect("document vector recorded during task build");
            let qemb = noisy_unit(&gold_emb, spec.query_noise, &mut rng)?;
            put_vector(vectors, &query.id, &qemb)?;
            grades
                .entry(query.id.clone())
                .or_default()
                .insert(gold.id.clone(), 1);
            examples.push(TripletExample::new(query, gold.clone()));
        }
    }

    let dataset = Dataset::new("holdout", task, examples, corpus)?;
    let qrels = Qrels::new(grades)?;
    Ok((dataset, qrels))
}

/// Generate the whole fixture in memory.
pub fn generate(spec: &FixtureSpec) -> Result<Fixture, FixtureError> {
    spec.validate()?;
    let mut vectors: BTreeMap<String, Embedding> = BTreeMap::new();

    let mut tasks = Vec::new();
    let mut summaries = BTreeMap::new();
    for family in families() {
        let built = build_task(spec, &family, &mut vectors)?;
        summaries.insert(built.dataset.name.clone(), built.summary);
        tasks.push(built.dataset);
    }
    let (eval, eval_qrels) = build_eval(spec, &mut vectors)?;
    let (holdout, holdout_qrels) = build_holdout(spec, &tasks, &mut vectors)?;

    let mut teacher = EmbeddingStore::new(spec.dim)?;
    for (id, emb) in &vectors {
        teacher.append(id.clone(), emb)?;
    }

    let manifest = FixtureManifest {
        seed: spec.seed,
        dim: spec.dim,
        spec: spec.clone(),
        tasks: summaries,
        eval_queries: eval.examples.len(),
        eval_corpus_docs: eval.corpus.len(),
        holdout_queries: holdout.examples.len(),
        holdout_corpus_docs: holdout.corpus.len(),
    };

    Ok(Fixture {
        tasks,
        teacher,
        eval,
        eval_qrels,
        holdout,
        holdout_qrels,
        manifest,
    })
}

impl Fixture {
    /// Write every section to `dir` (created if missing): one
    /// `task_<family>.jsonl` per task, `eval.jsonl` + `qrels_eval.tsv`,
    /// `holdout.jsonl` + `qrels_holdout.tsv`, `teacher.tfvs`, and
    /// `fixture.json`.
    pub fn write_to_dir(&self, dir: impl AsRef<Path>) -> Result<(), FixtureError> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|source| FixtureError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        for ds in &self.tasks {
            save_dataset(ds, dir.join(format!("{}.jsonl", ds.name)))?;
        }
        save_dataset(&self.eval, dir.join(EVAL_FILE))?;
        save_dataset(&self.holdout, dir.join(HOLDOUT_FILE))?;
        self.teacher.save(dir.join(TEACHER_FILE))?;
        self.eval_qrels.save(dir.join(EVAL_QRELS_FILE))?;
        self.holdout_qrels.save(dir.join(HOLDOUT_QRELS_FILE))?;
        let json = canonical_json_pretty(&self.manifest).map_err(|e| {
            FixtureError::Config(format!("manifest serialization failed: {e}"))
        })?;
        atomic_write(&dir.join(MANIFEST_FILE), json.as_bytes()).map_err(|source| {
            FixtureError::Io {
                path: dir.join(MANIFEST_FILE),
                source,
            }
        })?;
        Ok(())
    }

    /// The task dataset for `family`, if generated.
    pub fn task(&self, family: &TaskFamily) -> Option<&Dataset> {
        self.tasks.iter().find(|d| &d.task.family == family)
    }
}
