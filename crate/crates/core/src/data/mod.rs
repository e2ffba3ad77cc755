//! Domain data model: documents, queries, task kinds, triplet examples, and
//! validated datasets.
//!
//! All types here are immutable after construction and safe to share across
//! threads. Identifiers are content hashes by default (reproducible across
//! runs); ids supplied by input data are honored but uniqueness-checked.

mod jsonl;
mod normalize;

pub use jsonl::{load_dataset, save_dataset};
pub use normalize::{casefold, content_id, normalize_text};

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::io;
use std::path::PathBuf;
use std::str::FromStr;

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Errors from dataset construction, validation, and JSONL I/O.
#[derive(Debug, Error)]
pub enum DataError {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}: invalid UTF-8 at byte offset {offset}")]
    Utf8 { path: PathBuf, offset: usize },
    #[error("{path}:{line}: malformed record: {message}")]
    Malformed {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("duplicate document id {id}")]
    DuplicateDoc { id: String },
    #[error("examples reference unknown document ids: {}", ids.join(", "))]
    DanglingRefs { ids: Vec<String> },
    #[error("serialization failed: {0}")]
    Serialize(#[from] serde_json::Error),
    #[error("dataset validation failed: {0}")]
    Validation(String),
}

/// The closed set of task families a dataset can belong to.
///
/// `Benchmark` carries a free-form (non-empty) name for evaluation-only sets.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TaskFamily {
    Retrieval,
    Classification,
    MatchingShort,
    MatchingLong,
    Sts,
    Bitext,
    Benchmark(String),
}

impl TaskFamily {
    /// Whether examples of this family are symmetric by default: both sides
    /// are interchangeable texts (paraphrases, translations, near-duplicate
    /// pairs) rather than a short query against a long passage.
    pub fn default_symmetric(&self) -> bool {
        matches!(
            self,
            TaskFamily::Sts | TaskFamily::Bitext | TaskFamily::MatchingShort | TaskFamily::MatchingLong
        )
    }
}

impl fmt::Display for TaskFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TaskFamily::Retrieval => f.write_str("retrieval"),
            TaskFamily::Classification => f.write_str("classification"),
            TaskFamily::MatchingShort => f.write_str("matching-short"),
            TaskFamily::MatchingLong => f.write_str("matching-long"),
            TaskFamily::Sts => f.write_str("sts"),
            TaskFamily::Bitext => f.write_str("bitext"),
            TaskFamily::Benchmark(name) => write!(f, "benchmark:{name}"),
        }
    }
}

impl FromStr for TaskFamily {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "retrieval" => Ok(TaskFamily::Retrieval),
            "classification" => Ok(TaskFamily::Classification),
            "matching-short" => Ok(TaskFamily::MatchingShort),
            "matching-long" => Ok(TaskFamily::MatchingLong),
            "sts" => Ok(TaskFamily::Sts),
            "bitext" => Ok(TaskFamily::Bitext),
            other => match other.strip_prefix("benchmark:") {
                Some(name) if !name.trim().is_empty() => {
                    Ok(TaskFamily::Benchmark(name.to_string()))
                }
                Some(_) => Err("benchmark task name must be non-empty".to_string()),
                None => Err(format!(
                    "unknown task family {other:?} (expected retrieval, classification, \
                     matching-short, matching-long, sts, bitext, or benchmark:<name>)"
                )),
            },
        }
    }
}

/// A task family plus its symmetry flag.
///
/// Serialized as the bare family string (`"sts"`) when `symmetric` matches
/// the family default, or as `{"family":...,"symmetric":...}` otherwise.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TaskKind {
    pub family: TaskFamily,
    pub symmetric: bool,
}

impl TaskKind {
    /// Task with the family's default symmetry.
    pub fn new(family: TaskFamily) -> Self {
        let symmetric = family.default_symmetric();
        TaskKind { family, symmetric }
    }

    pub fn with_symmetric(family: TaskFamily, symmetric: bool) -> Self {
        TaskKind { family, symmetric }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.family.fmt(f)
    }
}

impl FromStr for TaskKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(TaskKind::new(s.parse()?))
    }
}

impl Serialize for TaskKind {
    fn serialize<S: Serializer>(&self, ser: S) -> Result<S::Ok, S::Error> {
        if self.symmetric == self.family.default_symmetric() {
            ser.serialize_str(&self.family.to_string())
        } else {
            use serde::ser::SerializeMap;
            let mut m = ser.serialize_map(Some(2))?;
            m.serialize_entry("family", &self.family.to_string())?;
            m.serialize_entry("symmetric", &self.symmetric)?;
            m.end()
        }
    }
}

impl<'de> Deserialize<'de> for TaskKind {
    fn deserialize<D: Deserializer<'de>>(de: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Plain(String),
            Full { family: String, symmetric: bool },
        }
        match Repr::deserialize(de)? {
            Repr::Plain(s) => s.parse().map_err(D::Error::custom),
            Repr::Full { family, symmetric } => {
                let family: TaskFamily = family.parse().map_err(D::Error::custom)?;
                Ok(TaskKind::with_symmetric(family, symmetric))
            }
        }
    }
}

/// Opaque source marker: examples sharing a group were generated from the
/// same source and must never serve as each other's in-batch negatives.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GroupId(String);

impl GroupId {
    pub fn new(value: impl Into<String>) -> Self {
        GroupId(value.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for GroupId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// A corpus document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meta: Option<BTreeMap<String, String>>,
}

impl Document {
    /// Build a document from raw text: normalizes it and derives the content
    /// id. Fails if the text is empty after normalization.
    pub fn from_text(raw: &str) -> Result<Self, DataError> {
        let text = normalize_text(raw);
        if text.is_empty() {
            return Err(DataError::Validation(
                "document text is empty after normalization".into(),
            ));
        }
        Ok(Document {
            id: content_id(&text),
            text,
            meta: None,
        })
    }

    /// Build a document with an externally supplied id; the text is still
    /// normalized and must be non-empty afterwards.
    pub fn with_id(id: impl Into<String>, raw: &str) -> Result<Self, DataError> {
        let mut doc = Document::from_text(raw)?;
        doc.id = id.into();
        Ok(doc)
    }

    pub fn with_meta(mut self, key: &str, value: &str) -> Self {
        self.meta
            .get_or_insert_with(BTreeMap::new)
            .insert(key.to_string(), value.to_string());
        self
    }
}

/// A query with an optional one-sided instruction prefix and an optional
/// stratum label used by balanced sampling.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Query {
    pub id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instruction: Option<String>,
    pub task: TaskKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

impl Query {
    /// Build a query from raw text; the id hashes the text that will actually
    /// be embedded (instruction included when present), so queries differing
    /// only in instruction still get distinct ids.
    pub fn new(raw_text: &str, task: TaskKind) -> Result<Self, DataError> {
        Query::build(raw_text, None, task)
    }

    pub fn with_instruction(
        raw_text: &str,
        instruction: &str,
        task: TaskKind,
    ) -> Result<Self, DataError> {
        Query::build(raw_text, Some(instruction), task)
    }

    fn build(raw_text: &str, instruction: Option<&str>, task: TaskKind) -> Result<Self, DataError> {
        let text = normalize_text(raw_text);
        if text.is_empty() {
            return Err(DataError::Validation(
                "query text is empty after normalization".into(),
            ));
        }
        let instruction = instruction.map(normalize_text).filter(|i| !i.is_empty());
        let mut q = Query {
            id: String::new(),
            text,
            instruction,
            task,
            label: None,
        };
        q.id = content_id(&q.embedding_text());
        Ok(q)
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = Some(label.into());
        self
    }

    /// The string actually embedded for this query. The instruction prefix is
    /// applied on the query side only; documents are embedded verbatim.
    pub fn embedding_text(&self) -> String {
        match &self.instruction {
            Some(instr) => format!("{instr} {}", self.text),
            None => self.text.clone(),
        }
    }
}

/// One training instance: a query, its positive document, zero or more hard
/// negatives, an optional group marker, and an optional answer string used by
/// answer filtering.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TripletExample {
    pub query: Query,
    pub positive: Document,
    pub negatives: Vec<Document>,
    pub group: Option<GroupId>,
    pub answer: Option<String>,
}

impl TripletExample {
    pub fn new(query: Query, positive: Document) -> Self {
        TripletExample {
            query,
            positive,
            negatives: Vec::new(),
            group: None,
            answer: None,
        }
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let mut seen = HashSet::new();
        for n in &self.negatives {
            if n.id == self.positive.id {
                return Err(DataError::Validation(format!(
                    "example {}: positive {} also appears among negatives",
                    self.query.id, self.positive.id
                )));
            }
            if !seen.insert(n.id.as_str()) {
                return Err(DataError::Validation(format!(
                    "example {}: duplicate negative id {}",
                    self.query.id, n.id
                )));
            }
        }
        Ok(())
    }
}

/// A named, validated collection of examples over a single task, together
/// with the corpus every referenced document resolves into.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    /// Presentation name (the file stem on load); not part of structural
    /// round-trip equality.
    pub name: String,
    pub task: TaskKind,
    pub examples: Vec<TripletExample>,
    pub corpus: Vec<Document>,
}

impl Dataset {
    pub fn new(
        name: impl Into<String>,
        task: TaskKind,
        examples: Vec<TripletExample>,
        corpus: Vec<Document>,
    ) -> Result<Self, DataError> {
        let ds = Dataset {
            name: name.into(),
            task,
            examples,
            corpus,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<(), DataError> {
        if self.corpus.is_empty() {
            return Err(DataError::Validation("corpus is empty".into()));
        }
        if self.examples.is_empty() {
            return Err(DataError::Validation("dataset has no examples".into()));
        }
        let mut ids = HashSet::with_capacity(self.corpus.len());
        for d in &self.corpus {
            if normalize_text(&d.text).is_empty() {
                return Err(DataError::Validation(format!(
                    "document {} has empty text after normalization",
                    d.id
                )));
            }
            if !ids.insert(d.id.as_str()) {
                return Err(DataError::DuplicateDoc { id: d.id.clone() });
            }
        }
        let mut dangling: Vec<String> = Vec::new();
        for e in &self.examples {
            e.validate()?;
            if e.query.task != self.task {
                return Err(DataError::Validation(format!(
                    "example {} has task {} but the dataset is {}",
                    e.query.id, e.query.task, self.task
                )));
            }
            if normalize_text(&e.query.text).is_empty() {
                return Err(DataError::Validation(format!(
                    "query {} has empty text after normalization",
                    e.query.id
                )));
            }
            for id in std::iter::once(&e.positive.id).chain(e.negatives.iter().map(|n| &n.id)) {
                if !ids.contains(id.as_str()) {
                    dangling.push(id.clone());
                }
            }
        }
        if !dangling.is_empty() {
            dangling.sort();
            dangling.dedup();
            return Err(DataError::DanglingRefs { ids: dangling });
        }
        Ok(())
    }

    /// Map from document id to its position in `corpus`.
    pub fn doc_index(&self) -> HashMap<&str, usize> {
        self.corpus
            .iter()
            .enumerate()
            .map(|(i, d)| (d.id.as_str(), i))
            .collect()
    }

    /// Corpus document ids in corpus order.
    pub fn corpus_ids(&self) -> Vec<String> {
        self.corpus.iter().map(|d| d.id.clone()).collect()
    }

    /// Each distinct query (by id), first occurrence wins, in example order.
    pub fn unique_queries(&self) -> Vec<&Query> {
        let mut seen = HashSet::new();
        self.examples
            .iter()
            .map(|e| &e.query)
            .filter(|q| seen.insert(q.id.as_str()))
            .collect()
    }
}
