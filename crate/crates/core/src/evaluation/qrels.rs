//! Relevance judgments, stored as TSV lines `query_id<TAB>doc_id<TAB>grade`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use super::EvalError;
use crate::util::atomic_write;

/// Graded judgments per query. Every query listed must have at least one
/// document with a positive grade.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Qrels {
    by_query: BTreeMap<String, BTreeMap<String, u32>>,
}

impl Qrels {
    pub fn new(by_query: BTreeMap<String, BTreeMap<String, u32>>) -> Result<Self, EvalError> {
        let qrels = Self { by_query };
        qrels.validate()?;
        Ok(qrels)
    }

    fn validate(&self) -> Result<(), EvalError> {
        for (query_id, docs) in &self.by_query {
            if docs.values().all(|g| *g == 0) {
                return Err(EvalError::Validation(format!(
                    "query {query_id:?} has no positively graded document"
                )));
            }
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, EvalError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| EvalError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut by_query: BTreeMap<String, BTreeMap<String, u32>> = BTreeMap::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let malformed = |message: String| EvalError::Malformed {
                path: path.to_path_buf(),
                line: lineno + 1,
                message,
            };
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(malformed(format!(
                    "expected 3 tab-separated fields, found {}",
                    fields.len()
                )));
            }
            let grade: u32 = fields[2]
                .parse()
                .map_err(|_| malformed(format!("grade {:?} is not a non-negative integer", fields[2])))?;
            let prior = by_query
                .entry(fields[0].to_string())
                .or_default()
                .insert(fields[1].to_string(), grade);
            if prior.is_some() {
                return Err(malformed(format!(
                    "duplicate judgment for query {:?}, doc {:?}",
                    fields[0], fields[1]
                )));
            }
        }
        Self::new(by_query)
    }

    /// Sorted TSV; byte-deterministic.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), EvalError> {
        let path = path.as_ref();
        let mut out = String::new();
        for (query_id, docs) in &self.by_query {
            for (doc_id, grade) in docs {
                out.push_str(&format!("{query_id}\t{doc_id}\t{grade}\n"));
            }
        }
        atomic_write(path, out.as_bytes()).map_err(|source| EvalError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn grade(&self, query_id: &str, doc_id: &str) -> u32 {
        self.by_query
            .get(query_id)
            .and_then(|docs| docs.get(doc_id))
            .copied()
            .unwrap_or(0)
    }

    /// All judgments for one query, or None when the query is unjudged.
    pub fn graded(&self, query_id: &str) -> Option<&BTreeMap<String, u32>> {
        self.by_query.get(query_id)
    }

    /// Doc ids with grade ≥ 1, ascending.
    pub fn relevant_ids<'a>(&'a self, query_id: &str) -> impl Iterator<Item = &'a str> {
        self.by_query
            .get(query_id)
            .into_iter()
            .flat_map(|docs| docs.iter())
            .filter(|(_, g)| **g >= 1)
            .map(|(d, _)| d.as_str())
    }

    pub fn has_relevant(&self, query_id: &str) -> bool {
        self.relevant_ids(query_id).next().is_some()
    }

    pub fn query_ids(&self) -> impl Iterator<Item = &str> {
        self.by_query.keys().map(String::as_str)
    }

    pub fn query_count(&self) -> usize {
        self.by_query.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_query.is_empty()
    }
}
