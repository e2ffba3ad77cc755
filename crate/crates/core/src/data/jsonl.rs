//! JSONL dataset interchange.
//!
//! One record per line, two kinds discriminated by a `"kind"` field:
//!
//! ```text
//! {"kind":"doc","id":...,"text":...,"meta":{...}}
//! {"kind":"example","query":{"id":...,"text":...,"instruction":...,"task":...,"label":...},
//!  "positive_id":...,"negative_ids":[...],"group":...,"answer":...}
//! ```
//!
//! Documents may appear anywhere in the file, but every id referenced by an
//! example must resolve within the same file. Saving writes canonical lines
//! (sorted keys), documents first and then examples, each in input order, so
//! saving the same dataset twice yields byte-identical files.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DataError, Dataset, Document, GroupId, Query, TripletExample};
use crate::util::atomic_write;

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum Record {
    Doc {
        id: String,
        text: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        meta: Option<BTreeMap<String, String>>,
    },
    Example {
        query: Query,
        positive_id: String,
        #[serde(default)]
        negative_ids: Vec<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        group: Option<GroupId>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        answer: Option<String>,
    },
}

/// Load and validate a dataset from a JSONL file. The dataset name is the
/// file stem; the task is taken from the examples (which must all agree).
pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset, DataError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let text = std::str::from_utf8(&bytes).map_err(|e| DataError::Utf8 {
        path: path.to_path_buf(),
        offset: e.valid_up_to(),
    })?;

    let mut corpus: Vec<Document> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut pending: Vec<(usize, Query, String, Vec<String>, Option<GroupId>, Option<String>)> =
        Vec::new();

    for (lineno, line) in text.lines().enumerate() {
        let lineno = lineno + 1;
        if line.trim().is_empty() {
            continue;
        }
        let record: Record = serde_json::from_str(line).map_err(|e| DataError::Malformed {
            path: path.to_path_buf(),
            line: lineno,
            message: e.to_string(),
        })?;
        match record {
            Record::Doc { id, text, meta } => {
                if index.contains_key(&id) {
                    return Err(DataError::DuplicateDoc { id });
                }
                index.insert(id.clone(), corpus.len());
                corpus.push(Document { id, text, meta });
            }
            Record::Example {
                query,
                positive_id,
                negative_ids,
                group,
                answer,
            } => pending.push((lineno, query, positive_id, negative_ids, group, answer)),
        }
    }

    let mut dangling: BTreeSet<String> = BTreeSet::new();
    let mut examples = Vec::with_capacity(pending.len());
    for (_lineno, query, positive_id, negative_ids, group, answer) in pending {
        let positive = match index.get(&positive_id) {
            Some(&i) => Some(corpus[i].clone()),
            None => {
                dangling.insert(positive_id);
                None
            }
        };
        let mut negatives = Vec::with_capacity(negative_ids.len());
        for nid in negative_ids {
            match index.get(&nid) {
                Some(&i) => negatives.push(corpus[i].clone()),
                None => {
                    dangling.insert(nid);
                }
            }
        }
        if let Some(positive) = positive {
            examples.push(TripletExample {
                query,
                positive,
                negatives,
                group,
                answer,
            });
        }
    }
    if !dangling.is_empty() {
        return Err(DataError::DanglingRefs {
            ids: dangling.into_iter().collect(),
        });
    }

    let task = examples
        .first()
        .map(|e| e.query.task.clone())
        .ok_or_else(|| DataError::Validation("dataset has no examples".into()))?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".to_string());
    Dataset::new(name, task, examples, corpus)
}

/// Validate and write a dataset as canonical JSONL. The write is atomic: the
/// target file either keeps its old content or receives the complete new one.
pub fn save_dataset(ds: &Dataset, path: impl AsRef<Path>) -> Result<(), DataError> {
    let path = path.as_ref();
    ds.validate()?;
    let mut out = String::new();
    for d in &ds.corpus {
        let record = Record::Doc {
            id: d.id.clone(),
            text: d.text.clone(),
            meta: d.meta.clone(),
        };
        out.push_str(&crate::util::canonical_json_line(&record)?);
    }
    for e in &ds.examples {
        let record = Record::Example {
            query: e.query.clone(),
            positive_id: e.positive.id.clone(),
            negative_ids: e.negatives.iter().map(|n| n.id.clone()).collect(),
            group: e.group.clone(),
            answer: e.answer.clone(),
        };
        out.push_str(&crate::util::canonical_json_line(&record)?);
    }
    atomic_write(path, out.as_bytes()).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })
}
