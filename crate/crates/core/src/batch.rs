//! Training schedules.
//!
//! Two planners over a set of single-task datasets: a task-homogeneous
//! one-epoch plan arranged into n blocks whose task order repeats block for
//! block, and a short mixed-task phase that fills each step with sub-batches
//! from distinct tasks where possible. Both emit the same JSONL step format,
//! one record per step:
//!
//! ```text
//! {"step":0,"block":0,"tail":false,"sub_batches":[{"task":"retrieval","refs":[["ds",3],...]},...]}
//! ```
//!
//! Every device sub-batch is task-homogeneous and exactly `batch_size /
//! devices` examples; leftover examples that cannot fill a sub-batch are
//! dropped and reported, never silently discarded. Group-ID negative masks
//! for in-batch negatives are built per step from the flattened example
//! order.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::{self, Deserializer, SeqAccess, Visitor};
use serde::ser::{SerializeTuple, Serializer};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{Dataset, TaskKind, TripletExample};
use crate::util::{atomic_write, canonical_json_line, derive_seed};

pub const DEFAULT_MIXED_MAX_STEPS: usize = 20;

#[derive(Debug, Error)]
pub enum BatchError {
    #[error("invalid batch config: {0}")]
    Config(String),
    #[error(
        "dataset {name:?} has {examples} example(s): fewer than one full device sub-batch of {sub}"
    )]
    TooSmall {
        name: String,
        examples: usize,
        sub: usize,
    },
    #[error("duplicate dataset name {0:?}")]
    DuplicateDataset(String),
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
    #[error("step references unknown dataset {name:?}")]
    UnknownDataset { name: String },
    #[error("reference [{name:?}, {index}] is out of range ({len} examples)")]
    RefOutOfRange {
        name: String,
        index: usize,
        len: usize,
    },
}

/// A (dataset, example index) pointer, serialized as a `[dataset, index]`
/// pair.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ExampleRef {
    pub dataset: String,
    pub index: usize,
}

impl Serialize for ExampleRef {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut t = serializer.serialize_tuple(2)?;
        t.serialize_element(&self.dataset)?;
        t.serialize_element(&self.index)?;
        t.end()
    }
}

impl<'de> Deserialize<'de> for ExampleRef {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct V;
        impl<'de> Visitor<'de> for V {
            type Value = ExampleRef;
            fn expecting(&self, f: &mut std::fmt::Formatter) -> std::fmt::Result {
                f.write_str("a [dataset, index] pair")
            }
            fn visit_seq<A: SeqAccess<'de>>(self, mut seq: A) -> Result<ExampleRef, A::Error> {
                let dataset = seq
                    .next_element()?
                    .ok_or_else(|| de::Error::invalid_length(0, &self))?;
                let index = seq
                    .next_element()?
                    .ok_or_else(|| de::Error::invalid_length(1, &self))?;
                if seq.next_element::<de::IgnoredAny>()?.is_some() {
                    return Err(de::Error::invalid_length(3, &self));
                }
                Ok(ExampleRef { dataset, index })
            }
        }
        deserializer.deserialize_tuple(2, V)
    }
}

/// One device's worth of examples, all from the same task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceSubBatch {
    pub task: TaskKind,
    pub refs: Vec<ExampleRef>,
}

/// One optimizer step: one sub-batch per simulated device (tail steps may
/// carry fewer).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub sub_batches: Vec<DeviceSubBatch>,
}

impl Step {
    /// All refs in flattened order — the index space used by
    /// [`NegativeMask`].
    pub fn flat_refs(&self) -> impl Iterator<Item = &ExampleRef> {
        self.sub_batches.iter().flat_map(|sb| sb.refs.iter())
    }

    /// The step's task when homogeneous, `None` for a mixed step.
    pub fn single_task(&self) -> Option<&TaskKind> {
        let first = &self.sub_batches.first()?.task;
        self.sub_batches
            .iter()
            .all(|sb| &sb.task == first)
            .then_some(first)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    HomogeneousOrdered,
    Mixed,
}

/// A complete training schedule: `blocks` of steps (one block for the mixed
/// phase), a tail of leftover steps exempt from the identical-order
/// guarantee, and the examples dropped because they could not fill a
/// sub-batch.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchPlan {
    pub phase: Phase,
    pub blocks: Vec<Vec<Step>>,
    pub tail: Vec<Step>,
    pub batch_size: usize,
    pub devices: usize,
    pub n_blocks: usize,
    pub seed: u64,
    pub dropped: Vec<ExampleRef>,
}

impl BatchPlan {
    /// Steps in execution order: blocks first, then the tail.
    pub fn steps(&self) -> impl Iterator<Item = &Step> {
        self.blocks.iter().flatten().chain(self.tail.iter())
    }

    pub fn total_steps(&self) -> usize {
        self.blocks.iter().map(Vec::len).sum::<usize>() + self.tail.len()
    }

    /// Write one JSONL record per step; byte-deterministic.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), BatchError> {
        let path = path.as_ref();
        let mut out = String::new();
        let mut step_no = 0usize;
        let push = |record: &PlanRecord, out: &mut String| -> Result<(), BatchError> {
            out.push_str(&canonical_json_line(record).map_err(|e| BatchError::Malformed {
                path: path.to_path_buf(),
                line: record.step + 1,
                message: e.to_string(),
            })?);
            Ok(())
        };
        for (b, block) in self.blocks.iter().enumerate() {
            for step in block {
                push(
                    &PlanRecord {
                        step: step_no,
                        block: Some(b),
                        tail: false,
                        sub_batches: step.sub_batches.clone(),
                    },
                    &mut out,
                )?;
                step_no += 1;
            }
        }
        for step in &self.tail {
            push(
                &PlanRecord {
                    step: step_no,
                    block: None,
                    tail: true,
                    sub_batches: step.sub_batches.clone(),
                },
                &mut out,
            )?;
            step_no += 1;
        }
        atomic_write(path, out.as_bytes()).map_err(|source| BatchError::Io {
            path: path.to_path_buf(),
            source,
        })
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct PlanRecord {
    step: usize,
    /// Block index; `null` on tail steps.
    block: Option<usize>,
    #[serde(default)]
    tail: bool,
    sub_batches: Vec<DeviceSubBatch>,
}

/// Read the steps of a saved plan, in step order.
pub fn load_steps(path: impl AsRef<Path>) -> Result<Vec<Step>, BatchError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| BatchError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut records: Vec<PlanRecord> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: PlanRecord =
            serde_json::from_str(line).map_err(|e| BatchError::Malformed {
                path: path.to_path_buf(),
                line: lineno + 1,
                message: e.to_string(),
            })?;
        records.push(record);
    }
    records.sort_by_key(|r| r.step);
    for (i, r) in records.iter().enumerate() {
        if r.step != i {
            return Err(BatchError::Malformed {
                path: path.to_path_buf(),
                line: 0,
                message: format!("step numbers are not contiguous: expected {i}, found {}", r.step),
            });
        }
    }
    Ok(records
        .into_iter()
        .map(|r| Step {
            sub_batches: r.sub_batches,
        })
        .collect())
}

/// Per-dataset shuffled full sub-batches plus the dropped remainder.
struct ChunkedDataset<'a> {
    dataset: &'a Dataset,
    chunks: Vec<Vec<ExampleRef>>,
}

fn validate_and_chunk<'a>(
    datasets: &'a [Dataset],
    batch_size: usize,
    devices: usize,
    seed: u64,
) -> Result<(Vec<ChunkedDataset<'a>>, Vec<ExampleRef>, usize), BatchError> {
    if datasets.is_empty() {
        return Err(BatchError::Config("at least one dataset is required".into()));
    }
    if devices == 0 {
        return Err(BatchError::Config("devices must be at least 1".into()));
    }
    if batch_size == 0 || batch_size % devices != 0 {
        return Err(BatchError::Config(format!(
            "batch_size {batch_size} must be a positive multiple of devices ({devices})"
        )));
    }
    let sub = batch_size / devices;
    let mut names = HashSet::new();
    let mut chunked = Vec::with_capacity(datasets.len());
    let mut dropped = Vec::new();
    for ds in datasets {
        if !names.insert(ds.name.as_str()) {
            return Err(BatchError::DuplicateDataset(ds.name.clone()));
        }
        let mut indices: Vec<usize> = (0..ds.examples.len()).collect();
        let mut rng =
            ChaCha8Rng::seed_from_u64(derive_seed(seed, &format!("shuffle:{}", ds.name)));
        indices.shuffle(&mut rng);
        let full = indices.len() / sub * sub;
        if full == 0 {
            return Err(BatchError::TooSmall {
                name: ds.name.clone(),
                examples: ds.examples.len(),
                sub,
            });
        }
        for &i in &indices[full..] {
            dropped.push(ExampleRef {
                dataset: ds.name.clone(),
                index: i,
            });
        }
        let chunks = indices[..full]
            .chunks(sub)
            .map(|chunk| {
                chunk
                    .iter()
                    .map(|&index| ExampleRef {
                        dataset: ds.name.clone(),
                        index,
                    })
                    .collect()
            })
            .collect();
        chunked.push(ChunkedDataset { dataset: ds, chunks });
    }
    Ok((chunked, dropped, sub))
}

/// One-epoch task-homogeneous plan in `n_blocks` identical-task-order blocks.
///
/// Per dataset with B full sub-batches there are `floor(B / devices)` full
/// steps; each block receives `floor(steps / n_blocks)` of them. The block's
/// dataset order is one seeded shuffle, reused verbatim by every block.
/// Leftover full steps, then leftover sub-batches as underfilled steps, form
/// the marked tail.
pub fn plan_homogeneous_ordered(
    datasets: &[Dataset],
    batch_size: usize,
    devices: usize,
    n_blocks: usize,
    seed: u64,
) -> Result<BatchPlan, BatchError> {
    if n_blocks == 0 {
        return Err(BatchError::Config("n_blocks must be at least 1".into()));
    }
    let (chunked, dropped, _sub) = validate_and_chunk(datasets, batch_size, devices, seed)?;

    // Group each dataset's chunks into full steps of `devices` sub-batches.
    let mut steps_per_ds: Vec<Vec<Step>> = Vec::with_capacity(chunked.len());
    let mut underfilled: Vec<Option<Step>> = Vec::with_capacity(chunked.len());
    for cd in &chunked {
        let full_steps = cd.chunks.len() / devices;
        let mut steps = Vec::with_capacity(full_steps);
        for k in 0..full_steps {
            steps.push(Step {
                sub_batches: cd.chunks[k * devices..(k + 1) * devices]
                    .iter()
                    .map(|refs| DeviceSubBatch {
                        task: cd.dataset.task.clone(),
                        refs: refs.clone(),
                    })
                    .collect(),
            });
        }
        let rest = &cd.chunks[full_steps * devices..];
        underfilled.push((!rest.is_empty()).then(|| Step {
            sub_batches: rest
                .iter()
                .map(|refs| DeviceSubBatch {
                    task: cd.dataset.task.clone(),
                    refs: refs.clone(),
                })
                .collect(),
        }));
        steps_per_ds.push(steps);
    }

    // Per-block quota and the shared task order.
    let quotas: Vec<usize> = steps_per_ds.iter().map(|s| s.len() / n_blocks).collect();
    let mut order: Vec<usize> = Vec::new();
    for (d, &q) in quotas.iter().enumerate() {
        order.extend(std::iter::repeat_n(d, q));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "block-order"));
    order.shuffle(&mut rng);

    let mut cursors = vec![0usize; chunked.len()];
    let mut blocks = Vec::with_capacity(n_blocks);
    for _ in 0..n_blocks {
        let mut block = Vec::with_capacity(order.len());
        for &d in &order {
            block.push(steps_per_ds[d][cursors[d]].clone());
            cursors[d] += 1;
        }
        blocks.push(block);
    }

    let mut tail = Vec::new();
    for (d, steps) in steps_per_ds.iter().enumerate() {
        tail.extend(steps[cursors[d]..].iter().cloned());
    }
    tail.extend(underfilled.into_iter().flatten());

    Ok(BatchPlan {
        phase: Phase::HomogeneousOrdered,
        blocks,
        tail,
        batch_size,
        devices,
        n_blocks,
        seed,
        dropped,
    })
}

/// A short mixed-task phase: each step takes `devices` sub-batches
/// round-robin over the datasets (seeded starting point, cursor persisting
/// across steps), so tasks within a step are pairwise distinct whenever
/// enough tasks remain. Consumes each dataset's sub-batches from the end of
/// the same epoch shuffle the homogeneous plan uses, so the sub-batches a
/// homogeneous plan held back in its tail are spent here first. Stops after
/// `max_steps` or as soon as a full step can no longer be filled.
pub fn plan_mixed(
    datasets: &[Dataset],
    batch_size: usize,
    devices: usize,
    max_steps: usize,
    seed: u64,
) -> Result<BatchPlan, BatchError> {
    if max_steps == 0 {
        return Err(BatchError::Config("max_steps must be at least 1".into()));
    }
    let (chunked, dropped, _sub) = validate_and_chunk(datasets, batch_size, devices, seed)?;

    let mut stacks: Vec<Vec<Vec<ExampleRef>>> =
        chunked.iter().map(|cd| cd.chunks.clone()).collect();
    let n = stacks.len();
    let mut cursor = (derive_seed(seed, "mixed") % n as u64) as usize;
    let mut steps = Vec::new();
    while steps.len() < max_steps {
        // With at least `devices` tasks, a step only forms while that many
        // still have data, so its sub-batch tasks stay pairwise distinct;
        // with fewer tasks the round-robin wraps instead.
        let feasible = if n >= devices {
            stacks.iter().filter(|s| !s.is_empty()).count() >= devices
        } else {
            stacks.iter().map(Vec::len).sum::<usize>() >= devices
        };
        if !feasible {
            break;
        }
        let mut sub_batches = Vec::with_capacity(devices);
        while sub_batches.len() < devices {
            while stacks[cursor % n].is_empty() {
                cursor += 1;
            }
            let d = cursor % n;
            cursor += 1;
            let refs = stacks[d].pop().expect("non-empty stack");
            sub_batches.push(DeviceSubBatch {
                task: chunked[d].dataset.task.clone(),
                refs,
            });
        }
        steps.push(Step { sub_batches });
    }

    Ok(BatchPlan {
        phase: Phase::Mixed,
        blocks: vec![steps],
        tail: Vec::new(),
        batch_size,
        devices,
        n_blocks: 1,
        seed,
        dropped,
    })
}

/// The in-batch-negative mask for one step, over flattened in-step example
/// indices: `masked(i, j)` is true when i ≠ j and both examples carry the
/// same group id. Ungrouped examples are never masked.
#[derive(Debug, Clone, PartialEq)]
pub struct NegativeMask {
    groups: Vec<Option<String>>,
}

impl NegativeMask {
    pub fn from_groups(groups: Vec<Option<String>>) -> Self {
        Self { groups }
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    pub fn masked(&self, i: usize, j: usize) -> bool {
        i != j && self.groups[i].is_some() && self.groups[i] == self.groups[j]
    }
}

fn dataset_map(datasets: &[Dataset]) -> HashMap<&str, &Dataset> {
    datasets.iter().map(|ds| (ds.name.as_str(), ds)).collect()
}

fn resolve_ref<'a>(
    map: &HashMap<&str, &'a Dataset>,
    r: &ExampleRef,
) -> Result<&'a TripletExample, BatchError> {
    let ds = map.get(r.dataset.as_str()).ok_or_else(|| BatchError::UnknownDataset {
        name: r.dataset.clone(),
    })?;
    ds.examples.get(r.index).ok_or_else(|| BatchError::RefOutOfRange {
        name: r.dataset.clone(),
        index: r.index,
        len: ds.examples.len(),
    })
}

/// Resolve a step's refs against the datasets, preserving sub-batch
/// boundaries. The flattened order matches [`NegativeMask`] indices.
pub fn resolve_sub_batches<'a>(
    step: &Step,
    datasets: &'a [Dataset],
) -> Result<Vec<Vec<&'a TripletExample>>, BatchError> {
    let map = dataset_map(datasets);
    step.sub_batches
        .iter()
        .map(|sb| sb.refs.iter().map(|r| resolve_ref(&map, r)).collect())
        .collect()
}

/// Build the group-ID mask for a step's flattened examples.
pub fn build_negative_mask(step: &Step, datasets: &[Dataset]) -> Result<NegativeMask, BatchError> {
    let map = dataset_map(datasets);
    let mut groups = Vec::new();
    for r in step.flat_refs() {
        let ex = resolve_ref(&map, r)?;
        groups.push(ex.group.as_ref().map(|g| g.as_str().to_string()));
    }
    Ok(NegativeMask::from_groups(groups))
}
