//! Triplet training-data refinement for text-embedding models.
//!
//! This crate takes raw (query, positive, negatives) triplet datasets and
//! turns them into something worth training on:
//!
//! - [`data`] — the dataset model and JSONL interchange format.
//! - [`embed`] — teacher/provider embeddings: an on-disk vector store, an
//!   int8-quantized variant, and an HTTP embedding client with caching.
//! - [`rank`] — exact brute-force cosine ranking with deterministic ties.
//! - [`refine`] — the refinement passes: dedup, answer filtering, positive
//!   rank filtering, hard-negative mining in a teacher rank window, negative
//!   rank filtering, and false-negative margin filtering.
//! - [`batch`] — training schedules: task-homogeneous device sub-batches,
//!   identical-order blocks, a short mixed-task phase, and group-ID
//!   in-batch-negative masks.
//! - [`train`] — the InfoNCE loss with exact analytic gradients and a
//!   desk-scale hashed bag-of-tokens encoder trained from a batch plan.
//! - [`evaluation`] — qrels, nDCG/recall/MRR, light evaluation sets
//!   (top-k corpus union over a stratified query sample), report comparison.
//! - [`fixture`] — a clustered synthetic multi-task corpus generator with
//!   planted defects, so every pipeline stage can be exercised hermetically.
//!
//! Everything is seeded and deterministic: one seed reproduces every artifact
//! byte for byte in single-threaded mode, and ranking results are independent
//! of thread count.

pub mod batch;
pub mod data;
pub mod embed;
pub mod evaluation;
pub mod fixture;
pub mod rank;
pub mod refine;
pub mod train;
mod util;

pub use util::derive_seed;
