//! Contrastive trainer for the toy encoder.
//!
//! Walks a batch plan step by step: encodes each sub-batch's queries,
//! positives, and mined negatives, adds the other positives of the *same
//! device sub-batch* as in-batch negatives (group-masked), averages the
//! InfoNCE gradients over the step, and applies SGD or Adam under a
//! warmup-then-linear-decay schedule. Single-threaded on purpose: runs are
//! bitwise reproducible given the same seed, plan, and data.

mod encoder;
mod loss;

use std::io;
use std::ops::Range;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use encoder::{
    featurize, hash_token, EncoderParams, FeatureVector, DEFAULT_BUCKETS, DEFAULT_DIM,
};
pub use loss::{infonce, infonce_loss, log_phi, phi, InfoNce, DEFAULT_TEMPERATURE};

use crate::batch::{build_negative_mask, resolve_sub_batches, BatchError, NegativeMask, Step};
use crate::data::Dataset;
use crate::embed::EmbedError;
use crate::util::{atomic_write, canonical_json_line};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("invalid vector: {0}")]
    InvalidVector(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error(transparent)]
    Batch(#[from] BatchError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
}

/// Loss hyperparameters shared by every step.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct LossParams {
    pub temperature: f64,
    pub use_in_batch_negatives: bool,
}

impl Default for LossParams {
    fn default() -> Self {
        Self {
            temperature: DEFAULT_TEMPERATURE,
            use_in_batch_negatives: true,
        }
    }
}

impl LossParams {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !self.temperature.is_finite() || self.temperature <= 0.0 {
            return Err(TrainError::Config(format!(
                "temperature must be positive and finite, got {}",
                self.temperature
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

/// Optimization settings. `lr = 0` is allowed as the degenerate "evaluate
/// the loss without moving" mode; the log is still written.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub optimizer: OptimizerKind,
    pub lr: f64,
    /// Fraction of total steps spent ramping the rate up linearly before
    /// the linear decay begins.
    pub warmup_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 1,
            optimizer: OptimizerKind::Adam,
            lr: 1e-3,
            warmup_fraction: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.epochs == 0 {
            return Err(TrainError::Config("epochs must be at least 1".into()));
        }
        if !self.lr.is_finite() || self.lr < 0.0 {
            return Err(TrainError::Config(format!(
                "lr must be finite and non-negative, got {}",
                self.lr
            )));
        }
        if !(0.0..=1.0).contains(&self.warmup_fraction) {
            return Err(TrainError::Config(format!(
                "warmup_fraction must be in [0, 1], got {}",
                self.warmup_fraction
            )));
        }
        Ok(())
    }
}

/// Linear warmup over ceil(warmup_fraction · total) steps, then linear
/// decay toward zero over the rest.
pub fn learning_rate_at(step: usize, total_steps: usize, cfg: &TrainConfig) -> f64 {
    if total_steps == 0 {
        return cfg.lr;
    }
    let warmup = (cfg.warmup_fraction * total_steps as f64).ceil() as usize;
    if step < warmup {
        cfg.lr * (step + 1) as f64 / warmup as f64
    } else if total_steps > warmup {
        cfg.lr * (total_steps - step) as f64 / (total_steps - warmup) as f64
    } else {
        cfg.lr
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub step: usize,
    /// The step's task, or `"mixed"` when sub-batches disagree.
    pub task: String,
    /// Mean loss over the step's examples.
    pub loss: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub records: Vec<TrainRecord>,
}

impl TrainLog {
    pub fn mean_loss(&self, range: Range<usize>) -> Option<f64> {
        let slice = self.records.get(range)?;
        if slice.is_empty() {
            return None;
        }
        Some(slice.iter().map(|r| r.loss).sum::<f64>() / slice.len() as f64)
    }

    /// Mean loss over the first `n` steps (clamped).
    pub fn initial_mean(&self, n: usize) -> Option<f64> {
        self.mean_loss(0..n.min(self.records.len()))
    }

    /// Mean loss over the last `n` steps (clamped).
    pub fn final_mean(&self, n: usize) -> Option<f64> {
        let len = self.records.len();
        self.mean_loss(len.saturating_sub(n)..len)
    }

    /// One JSONL record per step; byte-deterministic.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), TrainError> {
        let path = path.as_ref();
        let mut out = String::new();
        for record in &self.records {
            out.push_str(&canonical_json_line(record).map_err(|e| TrainError::Config(e.to_string()))?);
        }
        atomic_write(path, out.as_bytes()).map_err(|source| TrainError::Io {
            path: path.to_path_buf(),
            source,
        })
    }
}

enum OptState {
    Sgd,
    Adam { m: Vec<f64>, v: Vec<f64>, t: u64 },
}

impl OptState {
    fn new(kind: OptimizerKind, n: usize) -> Self {
        match kind {
            OptimizerKind::Sgd => OptState::Sgd,
            OptimizerKind::Adam => OptState::Adam {
                m: vec![0.0; n],
                v: vec![0.0; n],
                t: 0,
            },
        }
    }

    fn apply(&mut self, weights: &mut [f64], grad: &[f64], scale: f64, lr: f64) {
        match self {
            OptState::Sgd => {
                for (w, g) in weights.iter_mut().zip(grad) {
                    *w -= lr * scale * g;
                }
            }
            OptState::Adam { m, v, t } => {
                const B1: f64 = 0.9;
                const B2: f64 = 0.999;
                const EPS: f64 = 1e-8;
                *t += 1;
                let bc1 = 1.0 - B1.powi(*t as i32);
                let bc2 = 1.0 - B2.powi(*t as i32);
                for i in 0..weights.len() {
                    let g = grad[i] * scale;
                    m[i] = B1 * m[i] + (1.0 - B1) * g;
                    v[i] = B2 * v[i] + (1.0 - B2) * g * g;
                    let mh = m[i] / bc1;
                    let vh = v[i] / bc2;
                    weights[i] -= lr * mh / (vh.sqrt() + EPS);
                }
            }
        }
    }
}

/// One encoded text inside a step: its raw output, or the no-gradient
/// fallback when the raw output is exactly zero (empty token set).
struct Encoded {
    raw: Vec<f64>,
    trainable: bool,
}

fn encode_for_training(params: &EncoderParams, text: &str, fallback: &[f64]) -> Encoded {
    let raw = params.encode_raw(text);
    if raw.iter().all(|v| *v == 0.0) {
        Encoded {
            raw: fallback.to_vec(),
            trainable: false,
        }
    } else {
        Encoded {
            raw,
            trainable: true,
        }
    }
}

/// Scatter ∂L/∂(raw output) back onto the weight matrix through the sparse
/// feature counts.
fn accumulate_grad(grad: &mut [f64], params: &EncoderParams, text: &str, g: &[f64]) {
    if g.iter().all(|v| *v == 0.0) {
        return;
    }
    let dim = params.dim();
    for (bucket, count) in featurize(text, params.buckets()).counts() {
        let row = &mut grad[bucket * dim..(bucket + 1) * dim];
        for (r, gi) in row.iter_mut().zip(g) {
            *r += f64::from(count) * gi;
        }
    }
}

/// Train the encoder over `steps`, repeated for `cfg.epochs` passes.
/// Returns the updated parameters and the per-step loss log.
pub fn train(
    datasets: &[Dataset],
    steps: &[Step],
    mut params: EncoderParams,
    cfg: &TrainConfig,
    loss_params: &LossParams,
) -> Result<(EncoderParams, TrainLog), TrainError> {
    cfg.validate()?;
    loss_params.validate()?;

    let dim = params.dim();
    let mut fallback = vec![0.0; dim];
    fallback[0] = 1.0;

    let total = steps.len() * cfg.epochs;
    let mut opt = OptState::new(cfg.optimizer, params.weights().len());
    let mut grad = vec![0.0; params.weights().len()];
    let mut records = Vec::with_capacity(total);

    // Resolve and mask once; example identity is stable across epochs.
    let mut resolved = Vec::with_capacity(steps.len());
    for step in steps {
        let subs = resolve_sub_batches(step, datasets)?;
        let mask: Option<NegativeMask> = if loss_params.use_in_batch_negatives {
            Some(build_negative_mask(step, datasets)?)
        } else {
            None
        };
        resolved.push((step, subs, mask));
    }

    let mut global = 0usize;
    for _ in 0..cfg.epochs {
        for (step, subs, mask) in &resolved {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let n_examples: usize = subs.iter().map(Vec::len).sum();
            let mut step_loss = 0.0;
            let mut base = 0usize;
            for sub in subs {
                let positives: Vec<Encoded> = sub
                    .iter()
                    .map(|ex| encode_for_training(&params, &ex.positive.text, &fallback))
                    .collect();
                for (i, ex) in sub.iter().enumerate() {
                    let query_text = ex.query.embedding_text();
                    let query = encode_for_training(&params, &query_text, &fallback);
                    let negs: Vec<Encoded> = ex
                        .negatives
                        .iter()
                        .map(|d| encode_for_training(&params, &d.text, &fallback))
                        .collect();
                    let neg_refs: Vec<&[f64]> = negs.iter().map(|e| e.raw.as_slice()).collect();

                    let mut in_batch: Vec<&[f64]> = Vec::new();
                    let mut masked: Vec<bool> = Vec::new();
                    let mut in_batch_owner: Vec<usize> = Vec::new();
                    if let Some(mask) = mask {
                        for (j, p) in positives.iter().enumerate() {
                            if j == i {
                                continue;
                            }
                            in_batch.push(p.raw.as_slice());
                            masked.push(mask.masked(base + i, base + j));
                            in_batch_owner.push(j);
                        }
                    }

                    let out = infonce(
                        &query.raw,
                        &positives[i].raw,
                        &neg_refs,
                        &in_batch,
                        &masked,
                        loss_params.temperature,
                    )?;
                    step_loss += out.loss;

                    if query.trainable {
                        accumulate_grad(&mut grad, &params, &query_text, &out.grad_query);
                    }
                    if positives[i].trainable {
                        accumulate_grad(&mut grad, &params, &ex.positive.text, &out.grad_positive);
                    }
                    for ((d, enc), g) in
                        ex.negatives.iter().zip(&negs).zip(&out.grad_hard_negatives)
                    {
                        if enc.trainable {
                            accumulate_grad(&mut grad, &params, &d.text, g);
                        }
                    }
                    for (&j, g) in in_batch_owner.iter().zip(&out.grad_in_batch) {
                        if positives[j].trainable {
                            accumulate_grad(&mut grad, &params, &sub[j].positive.text, g);
                        }
                    }
                }
                base += sub.len();
            }

            if n_examples > 0 {
                let lr = learning_rate_at(global, total, cfg);
                opt.apply(params.weights_mut(), &grad, 1.0 / n_examples as f64, lr);
            }
            records.push(TrainRecord {
                step: global,
                task: step
                    .single_task()
                    .map(|t| t.to_string())
                    .unwrap_or_else(|| "mixed".into()),
                loss: if n_examples > 0 {
                    step_loss / n_examples as f64
                } else {
                    0.0
                },
            });
            global += 1;
        }
    }

    Ok((params, TrainLog { records }))
}
