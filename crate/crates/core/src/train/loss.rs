//! InfoNCE over temperature-scaled cosine similarity, with exact analytic
//! gradients.
//!
//! The loss for one example is
//!
//! ```text
//! L = −log( φ(q,p) / (φ(q,p) + Σᵢ φ(q,nᵢ)) ),   φ(q,d) = exp(cos(q,d)/τ)
//! ```
//!
//! evaluated via log-sum-exp so the default τ = 0.02 (logits up to ±50)
//! never overflows. Gradients are taken with respect to the raw,
//! pre-normalization vectors: the cosine Jacobian
//! ∂cos(q,x)/∂q = (x̂ − cos·q̂)/‖q‖ projects the partner vector onto the
//! tangent space, so callers may feed unnormalized encoder outputs directly.

use super::TrainError;

pub const DEFAULT_TEMPERATURE: f64 = 0.02;

fn check_tau(tau: f64) -> Result<(), TrainError> {
    if !tau.is_finite() || tau <= 0.0 {
        return Err(TrainError::Config(format!(
            "temperature must be positive and finite, got {tau}"
        )));
    }
    Ok(())
}

fn check_vec(role: &str, v: &[f64], dim: usize) -> Result<(), TrainError> {
    if v.len() != dim {
        return Err(TrainError::DimMismatch {
            expected: dim,
            got: v.len(),
        });
    }
    if v.is_empty() {
        return Err(TrainError::InvalidVector(format!("{role} vector is empty")));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(TrainError::InvalidVector(format!(
            "{role} vector has a non-finite component"
        )));
    }
    if v.iter().all(|x| *x == 0.0) {
        return Err(TrainError::InvalidVector(format!(
            "{role} vector is zero and has no direction"
        )));
    }
    Ok(())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// The logit cos/τ — φ's logarithm, the quantity everything downstream
/// actually works with.
pub fn log_phi(cos: f64, tau: f64) -> Result<f64, TrainError> {
    check_tau(tau)?;
    Ok(cos / tau)
}

/// exp(cos/τ). Prefer [`log_phi`]; at τ = 0.02 this reaches e⁵⁰.
pub fn phi(cos: f64, tau: f64) -> Result<f64, TrainError> {
    Ok(log_phi(cos, tau)?.exp())
}

/// cos and its gradients w.r.t. both raw input vectors.
fn cosine_with_grads(a: &[f64], b: &[f64]) -> (f64, Vec<f64>, Vec<f64>) {
    let na = norm(a);
    let nb = norm(b);
    let cos = dot(a, b) / (na * nb);
    let ga = a
        .iter()
        .zip(b)
        .map(|(ai, bi)| bi / (na * nb) - cos * ai / (na * na))
        .collect();
    let gb = a
        .iter()
        .zip(b)
        .map(|(ai, bi)| ai / (na * nb) - cos * bi / (nb * nb))
        .collect();
    (cos, ga, gb)
}

/// Loss, softmax weights, and exact gradients for one example.
#[derive(Debug, Clone)]
pub struct InfoNce {
    pub loss: f64,
    /// Softmax over (positive, then every live negative); sums to 1.
    pub weights: Vec<f64>,
    pub grad_query: Vec<f64>,
    pub grad_positive: Vec<f64>,
    /// Aligned with the `hard_negatives` argument.
    pub grad_hard_negatives: Vec<Vec<f64>>,
    /// Aligned with the `in_batch` argument; exactly zero for masked
    /// entries.
    pub grad_in_batch: Vec<Vec<f64>>,
}

/// InfoNCE loss and gradients for a single (query, positive) pair against
/// hard negatives plus unmasked in-batch documents. `in_batch_masked[j]`
/// excludes `in_batch[j]` from the denominator entirely.
pub fn infonce(
    query: &[f64],
    positive: &[f64],
    hard_negatives: &[&[f64]],
    in_batch: &[&[f64]],
    in_batch_masked: &[bool],
    tau: f64,
) -> Result<InfoNce, TrainError> {
    check_tau(tau)?;
    if in_batch.len() != in_batch_masked.len() {
        return Err(TrainError::Config(format!(
            "{} in-batch documents but {} mask entries",
            in_batch.len(),
            in_batch_masked.len()
        )));
    }
    let dim = query.len();
    check_vec("query", query, dim)?;
    check_vec("positive", positive, dim)?;
    for v in hard_negatives {
        check_vec("negative", v, dim)?;
    }
    for v in in_batch {
        check_vec("in-batch document", v, dim)?;
    }

    // Denominator documents: positive first, then hard negatives, then the
    // unmasked in-batch documents (remembering where those came from).
    let mut docs: Vec<&[f64]> = Vec::with_capacity(1 + hard_negatives.len() + in_batch.len());
    docs.push(positive);
    docs.extend(hard_negatives.iter().copied());
    let mut live_in_batch = Vec::new();
    for (j, v) in in_batch.iter().enumerate() {
        if !in_batch_masked[j] {
            docs.push(v);
            live_in_batch.push(j);
        }
    }

    let mut cosines = Vec::with_capacity(docs.len());
    let mut grads_q = Vec::with_capacity(docs.len());
    let mut grads_d = Vec::with_capacity(docs.len());
    for d in &docs {
        let (cos, gq, gd) = cosine_with_grads(query, d);
        cosines.push(cos);
        grads_q.push(gq);
        grads_d.push(gd);
    }

    let z: Vec<f64> = cosines.iter().map(|c| c / tau).collect();
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = z.iter().map(|zi| (zi - m).exp()).sum();
    let lse = m + sum.ln();
    let loss = lse - z[0];
    let weights: Vec<f64> = z.iter().map(|zi| (zi - lse).exp()).collect();

    // dL/dz₀ = w₀ − 1, dL/dzⱼ = wⱼ; chain through z = cos/τ.
    let mut grad_query = vec![0.0; dim];
    let mut grad_docs: Vec<Vec<f64>> = Vec::with_capacity(docs.len());
    for k in 0..docs.len() {
        let coef = (weights[k] - if k == 0 { 1.0 } else { 0.0 }) / tau;
        for (acc, g) in grad_query.iter_mut().zip(&grads_q[k]) {
            *acc += coef * g;
        }
        grad_docs.push(grads_d[k].iter().map(|g| coef * g).collect());
    }

    let mut grad_docs = grad_docs.into_iter();
    let grad_positive = grad_docs.next().expect("positive gradient");
    let grad_hard_negatives: Vec<Vec<f64>> =
        grad_docs.by_ref().take(hard_negatives.len()).collect();
    let mut grad_in_batch = vec![vec![0.0; dim]; in_batch.len()];
    for (j, g) in live_in_batch.into_iter().zip(grad_docs) {
        grad_in_batch[j] = g;
    }

    Ok(InfoNce {
        loss,
        weights,
        grad_query,
        grad_positive,
        grad_hard_negatives,
        grad_in_batch,
    })
}

/// Loss value only.
pub fn infonce_loss(
    query: &[f64],
    positive: &[f64],
    hard_negatives: &[&[f64]],
    in_batch: &[&[f64]],
    in_batch_masked: &[bool],
    tau: f64,
) -> Result<f64, TrainError> {
    Ok(infonce(query, positive, hard_negatives, in_batch, in_batch_masked, tau)?.loss)
}
