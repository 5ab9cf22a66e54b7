//! Training objectives: supervised contrastive loss over labeled
//! representation batches and softmax cross-entropy for classification.
//!
//! Both losses are assembled from graph operations so gradients flow to the
//! representations (and through them to parameters and input pixels). The
//! log-sum-exp terms subtract a per-row maximum that enters the graph as a
//! constant; the identity `lse(s) = c + log(sum(exp(s - c)))` holds for any
//! constant `c`, so value and gradient are both exact.

use crate::error::{Error, Result};
use crate::tensor::{Graph, Tensor, TensorId};

pub const DEFAULT_TEMPERATURE: f64 = 0.1;

/// A batch of L2-normalized representations with class labels, ready for the
/// contrastive loss.
#[derive(Debug, Clone)]
pub struct SclBatch {
    pub representations: Tensor,
    pub labels: Vec<usize>,
    pub temperature: f64,
}

impl SclBatch {
    /// Validates the batch invariants: rank-2 representations, rows of unit
    /// norm (within 1e-9), at least two samples, a positive temperature, and
    /// at least one same-class pair.
    pub fn new(representations: Tensor, labels: Vec<usize>, temperature: f64) -> Result<Self> {
        if representations.shape.len() != 2 || representations.shape[0] != labels.len() {
            return Err(Error::BadShape {
                op: "scl-batch",
                shape: representations.shape.clone(),
                reason: format!("expected [{}, D] representations", labels.len()),
            });
        }
        let b = labels.len();
        if b < 2 {
            return Err(Error::InvalidArg(
                "contrastive batch needs at least two samples".into(),
            ));
        }
        if !(temperature > 0.0) {
            return Err(Error::InvalidArg(format!(
                "temperature {temperature} must be > 0"
            )));
        }
        let d = representations.shape[1];
        for (i, row) in representations.data.chunks_exact(d).enumerate() {
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidArg(format!(
                    "representation {i} has norm {norm}, expected 1"
                )));
            }
        }
        if !has_positive_pair(&labels) {
            return Err(Error::NoPositivePairs);
        }
        Ok(SclBatch {
            representations,
            labels,
            temperature,
        })
    }

    /// Loss value evaluated on a throwaway graph.
    pub fn value(&self) -> Result<f64> {
        let mut g = Graph::new();
        let reps = g.leaf(self.representations.clone());
        let loss = supervised_contrastive_loss(&mut g, reps, &self.labels, self.temperature)?;
        Ok(g.scalar_value(loss))
    }
}

fn has_positive_pair(labels: &[usize]) -> bool {
    labels
        .iter()
        .enumerate()
        .any(|(i, l)| labels.iter().skip(i + 1).any(|m| m == l))
}

/// Supervised contrastive loss over a batch of representations.
///
/// For each anchor `i`, the positive set `P(i)` is every other sample with
/// the same label and the contrast set `A(i)` is every other sample. The
/// per-anchor term is
///
/// ```text
/// -1/|P(i)| * sum_{p in P(i)} log( exp(f_i.f_p / tau) / sum_{a in A(i)} exp(f_i.f_a / tau) )
/// ```
///
/// Anchors with empty `P(i)` are dropped from the mean; if every anchor is
/// dropped the loss is undefined and an error is returned. Representations
/// are expected row-normalized (the projector path guarantees it); callers
/// probing gradients should differentiate through `l2_normalize` composed
/// with this function.
pub fn supervised_contrastive_loss(
    g: &mut Graph,
    representations: TensorId,
    labels: &[usize],
    temperature: f64,
) -> Result<TensorId> {
    if !(temperature > 0.0) {
        return Err(Error::InvalidArg(format!(
            "temperature {temperature} must be > 0"
        )));
    }
    let shape = g.shape(representations).to_vec();
    if shape.len() != 2 || shape[0] != labels.len() {
        return Err(Error::BadShape {
            op: "supervised-contrastive-loss",
            shape,
            reason: format!("expected [{}, D] representations", labels.len()),
        });
    }
    let b = labels.len();
    if b < 2 {
        return Err(Error::InvalidArg(
            "contrastive batch needs at least two samples".into(),
        ));
    }

    // positive-pair weights and the valid-anchor indicator
    let mut pos_weight = vec![0.0; b * b];
    let mut valid = vec![0.0; b];
    let mut n_valid = 0usize;
    for i in 0..b {
        let p: Vec<usize> = (0..b).filter(|&j| j != i && labels[j] == labels[i]).collect();
        if p.is_empty() {
            continue;
        }
        valid[i] = 1.0;
        n_valid += 1;
        let w = 1.0 / p.len() as f64;
        for j in p {
            pos_weight[i * b + j] = w;
        }
    }
    if n_valid == 0 {
        return Err(Error::NoPositivePairs);
    }

    let sims = g.matmul_nt(representations, representations)?;
    let sims = g.scalar_mul(sims, 1.0 / temperature)?;

    // per-row max over the contrast set, entered as a constant
    let sim_vals = g.data(sims);
    let mut row_max = vec![0.0; b];
    for i in 0..b {
        let mut m = f64::NEG_INFINITY;
        for j in 0..b {
            if j != i {
                m = m.max(sim_vals[i * b + j]);
            }
        }
        if !m.is_finite() {
            return Err(Error::NonFinite("contrastive similarity row".into()));
        }
        row_max[i] = m;
    }
    let mut max_tiled = vec![0.0; b * b];
    for i in 0..b {
        for j in 0..b {
            max_tiled[i * b + j] = row_max[i];
        }
    }
    let mut offdiag = vec![1.0; b * b];
    for i in 0..b {
        offdiag[i * b + i] = 0.0;
    }

    let max_c = g.constant(max_tiled, vec![b, b])?;
    let shifted = g.sub(sims, max_c)?;
    let expd = g.exp(shifted)?;
    let mask_c = g.constant(offdiag, vec![b, b])?;
    let masked = g.mul(expd, mask_c)?;
    let ones = g.constant(vec![1.0; b], vec![b, 1])?;
    let denom = g.matmul(masked, ones)?;
    let log_denom = g.log(denom)?;
    let max_col = g.constant(row_max, vec![b, 1])?;
    let lse = g.add(log_denom, max_col)?;

    let valid_c = g.constant(valid, vec![b, 1])?;
    let lse_valid = g.mul(lse, valid_c)?;
    let term_lse = g.sum(lse_valid)?;

    let pos_c = g.constant(pos_weight, vec![b, b])?;
    let sims_pos = g.mul(sims, pos_c)?;
    let term_pos = g.sum(sims_pos)?;

    let diff = g.sub(term_lse, term_pos)?;
    g.scalar_mul(diff, 1.0 / n_valid as f64)
}

/// Mean softmax cross-entropy with a stable log-sum-exp.
pub fn cross_entropy_loss(
    g: &mut Graph,
    logits: TensorId,
    labels: &[usize],
) -> Result<TensorId> {
    let shape = g.shape(logits).to_vec();
    if shape.len() != 2 || shape[0] != labels.len() {
        return Err(Error::BadShape {
            op: "cross-entropy",
            shape,
            reason: format!("expected [{}, C] logits", labels.len()),
        });
    }
    let (b, c) = (shape[0], shape[1]);
    if c < 2 {
        return Err(Error::InvalidArg(
            "cross-entropy needs at least two classes".into(),
        ));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
        return Err(Error::LabelOutOfRange {
            label: bad,
            classes: c,
        });
    }

    let vals = g.data(logits);
    let mut row_max = vec![0.0; b];
    for i in 0..b {
        let row = &vals[i * c..(i + 1) * c];
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if !m.is_finite() {
            return Err(Error::NonFinite(format!("logits row {i}")));
        }
        row_max[i] = m;
    }
    let mut max_tiled = vec![0.0; b * c];
    let mut onehot = vec![0.0; b * c];
    for i in 0..b {
        for j in 0..c {
            max_tiled[i * c + j] = row_max[i];
        }
        onehot[i * c + labels[i]] = 1.0;
    }

    let max_c = g.constant(max_tiled, vec![b, c])?;
    let shifted = g.sub(logits, max_c)?;
    let expd = g.exp(shifted)?;
    let ones = g.constant(vec![1.0; c], vec![c, 1])?;
    let denom = g.matmul(expd, ones)?;
    let log_denom = g.log(denom)?;
    let max_col = g.constant(row_max, vec![b, 1])?;
    let lse = g.add(log_denom, max_col)?;
    let term_lse = g.sum(lse)?;

    let onehot_c = g.constant(onehot, vec![b, c])?;
    let picked = g.mul(logits, onehot_c)?;
    let term_picked = g.sum(picked)?;

    let diff = g.sub(term_lse, term_picked)?;
    g.scalar_mul(diff, 1.0 / b as f64)
}
