//! Differentiable objectives for attack generation.

use super::LossScorer;
use crate::error::{Error, Result};
use crate::losses;
use crate::model::{self, ModelParams};
use crate::tensor::{Graph, Tensor, TensorId};

/// Cross-entropy of the encoder plus linear classifier; the usual attack
/// objective once a classifier exists.
pub struct ClassifierScorer<'a> {
    pub params: &'a ModelParams,
}

impl LossScorer for ClassifierScorer<'_> {
    fn loss(&self, g: &mut Graph, image: TensorId, label: usize) -> Result<TensorId> {
        let enc = model::bind_encoder(g, self.params, false);
        let cls = model::bind_classifier(g, self.params, false);
        let reps = model::encode(g, &enc, image)?;
        let logits = model::classify(g, &cls, reps)?;
        losses::cross_entropy_loss(g, logits, &[label])
    }
}

/// The anchor's supervised contrastive term against a frozen reference
/// batch: the attacked image is projected through encoder and projector and
/// contrasted with the stored reference projections. Positives are the
/// same-class references; the denominator runs over all references.
///
/// Used during pre-training, where no trained classifier exists yet.
pub struct ContrastiveScorer<'a> {
    params: &'a ModelParams,
    reference: Tensor,
    reference_labels: Vec<usize>,
    temperature: f64,
}

impl<'a> ContrastiveScorer<'a> {
    /// Project the reference images with the current parameters (no
    /// gradients) and freeze the result.
    pub fn build(
        params: &'a ModelParams,
        reference_images: &[&crate::data::LabeledImage],
        temperature: f64,
    ) -> Result<Self> {
        if !(temperature > 0.0) {
            return Err(Error::InvalidArg(format!(
                "temperature {temperature} must be > 0"
            )));
        }
        if reference_images.is_empty() {
            return Err(Error::InvalidArg(
                "contrastive scorer needs a nonempty reference batch".into(),
            ));
        }
        let mut g = Graph::new();
        let enc = model::bind_encoder(&mut g, params, false);
        let proj = model::bind_projector(&mut g, params, false);
        let x = g.leaf(model::images_to_tensor(reference_images)?);
        let reps = model::encode(&mut g, &enc, x)?;
        let projections = model::project(&mut g, &proj, reps)?;
        let reference = g.tensor(projections).clone();
        Ok(ContrastiveScorer {
            params,
            reference,
            reference_labels: model::batch_labels(reference_images),
            temperature,
        })
    }
}

impl LossScorer for ContrastiveScorer<'_> {
    fn loss(&self, g: &mut Graph, image: TensorId, label: usize) -> Result<TensorId> {
        let positives: Vec<usize> = self
            .reference_labels
            .iter()
            .enumerate()
            .filter_map(|(i, &l)| (l == label).then_some(i))
            .collect();
        if positives.is_empty() {
            return Err(Error::NoPositivePairs);
        }
        let n_ref = self.reference_labels.len();

        let enc = model::bind_encoder(g, self.params, false);
        let proj = model::bind_projector(g, self.params, false);
        let reps = model::encode(g, &enc, image)?;
        let anchor = model::project(g, &proj, reps)?; // [1, P]

        let refs = g.leaf(self.reference.clone());
        let sims = g.matmul_nt(anchor, refs)?; // [1, n_ref]
        let sims = g.scalar_mul(sims, 1.0 / self.temperature)?;

        let vals = g.data(sims);
        let row_max = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if !row_max.is_finite() {
            return Err(Error::NonFinite("contrastive similarities".into()));
        }
        let max_c = g.constant(vec![row_max; n_ref], vec![1, n_ref])?;
        let shifted = g.sub(sims, max_c)?;
        let expd = g.exp(shifted)?;
        let ones = g.constant(vec![1.0; n_ref], vec![n_ref, 1])?;
        let denom = g.matmul(expd, ones)?;
        let log_denom = g.log(denom)?;
        let max_1 = g.constant(vec![row_max], vec![1, 1])?;
        let lse = g.add(log_denom, max_1)?;
        let lse = g.sum(lse)?;

        let mut pos_weight = vec![0.0; n_ref];
        let w = 1.0 / positives.len() as f64;
        for p in positives {
            pos_weight[p] = w;
        }
        let pos_c = g.constant(pos_weight, vec![1, n_ref])?;
        let weighted = g.mul(sims, pos_c)?;
        let pos_term = g.sum(weighted)?;

        g.sub(lse, pos_term)
    }
}
