//! Gradient-based adversarial example generation.
//!
//! Every attack variant sits behind the [`Attack`] trait and is registered
//! by name ([`build_attack`]), so training, evaluation, and the CLI select
//! attacks at runtime from configuration. All attacks are pure per
//! (sample, seed): batch generation parallelizes per sample with bitwise
//! reproducible results.

mod fgsm;
mod otsa;
mod pgd;
mod scorers;

pub use fgsm::Fgsm;
pub use otsa::{
    otsa_attack, otsa_attack_traced, render_scatterers, Otsa, OtsaParams, OtsaTrace, Scatterer,
    ScattererSet,
};
pub use pgd::{pgd_perturbation, project_linf, Pgd};
pub use scorers::{ClassifierScorer, ContrastiveScorer};

use crate::data::LabeledImage;
use crate::error::{Error, Result};
use crate::tensor::{Graph, Tensor, TensorId};

pub const DEFAULT_EPSILON: f64 = 8.0 / 255.0;
pub const DEFAULT_PGD_STEPS: usize = 7;
pub const DEFAULT_OTSA_STEPS: usize = 10;

/// Which objective an attack maximizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossMode {
    /// Cross-entropy of the encoder + linear classifier.
    Classifier,
    /// The anchor's supervised contrastive term against a reference batch.
    Contrastive,
}

/// Budget and schedule of a gradient attack.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct AttackConfig {
    /// L-infinity budget in pixel units.
    pub epsilon: f64,
    /// Iteration count.
    pub steps: usize,
    /// Per-iteration magnitude; `None` selects `2.5 * epsilon / steps`.
    pub step_size: Option<f64>,
    /// Start from a uniform point inside the ball instead of the input.
    pub random_start: bool,
    pub rng_seed: u64,
    pub loss_mode: LossMode,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            epsilon: DEFAULT_EPSILON,
            steps: DEFAULT_PGD_STEPS,
            step_size: None,
            random_start: true,
            rng_seed: 0,
            loss_mode: LossMode::Classifier,
        }
    }
}

impl AttackConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epsilon < 0.0 || !self.epsilon.is_finite() {
            return Err(Error::InvalidArg(format!(
                "attack epsilon {} must be finite and >= 0",
                self.epsilon
            )));
        }
        if self.steps == 0 {
            return Err(Error::InvalidArg("attack needs at least one step".into()));
        }
        if let Some(s) = self.step_size {
            if self.epsilon > 0.0 && !(s > 0.0) {
                return Err(Error::InvalidArg(format!(
                    "step size {s} must be > 0 for a positive budget"
                )));
            }
        }
        Ok(())
    }

    pub fn effective_step(&self) -> f64 {
        self.step_size
            .unwrap_or(2.5 * self.epsilon / self.steps as f64)
    }
}

/// A pixel-space perturbation with its support.
#[derive(Debug, Clone, PartialEq)]
pub struct Perturbation {
    pub height: usize,
    pub width: usize,
    pub delta: Vec<f64>,
    /// Pixels where `delta` may be nonzero.
    pub support: Vec<bool>,
}

impl Perturbation {
    pub fn zeros(height: usize, width: usize) -> Self {
        Perturbation {
            height,
            width,
            delta: vec![0.0; height * width],
            support: vec![true; height * width],
        }
    }

    pub fn linf_norm(&self) -> f64 {
        self.delta.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// `clamp(x + delta, 0, 1)`; pixels with zero delta are copied bitwise,
    /// label and mask carry over.
    pub fn apply_to(&self, image: &LabeledImage) -> Result<LabeledImage> {
        if image.height != self.height || image.width != self.width {
            return Err(Error::ShapeMismatch {
                op: "apply-perturbation",
                lhs: vec![image.height, image.width],
                rhs: vec![self.height, self.width],
            });
        }
        let pixels = image
            .pixels
            .iter()
            .zip(&self.delta)
            .map(|(&x, &d)| if d == 0.0 { x } else { (x + d).clamp(0.0, 1.0) })
            .collect();
        LabeledImage::new(
            image.height,
            image.width,
            pixels,
            image.label,
            image.mask.clone(),
        )
    }
}

/// A differentiable objective J(x, y) built on a caller-supplied graph; the
/// attacks ascend its input gradient. Parameters are read-only here.
pub trait LossScorer: Sync {
    fn loss(&self, g: &mut Graph, image: TensorId, label: usize) -> Result<TensorId>;
}

/// Output of one attack run.
#[derive(Debug, Clone)]
pub struct AttackOutcome {
    pub perturbation: Perturbation,
    /// Present for the scatterer attack.
    pub scatterers: Option<ScattererSet>,
}

/// An adversarial example generator. Implementations are pure per
/// (image, seed).
pub trait Attack: Send + Sync {
    fn name(&self) -> &'static str;
    fn run(&self, scorer: &dyn LossScorer, image: &LabeledImage, seed: u64)
        -> Result<AttackOutcome>;
}

/// Names accepted by [`build_attack`].
pub fn available_attacks() -> &'static [&'static str] {
    &["fgsm", "pgd", "otsa"]
}

/// Construct an attack by registry name.
pub fn build_attack(name: &str, config: &AttackConfig, otsa: &OtsaParams) -> Result<Box<dyn Attack>> {
    config.validate()?;
    match name {
        "fgsm" => Ok(Box::new(Fgsm {
            epsilon: config.epsilon,
        })),
        "pgd" => Ok(Box::new(Pgd {
            config: config.clone(),
        })),
        "otsa" => {
            otsa.validate()?;
            Ok(Box::new(Otsa {
                config: config.clone(),
                params: otsa.clone(),
            }))
        }
        other => Err(Error::InvalidArg(format!(
            "unknown attack {other:?}; available: {}",
            available_attacks().join(", ")
        ))),
    }
}

/// Loss value and input gradient of the scorer at `pixels`.
pub(crate) fn input_gradient(
    scorer: &dyn LossScorer,
    pixels: &[f64],
    height: usize,
    width: usize,
    label: usize,
) -> Result<(f64, Vec<f64>)> {
    let mut g = Graph::new();
    let x = g.leaf(
        Tensor::new(pixels.to_vec(), vec![1, 1, height, width])?.with_requires_grad(true),
    );
    let loss = scorer.loss(&mut g, x, label)?;
    let value = g.scalar_value(loss);
    if !value.is_finite() {
        return Err(Error::NonFinite("attack objective".into()));
    }
    g.backward(loss)?;
    let grad = g
        .grad(x)
        .ok_or_else(|| Error::NonFinite("missing input gradient".into()))?
        .to_vec();
    if grad.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("attack input gradient".into()));
    }
    Ok((value, grad))
}

/// Clamp a delta buffer into the L-infinity ball intersected with the box
/// constraint `x + delta in [0, 1]`, coordinatewise.
pub(crate) fn project_delta(delta: &mut [f64], origin: &[f64], epsilon: f64) {
    for (d, &x) in delta.iter_mut().zip(origin) {
        let lo = (-epsilon).max(-x);
        let hi = epsilon.min(1.0 - x);
        *d = d.clamp(lo, hi);
    }
}

/// `epsilon * sign(gradient)`, with `sign(0) = 0`. The sign is applied to the
/// extracted gradient buffer; it is post-processing, not a graph node.
pub(crate) fn signed_step(gradient: &[f64], magnitude: f64) -> Vec<f64> {
    gradient
        .iter()
        .map(|&v| {
            if v > 0.0 {
                magnitude
            } else if v < 0.0 {
                -magnitude
            } else {
                0.0
            }
        })
        .collect()
}

pub(crate) use selftest_support::selftest_suite;

mod selftest_support;
