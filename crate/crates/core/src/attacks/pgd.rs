//! Projected gradient descent: iterated sign steps with an exact
//! L-infinity-ball-intersect-box projection.

use super::{
    input_gradient, project_delta, signed_step, Attack, AttackConfig, AttackOutcome, LossScorer,
    Perturbation,
};
use crate::data::LabeledImage;
use crate::error::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Project `candidate` onto the intersection of the L-infinity ball of
/// radius `epsilon` around `origin` and the pixel box `[0, 1]`. The
/// projection is separable and coordinatewise, hence exact and idempotent.
pub fn project_linf(candidate: &[f64], origin: &[f64], epsilon: f64) -> Vec<f64> {
    candidate
        .iter()
        .zip(origin)
        .map(|(&c, &x)| {
            let lo = (x - epsilon).max(0.0);
            let hi = (x + epsilon).min(1.0);
            c.clamp(lo, hi)
        })
        .collect()
}

/// Multi-step sign-gradient ascent. With one step, no random start, and step
/// size epsilon this degenerates to FGSM bit for bit.
#[derive(Debug, Clone)]
pub struct Pgd {
    pub config: AttackConfig,
}

/// Run PGD and return the final delta; always `max|delta| <= epsilon` and
/// `x + delta` within `[0, 1]` up to the application clamp.
pub fn pgd_perturbation(
    scorer: &dyn LossScorer,
    image: &LabeledImage,
    config: &AttackConfig,
    seed: u64,
) -> Result<Perturbation> {
    config.validate()?;
    let (h, w) = (image.height, image.width);
    let eps = config.epsilon;
    if eps == 0.0 {
        return Ok(Perturbation::zeros(h, w));
    }
    let step = config.effective_step();

    let mut delta = vec![0.0; h * w];
    if config.random_start {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for d in delta.iter_mut() {
            *d = rng.random_range(-eps..=eps);
        }
        project_delta(&mut delta, &image.pixels, eps);
    }

    for iteration in 0..config.steps {
        let current: Vec<f64> = image
            .pixels
            .iter()
            .zip(&delta)
            .map(|(&x, &d)| if d == 0.0 { x } else { (x + d).clamp(0.0, 1.0) })
            .collect();
        let (_, grad) = input_gradient(scorer, &current, h, w, image.label)
            .map_err(|e| match e {
                Error::NonFinite(what) => {
                    Error::NonFinite(format!("{what} at iteration {iteration}"))
                }
                other => other,
            })?;
        let update = signed_step(&grad, step);
        for (d, u) in delta.iter_mut().zip(update) {
            *d += u;
        }
        project_delta(&mut delta, &image.pixels, eps);
    }

    Ok(Perturbation {
        height: h,
        width: w,
        delta,
        support: vec![true; h * w],
    })
}

impl Attack for Pgd {
    fn name(&self) -> &'static str {
        "pgd"
    }

    fn run(
        &self,
        scorer: &dyn LossScorer,
        image: &LabeledImage,
        seed: u64,
    ) -> Result<AttackOutcome> {
        Ok(AttackOutcome {
            perturbation: pgd_perturbation(scorer, image, &self.config, seed)?,
            scatterers: None,
        })
    }
}
