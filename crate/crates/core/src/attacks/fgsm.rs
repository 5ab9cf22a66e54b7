//! Single-step sign-gradient attack.

use super::{
    input_gradient, project_delta, signed_step, Attack, AttackOutcome, LossScorer, Perturbation,
};
use crate::data::LabeledImage;
use crate::error::Result;

/// One step of size epsilon along the sign of the input gradient, clamped so
/// the perturbed image stays in `[0, 1]`.
#[derive(Debug, Clone)]
pub struct Fgsm {
    pub epsilon: f64,
}

impl Fgsm {
    pub fn perturbation(
        &self,
        scorer: &dyn LossScorer,
        image: &LabeledImage,
    ) -> Result<Perturbation> {
        let (h, w) = (image.height, image.width);
        if self.epsilon == 0.0 {
            return Ok(Perturbation::zeros(h, w));
        }
        let (_, grad) = input_gradient(scorer, &image.pixels, h, w, image.label)?;
        let mut delta = signed_step(&grad, self.epsilon);
        project_delta(&mut delta, &image.pixels, self.epsilon);
        Ok(Perturbation {
            height: h,
            width: w,
            delta,
            support: vec![true; h * w],
        })
    }
}

impl Attack for Fgsm {
    fn name(&self) -> &'static str {
        "fgsm"
    }

    fn run(
        &self,
        scorer: &dyn LossScorer,
        image: &LabeledImage,
        _seed: u64,
    ) -> Result<AttackOutcome> {
        Ok(AttackOutcome {
            perturbation: self.perturbation(scorer, image)?,
            scatterers: None,
        })
    }
}
