//! Triple construction: two random views of each original, one perturbed
//! over the whole image, one perturbed only inside the target region, joined
//! with the un-augmented original into the (clean, z_obj, z_img) triple.

use super::{random_augment, LabeledImage};
use crate::attacks::{
    otsa_attack, pgd_perturbation, AttackConfig, LossScorer, OtsaParams, ScattererSet,
};
use crate::error::Result;
use crate::seed;
use rayon::prelude::*;

/// Seeds and attack settings that produced a triple.
#[derive(Debug, Clone)]
pub struct TripleProvenance {
    pub view1_seed: u64,
    pub view2_seed: u64,
    pub img_attack_seed: u64,
    pub obj_attack_seed: u64,
    pub img_attack: AttackConfig,
    pub obj_attack: AttackConfig,
    pub otsa: OtsaParams,
}

/// One original with its two augmented views and their perturbed versions.
/// The training set consumes (clean, z_obj, z_img); the intermediate views
/// are kept for inspection and invariant checks.
#[derive(Debug, Clone)]
pub struct AugmentedTriple {
    pub clean: LabeledImage,
    pub view1: LabeledImage,
    pub view2: LabeledImage,
    /// view1 + whole-image perturbation.
    pub z_img: LabeledImage,
    /// view2 + target-region perturbation.
    pub z_obj: LabeledImage,
    pub scatterers: ScattererSet,
    pub provenance: TripleProvenance,
}

impl AugmentedTriple {
    /// The three training views in storage order.
    pub fn views(&self) -> [&LabeledImage; 3] {
        [&self.clean, &self.z_obj, &self.z_img]
    }
}

/// Build one triple per original image.
///
/// For each image: draw two augmented views with independent sub-seeds, run
/// the whole-image attack on the first and the target-region attack on the
/// second against the supplied scorer, and apply the perturbations. Attacks
/// are pure per (sample, seed), so the batch parallelizes per sample while
/// staying bitwise deterministic.
pub fn build_triples(
    images: &[LabeledImage],
    scorer: &dyn LossScorer,
    img_attack: &AttackConfig,
    obj_attack: &AttackConfig,
    otsa: &OtsaParams,
    rng_seed: u64,
    augment: bool,
) -> Result<Vec<AugmentedTriple>> {
    img_attack.validate()?;
    obj_attack.validate()?;
    otsa.validate()?;
    images
        .par_iter()
        .enumerate()
        .map(|(index, image)| {
            build_one(
                image, scorer, img_attack, obj_attack, otsa, rng_seed, augment, index,
            )
            .map_err(|e| e.at_sample(index))
        })
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn build_one(
    image: &LabeledImage,
    scorer: &dyn LossScorer,
    img_attack: &AttackConfig,
    obj_attack: &AttackConfig,
    otsa: &OtsaParams,
    rng_seed: u64,
    augment: bool,
    index: usize,
) -> Result<AugmentedTriple> {
    let i = index as u64;
    let provenance = TripleProvenance {
        view1_seed: seed::derive(rng_seed, &[i, 1]),
        view2_seed: seed::derive(rng_seed, &[i, 2]),
        img_attack_seed: seed::derive(rng_seed, &[i, 3]),
        obj_attack_seed: seed::derive(rng_seed, &[i, 4]),
        img_attack: img_attack.clone(),
        obj_attack: obj_attack.clone(),
        otsa: otsa.clone(),
    };

    let (view1, view2) = if augment {
        (
            random_augment(image, provenance.view1_seed)?,
            random_augment(image, provenance.view2_seed)?,
        )
    } else {
        (image.clone(), image.clone())
    };

    let delta_img = pgd_perturbation(scorer, &view1, img_attack, provenance.img_attack_seed)?;
    let z_img = delta_img.apply_to(&view1)?;

    let (delta_obj, scatterers) = otsa_attack(
        scorer,
        &view2,
        obj_attack,
        otsa,
        provenance.obj_attack_seed,
    )?;
    let z_obj = delta_obj.apply_to(&view2)?;

    debug_assert!(
        [&view1, &view2, &z_img, &z_obj]
            .iter()
            .all(|v| v.label == image.label),
        "augmentation and perturbation preserve the label"
    );

    Ok(AugmentedTriple {
        clean: image.clone(),
        view1,
        view2,
        z_img,
        z_obj,
        scatterers,
        provenance,
    })
}
