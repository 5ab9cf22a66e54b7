//! The three-stage training pipeline: triple augmentation, supervised
//! adversarial contrastive pre-training, and supervised adversarial
//! fine-tuning, plus the clean-only baseline and the evaluation harness.

mod eval;

pub use eval::{
    evaluate, evaluate_with_meta, metrics_identity_suite, write_report, BucketStats, EvalConfig,
    MetricsReport, ReportMeta,
};

use crate::attacks::{
    AttackConfig, ClassifierScorer, ContrastiveScorer, LossMode, OtsaParams,
    DEFAULT_OTSA_STEPS,
};
use crate::data::{build_triples, AugmentedTriple, Dataset, LabeledImage};
use crate::error::{Error, Result};
use crate::losses;
use crate::model::{self, ArchitectureConfig, ModelParams, ParamGroup};
use crate::seed;
use crate::tensor::optim::{SgdMomentum, DEFAULT_LR, DEFAULT_MOMENTUM, DEFAULT_WEIGHT_DECAY};
use crate::tensor::Graph;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// How often training regenerates augmented views and adversarial
/// perturbations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RegenPolicy {
    /// Fresh attacks against the current model every batch (standard
    /// adversarial training).
    PerBatch,
    /// Rebuild once per epoch against the epoch-start model.
    PerEpoch,
    /// Build once against the initial model and reuse.
    Once,
}

/// Everything a training run needs.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct TrainConfig {
    pub arch: ArchitectureConfig,
    pub pretrain_epochs: usize,
    pub finetune_epochs: usize,
    /// Baseline epochs for standard (clean-only) training.
    pub st_epochs: usize,
    /// Batch size in original images; the effective contrastive batch is
    /// three times this.
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub temperature: f64,
    /// Whole-image attack (PGD) for z_img.
    pub img_attack: AttackConfig,
    /// Schedule of the target-region attack for z_obj.
    pub obj_attack: AttackConfig,
    pub otsa: OtsaParams,
    pub regen: RegenPolicy,
    /// Objective the pre-training attacks maximize.
    pub attack_loss: LossMode,
    pub augment: bool,
    pub freeze_encoder: bool,
    pub clean_only_finetune: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            arch: ArchitectureConfig::default(),
            pretrain_epochs: 10,
            finetune_epochs: 10,
            st_epochs: 20,
            batch_size: 16,
            lr: DEFAULT_LR,
            momentum: DEFAULT_MOMENTUM,
            weight_decay: DEFAULT_WEIGHT_DECAY,
            temperature: losses::DEFAULT_TEMPERATURE,
            img_attack: AttackConfig::default(),
            obj_attack: AttackConfig {
                steps: DEFAULT_OTSA_STEPS,
                ..AttackConfig::default()
            },
            otsa: OtsaParams::default(),
            regen: RegenPolicy::PerBatch,
            attack_loss: LossMode::Contrastive,
            augment: true,
            freeze_encoder: false,
            clean_only_finetune: false,
            seed: 0,
        }
    }
}

impl TrainConfig {
    fn validate(&self, dataset: &Dataset) -> Result<()> {
        self.arch.validate()?;
        self.img_attack.validate()?;
        self.obj_attack.validate()?;
        self.otsa.validate()?;
        if self.batch_size < 2 {
            return Err(Error::InvalidArg(
                "batch size must be at least 2 original images".into(),
            ));
        }
        if self.pretrain_epochs == 0 || self.finetune_epochs == 0 || self.st_epochs == 0 {
            return Err(Error::InvalidArg("epoch counts must be >= 1".into()));
        }
        let first = dataset
            .images
            .first()
            .ok_or_else(|| Error::InvalidArg("empty dataset".into()))?;
        if first.height != self.arch.input || first.width != self.arch.input {
            return Err(Error::BadShape {
                op: "train-config",
                shape: vec![first.height, first.width],
                reason: format!("architecture expects {0}x{0} input", self.arch.input),
            });
        }
        if dataset.class_count != self.arch.class_count {
            return Err(Error::InvalidArg(format!(
                "dataset has {} classes, architecture {}",
                dataset.class_count, self.arch.class_count
            )));
        }
        Ok(())
    }
}

/// Identifies which of the three triple views a batch entry came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViewTag {
    Clean,
    Obj,
    Img,
}

/// Flatten triples into the 3B-view training batch, tagged per view.
pub fn compose_batch(triples: &[AugmentedTriple]) -> Vec<(ViewTag, &LabeledImage)> {
    let mut views = Vec::with_capacity(3 * triples.len());
    for t in triples {
        views.push((ViewTag::Clean, &t.clean));
        views.push((ViewTag::Obj, &t.z_obj));
        views.push((ViewTag::Img, &t.z_img));
    }
    views
}

/// Check the batch composition invariant: every selected original
/// contributes exactly its three views.
pub fn batch_composition_holds(views: &[(ViewTag, &LabeledImage)], originals: usize) -> bool {
    let count = |tag: ViewTag| views.iter().filter(|(t, _)| *t == tag).count();
    views.len() == 3 * originals
        && count(ViewTag::Clean) == originals
        && count(ViewTag::Obj) == originals
        && count(ViewTag::Img) == originals
}

/// Result of one training stage.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    /// Mean loss per epoch.
    pub epoch_losses: Vec<f64>,
    pub optimizer_steps: usize,
}

fn shuffled_indices(n: usize, seed_val: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed_val);
    idx.shuffle(&mut rng);
    idx
}

/// Build triples for the given originals against the current parameters.
fn regenerate(
    originals: &[LabeledImage],
    params: &ModelParams,
    cfg: &TrainConfig,
    attack_loss: LossMode,
    unit_seed: u64,
) -> Result<Vec<AugmentedTriple>> {
    match attack_loss {
        LossMode::Contrastive => {
            let refs: Vec<&LabeledImage> = originals.iter().collect();
            let scorer = ContrastiveScorer::build(params, &refs, cfg.temperature)?;
            build_triples(
                originals,
                &scorer,
                &cfg.img_attack,
                &cfg.obj_attack,
                &cfg.otsa,
                unit_seed,
                cfg.augment,
            )
        }
        LossMode::Classifier => {
            let scorer = ClassifierScorer { params };
            build_triples(
                originals,
                &scorer,
                &cfg.img_attack,
                &cfg.obj_attack,
                &cfg.otsa,
                unit_seed,
                cfg.augment,
            )
        }
    }
}

/// Supervised adversarial contrastive pre-training (stage two).
///
/// Per batch: draw the two augmented views, generate the whole-image and
/// target-region perturbations against the current encoder + projector,
/// assemble the 3B-view batch, take one SGD step on the supervised
/// contrastive loss over the projections.
pub fn pretrain(dataset: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate(dataset)?;
    let histogram = dataset.class_histogram();
    if histogram.iter().filter(|&&c| c > 0).count() < 2 {
        return Err(Error::InvalidArg(
            "pre-training needs at least two classes present".into(),
        ));
    }

    let mut params = model::init_params(&cfg.arch, seed::derive(cfg.seed, &[0x1217]))?;
    let mut opt = SgdMomentum::new(cfg.lr, cfg.momentum, cfg.weight_decay)?;
    let groups = [ParamGroup::Encoder, ParamGroup::Projector];

    let mut cache: Option<Vec<AugmentedTriple>> = None;
    if cfg.regen == RegenPolicy::Once {
        cache = Some(regenerate(
            &dataset.images,
            &params,
            cfg,
            cfg.attack_loss,
            seed::derive(cfg.seed, &[0xACE, 0]),
        )?);
    }

    let mut epoch_losses = Vec::with_capacity(cfg.pretrain_epochs);
    let mut optimizer_steps = 0usize;
    for epoch in 0..cfg.pretrain_epochs {
        if cfg.regen == RegenPolicy::PerEpoch {
            cache = Some(regenerate(
                &dataset.images,
                &params,
                cfg,
                cfg.attack_loss,
                seed::derive(cfg.seed, &[0xACE, epoch as u64]),
            )?);
        }
        let order = shuffled_indices(
            dataset.images.len(),
            seed::derive(cfg.seed, &[0x5F0F, epoch as u64]),
        );
        let mut batch_losses = Vec::new();
        for (batch_idx, chunk) in order.chunks(cfg.batch_size).enumerate() {
            if chunk.len() < 2 {
                continue; // a lone leftover original cannot form a contrastive batch
            }
            let triples: Vec<AugmentedTriple> = match &cache {
                Some(all) => chunk.iter().map(|&i| all[i].clone()).collect(),
                None => {
                    let originals: Vec<LabeledImage> =
                        chunk.iter().map(|&i| dataset.images[i].clone()).collect();
                    regenerate(
                        &originals,
                        &params,
                        cfg,
                        cfg.attack_loss,
                        seed::derive(cfg.seed, &[0xBA7C, epoch as u64, batch_idx as u64]),
                    )
                    .map_err(|e| e.at_sample(batch_idx))?
                }
            };

            let views = compose_batch(&triples);
            debug_assert!(batch_composition_holds(&views, triples.len()));
            let images: Vec<&LabeledImage> = views.iter().map(|(_, im)| *im).collect();
            let labels = model::batch_labels(&images);

            let mut g = Graph::new();
            let enc = model::bind_encoder(&mut g, &params, true);
            let proj = model::bind_projector(&mut g, &params, true);
            let x = g.leaf(model::images_to_tensor(&images)?);
            let reps = model::encode(&mut g, &enc, x)?;
            let projections = model::project(&mut g, &proj, reps)?;
            let loss =
                losses::supervised_contrastive_loss(&mut g, projections, &labels, cfg.temperature)?;
            let loss_value = g.scalar_value(loss);
            if !loss_value.is_finite() {
                return Err(Error::NonFinite(format!(
                    "pre-training loss in epoch {epoch} batch {batch_idx}"
                )));
            }
            g.backward(loss)?;

            let ids: Vec<_> = enc
                .param_ids()
                .into_iter()
                .chain(proj.param_ids())
                .collect();
            let grads: Vec<&[f64]> = ids
                .iter()
                .map(|&id| g.grad(id).expect("trainable parameter gradient"))
                .collect();
            opt.step(&mut params.tensors_mut(&groups), &grads)?;
            optimizer_steps += 1;
            batch_losses.push(loss_value);
        }
        if batch_losses.is_empty() {
            return Err(Error::InvalidArg(
                "no usable batches; dataset smaller than two images".into(),
            ));
        }
        epoch_losses.push(batch_losses.iter().sum::<f64>() / batch_losses.len() as f64);
        log::info!(
            "pretrain epoch {epoch}: mean contrastive loss {:.6}",
            epoch_losses[epoch]
        );
    }

    Ok(TrainOutcome {
        params,
        epoch_losses,
        optimizer_steps,
    })
}

/// Supervised adversarial fine-tuning (stage three): cross-entropy over the
/// same 3-view batches, training encoder plus classifier. The projector is
/// neither read nor written. Attacks here maximize the classifier loss.
pub fn finetune(params: &ModelParams, dataset: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate(dataset)?;
    let mut params = params.clone();
    let mut opt = SgdMomentum::new(cfg.lr, cfg.momentum, cfg.weight_decay)?;
    let groups: Vec<ParamGroup> = if cfg.freeze_encoder {
        vec![ParamGroup::Classifier]
    } else {
        vec![ParamGroup::Encoder, ParamGroup::Classifier]
    };

    let mut cache: Option<Vec<AugmentedTriple>> = None;
    if cfg.regen == RegenPolicy::Once && !cfg.clean_only_finetune {
        cache = Some(regenerate(
            &dataset.images,
            &params,
            cfg,
            LossMode::Classifier,
            seed::derive(cfg.seed, &[0xF1E, 0]),
        )?);
    }

    let mut epoch_losses = Vec::with_capacity(cfg.finetune_epochs);
    let mut optimizer_steps = 0usize;
    for epoch in 0..cfg.finetune_epochs {
        if cfg.regen == RegenPolicy::PerEpoch && !cfg.clean_only_finetune {
            cache = Some(regenerate(
                &dataset.images,
                &params,
                cfg,
                LossMode::Classifier,
                seed::derive(cfg.seed, &[0xF1E, epoch as u64]),
            )?);
        }
        let order = shuffled_indices(
            dataset.images.len(),
            seed::derive(cfg.seed, &[0xF75F, epoch as u64]),
        );
        let mut batch_losses = Vec::new();
        for (batch_idx, chunk) in order.chunks(cfg.batch_size).enumerate() {
            if chunk.is_empty() {
                continue;
            }
            let originals: Vec<LabeledImage> =
                chunk.iter().map(|&i| dataset.images[i].clone()).collect();

            let owned_views: Vec<LabeledImage>;
            let images: Vec<&LabeledImage> = if cfg.clean_only_finetune {
                originals.iter().collect()
            } else {
                let triples: Vec<AugmentedTriple> = match &cache {
                    Some(all) => chunk.iter().map(|&i| all[i].clone()).collect(),
                    None => regenerate(
                        &originals,
                        &params,
                        cfg,
                        LossMode::Classifier,
                        seed::derive(cfg.seed, &[0xFB, epoch as u64, batch_idx as u64]),
                    )
                    .map_err(|e| e.at_sample(batch_idx))?,
                };
                let views = compose_batch(&triples);
                debug_assert!(batch_composition_holds(&views, triples.len()));
                owned_views = views.into_iter().map(|(_, im)| im.clone()).collect();
                owned_views.iter().collect()
            };
            let labels = model::batch_labels(&images);

            let mut g = Graph::new();
            let enc = model::bind_encoder(&mut g, &params, !cfg.freeze_encoder);
            let cls = model::bind_classifier(&mut g, &params, true);
            let x = g.leaf(model::images_to_tensor(&images)?);
            let reps = model::encode(&mut g, &enc, x)?;
            let logits = model::classify(&mut g, &cls, reps)?;
            let loss = losses::cross_entropy_loss(&mut g, logits, &labels)?;
            let loss_value = g.scalar_value(loss);
            if !loss_value.is_finite() {
                return Err(Error::NonFinite(format!(
                    "fine-tuning loss in epoch {epoch} batch {batch_idx}"
                )));
            }
            g.backward(loss)?;

            let ids: Vec<_> = if cfg.freeze_encoder {
                cls.param_ids()
            } else {
                enc.param_ids().into_iter().chain(cls.param_ids()).collect()
            };
            let grads: Vec<&[f64]> = ids
                .iter()
                .map(|&id| g.grad(id).expect("trainable parameter gradient"))
                .collect();
            opt.step(&mut params.tensors_mut(&groups), &grads)?;
            optimizer_steps += 1;
            batch_losses.push(loss_value);
        }
        if batch_losses.is_empty() {
            return Err(Error::InvalidArg("no usable batches".into()));
        }
        epoch_losses.push(batch_losses.iter().sum::<f64>() / batch_losses.len() as f64);
        log::info!(
            "finetune epoch {epoch}: mean cross-entropy {:.6}",
            epoch_losses[epoch]
        );
    }

    Ok(TrainOutcome {
        params,
        epoch_losses,
        optimizer_steps,
    })
}

/// Standard training baseline: same architecture, cross-entropy on clean
/// images only.
pub fn run_standard_training(dataset: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate(dataset)?;
    let mut params = model::init_params(&cfg.arch, seed::derive(cfg.seed, &[0x57]))?;
    let mut opt = SgdMomentum::new(cfg.lr, cfg.momentum, cfg.weight_decay)?;
    let groups = [ParamGroup::Encoder, ParamGroup::Classifier];

    let mut epoch_losses = Vec::with_capacity(cfg.st_epochs);
    let mut optimizer_steps = 0usize;
    for epoch in 0..cfg.st_epochs {
        let order = shuffled_indices(
            dataset.images.len(),
            seed::derive(cfg.seed, &[0x57_0F, epoch as u64]),
        );
        let mut batch_losses = Vec::new();
        for (batch_idx, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let images: Vec<&LabeledImage> =
                chunk.iter().map(|&i| &dataset.images[i]).collect();
            let labels = model::batch_labels(&images);

            let mut g = Graph::new();
            let enc = model::bind_encoder(&mut g, &params, true);
            let cls = model::bind_classifier(&mut g, &params, true);
            let x = g.leaf(model::images_to_tensor(&images)?);
            let reps = model::encode(&mut g, &enc, x)?;
            let logits = model::classify(&mut g, &cls, reps)?;
            let loss = losses::cross_entropy_loss(&mut g, logits, &labels)?;
            let loss_value = g.scalar_value(loss);
            if !loss_value.is_finite() {
                return Err(Error::NonFinite(format!(
                    "standard training loss in epoch {epoch} batch {batch_idx}"
                )));
            }
            g.backward(loss)?;

            let ids: Vec<_> = enc.param_ids().into_iter().chain(cls.param_ids()).collect();
            let grads: Vec<&[f64]> = ids
                .iter()
                .map(|&id| g.grad(id).expect("trainable parameter gradient"))
                .collect();
            opt.step(&mut params.tensors_mut(&groups), &grads)?;
            optimizer_steps += 1;
            batch_losses.push(loss_value);
        }
        if batch_losses.is_empty() {
            return Err(Error::InvalidArg("no usable batches".into()));
        }
        epoch_losses.push(batch_losses.iter().sum::<f64>() / batch_losses.len() as f64);
        log::info!(
            "standard training epoch {epoch}: mean cross-entropy {:.6}",
            epoch_losses[epoch]
        );
    }

    Ok(TrainOutcome {
        params,
        epoch_losses,
        optimizer_steps,
    })
}
