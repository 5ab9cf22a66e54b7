//! Configuration resolution: built-in defaults, then an optional key-value
//! file, then command-line flags. The fully resolved configuration is echoed
//! next to every output and its hash is stamped into reports.

use anyhow::{bail, Context};
use factual_core::attacks::{AttackConfig, LossMode, OtsaParams};
use factual_core::data::SceneConfig;
use factual_core::model::ArchitectureConfig;
use factual_core::pipeline::{EvalConfig, RegenPolicy, TrainConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;

/// Every tunable knob, flat. This struct is the config file schema: the file
/// is TOML with these keys at top level, all optional.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Resolved {
    pub command: String,
    pub seed: u64,
    /// Worker cap; 0 means machine parallelism.
    pub threads: usize,

    // scene generation
    pub size: usize,
    pub classes: usize,
    pub per_class: usize,
    pub clutter: f64,
    pub looks: f64,
    pub target_intensity: f64,

    // attacks
    pub epsilon: f64,
    pub pgd_steps: usize,
    pub pgd_step_size: Option<f64>,
    pub otsa_scatterers: usize,
    pub otsa_steps: usize,
    pub otsa_sigma: f64,
    pub otsa_amax: f64,
    pub random_start: bool,

    // model
    pub channels: Vec<usize>,
    pub repr_dim: usize,
    pub projector_hidden: usize,
    pub projector_out: usize,
    pub residual: bool,

    // training
    pub tau: f64,
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub regen: RegenPolicy,
    pub attack_loss: LossMode,
    pub augment: bool,
    pub freeze_encoder: bool,
    pub clean_only: bool,
}

impl Default for Resolved {
    fn default() -> Self {
        let scene = SceneConfig::default();
        let arch = ArchitectureConfig::default();
        let train = TrainConfig::default();
        Resolved {
            command: String::new(),
            seed: 0,
            threads: 0,
            size: scene.size,
            classes: scene.class_count,
            per_class: 200,
            clutter: scene.clutter,
            looks: scene.looks,
            target_intensity: scene.target_intensity,
            epsilon: train.img_attack.epsilon,
            pgd_steps: train.img_attack.steps,
            pgd_step_size: None,
            otsa_scatterers: train.otsa.scatterers,
            otsa_steps: train.obj_attack.steps,
            otsa_sigma: train.otsa.sigma,
            otsa_amax: train.otsa.a_max,
            random_start: true,
            channels: arch.channels,
            repr_dim: arch.repr_dim,
            projector_hidden: arch.projector_hidden,
            projector_out: arch.projector_out,
            residual: arch.residual,
            tau: train.temperature,
            epochs: 10,
            batch: train.batch_size,
            lr: train.lr,
            momentum: train.momentum,
            weight_decay: train.weight_decay,
            regen: train.regen,
            attack_loss: train.attack_loss,
            augment: train.augment,
            freeze_encoder: false,
            clean_only: false,
        }
    }
}

impl Resolved {
    /// Load the optional config file and return its settings over defaults.
    pub fn from_file(path: Option<&Path>) -> anyhow::Result<Self> {
        match path {
            None => Ok(Resolved::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .with_context(|| format!("reading config file {}", p.display()))?;
                toml::from_str(&text).with_context(|| format!("parsing config file {}", p.display()))
            }
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Content hash of the resolved configuration, stamped into reports.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        let mut s = String::with_capacity(16);
        for b in &digest[..8] {
            s.push_str(&format!("{b:02x}"));
        }
        s
    }

    /// Echo the resolved configuration next to the outputs before running.
    pub fn echo(&self, out: &Path, out_is_dir: bool) -> anyhow::Result<std::path::PathBuf> {
        let target = if out_is_dir {
            std::fs::create_dir_all(out)
                .with_context(|| format!("creating output directory {}", out.display()))?;
            out.join("config.toml")
        } else {
            if let Some(parent) = out.parent() {
                if !parent.as_os_str().is_empty() {
                    std::fs::create_dir_all(parent)?;
                }
            }
            let mut name = out.file_name().unwrap_or_default().to_os_string();
            name.push(".config.toml");
            out.with_file_name(name)
        };
        std::fs::write(&target, self.to_toml())?;
        Ok(target)
    }

    pub fn scene_config(&self) -> SceneConfig {
        SceneConfig {
            size: self.size,
            class_count: self.classes,
            clutter: self.clutter,
            looks: self.looks,
            target_intensity: self.target_intensity,
        }
    }

    pub fn arch(&self, input: usize, class_count: usize) -> ArchitectureConfig {
        ArchitectureConfig {
            input,
            channels: self.channels.clone(),
            repr_dim: self.repr_dim,
            projector_hidden: self.projector_hidden,
            projector_out: self.projector_out,
            class_count,
            residual: self.residual,
        }
    }

    pub fn img_attack(&self) -> AttackConfig {
        AttackConfig {
            epsilon: self.epsilon,
            steps: self.pgd_steps,
            step_size: self.pgd_step_size,
            random_start: self.random_start,
            rng_seed: self.seed,
            loss_mode: self.attack_loss,
        }
    }

    pub fn obj_attack(&self) -> AttackConfig {
        AttackConfig {
            steps: self.otsa_steps,
            ..self.img_attack()
        }
    }

    pub fn otsa_params(&self) -> OtsaParams {
        OtsaParams {
            scatterers: self.otsa_scatterers,
            sigma: self.otsa_sigma,
            a_max: self.otsa_amax,
            ..OtsaParams::default()
        }
    }

    pub fn train_config(&self, input: usize, class_count: usize) -> TrainConfig {
        TrainConfig {
            arch: self.arch(input, class_count),
            pretrain_epochs: self.epochs,
            finetune_epochs: self.epochs,
            st_epochs: self.epochs,
            batch_size: self.batch,
            lr: self.lr,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
            temperature: self.tau,
            img_attack: self.img_attack(),
            obj_attack: self.obj_attack(),
            otsa: self.otsa_params(),
            regen: self.regen,
            attack_loss: self.attack_loss,
            augment: self.augment,
            freeze_encoder: self.freeze_encoder,
            clean_only_finetune: self.clean_only,
            seed: self.seed,
        }
    }

    pub fn eval_config(&self) -> EvalConfig {
        // evaluation-time attacks never use random starts
        EvalConfig {
            pgd: AttackConfig {
                random_start: false,
                loss_mode: LossMode::Classifier,
                ..self.img_attack()
            },
            otsa_schedule: AttackConfig {
                random_start: false,
                loss_mode: LossMode::Classifier,
                ..self.obj_attack()
            },
            otsa: self.otsa_params(),
            seed: self.seed,
        }
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        if self.classes == 0 || self.per_class == 0 {
            bail!("classes and per-class counts must be positive");
        }
        Ok(())
    }
}
