//! Fast attack-invariant checks for the runtime selftest.

use super::*;
use crate::data::{generate_scene, SceneConfig};
use crate::losses;
use crate::selftest::CheckReport;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Linear softmax scorer over flattened pixels; cheap and convex in x.
pub(crate) struct LinearSoftmaxScorer {
    pub weights: Tensor, // [h*w, classes]
    pub bias: Tensor,    // [classes]
}

impl LinearSoftmaxScorer {
    pub fn random(height: usize, width: usize, classes: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w: Vec<f64> = (0..height * width * classes)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        let b: Vec<f64> = (0..classes).map(|_| rng.random_range(-0.5..0.5)).collect();
        LinearSoftmaxScorer {
            weights: Tensor::new(w, vec![height * width, classes]).unwrap(),
            bias: Tensor::new(b, vec![classes]).unwrap(),
        }
    }
}

impl LossScorer for LinearSoftmaxScorer {
    fn loss(&self, g: &mut Graph, image: TensorId, label: usize) -> Result<TensorId> {
        let flat = g.flatten(image)?;
        let w = g.leaf(self.weights.clone());
        let bias = g.leaf(self.bias.clone());
        let logits = g.dense(flat, w, bias)?;
        losses::cross_entropy_loss(g, logits, &[label])
    }
}

fn random_image(rng: &mut ChaCha8Rng, side: usize) -> crate::data::LabeledImage {
    let pixels: Vec<f64> = (0..side * side).map(|_| rng.random_range(0.0..=1.0)).collect();
    crate::data::LabeledImage::new(side, side, pixels, 0, vec![false; side * side]).unwrap()
}

/// Budget, range, degeneracy, projection, and support invariants on small
/// random cases.
pub fn selftest_suite(seed: u64) -> Vec<CheckReport> {
    let mut reports = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let side = 12usize;
    let scorer = LinearSoftmaxScorer::random(side, side, 3, seed ^ 1);

    // PGD/FGSM budget and pixel range
    let mut violations = 0usize;
    let mut degeneracy_breaks = 0usize;
    for i in 0..50u64 {
        let image = random_image(&mut rng, side);
        let eps = rng.random_range(0.0..0.2);
        let cfg = AttackConfig {
            epsilon: eps,
            steps: 3,
            step_size: None,
            random_start: i % 2 == 0,
            rng_seed: seed,
            loss_mode: LossMode::Classifier,
        };
        let p = match pgd_perturbation(&scorer, &image, &cfg, seed + i) {
            Ok(p) => p,
            Err(e) => {
                reports.push(CheckReport {
                    name: "attack-budget",
                    passed: false,
                    detail: e.to_string(),
                });
                return reports;
            }
        };
        if p.linf_norm() > eps + 1e-12 {
            violations += 1;
        }
        let adv = p.apply_to(&image).unwrap();
        if adv.pixels.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            violations += 1;
        }

        // one-step PGD without random start must equal FGSM bitwise
        let one = AttackConfig {
            epsilon: eps,
            steps: 1,
            step_size: Some(eps),
            random_start: false,
            rng_seed: seed,
            loss_mode: LossMode::Classifier,
        };
        if eps > 0.0 {
            let pgd1 = pgd_perturbation(&scorer, &image, &one, seed).unwrap();
            let fgsm = Fgsm { epsilon: eps }.perturbation(&scorer, &image).unwrap();
            if pgd1.delta != fgsm.delta {
                degeneracy_breaks += 1;
            }
        }
    }
    reports.push(CheckReport {
        name: "attack-budget",
        passed: violations == 0,
        detail: format!("{violations} budget/range violations over 50 runs"),
    });
    reports.push(CheckReport {
        name: "pgd-fgsm-degeneracy",
        passed: degeneracy_breaks == 0,
        detail: format!("{degeneracy_breaks} bitwise mismatches"),
    });

    // projection idempotence and contraction
    let mut idem_breaks = 0usize;
    for _ in 0..100 {
        let n = 32usize;
        let origin: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..=1.0)).collect();
        let candidate: Vec<f64> = (0..n).map(|_| rng.random_range(-0.5..1.5)).collect();
        let eps = rng.random_range(0.0..0.3);
        let once = project_linf(&candidate, &origin, eps);
        let twice = project_linf(&once, &origin, eps);
        if once != twice {
            idem_breaks += 1;
        }
        for ((&c, &x), &y) in candidate.iter().zip(&origin).zip(&once) {
            if (y - x).abs() > (c - x).abs() + 1e-15 {
                idem_breaks += 1;
            }
        }
    }
    reports.push(CheckReport {
        name: "projection-idempotent",
        passed: idem_breaks == 0,
        detail: format!("{idem_breaks} violations over 100 projections"),
    });

    // scatterer locality on real masked scenes
    let cfg = SceneConfig {
        size: 32,
        ..SceneConfig::default()
    };
    let otsa_params = OtsaParams::default();
    let attack_cfg = AttackConfig {
        steps: 4,
        ..AttackConfig::default()
    };
    let scorer32 = LinearSoftmaxScorer::random(32, 32, 4, seed ^ 2);
    let mut support_breaks = 0usize;
    for i in 0..10u64 {
        let image = match generate_scene((i % 4) as usize, seed ^ i, &cfg) {
            Ok(im) => im,
            Err(e) => {
                reports.push(CheckReport {
                    name: "otsa-support",
                    passed: false,
                    detail: e.to_string(),
                });
                return reports;
            }
        };
        match otsa_attack(&scorer32, &image, &attack_cfg, &otsa_params, seed + i) {
            Ok((p, set)) => {
                let support = set.support(image.height, image.width);
                for (j, &d) in p.delta.iter().enumerate() {
                    if !support[j] && d != 0.0 {
                        support_breaks += 1;
                    }
                }
                for s in &set.scatterers {
                    let r = s.row.round() as usize;
                    let c = s.col.round() as usize;
                    if !image.mask[r * image.width + c] {
                        support_breaks += 1;
                    }
                }
            }
            Err(e) => {
                reports.push(CheckReport {
                    name: "otsa-support",
                    passed: false,
                    detail: e.to_string(),
                });
                return reports;
            }
        }
    }
    reports.push(CheckReport {
        name: "otsa-support",
        passed: support_breaks == 0,
        detail: format!("{support_breaks} off-support pixels over 10 attacks"),
    });

    reports
}
