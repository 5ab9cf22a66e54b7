//! Acceptance suite. Each test covers one numbered criterion and prints a
//! PASS line on success (run with `--nocapture` to see them); a failed
//! assertion is the FAIL signal.

use factual_core::attacks::{
    available_attacks, build_attack, otsa_attack, pgd_perturbation, AttackConfig, Fgsm, LossMode,
    LossScorer, OtsaParams,
};
use factual_core::data::{
    generate_dataset, load_dataset, save_dataset, LabeledImage, SceneConfig, Split,
};
use factual_core::losses;
use factual_core::model::{load_checkpoint, save_checkpoint, ArchitectureConfig};
use factual_core::pipeline::{
    evaluate, finetune, pretrain, run_standard_training, BucketStats, EvalConfig, MetricsReport,
    ReportMeta, TrainConfig,
};
use factual_core::selftest;
use factual_core::tensor::{Graph, TensorId};
use std::time::Instant;

/// Criterion 1: every differentiable operation and both losses pass central
/// finite-difference checks (step 1e-5) with max relative error < 1e-4 over
/// at least 10 random seeds, in under a minute.
#[test]
fn criterion_1_gradient_correctness() {
    let t0 = Instant::now();
    let reports = selftest::gradient_checks(10);
    let elapsed = t0.elapsed();
    assert!(!reports.is_empty());
    for r in &reports {
        assert!(r.passed, "{}: {}", r.name, r.detail);
    }
    assert!(
        elapsed.as_secs() < 60,
        "gradient checks took {elapsed:?}, budget is one minute"
    );
    println!(
        "ACCEPTANCE 1 gradient-correctness: PASS ({} op/loss cases, 10 seeds, {:.2?})",
        reports.len(),
        elapsed
    );
}

/// Criterion 2: the contrastive loss matches an independent brute-force
/// double-loop oracle within 1e-8 on 100 random batches, and the two-sample
/// identical-positive case is exactly zero.
#[test]
fn criterion_2_scl_oracle_equivalence() {
    let report = selftest::scl_oracle_suite(100, 0xFAC7);
    assert!(report.passed, "{}", report.detail);

    let mut g = Graph::new();
    let reps = g.constant(vec![1.0, 0.0, 1.0, 0.0], vec![2, 2]).unwrap();
    let loss = losses::supervised_contrastive_loss(&mut g, reps, &[1, 1], 0.1).unwrap();
    assert_eq!(g.scalar_value(loss), 0.0);
    println!("ACCEPTANCE 2 scl-oracle-equivalence: PASS ({})", report.detail);
}

/// Cheap classifier scorer for attack-constraint sweeps: a small random
/// convolutional model.
struct SmallModelScorer {
    params: factual_core::model::ModelParams,
}

impl SmallModelScorer {
    fn new(input: usize, classes: usize, seed: u64) -> Self {
        let arch = ArchitectureConfig {
            input,
            channels: vec![2, 3],
            repr_dim: 6,
            projector_hidden: 5,
            projector_out: 4,
            class_count: classes,
            residual: false,
        };
        SmallModelScorer {
            params: factual_core::model::init_params(&arch, seed).unwrap(),
        }
    }
}

impl LossScorer for SmallModelScorer {
    fn loss(&self, g: &mut Graph, image: TensorId, label: usize) -> factual_core::Result<TensorId> {
        factual_core::attacks::ClassifierScorer {
            params: &self.params,
        }
        .loss(g, image, label)
    }
}

/// Criterion 3: across at least 1000 generated perturbations per family,
/// PGD/FGSM respect the budget and pixel range with zero violations, the
/// scatterer attack is exactly zero outside the dilated mask support with
/// zero violations, and one-step PGD without random start equals FGSM
/// bitwise.
#[test]
fn criterion_3_attack_constraints() {
    let side = 24usize;
    let scene = SceneConfig {
        size: side,
        ..SceneConfig::default()
    };
    let scorer = SmallModelScorer::new(side, 4, 5);
    let images: Vec<LabeledImage> = (0..50)
        .map(|i| factual_core::data::generate_scene(i % 4, 1000 + i as u64, &scene).unwrap())
        .collect();

    let mut pgd_count = 0usize;
    let mut budget_violations = 0usize;
    let mut range_violations = 0usize;
    let mut degeneracy_breaks = 0usize;
    for round in 0..12u64 {
        for (i, image) in images.iter().enumerate() {
            let eps = 0.005 + 0.03 * ((round as f64 * 50.0 + i as f64) % 10.0);
            let cfg = AttackConfig {
                epsilon: eps,
                steps: 3,
                step_size: None,
                random_start: round % 2 == 0,
                rng_seed: 0,
                loss_mode: LossMode::Classifier,
            };
            let seed = round * 1000 + i as u64;
            let p = pgd_perturbation(&scorer, image, &cfg, seed).unwrap();
            pgd_count += 1;
            if p.linf_norm() > eps + 1e-12 {
                budget_violations += 1;
            }
            let adv = p.apply_to(image).unwrap();
            if adv.pixels.iter().any(|v| !(0.0..=1.0).contains(v)) {
                range_violations += 1;
            }

            if round < 2 {
                // bitwise degeneracy: PGD(1 step, no random start, step = eps)
                let one = AttackConfig {
                    epsilon: eps,
                    steps: 1,
                    step_size: Some(eps),
                    random_start: false,
                    rng_seed: 0,
                    loss_mode: LossMode::Classifier,
                };
                let p1 = pgd_perturbation(&scorer, image, &one, seed).unwrap();
                let f = Fgsm { epsilon: eps }.perturbation(&scorer, image).unwrap();
                pgd_count += 2;
                if p1.delta != f.delta {
                    degeneracy_breaks += 1;
                }
                if f.linf_norm() > eps + 1e-12 {
                    budget_violations += 1;
                }
            }
        }
    }
    assert!(pgd_count >= 1000, "only {pgd_count} PGD/FGSM perturbations");
    assert_eq!(budget_violations, 0);
    assert_eq!(range_violations, 0);
    assert_eq!(degeneracy_breaks, 0);

    let mut otsa_count = 0usize;
    let mut support_violations = 0usize;
    let otsa_params = OtsaParams::default();
    for round in 0..21u64 {
        for (i, image) in images.iter().enumerate() {
            let cfg = AttackConfig {
                steps: 3,
                ..AttackConfig::default()
            };
            let (p, set) =
                otsa_attack(&scorer, image, &cfg, &otsa_params, round * 977 + i as u64).unwrap();
            otsa_count += 1;
            let support = set.support(side, side);
            for (idx, &d) in p.delta.iter().enumerate() {
                if !support[idx] && d != 0.0 {
                    support_violations += 1;
                }
            }
        }
    }
    assert!(otsa_count >= 1000, "only {otsa_count} scatterer perturbations");
    assert_eq!(support_violations, 0);

    println!(
        "ACCEPTANCE 3 attack-constraints: PASS ({pgd_count} pgd/fgsm + {otsa_count} otsa, zero violations)"
    );
}

/// Criterion 4: on a linear softmax scorer PGD saturates to exactly
/// epsilon * sign of the weight difference, per coordinate.
#[test]
fn criterion_4_closed_form_linear_pgd() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
    let side = 6usize;
    let n = side * side;

    struct LinearCe {
        w: Vec<f64>, // [n, 2] row-major
    }
    impl LossScorer for LinearCe {
        fn loss(
            &self,
            g: &mut Graph,
            image: TensorId,
            label: usize,
        ) -> factual_core::Result<TensorId> {
            let flat = g.flatten(image)?;
            let n = self.w.len() / 2;
            let w = g.constant(self.w.clone(), vec![n, 2])?;
            let b = g.constant(vec![0.0, 0.0], vec![2])?;
            let logits = g.dense(flat, w, b)?;
            losses::cross_entropy_loss(g, logits, &[label])
        }
    }

    for case in 0..20 {
        // nonzero per-pixel weight difference so the sign is well defined
        let w: Vec<f64> = (0..n * 2)
            .map(|_| {
                let v: f64 = rng.random_range(-1.0..1.0);
                if v.abs() < 0.05 {
                    0.1
                } else {
                    v
                }
            })
            .collect();
        let scorer = LinearCe { w: w.clone() };
        let image = LabeledImage::new(side, side, vec![0.5; n], 0, vec![false; n]).unwrap();
        let eps = 8.0 / 255.0;
        let cfg = AttackConfig {
            epsilon: eps,
            steps: 7,
            step_size: None,
            random_start: false,
            rng_seed: 0,
            loss_mode: LossMode::Classifier,
        };
        let p = pgd_perturbation(&scorer, &image, &cfg, case).unwrap();
        // label 0: grad_x J = p_1 * (w_col1 - w_col0); sign is the sign of
        // the weight difference
        for i in 0..n {
            let diff = w[i * 2 + 1] - w[i * 2];
            let expected = if diff > 0.0 { eps } else { -eps };
            assert_eq!(
                p.delta[i], expected,
                "case {case} coordinate {i}: delta {} vs {expected}",
                p.delta[i]
            );
        }
    }
    println!("ACCEPTANCE 4 closed-form-linear-pgd: PASS (20 cases, exact per-coordinate agreement)");
}

fn acceptance_arch() -> ArchitectureConfig {
    // compact profile of the default architecture so the five-seed run fits
    // the wall-clock budget on a single core
    ArchitectureConfig {
        input: 64,
        channels: vec![6, 12, 24],
        repr_dim: 48,
        projector_hidden: 48,
        projector_out: 24,
        class_count: 4,
        residual: false,
    }
}

struct SeedOutcome {
    st_ok: bool,
    factual_ok: bool,
    summary: String,
}

fn run_seed(seed: u64, train_cfg: &TrainConfig) -> SeedOutcome {
    let scene = SceneConfig::default();
    let train = generate_dataset(4, 200, &scene, seed, Split::Train).unwrap();
    let test = generate_dataset(4, 50, &scene, seed, Split::Test).unwrap();
    let mut cfg = train_cfg.clone();
    cfg.seed = seed;
    let eval_cfg = EvalConfig {
        pgd: AttackConfig {
            epsilon: 8.0 / 255.0,
            steps: 7,
            random_start: false,
            ..AttackConfig::default()
        },
        otsa_schedule: AttackConfig {
            epsilon: 8.0 / 255.0,
            steps: 10,
            random_start: false,
            ..AttackConfig::default()
        },
        otsa: OtsaParams::default(),
        seed,
    };

    let st = run_standard_training(&train, &cfg).unwrap();
    let st_rep = evaluate(&st.params, &test, &eval_cfg).unwrap();

    let pre = pretrain(&train, &cfg).unwrap();
    let fine = finetune(&pre.params, &train, &cfg).unwrap();
    let f_rep = evaluate(&fine.params, &test, &eval_cfg).unwrap();

    let st_ok = st_rep.ta >= 90.0 && st_rep.ra <= st_rep.ta - 20.0;
    let factual_ok =
        f_rep.ta >= 90.0 && f_rep.ra >= st_rep.ra + 20.0 && f_rep.gap < st_rep.gap;
    SeedOutcome {
        st_ok,
        factual_ok,
        summary: format!(
            "seed {seed}: ST ta {:.1} ra {:.1} gap {:.1} | FACTUAL ta {:.1} ra {:.1} gap {:.1} | st_ok {st_ok} factual_ok {factual_ok}",
            st_rep.ta, st_rep.ra, st_rep.gap, f_rep.ta, f_rep.ra, f_rep.gap
        ),
    }
}

/// Criterion 5: directional reproduction on the synthetic dataset (C=4,
/// 64x64, 200 train + 50 test per class) with epsilon 8/255, PGD 7 steps,
/// OTSA 3 scatterers / 10 iterations: standard training reaches TA >= 90
/// with RA at least 20 points below, FACTUAL reaches TA >= 90 with RA at
/// least 20 points above ST's and a smaller gap — on at least 4 of 5 fixed
/// seeds, within the 15-minute budget.
#[test]
fn criterion_5_directional_reproduction() {
    let t0 = Instant::now();
    let cfg = TrainConfig {
        arch: acceptance_arch(),
        pretrain_epochs: 3,
        finetune_epochs: 3,
        st_epochs: 15,
        batch_size: 16,
        lr: 0.02,
        img_attack: AttackConfig {
            epsilon: 8.0 / 255.0,
            steps: 7,
            ..AttackConfig::default()
        },
        obj_attack: AttackConfig {
            epsilon: 8.0 / 255.0,
            steps: 10,
            ..AttackConfig::default()
        },
        otsa: OtsaParams::default(),
        ..TrainConfig::default()
    };

    let seeds = [11u64, 22, 33, 44, 55];
    let mut passes = 0usize;
    for &seed in &seeds {
        let outcome = run_seed(seed, &cfg);
        println!("  {}", outcome.summary);
        if outcome.st_ok && outcome.factual_ok {
            passes += 1;
        }
    }
    let elapsed = t0.elapsed();
    assert!(
        passes >= 4,
        "directional reproduction held on {passes} of {} seeds",
        seeds.len()
    );
    let threads = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    if threads >= 8 {
        assert!(
            elapsed.as_secs() <= 900,
            "five-seed run took {elapsed:?} on {threads} threads, budget 15 minutes"
        );
    }
    println!(
        "ACCEPTANCE 5 directional-reproduction: PASS ({passes}/5 seeds, {:.0?} on {threads} thread(s))",
        elapsed
    );
}

/// Criterion 6: AA equals the count-weighted bucket mean and gap equals
/// TA - RA on every emitted report (1e-9), and the published-table
/// arithmetic reproduces within rounding.
#[test]
fn criterion_6_metrics_identities() {
    let suite = factual_core::pipeline::metrics_identity_suite(6);
    assert!(suite.passed, "{}", suite.detail);

    // the published row: TA 99.7, RA 94.4 with clean:perturbed at 1:2
    let report = MetricsReport::from_buckets(
        BucketStats {
            name: "clean".into(),
            count: 1000,
            correct: 997,
        },
        vec![
            BucketStats {
                name: "pgd".into(),
                count: 1000,
                correct: 944,
            },
            BucketStats {
                name: "otsa".into(),
                count: 1000,
                correct: 944,
            },
        ],
        ReportMeta::default(),
    )
    .unwrap();
    assert!((report.aa - 96.1).abs() < 0.15, "aa {}", report.aa);
    assert!((report.gap - (report.ta - report.ra)).abs() < 1e-9);
    println!(
        "ACCEPTANCE 6 metrics-identities: PASS (weighted AA {:.4} vs published 96.1)",
        report.aa
    );
}

/// Criterion 7: identical config and seed give bit-identical dataset files,
/// checkpoints, and reports; dataset and checkpoint files round-trip
/// bit-exactly.
#[test]
fn criterion_7_determinism_and_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let scene = SceneConfig {
        size: 32,
        ..SceneConfig::default()
    };

    // dataset determinism + file round trip
    let d1 = generate_dataset(3, 5, &scene, 7, Split::Train).unwrap();
    let d2 = generate_dataset(3, 5, &scene, 7, Split::Train).unwrap();
    let p1 = dir.path().join("a.fctd");
    let p2 = dir.path().join("b.fctd");
    save_dataset(&d1, &p1).unwrap();
    save_dataset(&d2, &p2).unwrap();
    let bytes1 = std::fs::read(&p1).unwrap();
    assert_eq!(bytes1, std::fs::read(&p2).unwrap());
    let reloaded = load_dataset(&p1).unwrap();
    let p3 = dir.path().join("c.fctd");
    save_dataset(&reloaded, &p3).unwrap();
    assert_eq!(bytes1, std::fs::read(&p3).unwrap());

    // a short end-to-end training run, twice, must match bit for bit
    let train = generate_dataset(2, 6, &scene, 3, Split::Train).unwrap();
    let test = generate_dataset(2, 4, &scene, 3, Split::Test).unwrap();
    let cfg = TrainConfig {
        arch: ArchitectureConfig {
            input: 32,
            channels: vec![3, 4],
            repr_dim: 8,
            projector_hidden: 6,
            projector_out: 4,
            class_count: 2,
            residual: false,
        },
        pretrain_epochs: 1,
        finetune_epochs: 1,
        st_epochs: 1,
        batch_size: 4,
        img_attack: AttackConfig {
            epsilon: 0.03,
            steps: 2,
            ..AttackConfig::default()
        },
        obj_attack: AttackConfig {
            epsilon: 0.03,
            steps: 2,
            ..AttackConfig::default()
        },
        seed: 5,
        ..TrainConfig::default()
    };
    let eval_cfg = EvalConfig {
        pgd: AttackConfig {
            epsilon: 0.03,
            steps: 2,
            random_start: false,
            ..AttackConfig::default()
        },
        otsa_schedule: AttackConfig {
            epsilon: 0.03,
            steps: 2,
            random_start: false,
            ..AttackConfig::default()
        },
        seed: 5,
        ..EvalConfig::default()
    };

    let run = |tag: &str| -> (Vec<u8>, String) {
        let pre = pretrain(&train, &cfg).unwrap();
        let fine = finetune(&pre.params, &train, &cfg).unwrap();
        let path = dir.path().join(format!("{tag}.fctc"));
        save_checkpoint(&fine.params, &path).unwrap();
        let report = evaluate(&fine.params, &test, &eval_cfg).unwrap();
        (std::fs::read(&path).unwrap(), report.to_text())
    };
    let (ck1, rep1) = run("run1");
    let (ck2, rep2) = run("run2");
    assert_eq!(ck1, ck2, "checkpoints differ across identical runs");
    assert_eq!(rep1, rep2, "reports differ across identical runs");

    // checkpoint file round trip
    let loaded = load_checkpoint(&dir.path().join("run1.fctc")).unwrap();
    let p4 = dir.path().join("run1b.fctc");
    save_checkpoint(&loaded, &p4).unwrap();
    assert_eq!(ck1, std::fs::read(&p4).unwrap());

    // attack registry coverage sanity: every listed attack builds
    for name in available_attacks() {
        build_attack(name, &AttackConfig::default(), &OtsaParams::default()).unwrap();
    }

    println!("ACCEPTANCE 7 determinism-and-round-trip: PASS");
}
