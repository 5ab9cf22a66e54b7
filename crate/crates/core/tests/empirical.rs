//! Empirical oracles: directional claims checked over many seeds on small,
//! fast configurations.

use factual_core::attacks::{
    otsa_attack_traced, AttackConfig, ClassifierScorer, Fgsm, OtsaParams,
};
use factual_core::data::{generate_dataset, SceneConfig, Split};
use factual_core::model::{self, ArchitectureConfig};
use factual_core::pipeline::{evaluate, pretrain, run_standard_training, EvalConfig, TrainConfig};
use factual_core::tensor::Graph;

fn small_scene() -> SceneConfig {
    SceneConfig {
        size: 32,
        class_count: 2,
        ..SceneConfig::default()
    }
}

fn small_arch() -> ArchitectureConfig {
    ArchitectureConfig {
        input: 32,
        channels: vec![3, 6],
        repr_dim: 12,
        projector_hidden: 8,
        projector_out: 6,
        class_count: 2,
        residual: false,
    }
}

fn small_train(seed: u64) -> TrainConfig {
    TrainConfig {
        arch: small_arch(),
        pretrain_epochs: 4,
        finetune_epochs: 4,
        st_epochs: 8,
        batch_size: 8,
        lr: 0.02,
        img_attack: AttackConfig {
            epsilon: 8.0 / 255.0,
            steps: 3,
            ..AttackConfig::default()
        },
        obj_attack: AttackConfig {
            epsilon: 8.0 / 255.0,
            steps: 3,
            ..AttackConfig::default()
        },
        seed,
        ..TrainConfig::default()
    }
}

/// An untrained model predicts at chance level on a balanced test set.
#[test]
fn untrained_model_evaluates_near_chance() {
    let scene = SceneConfig::default(); // 4 classes, 64x64
    let test = generate_dataset(4, 50, &scene, 31, Split::Test).unwrap();
    let arch = ArchitectureConfig {
        input: 64,
        channels: vec![2, 3],
        repr_dim: 8,
        projector_hidden: 6,
        projector_out: 4,
        class_count: 4,
        residual: false,
    };
    let params = model::init_params(&arch, 9).unwrap();
    let cfg = EvalConfig {
        pgd: AttackConfig {
            steps: 2,
            random_start: false,
            ..AttackConfig::default()
        },
        otsa_schedule: AttackConfig {
            steps: 2,
            random_start: false,
            ..AttackConfig::default()
        },
        ..EvalConfig::default()
    };
    let report = evaluate(&params, &test, &cfg).unwrap();
    assert!(
        (15.0..=35.0).contains(&report.ta),
        "untrained TA {} outside chance band",
        report.ta
    );
}

/// Mean pre-training loss goes down from epoch 1 to epoch 10 on at least
/// 9 of 10 seeds.
#[test]
fn pretrain_loss_decreases_across_seeds() {
    let mut decreased = 0usize;
    for seed in 0..10u64 {
        let train = generate_dataset(2, 24, &small_scene(), 100 + seed, Split::Train).unwrap();
        let mut cfg = small_train(seed);
        cfg.pretrain_epochs = 10;
        cfg.batch_size = 12;
        let out = pretrain(&train, &cfg).unwrap();
        let first = out.epoch_losses[0];
        let last = *out.epoch_losses.last().unwrap();
        if last < first {
            decreased += 1;
        }
    }
    assert!(decreased >= 9, "loss decreased on only {decreased} of 10 seeds");
}

/// FGSM at 8/255 strictly lowers a trained classifier's accuracy on at
/// least 9 of 10 random test batches.
#[test]
fn fgsm_degrades_a_trained_classifier() {
    let scene = SceneConfig::default(); // 4 classes, 64x64
    let train = generate_dataset(4, 60, &scene, 77, Split::Train).unwrap();
    let arch = ArchitectureConfig {
        input: 64,
        channels: vec![6, 12, 24],
        repr_dim: 48,
        projector_hidden: 48,
        projector_out: 24,
        class_count: 4,
        residual: false,
    };
    let cfg = TrainConfig {
        arch,
        st_epochs: 14,
        batch_size: 16,
        lr: 0.02,
        seed: 77,
        ..TrainConfig::default()
    };
    let st = run_standard_training(&train, &cfg).unwrap();
    let scorer = ClassifierScorer { params: &st.params };
    let fgsm = Fgsm {
        epsilon: 8.0 / 255.0,
    };

    let accuracy = |images: &[factual_core::data::LabeledImage]| -> usize {
        images
            .iter()
            .filter(|im| {
                let mut g = Graph::new();
                let enc = model::bind_encoder(&mut g, &st.params, false);
                let cls = model::bind_classifier(&mut g, &st.params, false);
                let x = g.leaf(model::images_to_tensor(&[im]).unwrap());
                let reps = model::encode(&mut g, &enc, x).unwrap();
                let logits = model::classify(&mut g, &cls, reps).unwrap();
                let row = g.data(logits);
                let pred = (0..4).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap();
                pred == im.label
            })
            .count()
    };

    let mut degraded = 0usize;
    for batch_seed in 0..10u64 {
        let batch = generate_dataset(4, 6, &scene, 900 + batch_seed, Split::Test).unwrap();
        let clean_correct = accuracy(&batch.images);
        let perturbed: Vec<_> = batch
            .images
            .iter()
            .map(|im| {
                fgsm.perturbation(&scorer, im)
                    .unwrap()
                    .apply_to(im)
                    .unwrap()
            })
            .collect();
        if accuracy(&perturbed) < clean_correct {
            degraded += 1;
        }
    }
    assert!(degraded >= 9, "accuracy dropped on only {degraded} of 10 batches");
}

/// The scatterer attack's final objective beats its initial objective on at
/// least 90% of samples.
#[test]
fn otsa_ascends_on_most_samples() {
    let train = generate_dataset(2, 15, &small_scene(), 400, Split::Train).unwrap();
    let st = run_standard_training(&train, &small_train(4)).unwrap();
    let scorer = ClassifierScorer { params: &st.params };
    let cfg = AttackConfig {
        steps: 10,
        random_start: false,
        ..AttackConfig::default()
    };
    let params = OtsaParams::default();

    let samples = generate_dataset(2, 25, &small_scene(), 500, Split::Test).unwrap();
    let mut ascended = 0usize;
    for (i, image) in samples.images.iter().enumerate() {
        let (_, _, trace) = otsa_attack_traced(&scorer, image, &cfg, &params, i as u64).unwrap();
        if trace.final_loss >= trace.initial_loss {
            ascended += 1;
        }
    }
    let total = samples.images.len();
    assert!(
        ascended * 10 >= total * 9,
        "objective ascended on only {ascended} of {total} samples"
    );
}
