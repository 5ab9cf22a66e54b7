use super::*;
use crate::tensor::finite_difference_check;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tempfile::tempdir;

fn tiny_arch() -> ArchitectureConfig {
    ArchitectureConfig {
        input: 16,
        channels: vec![3, 4],
        repr_dim: 8,
        projector_hidden: 6,
        projector_out: 4,
        class_count: 3,
        residual: false,
    }
}

fn random_images(arch: &ArchitectureConfig, n: usize, seed: u64) -> Vec<crate::data::LabeledImage> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let pixels = (0..arch.input * arch.input)
                .map(|_| rng.random_range(0.0..=1.0))
                .collect();
            crate::data::LabeledImage::new(
                arch.input,
                arch.input,
                pixels,
                i % arch.class_count,
                vec![false; arch.input * arch.input],
            )
            .unwrap()
        })
        .collect()
}

#[test]
fn init_is_deterministic_per_seed() {
    let arch = tiny_arch();
    let a = init_params(&arch, 5).unwrap();
    let b = init_params(&arch, 5).unwrap();
    assert_eq!(a, b);
    let c = init_params(&arch, 6).unwrap();
    assert_ne!(a, c);
}

#[test]
fn conv_kernels_respect_the_fan_in_bound() {
    let arch = ArchitectureConfig::default();
    let params = init_params(&arch, 9).unwrap();
    for (stage, s) in params.encoder.stages.iter().enumerate() {
        let ConvStage::Plain { w } = s else { panic!() };
        let cin = if stage == 0 { 1 } else { arch.channels[stage - 1] };
        let bound = (6.0 / (cin * 9) as f64).sqrt();
        assert!(w.data.iter().all(|v| v.abs() <= bound), "stage {stage}");
    }
}

#[test]
fn encode_shape_and_purity() {
    let arch = tiny_arch();
    let params = init_params(&arch, 1).unwrap();
    let images = random_images(&arch, 2, 3);
    // batch of 5 with duplicated rows
    let batch = [&images[0], &images[1], &images[0], &images[1], &images[0]];
    let mut g = crate::tensor::Graph::new();
    let enc = bind_encoder(&mut g, &params, false);
    let x = g.leaf(images_to_tensor(&batch).unwrap());
    let reps = encode(&mut g, &enc, x).unwrap();
    assert_eq!(g.shape(reps), &[5, arch.repr_dim]);
    let d = arch.repr_dim;
    let data = g.data(reps);
    assert_eq!(&data[0..d], &data[2 * d..3 * d]);
    assert_eq!(&data[d..2 * d], &data[3 * d..4 * d]);
}

#[test]
fn encode_rejects_wrong_input_shape() {
    let arch = tiny_arch();
    let params = init_params(&arch, 1).unwrap();
    let mut g = crate::tensor::Graph::new();
    let enc = bind_encoder(&mut g, &params, false);
    let x = g.constant(vec![0.0; 2 * 64], vec![2, 1, 8, 8]).unwrap();
    assert!(encode(&mut g, &enc, x).is_err());
}

#[test]
fn encoder_input_gradient_passes_finite_differences() {
    let arch = ArchitectureConfig {
        input: 16,
        channels: vec![2, 3],
        repr_dim: 5,
        projector_hidden: 4,
        projector_out: 3,
        class_count: 2,
        residual: false,
    };
    let params = init_params(&arch, 4).unwrap();
    let images = random_images(&arch, 1, 8);
    let x = images_to_tensor(&[&images[0]]).unwrap();
    let err = finite_difference_check(
        |g, id| {
            let enc = bind_encoder(g, &params, false);
            let reps = encode(g, &enc, id)?;
            // weighted sum output to exercise all coordinates
            let w = g.constant((1..=5).map(|v| v as f64 / 5.0).collect(), vec![1, 5])?;
            let prod = g.mul(reps, w)?;
            g.sum(prod)
        },
        &x,
        1e-5,
    )
    .unwrap();
    assert!(err < 1e-4, "encoder input gradient error {err}");
}

#[test]
fn full_network_cross_entropy_gradient_at_the_input() {
    // the attack path: d loss / d pixels through encoder + classifier
    let arch = ArchitectureConfig {
        input: 16,
        channels: vec![2, 3],
        repr_dim: 5,
        projector_hidden: 4,
        projector_out: 3,
        class_count: 3,
        residual: false,
    };
    let params = init_params(&arch, 6).unwrap();
    let images = random_images(&arch, 2, 12);
    let labels = vec![images[0].label, images[1].label];
    let x = images_to_tensor(&[&images[0], &images[1]]).unwrap();
    let err = finite_difference_check(
        |g, id| {
            let enc = bind_encoder(g, &params, false);
            let cls = bind_classifier(g, &params, false);
            let reps = encode(g, &enc, id)?;
            let logits = classify(g, &cls, reps)?;
            crate::losses::cross_entropy_loss(g, logits, &labels)
        },
        &x,
        1e-5,
    )
    .unwrap();
    assert!(err < 1e-4, "end-to-end input gradient error {err}");
}

#[test]
fn projector_rows_are_unit_norm() {
    let arch = tiny_arch();
    let params = init_params(&arch, 2).unwrap();
    let images = random_images(&arch, 3, 5);
    let batch: Vec<&crate::data::LabeledImage> = images.iter().collect();
    let mut g = crate::tensor::Graph::new();
    let enc = bind_encoder(&mut g, &params, false);
    let proj = bind_projector(&mut g, &params, false);
    let x = g.leaf(images_to_tensor(&batch).unwrap());
    let reps = encode(&mut g, &enc, x).unwrap();
    let p = project(&mut g, &proj, reps).unwrap();
    assert_eq!(g.shape(p), &[3, arch.projector_out]);
    for row in g.data(p).chunks_exact(arch.projector_out) {
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() <= 1e-9, "norm {norm}");
    }
}

#[test]
fn projector_gradient_passes_finite_differences() {
    let arch = tiny_arch();
    let params = init_params(&arch, 7).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let reps: Vec<f64> = (0..2 * arch.repr_dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    let x = crate::tensor::Tensor::new(reps, vec![2, arch.repr_dim]).unwrap();
    let weights: Vec<f64> = (0..2 * arch.projector_out)
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    let err = finite_difference_check(
        |g, id| {
            let proj = bind_projector(g, &params, false);
            let p = project(g, &proj, id)?;
            let w = g.constant(weights.clone(), vec![2, arch.projector_out])?;
            let pw = g.mul(p, w)?;
            g.sum(pw)
        },
        &x,
        1e-5,
    )
    .unwrap();
    assert!(err < 1e-4, "projector gradient error {err}");
}

#[test]
fn classifier_is_affine() {
    let arch = tiny_arch();
    let params = init_params(&arch, 3).unwrap();
    let d = arch.repr_dim;
    let run = |reps: Vec<f64>| -> Vec<f64> {
        let mut g = crate::tensor::Graph::new();
        let cls = bind_classifier(&mut g, &params, false);
        let r = g.constant(reps, vec![1, d]).unwrap();
        let logits = classify(&mut g, &cls, r).unwrap();
        assert_eq!(g.shape(logits), &[1, arch.class_count]);
        g.data(logits).to_vec()
    };
    let zero = run(vec![0.0; d]);
    // zero representation yields exactly the bias (zero at init)
    assert_eq!(zero, params.classifier.b.data);

    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let r: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
    let f_r = run(r.clone());
    let scaled = run(r.iter().map(|v| 3.0 * v).collect());
    for i in 0..arch.class_count {
        let lhs = scaled[i] - zero[i];
        let rhs = 3.0 * (f_r[i] - zero[i]);
        assert!((lhs - rhs).abs() < 1e-9, "affine identity broke at {i}");
    }
}

#[test]
fn checkpoint_round_trips_bit_exactly() {
    let dir = tempdir().unwrap();
    let path = dir.path().join("m.fctc");
    let params = init_params(&tiny_arch(), 13).unwrap();
    save_checkpoint(&params, &path).unwrap();
    let loaded = load_checkpoint(&path).unwrap();
    assert_eq!(loaded, params);

    let path2 = dir.path().join("m2.fctc");
    save_checkpoint(&loaded, &path2).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
}

#[test]
fn checkpoint_rejects_bad_magic_and_truncation() {
    let dir = tempdir().unwrap();
    let path = dir.path().join("m.fctc");
    let params = init_params(&tiny_arch(), 13).unwrap();
    save_checkpoint(&params, &path).unwrap();

    let bytes = std::fs::read(&path).unwrap();
    let mut bad = bytes.clone();
    bad[0] = b'Z';
    std::fs::write(&path, &bad).unwrap();
    assert!(matches!(
        load_checkpoint(&path),
        Err(crate::Error::BadMagic { .. })
    ));

    std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
    assert!(matches!(
        load_checkpoint(&path),
        Err(crate::Error::Truncated(_))
    ));
}

#[test]
fn residual_extension_keeps_shapes_and_gradients() {
    let arch = ArchitectureConfig {
        input: 16,
        channels: vec![2, 2],
        repr_dim: 4,
        projector_hidden: 4,
        projector_out: 3,
        class_count: 2,
        residual: true,
    };
    let params = init_params(&arch, 21).unwrap();
    // first stage changes channels (1 -> 2): skip projection present;
    // second keeps them: identity skip
    match (&params.encoder.stages[0], &params.encoder.stages[1]) {
        (ConvStage::Residual { skip: Some(_), .. }, ConvStage::Residual { skip: None, .. }) => {}
        other => panic!("unexpected stage layout: {other:?}"),
    }

    let images = random_images(&arch, 1, 31);
    let x = images_to_tensor(&[&images[0]]).unwrap();
    let err = finite_difference_check(
        |g, id| {
            let enc = bind_encoder(g, &params, false);
            let reps = encode(g, &enc, id)?;
            g.sum(reps)
        },
        &x,
        1e-5,
    )
    .unwrap();
    assert!(err < 1e-4, "residual encoder gradient error {err}");

    let dir = tempdir().unwrap();
    let path = dir.path().join("res.fctc");
    save_checkpoint(&params, &path).unwrap();
    assert_eq!(load_checkpoint(&path).unwrap(), params);
}

#[test]
fn arch_validation_catches_bad_dims() {
    let mut arch = tiny_arch();
    arch.repr_dim = 2; // below class_count 3
    assert!(arch.validate().is_err());
    let mut arch = tiny_arch();
    arch.channels.clear();
    assert!(arch.validate().is_err());
    let mut arch = tiny_arch();
    arch.input = 2;
    assert!(arch.validate().is_err());
}
