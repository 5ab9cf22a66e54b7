use super::scene::MASK_THRESHOLD;
use super::*;
use crate::attacks::{AttackConfig, LossMode, OtsaParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tempfile::tempdir;

fn small_cfg() -> SceneConfig {
    SceneConfig {
        size: 32,
        ..SceneConfig::default()
    }
}

#[test]
fn scene_generation_is_deterministic() {
    let cfg = small_cfg();
    let a = generate_scene(2, 99, &cfg).unwrap();
    let b = generate_scene(2, 99, &cfg).unwrap();
    assert_eq!(a, b);
    let c = generate_scene(2, 100, &cfg).unwrap();
    assert_ne!(a.pixels, c.pixels);
}

#[test]
fn scene_rejects_tiny_geometry() {
    let cfg = SceneConfig {
        size: 8,
        ..SceneConfig::default()
    };
    assert!(generate_scene(0, 1, &cfg).is_err());
}

#[test]
fn scene_rejects_class_out_of_range() {
    assert!(matches!(
        generate_scene(4, 1, &small_cfg()),
        Err(crate::Error::LabelOutOfRange { .. })
    ));
}

#[test]
fn speckle_moments_match_gamma_model() {
    // gamma(L, 1/L): mean 1, variance 1/L
    for looks in [1.0, 4.0, 9.0] {
        let samples = generate_speckle_sample(looks);
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let var = samples.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        assert!((mean - 1.0).abs() < 0.02, "looks {looks}: mean {mean}");
        let expected = 1.0 / looks;
        assert!(
            (var - expected).abs() < 0.05 * expected,
            "looks {looks}: variance {var} vs {expected}"
        );
    }
}

fn generate_speckle_sample(looks: f64) -> Vec<f64> {
    super::scene::sample_speckle(looks, 100_000, 7)
}

#[test]
fn masks_are_populated_and_inside_target_bounding_box() {
    let cfg = small_cfg();
    for class in 0..4 {
        for s in 0..5 {
            let im = generate_scene(class, s, &cfg).unwrap();
            let count = im.mask_pixel_count();
            assert!(count >= MIN_MASK_PIXELS, "class {class} seed {s}: {count}");
        }
    }
}

#[test]
fn mask_threshold_constant_matches_contract() {
    assert_eq!(MASK_THRESHOLD, 0.15);
}

#[test]
fn higher_class_ids_reuse_shape_families_at_reduced_scale() {
    let cfg = SceneConfig {
        size: 32,
        class_count: 8,
        ..SceneConfig::default()
    };
    let small = generate_scene(4, 3, &cfg).unwrap();
    assert!(small.mask_pixel_count() >= MIN_MASK_PIXELS);
}

#[test]
fn augmentation_is_deterministic_per_seed() {
    let im = generate_scene(1, 5, &small_cfg()).unwrap();
    let a = random_augment(&im, 17).unwrap();
    let b = random_augment(&im, 17).unwrap();
    assert_eq!(a, b);
}

#[test]
fn augmented_mask_keeps_target_pixels() {
    let im = generate_scene(0, 11, &small_cfg()).unwrap();
    for s in 0..20 {
        let aug = random_augment(&im, s).unwrap();
        assert!(aug.mask_pixel_count() > 0, "seed {s} lost the target");
        assert_eq!(aug.label, im.label);
    }
}

#[test]
fn brightness_only_draw_shifts_a_constant_image() {
    let im = LabeledImage::new(16, 16, vec![0.5; 256], 0, vec![true; 256]).unwrap();
    let draw = AugmentDraw {
        brightness: 0.1,
        ..AugmentDraw::identity(16)
    };
    let out = draw.apply(&im).unwrap();
    let expected = quantize(0.6);
    assert!(out.pixels.iter().all(|&p| p == expected));
}

#[test]
fn contrast_draw_scales_about_the_mean() {
    let mut pixels = vec![0.4; 64];
    pixels[0] = 0.6;
    let im = LabeledImage::new(8, 8, pixels, 0, vec![true; 64]).unwrap();
    let mean = (0.6 + 63.0 * 0.4) / 64.0;
    let draw = AugmentDraw {
        contrast: 1.2,
        ..AugmentDraw::identity(8)
    };
    let out = draw.apply(&im).unwrap();
    assert!((out.pixels[0] - quantize(mean + 1.2 * (0.6 - mean))).abs() < 1e-7);
    assert!((out.pixels[1] - quantize(mean + 1.2 * (0.4 - mean))).abs() < 1e-7);
}

#[test]
fn identity_draw_is_identity() {
    let im = generate_scene(3, 2, &small_cfg()).unwrap();
    let out = AugmentDraw::identity(32).apply(&im).unwrap();
    assert_eq!(out, im);
}

#[test]
fn generated_split_is_balanced() {
    let ds = generate_dataset_of_size(4, 800, &small_cfg(), 1, Split::Train).unwrap();
    assert_eq!(ds.class_histogram(), vec![200, 200, 200, 200]);
    let ds = generate_dataset_of_size(3, 10, &small_cfg(), 1, Split::Train).unwrap();
    let hist = ds.class_histogram();
    assert_eq!(hist.iter().sum::<usize>(), 10);
    assert!(hist.iter().max().unwrap() - hist.iter().min().unwrap() <= 1);
}

#[test]
fn dataset_file_round_trips_field_by_field_and_bitwise() {
    let dir = tempdir().unwrap();
    let path = dir.path().join("t.fctd");
    let ds = generate_dataset(3, 4, &small_cfg(), 5, Split::Test).unwrap();
    save_dataset(&ds, &path).unwrap();
    let loaded = load_dataset(&path).unwrap();
    assert_eq!(loaded.images, ds.images);
    assert_eq!(loaded.class_count, ds.class_count);
    assert_eq!(loaded.split, Split::Test);

    let path2 = dir.path().join("t2.fctd");
    save_dataset(&loaded, &path2).unwrap();
    assert_eq!(
        std::fs::read(&path).unwrap(),
        std::fs::read(&path2).unwrap()
    );
}

#[test]
fn corrupt_magic_is_rejected() {
    let dir = tempdir().unwrap();
    let path = dir.path().join("bad.fctd");
    let ds = generate_dataset(2, 2, &small_cfg(), 5, Split::Train).unwrap();
    save_dataset(&ds, &path).unwrap();
    let mut bytes = std::fs::read(&path).unwrap();
    bytes[0] = b'X';
    std::fs::write(&path, bytes).unwrap();
    assert!(matches!(
        load_dataset(&path),
        Err(crate::Error::BadMagic { .. })
    ));
}

#[test]
fn label_out_of_range_is_rejected() {
    let dir = tempdir().unwrap();
    let path = dir.path().join("label.fctd");
    let ds = generate_dataset(2, 2, &small_cfg(), 5, Split::Train).unwrap();
    save_dataset(&ds, &path).unwrap();
    let mut bytes = std::fs::read(&path).unwrap();
    // first record's label field sits right after the 20-byte header
    bytes[20] = 9;
    bytes[21] = 0;
    std::fs::write(&path, bytes).unwrap();
    assert!(matches!(
        load_dataset(&path),
        Err(crate::Error::LabelOutOfRange { label: 9, classes: 2 })
    ));
}

#[test]
fn truncated_file_is_rejected() {
    let dir = tempdir().unwrap();
    let path = dir.path().join("trunc.fctd");
    let ds = generate_dataset(2, 2, &small_cfg(), 5, Split::Train).unwrap();
    save_dataset(&ds, &path).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() - 7]).unwrap();
    assert!(matches!(
        load_dataset(&path),
        Err(crate::Error::Truncated(_))
    ));
}

#[test]
fn version_mismatch_is_rejected() {
    let dir = tempdir().unwrap();
    let path = dir.path().join("ver.fctd");
    let ds = generate_dataset(2, 2, &small_cfg(), 5, Split::Train).unwrap();
    save_dataset(&ds, &path).unwrap();
    let mut bytes = std::fs::read(&path).unwrap();
    bytes[4] = 42;
    std::fs::write(&path, bytes).unwrap();
    assert!(matches!(
        load_dataset(&path),
        Err(crate::Error::BadVersion { found: 42, .. })
    ));
}

fn zero_budget_attacks() -> (AttackConfig, AttackConfig, OtsaParams) {
    let img = AttackConfig {
        epsilon: 0.0,
        steps: 2,
        step_size: None,
        random_start: true,
        rng_seed: 0,
        loss_mode: LossMode::Classifier,
    };
    let obj = AttackConfig {
        epsilon: 0.0,
        steps: 3,
        ..img.clone()
    };
    let otsa = OtsaParams {
        a_max: 0.0,
        ..OtsaParams::default()
    };
    (img, obj, otsa)
}

struct ZeroScorer;
impl crate::attacks::LossScorer for ZeroScorer {
    fn loss(
        &self,
        g: &mut crate::tensor::Graph,
        image: crate::tensor::TensorId,
        _label: usize,
    ) -> crate::Result<crate::tensor::TensorId> {
        g.mean(image)
    }
}

#[test]
fn zero_budget_triples_reproduce_their_views() {
    let ds = generate_dataset(2, 3, &small_cfg(), 3, Split::Train).unwrap();
    let (img, obj, otsa) = zero_budget_attacks();
    let triples = build_triples(&ds.images, &ZeroScorer, &img, &obj, &otsa, 9, true).unwrap();
    assert_eq!(triples.len(), ds.images.len());
    for t in &triples {
        assert_eq!(t.z_img.pixels, t.view1.pixels);
        assert_eq!(t.z_obj.pixels, t.view2.pixels);
        let labels = [t.clean.label, t.view1.label, t.view2.label, t.z_img.label, t.z_obj.label];
        assert!(labels.iter().all(|&l| l == t.clean.label));
    }
}

#[test]
fn one_hundred_originals_flatten_to_three_hundred_views() {
    let ds = generate_dataset(2, 50, &small_cfg(), 6, Split::Train).unwrap();
    assert_eq!(ds.images.len(), 100);
    let (img, obj, otsa) = zero_budget_attacks();
    let triples = build_triples(&ds.images, &ZeroScorer, &img, &obj, &otsa, 1, true).unwrap();
    let flattened: usize = triples.iter().map(|t| t.views().len()).sum();
    assert_eq!(flattened, 300);
}

#[test]
fn triples_keep_budget_and_support_invariants() {
    let ds = generate_dataset(2, 4, &small_cfg(), 8, Split::Train).unwrap();
    let img = AttackConfig {
        epsilon: 0.05,
        steps: 3,
        step_size: None,
        random_start: true,
        rng_seed: 0,
        loss_mode: LossMode::Classifier,
    };
    let obj = AttackConfig {
        steps: 4,
        ..img.clone()
    };
    let otsa = OtsaParams::default();
    let triples = build_triples(&ds.images, &ZeroScorer, &img, &obj, &otsa, 4, true).unwrap();
    for t in &triples {
        for (z, v) in t.z_img.pixels.iter().zip(&t.view1.pixels) {
            assert!((z - v).abs() <= img.epsilon + 1e-12);
        }
        let support = t.scatterers.support(t.view2.height, t.view2.width);
        for (i, (&z, &v)) in t.z_obj.pixels.iter().zip(&t.view2.pixels).enumerate() {
            if !support[i] {
                assert!(z == v, "pixel {i} changed outside the dilated mask support");
            }
        }
    }
}

#[test]
fn triples_round_trip_through_the_triple_file() {
    let dir = tempdir().unwrap();
    let path = dir.path().join("triples.fctd");
    let ds = generate_dataset(2, 3, &small_cfg(), 21, Split::Train).unwrap();
    let (img, obj, otsa) = zero_budget_attacks();
    let triples = build_triples(&ds.images, &ZeroScorer, &img, &obj, &otsa, 2, true).unwrap();
    save_triples(&triples, ds.class_count, &path).unwrap();
    let loaded = load_triples(&path).unwrap();
    assert_eq!(loaded.class_count, 2);
    assert_eq!(loaded.clean.len(), ds.images.len());
    for (a, b) in loaded.clean.iter().zip(triples.iter().map(|t| &t.clean)) {
        assert_eq!(a, b);
    }
    // z-views pass through f32 quantization on save
    for (a, b) in loaded.z_obj.iter().zip(triples.iter().map(|t| &t.z_obj)) {
        for (&x, &y) in a.pixels.iter().zip(&b.pixels) {
            assert_eq!(x, quantize(y));
        }
    }

    // file-level bitwise round trip
    let path2 = dir.path().join("triples2.fctd");
    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path2, &bytes).unwrap();
    let again = load_triples(&path2).unwrap();
    assert_eq!(again.clean, loaded.clean);
    assert_eq!(again.z_img, loaded.z_img);
}

#[test]
fn plain_loader_rejects_triple_files_and_vice_versa() {
    let dir = tempdir().unwrap();
    let ds = generate_dataset(2, 2, &small_cfg(), 5, Split::Train).unwrap();
    let plain = dir.path().join("plain.fctd");
    save_dataset(&ds, &plain).unwrap();
    assert!(load_triples(&plain).is_err());

    let (img, obj, otsa) = zero_budget_attacks();
    let triples = build_triples(&ds.images, &ZeroScorer, &img, &obj, &otsa, 2, false).unwrap();
    let tfile = dir.path().join("t.fctd");
    save_triples(&triples, 2, &tfile).unwrap();
    assert!(load_dataset(&tfile).is_err());
}

#[test]
fn labeled_image_rejects_out_of_range_pixels() {
    assert!(LabeledImage::new(2, 2, vec![0.0, 0.5, 1.5, 1.0], 0, vec![false; 4]).is_err());
    assert!(LabeledImage::new(2, 2, vec![0.0, f64::NAN, 0.5, 1.0], 0, vec![false; 4]).is_err());
}

#[test]
fn quantization_keeps_pixels_on_the_storage_grid() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let cfg = small_cfg();
    let im = generate_scene(rng.random_range(0..4), 77, &cfg).unwrap();
    for &p in &im.pixels {
        assert_eq!(p, quantize(p));
    }
    let aug = random_augment(&im, 3).unwrap();
    for &p in &aug.pixels {
        assert_eq!(p, quantize(p));
    }
}
