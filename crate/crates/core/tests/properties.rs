//! Property tests for the core invariants.

use factual_core::attacks::project_linf;
use factual_core::data::{load_dataset, save_dataset, Dataset, LabeledImage, Split};
use factual_core::losses::supervised_contrastive_loss;
use factual_core::tensor::Graph;
use proptest::prelude::*;

fn pixel_vec(n: usize) -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(0.0f64..=1.0, n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// The L-infinity-ball-intersect-box projection is idempotent and never
    /// increases the per-coordinate distance to the origin.
    #[test]
    fn projection_is_idempotent_and_contractive(
        origin in pixel_vec(24),
        candidate in proptest::collection::vec(-0.5f64..=1.5, 24),
        epsilon in 0.0f64..=0.4,
    ) {
        let once = project_linf(&candidate, &origin, epsilon);
        let twice = project_linf(&once, &origin, epsilon);
        prop_assert_eq!(&once, &twice);
        for ((&c, &x), &y) in candidate.iter().zip(&origin).zip(&once) {
            prop_assert!((y - x).abs() <= (c - x).abs() + 1e-15);
            prop_assert!((y - x).abs() <= epsilon + 1e-15);
            prop_assert!((0.0..=1.0).contains(&y));
        }
    }

    /// Dataset files survive a save/load/save cycle bit-for-bit, whatever
    /// the image contents.
    #[test]
    fn dataset_files_round_trip(
        seed_pixels in proptest::collection::vec(pixel_vec(8 * 8), 1..5),
        labels in proptest::collection::vec(0usize..3, 1..5),
        test_split in any::<bool>(),
    ) {
        let n = seed_pixels.len().min(labels.len());
        let images: Vec<LabeledImage> = seed_pixels
            .into_iter()
            .take(n)
            .zip(labels)
            .enumerate()
            .map(|(i, (px, label))| {
                // quantize through the storage precision first
                let px: Vec<f64> = px.iter().map(|&v| (v as f32) as f64).collect();
                let mut mask = vec![false; 64];
                mask[i % 64] = true;
                LabeledImage::new(8, 8, px, label, mask).unwrap()
            })
            .collect();
        let ds = Dataset {
            images,
            class_count: 3,
            split: if test_split { Split::Test } else { Split::Train },
            seed: 0,
        };
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.fctd");
        let p2 = dir.path().join("b.fctd");
        save_dataset(&ds, &p1).unwrap();
        let loaded = load_dataset(&p1).unwrap();
        prop_assert_eq!(&loaded.images, &ds.images);
        prop_assert_eq!(loaded.split, ds.split);
        save_dataset(&loaded, &p2).unwrap();
        prop_assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    /// Reordering a contrastive batch never changes the loss.
    #[test]
    fn scl_is_permutation_invariant(
        raw in proptest::collection::vec(-1.0f64..=1.0, 5 * 3),
        labels in proptest::collection::vec(0usize..2, 5),
        perm_seed in any::<u64>(),
    ) {
        let (b, d) = (5usize, 3usize);
        prop_assume!(labels.iter().any(|&l| l == 0) && labels.iter().any(|&l| l == 1));
        let mut reps = raw;
        for row in reps.chunks_exact_mut(d) {
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            prop_assume!(norm > 1e-3);
            for v in row {
                *v /= norm;
            }
        }
        let value = |data: &[f64], labels: &[usize]| -> f64 {
            let mut g = Graph::new();
            let r = g.constant(data.to_vec(), vec![b, d]).unwrap();
            let l = supervised_contrastive_loss(&mut g, r, labels, 0.2).unwrap();
            g.scalar_value(l)
        };
        let base = value(&reps, &labels);

        // derive a permutation from the seed
        let mut order: Vec<usize> = (0..b).collect();
        let mut s = perm_seed;
        for i in (1..b).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            order.swap(i, (s >> 33) as usize % (i + 1));
        }
        let mut preps = vec![0.0; b * d];
        let mut plabels = vec![0usize; b];
        for (dst, &src) in order.iter().enumerate() {
            preps[dst * d..(dst + 1) * d].copy_from_slice(&reps[src * d..(src + 1) * d]);
            plabels[dst] = labels[src];
        }
        let permuted = value(&preps, &plabels);
        prop_assert!((base - permuted).abs() < 1e-12, "{} vs {}", base, permuted);
    }

    /// Speckle intensities are nonnegative and images built from them stay
    /// inside the pixel range.
    #[test]
    fn generated_scenes_always_validate(seed in any::<u64>(), class in 0usize..4) {
        let cfg = factual_core::data::SceneConfig {
            size: 24,
            ..Default::default()
        };
        let im = factual_core::data::generate_scene(class, seed, &cfg).unwrap();
        prop_assert!(im.pixels.iter().all(|&p| (0.0..=1.0).contains(&p)));
        prop_assert!(im.mask_pixel_count() >= 16);
        prop_assert_eq!(im.label, class);
    }
}
