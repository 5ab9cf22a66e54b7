//! Synthetic SAR-like scenes: labeled grayscale images with target masks,
//! the two-view random augmentation, triple assembly, and the on-disk
//! dataset format.

mod augment;
mod io;
mod scene;
mod triples;

pub use augment::{random_augment, AugmentDraw, CropWindow};
pub use io::{load_dataset, load_triples, save_dataset, save_triples, TripleViews};
pub use scene::{generate_scene, sample_speckle, SceneConfig};
pub use triples::{build_triples, AugmentedTriple, TripleProvenance};

use crate::error::{Error, Result};

/// Minimum mask population for a generated scene: the target must exist and
/// be attackable.
pub const MIN_MASK_PIXELS: usize = 16;

/// Round through f32 so in-memory pixels match the storage format exactly.
pub(crate) fn quantize(v: f64) -> f64 {
    (v as f32) as f64
}

/// A grayscale intensity image with class label and target-region mask.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledImage {
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<f64>,
    pub label: usize,
    pub mask: Vec<bool>,
}

impl LabeledImage {
    pub fn new(
        height: usize,
        width: usize,
        pixels: Vec<f64>,
        label: usize,
        mask: Vec<bool>,
    ) -> Result<Self> {
        if pixels.len() != height * width || mask.len() != height * width {
            return Err(Error::BadShape {
                op: "labeled-image",
                shape: vec![height, width],
                reason: format!("{} pixels / {} mask bits", pixels.len(), mask.len()),
            });
        }
        if let Some(bad) = pixels.iter().find(|v| !v.is_finite() || **v < 0.0 || **v > 1.0) {
            return Err(Error::InvalidArg(format!(
                "pixel value {bad} outside [0, 1]"
            )));
        }
        Ok(LabeledImage {
            height,
            width,
            pixels,
            label,
            mask,
        })
    }

    pub fn mask_pixel_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// Indices of true mask pixels in row-major order.
    pub fn mask_indices(&self) -> Vec<usize> {
        self.mask
            .iter()
            .enumerate()
            .filter_map(|(i, &m)| m.then_some(i))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// A labeled image collection with its generation provenance.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub images: Vec<LabeledImage>,
    pub class_count: usize,
    pub split: Split,
    /// Generator seed; in-memory provenance only, not part of the file format.
    pub seed: u64,
}

impl Dataset {
    /// Per-class image counts.
    pub fn class_histogram(&self) -> Vec<usize> {
        let mut h = vec![0usize; self.class_count];
        for im in &self.images {
            h[im.label] += 1;
        }
        h
    }
}

/// Generate a balanced split with exactly `per_class` images per class.
pub fn generate_dataset(
    class_count: usize,
    per_class: usize,
    cfg: &SceneConfig,
    seed: u64,
    split: Split,
) -> Result<Dataset> {
    if class_count == 0 || per_class == 0 {
        return Err(Error::InvalidArg(
            "class count and per-class count must be positive".into(),
        ));
    }
    let split_tag = match split {
        Split::Train => 0u64,
        Split::Test => 1u64,
    };
    let mut cfg = cfg.clone();
    cfg.class_count = class_count;
    let mut images = Vec::with_capacity(class_count * per_class);
    for class in 0..class_count {
        for k in 0..per_class {
            let s = crate::seed::derive(seed, &[split_tag, class as u64, k as u64]);
            images.push(generate_scene(class, s, &cfg)?);
        }
    }
    Ok(Dataset {
        images,
        class_count,
        split,
        seed,
    })
}

/// Generate a split of `total` images with per-class counts equal within one
/// (exactly equal when `total` divides evenly).
pub fn generate_dataset_of_size(
    class_count: usize,
    total: usize,
    cfg: &SceneConfig,
    seed: u64,
    split: Split,
) -> Result<Dataset> {
    if class_count == 0 || total == 0 {
        return Err(Error::InvalidArg(
            "class count and total must be positive".into(),
        ));
    }
    let base = total / class_count;
    let extra = total % class_count;
    let split_tag = match split {
        Split::Train => 0u64,
        Split::Test => 1u64,
    };
    let mut cfg = cfg.clone();
    cfg.class_count = class_count;
    let mut images = Vec::with_capacity(total);
    for class in 0..class_count {
        let n = base + usize::from(class < extra);
        for k in 0..n {
            let s = crate::seed::derive(seed, &[split_tag, class as u64, k as u64]);
            images.push(generate_scene(class, s, &cfg)?);
        }
    }
    Ok(Dataset {
        images,
        class_count,
        split,
        seed,
    })
}

#[cfg(test)]
mod tests;
