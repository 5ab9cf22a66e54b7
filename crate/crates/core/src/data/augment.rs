//! Two-view random augmentation: resized crop, horizontal flip, brightness
//! and contrast jitter.
//!
//! Color, saturation, and hue from the usual transform list are identity on
//! single-channel imagery and are therefore omitted rather than invented.
//! The mask is transformed geometrically in lockstep with the pixels so the
//! target-region constraint stays aligned after cropping and flipping.

use super::{quantize, LabeledImage};
use crate::error::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Square source window of a resized crop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct CropWindow {
    pub top: usize,
    pub left: usize,
    pub side: usize,
}

/// One concrete augmentation draw. Applying the same draw twice gives the
/// same output, which is what makes augmentation reproducible per seed.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AugmentDraw {
    pub crop: CropWindow,
    pub flip: bool,
    /// Additive brightness delta, clamped after application.
    pub brightness: f64,
    /// Multiplicative contrast factor about the image mean.
    pub contrast: f64,
}

impl AugmentDraw {
    /// The identity draw for an image of the given side length.
    pub fn identity(side: usize) -> Self {
        AugmentDraw {
            crop: CropWindow {
                top: 0,
                left: 0,
                side,
            },
            flip: false,
            brightness: 0.0,
            contrast: 1.0,
        }
    }

    /// Sample a draw. The crop window is resampled (up to a cap) until it
    /// contains at least one mask pixel, so a crop never removes the whole
    /// target; the fallback is the full window.
    pub fn sample(image: &LabeledImage, rng: &mut ChaCha8Rng) -> Self {
        let h = image.height;
        let mut crop = CropWindow {
            top: 0,
            left: 0,
            side: h,
        };
        for _ in 0..64 {
            let scale = rng.random_range(0.8..=1.0);
            let side = ((h as f64 * scale).round() as usize).clamp(1, h);
            let top = rng.random_range(0..=h - side);
            let left = rng.random_range(0..=image.width - side);
            let candidate = CropWindow { top, left, side };
            if window_hits_mask(image, &candidate) {
                crop = candidate;
                break;
            }
        }
        AugmentDraw {
            crop,
            flip: rng.random_bool(0.5),
            brightness: rng.random_range(-0.2..=0.2),
            contrast: rng.random_range(0.8..=1.25),
        }
    }

    /// Apply geometric then photometric steps; label is unchanged.
    pub fn apply(&self, image: &LabeledImage) -> Result<LabeledImage> {
        let (h, w) = (image.height, image.width);
        let side = self.crop.side as f64;

        let mut pixels = vec![0.0; h * w];
        let mut mask = vec![false; h * w];
        for row in 0..h {
            for col in 0..w {
                let out_col = if self.flip { w - 1 - col } else { col };
                let sy = self.crop.top as f64 + (row as f64 + 0.5) * side / h as f64 - 0.5;
                let sx = self.crop.left as f64 + (col as f64 + 0.5) * side / w as f64 - 0.5;
                pixels[row * w + out_col] = bilinear(image, sy, sx);
                mask[row * w + out_col] = nearest_mask(image, sy, sx);
            }
        }

        let mean = pixels.iter().sum::<f64>() / pixels.len() as f64;
        for p in pixels.iter_mut() {
            let contrasted = mean + self.contrast * (*p - mean);
            *p = quantize((contrasted + self.brightness).clamp(0.0, 1.0));
        }

        LabeledImage::new(h, w, pixels, image.label, mask)
    }
}

fn window_hits_mask(image: &LabeledImage, crop: &CropWindow) -> bool {
    for row in crop.top..crop.top + crop.side {
        for col in crop.left..crop.left + crop.side {
            if image.mask[row * image.width + col] {
                return true;
            }
        }
    }
    false
}

fn bilinear(image: &LabeledImage, y: f64, x: f64) -> f64 {
    let (h, w) = (image.height as isize, image.width as isize);
    let y0 = y.floor();
    let x0 = x.floor();
    let (ty, tx) = (y - y0, x - x0);
    let sample = |r: isize, c: isize| -> f64 {
        let r = r.clamp(0, h - 1) as usize;
        let c = c.clamp(0, w - 1) as usize;
        image.pixels[r * image.width + c]
    };
    let (r0, c0) = (y0 as isize, x0 as isize);
    let top = sample(r0, c0) * (1.0 - tx) + sample(r0, c0 + 1) * tx;
    let bot = sample(r0 + 1, c0) * (1.0 - tx) + sample(r0 + 1, c0 + 1) * tx;
    top * (1.0 - ty) + bot * ty
}

fn nearest_mask(image: &LabeledImage, y: f64, x: f64) -> bool {
    let r = (y.round() as isize).clamp(0, image.height as isize - 1) as usize;
    let c = (x.round() as isize).clamp(0, image.width as isize - 1) as usize;
    image.mask[r * image.width + c]
}

/// Draw and apply one random augmentation; deterministic per seed.
pub fn random_augment(image: &LabeledImage, rng_seed: u64) -> Result<LabeledImage> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    AugmentDraw::sample(image, &mut rng).apply(image)
}
