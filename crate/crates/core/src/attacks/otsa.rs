//! Target-region scatterer attack.
//!
//! The perturbation is a sum of K truncated unit-peak Gaussian kernels with
//! continuous positions and amplitudes. Positions are confined to the target
//! mask: after every ascent step a scatterer whose rounded position leaves
//! the mask is projected to the nearest true mask pixel. The rendered
//! perturbation is exactly zero outside the union of truncation-radius
//! neighborhoods around the scatterers (the dilated mask support).

use super::{Attack, AttackConfig, AttackOutcome, LossScorer, Perturbation};
use crate::data::LabeledImage;
use crate::error::{Error, Result};
use crate::tensor::{Graph, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Scatterer count, kernel width, and amplitude ceiling.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct OtsaParams {
    /// Number of scatterers K.
    pub scatterers: usize,
    /// Gaussian kernel width in pixels.
    pub sigma: f64,
    /// Amplitude ceiling; amplitudes live in `[0, a_max]` since physical
    /// scatterers add return energy.
    pub a_max: f64,
    /// Position ascent magnitude in pixels per iteration.
    pub position_step: f64,
}

impl Default for OtsaParams {
    fn default() -> Self {
        OtsaParams {
            scatterers: 3,
            sigma: 1.0,
            a_max: 0.3,
            position_step: 0.5,
        }
    }
}

impl OtsaParams {
    pub fn validate(&self) -> Result<()> {
        if self.scatterers == 0 {
            return Err(Error::InvalidArg("need at least one scatterer".into()));
        }
        if !(self.sigma > 0.0) {
            return Err(Error::InvalidArg(format!(
                "kernel width {} must be > 0",
                self.sigma
            )));
        }
        if self.a_max < 0.0 {
            return Err(Error::InvalidArg(format!(
                "amplitude ceiling {} must be >= 0",
                self.a_max
            )));
        }
        if !(self.position_step > 0.0) {
            return Err(Error::InvalidArg("position step must be > 0".into()));
        }
        Ok(())
    }

    /// Truncation radius R = ceil(3 sigma).
    pub fn truncation_radius(&self) -> usize {
        (3.0 * self.sigma).ceil() as usize
    }
}

/// One scatterer: continuous position in pixel coordinates plus amplitude.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scatterer {
    pub row: f64,
    pub col: f64,
    pub amplitude: f64,
}

/// The parametric perturbation of one image.
#[derive(Debug, Clone, PartialEq)]
pub struct ScattererSet {
    pub scatterers: Vec<Scatterer>,
    pub sigma: f64,
    pub truncation_radius: usize,
}

impl ScattererSet {
    /// True where some scatterer's truncated footprint covers the pixel.
    pub fn support(&self, height: usize, width: usize) -> Vec<bool> {
        let mut support = vec![false; height * width];
        let r = self.truncation_radius;
        for s in &self.scatterers {
            for_each_footprint_pixel(s, r, height, width, |idx, _d2| {
                support[idx] = true;
            });
        }
        support
    }
}

fn for_each_footprint_pixel(
    s: &Scatterer,
    radius: usize,
    height: usize,
    width: usize,
    mut f: impl FnMut(usize, f64),
) {
    let r = radius as f64;
    let row_lo = ((s.row - r).floor().max(0.0)) as usize;
    let row_hi = ((s.row + r).ceil().min(height as f64 - 1.0)) as usize;
    let col_lo = ((s.col - r).floor().max(0.0)) as usize;
    let col_hi = ((s.col + r).ceil().min(width as f64 - 1.0)) as usize;
    for row in row_lo..=row_hi {
        for col in col_lo..=col_hi {
            let dr = row as f64 - s.row;
            let dc = col as f64 - s.col;
            let d2 = dr * dr + dc * dc;
            if d2 <= r * r {
                f(row * width + col, d2);
            }
        }
    }
}

/// Render the additive perturbation: `sum_k a_k * exp(-d^2 / (2 sigma^2))`
/// truncated at the radius; zero elsewhere.
pub fn render_scatterers(set: &ScattererSet, height: usize, width: usize) -> Perturbation {
    let mut delta = vec![0.0; height * width];
    let two_sigma_sq = 2.0 * set.sigma * set.sigma;
    for s in &set.scatterers {
        if s.amplitude == 0.0 {
            continue;
        }
        for_each_footprint_pixel(s, set.truncation_radius, height, width, |idx, d2| {
            delta[idx] += s.amplitude * (-d2 / two_sigma_sq).exp();
        });
    }
    Perturbation {
        height,
        width,
        delta,
        support: set.support(height, width),
    }
}

/// Nearest true mask pixel under Euclidean distance; ties break in row-major
/// order (the scan visits pixels in that order and keeps strict improvements).
fn nearest_mask_pixel(mask_indices: &[usize], width: usize, row: f64, col: f64) -> (usize, usize) {
    let mut best = (0usize, 0usize);
    let mut best_d2 = f64::INFINITY;
    for &idx in mask_indices {
        let (r, c) = (idx / width, idx % width);
        let dr = r as f64 - row;
        let dc = c as f64 - col;
        let d2 = dr * dr + dc * dc;
        if d2 < best_d2 {
            best_d2 = d2;
            best = (r, c);
        }
    }
    best
}

fn rounded_on_mask(image: &LabeledImage, row: f64, col: f64) -> bool {
    let r = row.round();
    let c = col.round();
    if r < 0.0 || c < 0.0 || r >= image.height as f64 || c >= image.width as f64 {
        return false;
    }
    image.mask[r as usize * image.width + c as usize]
}

/// Gradient of the scorer with respect to scatterer parameters, chained
/// through the clamp and the Gaussian renderer analytically.
pub(crate) struct ParamGradient {
    pub(crate) d_amp: Vec<f64>,
    pub(crate) d_row: Vec<f64>,
    pub(crate) d_col: Vec<f64>,
    loss: f64,
}

#[cfg(test)]
pub(crate) fn parameter_gradient_for_tests(
    scorer: &dyn LossScorer,
    image: &LabeledImage,
    set: &ScattererSet,
    delta: &Perturbation,
) -> Result<ParamGradient> {
    parameter_gradient(scorer, image, set, delta)
}

fn parameter_gradient(
    scorer: &dyn LossScorer,
    image: &LabeledImage,
    set: &ScattererSet,
    delta: &Perturbation,
) -> Result<ParamGradient> {
    let (h, w) = (image.height, image.width);
    let unclamped: Vec<f64> = image
        .pixels
        .iter()
        .zip(&delta.delta)
        .map(|(&x, &d)| x + d)
        .collect();

    let mut g = Graph::new();
    let u = g.leaf(Tensor::new(unclamped, vec![1, 1, h, w])?.with_requires_grad(true));
    let clamped = g.clamp(u, 0.0, 1.0)?;
    let loss = scorer.loss(&mut g, clamped, image.label)?;
    let value = g.scalar_value(loss);
    if !value.is_finite() {
        return Err(Error::NonFinite("scatterer attack objective".into()));
    }
    g.backward(loss)?;
    let grad_pixels = g
        .grad(u)
        .ok_or_else(|| Error::NonFinite("missing pixel gradient".into()))?;

    let k = set.scatterers.len();
    let mut out = ParamGradient {
        d_amp: vec![0.0; k],
        d_row: vec![0.0; k],
        d_col: vec![0.0; k],
        loss: value,
    };
    let sigma_sq = set.sigma * set.sigma;
    for (ki, s) in set.scatterers.iter().enumerate() {
        for_each_footprint_pixel(s, set.truncation_radius, h, w, |idx, d2| {
            let kernel = (-d2 / (2.0 * sigma_sq)).exp();
            let gp = grad_pixels[idx];
            let (r, c) = (idx / w, idx % w);
            out.d_amp[ki] += gp * kernel;
            // d kernel / d row_k = kernel * (p_r - row_k) / sigma^2
            out.d_row[ki] += gp * s.amplitude * kernel * (r as f64 - s.row) / sigma_sq;
            out.d_col[ki] += gp * s.amplitude * kernel * (c as f64 - s.col) / sigma_sq;
        });
    }
    if !out.d_amp.iter().chain(&out.d_row).chain(&out.d_col).all(|v| v.is_finite()) {
        return Err(Error::NonFinite("scatterer parameter gradient".into()));
    }
    Ok(out)
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Objective values bracketing one scatterer-attack run.
#[derive(Debug, Clone, Copy)]
pub struct OtsaTrace {
    /// J at the initial perturbation, before any ascent step.
    pub initial_loss: f64,
    /// J at the returned perturbation.
    pub final_loss: f64,
}

/// Iterative sign-ascent over scatterer positions and amplitudes.
///
/// Initialization draws K distinct mask pixels; amplitudes start at
/// `a_max / 2`. Each iteration takes one step on every parameter, clamps
/// amplitudes into `[0, a_max]`, and projects off-mask positions back to the
/// nearest mask pixel. Returns the rendered perturbation and the final
/// parameters.
pub fn otsa_attack(
    scorer: &dyn LossScorer,
    image: &LabeledImage,
    config: &AttackConfig,
    params: &OtsaParams,
    seed: u64,
) -> Result<(Perturbation, ScattererSet)> {
    let (p, s, _) = otsa_attack_traced(scorer, image, config, params, seed)?;
    Ok((p, s))
}

/// [`otsa_attack`] plus the initial and final objective values.
pub fn otsa_attack_traced(
    scorer: &dyn LossScorer,
    image: &LabeledImage,
    config: &AttackConfig,
    params: &OtsaParams,
    seed: u64,
) -> Result<(Perturbation, ScattererSet, OtsaTrace)> {
    config.validate()?;
    params.validate()?;
    let mask_indices = image.mask_indices();
    if mask_indices.is_empty() {
        return Err(Error::EmptyMask);
    }
    if mask_indices.len() < params.scatterers {
        return Err(Error::InvalidArg(format!(
            "mask has {} pixels, fewer than {} scatterers",
            mask_indices.len(),
            params.scatterers
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picks = mask_indices.clone();
    picks.shuffle(&mut rng);
    let mut set = ScattererSet {
        scatterers: picks[..params.scatterers]
            .iter()
            .map(|&idx| Scatterer {
                row: (idx / image.width) as f64,
                col: (idx % image.width) as f64,
                amplitude: params.a_max / 2.0,
            })
            .collect(),
        sigma: params.sigma,
        truncation_radius: params.truncation_radius(),
    };

    let amp_step = 2.5 * params.a_max / config.steps as f64;
    let mut initial_loss = f64::NAN;
    for iteration in 0..config.steps {
        let delta = render_scatterers(&set, image.height, image.width);
        let grad = parameter_gradient(scorer, image, &set, &delta).map_err(|e| match e {
            Error::NonFinite(what) => Error::NonFinite(format!("{what} at iteration {iteration}")),
            other => other,
        })?;
        if iteration == 0 {
            initial_loss = grad.loss;
        }
        for (ki, s) in set.scatterers.iter_mut().enumerate() {
            s.amplitude = (s.amplitude + amp_step * sign(grad.d_amp[ki])).clamp(0.0, params.a_max);
            s.row += params.position_step * sign(grad.d_row[ki]);
            s.col += params.position_step * sign(grad.d_col[ki]);
            if !rounded_on_mask(image, s.row, s.col) {
                let (r, c) = nearest_mask_pixel(&mask_indices, image.width, s.row, s.col);
                s.row = r as f64;
                s.col = c as f64;
            }
        }
    }

    let perturbation = render_scatterers(&set, image.height, image.width);
    let final_loss = objective_value(scorer, image, &perturbation)?;
    Ok((
        perturbation,
        set,
        OtsaTrace {
            initial_loss,
            final_loss,
        },
    ))
}

/// J at `clamp(x + delta)`, value only.
fn objective_value(
    scorer: &dyn LossScorer,
    image: &LabeledImage,
    delta: &Perturbation,
) -> Result<f64> {
    let adv: Vec<f64> = image
        .pixels
        .iter()
        .zip(&delta.delta)
        .map(|(&x, &d)| (x + d).clamp(0.0, 1.0))
        .collect();
    let mut g = Graph::new();
    let x = g.leaf(Tensor::new(adv, vec![1, 1, image.height, image.width])?);
    let loss = scorer.loss(&mut g, x, image.label)?;
    let v = g.scalar_value(loss);
    if !v.is_finite() {
        return Err(Error::NonFinite("scatterer attack final objective".into()));
    }
    Ok(v)
}

/// The scatterer attack behind the registry interface.
#[derive(Debug, Clone)]
pub struct Otsa {
    pub config: AttackConfig,
    pub params: OtsaParams,
}

impl Attack for Otsa {
    fn name(&self) -> &'static str {
        "otsa"
    }

    fn run(
        &self,
        scorer: &dyn LossScorer,
        image: &LabeledImage,
        seed: u64,
    ) -> Result<AttackOutcome> {
        let (perturbation, scatterers) =
            otsa_attack(scorer, image, &self.config, &self.params, seed)?;
        Ok(AttackOutcome {
            perturbation,
            scatterers: Some(scatterers),
        })
    }
}
