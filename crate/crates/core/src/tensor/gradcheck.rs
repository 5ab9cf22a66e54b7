//! Central-difference gradient verification.

use super::{Graph, Tensor, TensorId};
use crate::error::{Error, Result};

/// Compare the reverse-mode gradient of a scalar-valued function against
/// central finite differences at `x`.
///
/// Returns the maximum over coordinates of
/// `|analytic - central_difference| / max(1, |analytic|)`.
///
/// `f` must be deterministic: it is re-evaluated on a fresh graph for every
/// probe. Any non-finite value or gradient is an error.
pub fn finite_difference_check<F>(f: F, x: &Tensor, step: f64) -> Result<f64>
where
    F: Fn(&mut Graph, TensorId) -> Result<TensorId>,
{
    if !(1e-7..=1e-3).contains(&step) {
        return Err(Error::InvalidArg(format!(
            "finite-difference step {step} outside [1e-7, 1e-3]"
        )));
    }

    let mut g = Graph::new();
    let id = g.leaf(x.clone().with_requires_grad(true));
    let y = f(&mut g, id)?;
    let y_t = g.tensor(y);
    if !y_t.is_scalar() {
        return Err(Error::NonScalarRoot {
            shape: y_t.shape.clone(),
        });
    }
    if !y_t.data[0].is_finite() {
        return Err(Error::NonFinite("finite-difference base value".into()));
    }
    g.backward(y)?;
    let analytic = g
        .grad(id)
        .ok_or_else(|| Error::NonFinite("missing analytic gradient".into()))?
        .to_vec();
    if analytic.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("analytic gradient".into()));
    }

    let probe = |data: Vec<f64>| -> Result<f64> {
        let mut g = Graph::new();
        let id = g.leaf(Tensor::new(data, x.shape.clone())?);
        let y = f(&mut g, id)?;
        let v = g.scalar_value(y);
        if !v.is_finite() {
            return Err(Error::NonFinite("finite-difference probe".into()));
        }
        Ok(v)
    };

    let mut max_rel: f64 = 0.0;
    for i in 0..x.data.len() {
        let mut plus = x.data.clone();
        plus[i] += step;
        let mut minus = x.data.clone();
        minus[i] -= step;
        let fd = (probe(plus)? - probe(minus)?) / (2.0 * step);
        if !fd.is_finite() {
            return Err(Error::NonFinite("central difference".into()));
        }
        let rel = (analytic[i] - fd).abs() / analytic[i].abs().max(1.0);
        max_rel = max_rel.max(rel);
    }
    Ok(max_rel)
}
