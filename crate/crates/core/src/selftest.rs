//! Runtime verification suites and the naive reference implementations they
//! compare against.
//!
//! The references are deliberately written as direct double loops over the
//! defining formulas, sharing nothing with the graph-based implementations.

pub mod reference {
    //! Independent brute-force oracles.

    /// Supervised contrastive loss as a literal double loop over anchors and
    /// positives. `reps` is row-major `[b, d]` and must be row-normalized.
    /// Returns `None` when no anchor has a positive.
    pub fn supervised_contrastive_loss(
        reps: &[f64],
        b: usize,
        d: usize,
        labels: &[usize],
        tau: f64,
    ) -> Option<f64> {
        let dot = |i: usize, j: usize| -> f64 {
            reps[i * d..(i + 1) * d]
                .iter()
                .zip(&reps[j * d..(j + 1) * d])
                .map(|(a, b)| a * b)
                .sum()
        };
        let mut total = 0.0;
        let mut anchors = 0usize;
        for i in 0..b {
            let positives: Vec<usize> =
                (0..b).filter(|&p| p != i && labels[p] == labels[i]).collect();
            if positives.is_empty() {
                continue;
            }
            let mut denom = 0.0;
            for a in 0..b {
                if a != i {
                    denom += (dot(i, a) / tau).exp();
                }
            }
            let mut inner = 0.0;
            for &p in &positives {
                inner += ((dot(i, p) / tau).exp() / denom).ln();
            }
            total += -inner / positives.len() as f64;
            anchors += 1;
        }
        if anchors == 0 {
            None
        } else {
            Some(total / anchors as f64)
        }
    }

    /// Per-sample softmax cross-entropy, averaged.
    pub fn cross_entropy(logits: &[f64], b: usize, c: usize, labels: &[usize]) -> f64 {
        let mut total = 0.0;
        for i in 0..b {
            let row = &logits[i * c..(i + 1) * c];
            let denom: f64 = row.iter().map(|v| v.exp()).sum();
            total += -(row[labels[i]].exp() / denom).ln();
        }
        total / b as f64
    }
}

/// Outcome of one named check.
#[derive(Debug, Clone)]
pub struct CheckReport {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl CheckReport {
    fn pass(name: &'static str, detail: String) -> Self {
        CheckReport {
            name,
            passed: true,
            detail,
        }
    }
    fn fail(name: &'static str, detail: String) -> Self {
        CheckReport {
            name,
            passed: false,
            detail,
        }
    }

    fn from_bound(name: &'static str, worst: f64, bound: f64) -> Self {
        if worst < bound {
            Self::pass(name, format!("max error {worst:.3e} < {bound:.1e}"))
        } else {
            Self::fail(name, format!("max error {worst:.3e} >= {bound:.1e}"))
        }
    }
}

mod suites;
pub use suites::{gradient_checks, run_all, scl_oracle_suite, FD_STEP, GRAD_TOLERANCE};
