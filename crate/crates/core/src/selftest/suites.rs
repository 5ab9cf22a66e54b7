//! Named verification suites behind the `selftest` CLI command and the
//! acceptance tests.

use super::{reference, CheckReport};
use crate::losses;
use crate::tensor::{finite_difference_check, Graph, Tensor, TensorId};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const GRAD_TOLERANCE: f64 = 1e-4;
pub const FD_STEP: f64 = 1e-5;
pub const ORACLE_TOLERANCE: f64 = 1e-8;

fn rand_shape(rng: &mut ChaCha8Rng, rank: usize) -> Vec<usize> {
    (0..rank).map(|_| rng.random_range(1..=8usize)).collect()
}

fn rand_data(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

/// Push every value at least `margin` away from `kink`.
fn with_margin(data: &mut [f64], kink: f64, margin: f64) {
    for v in data.iter_mut() {
        let d = *v - kink;
        if d.abs() < margin {
            *v = kink + if d >= 0.0 { margin } else { -margin };
        }
    }
}

/// Ensure each 2x2 pooling window has a clear maximum so finite differences
/// stay on one linear piece.
fn separate_pool_windows(data: &mut [f64], shape: &[usize]) {
    let (b, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
    for bc in 0..b * c {
        let plane = &mut data[bc * h * w..(bc + 1) * h * w];
        for oh in 0..h / 2 {
            for ow in 0..w / 2 {
                let idx = [
                    (2 * oh) * w + 2 * ow,
                    (2 * oh) * w + 2 * ow + 1,
                    (2 * oh + 1) * w + 2 * ow,
                    (2 * oh + 1) * w + 2 * ow + 1,
                ];
                let mut best = 0;
                for k in 1..4 {
                    if plane[idx[k]] > plane[idx[best]] {
                        best = k;
                    }
                }
                let runner_up = idx
                    .iter()
                    .enumerate()
                    .filter(|(k, _)| *k != best)
                    .map(|(_, &i)| plane[i])
                    .fold(f64::NEG_INFINITY, f64::max);
                if plane[idx[best]] - runner_up < 1e-3 {
                    plane[idx[best]] = runner_up + 2e-3;
                }
            }
        }
    }
}

struct OpCase {
    name: &'static str,
    x: Tensor,
    f: Box<dyn Fn(&mut Graph, TensorId) -> crate::Result<TensorId>>,
}

/// One finite-difference case per differentiable operation and per
/// differentiable input of multi-input operations.
fn op_cases(rng: &mut ChaCha8Rng) -> Vec<OpCase> {
    let mut cases = Vec::new();

    {
        let shape = rand_shape(rng, 2);
        let n: usize = shape.iter().product();
        let other = rand_data(rng, n, -1.0, 1.0);
        let other_shape = shape.clone();
        for (name, which) in [
            ("add", 0),
            ("sub-lhs", 1),
            ("sub-rhs", 2),
            ("elementwise-multiply", 3),
        ] {
            let o = other.clone();
            let os = other_shape.clone();
            let x = Tensor::new(rand_data(rng, n, -1.0, 1.0), shape.clone()).unwrap();
            cases.push(OpCase {
                name,
                x,
                f: Box::new(move |g, id| {
                    let c = g.constant(o.clone(), os.clone())?;
                    let y = match which {
                        0 => g.add(id, c)?,
                        1 => g.sub(id, c)?,
                        2 => g.sub(c, id)?,
                        _ => g.mul(id, c)?,
                    };
                    g.sum(y)
                }),
            });
        }
    }

    {
        let factor = rng.random_range(-2.0..2.0);
        let x = Tensor::new(rand_data(rng, 12, -1.0, 1.0), vec![3, 4]).unwrap();
        cases.push(OpCase {
            name: "scalar-multiply",
            x,
            f: Box::new(move |g, id| {
                let y = g.scalar_mul(id, factor)?;
                g.sum(y)
            }),
        });
    }

    {
        let (m, k, n) = (
            rng.random_range(1..=6usize),
            rng.random_range(1..=6usize),
            rng.random_range(1..=6usize),
        );
        let b = rand_data(rng, k * n, -1.0, 1.0);
        let bt = rand_data(rng, n * k, -1.0, 1.0);
        for (name, trans) in [("matmul-lhs", false), ("matmul-transposed-rhs", true)] {
            let bd = if trans { bt.clone() } else { b.clone() };
            let bs = if trans { vec![n, k] } else { vec![k, n] };
            let x = Tensor::new(rand_data(rng, m * k, -1.0, 1.0), vec![m, k]).unwrap();
            cases.push(OpCase {
                name,
                x,
                f: Box::new(move |g, id| {
                    let c = g.constant(bd.clone(), bs.clone())?;
                    let y = if trans { g.matmul_nt(id, c)? } else { g.matmul(id, c)? };
                    g.sum(y)
                }),
            });
        }
        // gradient with respect to the right operand
        let a = rand_data(rng, m * k, -1.0, 1.0);
        let x = Tensor::new(rand_data(rng, k * n, -1.0, 1.0), vec![k, n]).unwrap();
        cases.push(OpCase {
            name: "matmul-rhs",
            x,
            f: Box::new(move |g, id| {
                let c = g.constant(a.clone(), vec![m, k])?;
                let y = g.matmul(c, id)?;
                g.sum(y)
            }),
        });
    }

    {
        let (b, cin, cout) = (
            rng.random_range(1..=2usize),
            rng.random_range(1..=3usize),
            rng.random_range(1..=3usize),
        );
        let (h, w) = (rng.random_range(4..=7usize), rng.random_range(4..=7usize));
        let stride = rng.random_range(1..=2usize);
        let pad = rng.random_range(0..=1usize);
        let kernel = rand_data(rng, cout * cin * 9, -0.7, 0.7);
        let x = Tensor::new(rand_data(rng, b * cin * h * w, -1.0, 1.0), vec![b, cin, h, w]).unwrap();
        let (ks, xs) = (vec![cout, cin, 3, 3], vec![b, cin, h, w]);
        {
            let kernel = kernel.clone();
            let ks = ks.clone();
            cases.push(OpCase {
                name: "conv2d-input",
                x,
                f: Box::new(move |g, id| {
                    let k = g.constant(kernel.clone(), ks.clone())?;
                    let y = g.conv2d(id, k, stride, pad)?;
                    g.sum(y)
                }),
            });
        }
        let image = rand_data(rng, b * cin * h * w, -1.0, 1.0);
        let xk = Tensor::new(kernel, ks).unwrap();
        cases.push(OpCase {
            name: "conv2d-kernel",
            x: xk,
            f: Box::new(move |g, id| {
                let xi = g.constant(image.clone(), xs.clone())?;
                let y = g.conv2d(xi, id, stride, pad)?;
                g.sum(y)
            }),
        });
    }

    {
        let mut data = rand_data(rng, 18, -1.0, 1.0);
        with_margin(&mut data, 0.0, 0.05);
        let x = Tensor::new(data, vec![3, 6]).unwrap();
        cases.push(OpCase {
            name: "relu",
            x,
            f: Box::new(|g, id| {
                let y = g.relu(id)?;
                g.sum(y)
            }),
        });
    }

    {
        let shape = vec![1, 2, 6, 6];
        let mut data = rand_data(rng, 72, 0.0, 1.0);
        separate_pool_windows(&mut data, &shape);
        let x = Tensor::new(data, shape).unwrap();
        cases.push(OpCase {
            name: "max-pool-2x2",
            x,
            f: Box::new(|g, id| {
                let y = g.max_pool_2x2(id)?;
                g.sum(y)
            }),
        });
    }

    {
        let x = Tensor::new(rand_data(rng, 2 * 2 * 4 * 4, -1.0, 1.0), vec![2, 2, 4, 4]).unwrap();
        cases.push(OpCase {
            name: "global-average-pool",
            x,
            f: Box::new(|g, id| {
                let y = g.global_avg_pool(id)?;
                g.sum(y)
            }),
        });
    }

    {
        let x = Tensor::new(rand_data(rng, 2 * 3 * 4, -1.0, 1.0), vec![2, 3, 4]).unwrap();
        cases.push(OpCase {
            name: "flatten",
            x,
            f: Box::new(|g, id| {
                let y = g.flatten(id)?;
                let sm = g.softmax(y)?;
                g.sum(sm)
            }),
        });
    }

    {
        let (b, din, dout) = (3usize, 4usize, 5usize);
        let w = rand_data(rng, din * dout, -0.8, 0.8);
        let bias = rand_data(rng, dout, -0.3, 0.3);
        let xin = rand_data(rng, b * din, -1.0, 1.0);
        for which in 0..3 {
            let (name, x) = match which {
                0 => ("dense-input", Tensor::new(xin.clone(), vec![b, din]).unwrap()),
                1 => ("dense-weight", Tensor::new(w.clone(), vec![din, dout]).unwrap()),
                _ => ("dense-bias", Tensor::new(bias.clone(), vec![dout]).unwrap()),
            };
            let (w, bias, xin) = (w.clone(), bias.clone(), xin.clone());
            cases.push(OpCase {
                name,
                x,
                f: Box::new(move |g, id| {
                    let (xi, wi, bi) = match which {
                        0 => (
                            id,
                            g.constant(w.clone(), vec![din, dout])?,
                            g.constant(bias.clone(), vec![dout])?,
                        ),
                        1 => (
                            g.constant(xin.clone(), vec![b, din])?,
                            id,
                            g.constant(bias.clone(), vec![dout])?,
                        ),
                        _ => (
                            g.constant(xin.clone(), vec![b, din])?,
                            g.constant(w.clone(), vec![din, dout])?,
                            id,
                        ),
                    };
                    let y = g.dense(xi, wi, bi)?;
                    g.sum(y)
                }),
            });
        }
    }

    {
        // rows kept away from the zero-norm floor
        let (rows, d) = (3usize, 4usize);
        let mut data = rand_data(rng, rows * d, -1.0, 1.0);
        for row in data.chunks_exact_mut(d) {
            let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if n < 0.3 {
                row[0] += 0.5;
            }
        }
        let x = Tensor::new(data, vec![rows, d]).unwrap();
        let weights = rand_data(rng, rows * d, -1.0, 1.0);
        cases.push(OpCase {
            name: "l2-normalize",
            x,
            f: Box::new(move |g, id| {
                let y = g.l2_normalize(id)?;
                let wc = g.constant(weights.clone(), vec![rows, d])?;
                let yw = g.mul(y, wc)?;
                g.sum(yw)
            }),
        });
    }

    {
        let x = Tensor::new(rand_data(rng, 10, -2.0, 2.0), vec![2, 5]).unwrap();
        cases.push(OpCase {
            name: "exp",
            x,
            f: Box::new(|g, id| {
                let y = g.exp(id)?;
                g.sum(y)
            }),
        });
    }

    {
        let x = Tensor::new(rand_data(rng, 10, 0.2, 3.0), vec![2, 5]).unwrap();
        cases.push(OpCase {
            name: "log",
            x,
            f: Box::new(|g, id| {
                let y = g.log(id)?;
                g.sum(y)
            }),
        });
    }

    {
        let x = Tensor::new(rand_data(rng, 12, -1.0, 1.0), vec![3, 4]).unwrap();
        cases.push(OpCase {
            name: "sum",
            x,
            f: Box::new(|g, id| g.sum(id)),
        });
    }

    {
        let x = Tensor::new(rand_data(rng, 12, -1.0, 1.0), vec![3, 4]).unwrap();
        cases.push(OpCase {
            name: "mean",
            x,
            f: Box::new(|g, id| g.mean(id)),
        });
    }

    {
        let (rows, d) = (3usize, 5usize);
        let weights = rand_data(rng, rows * d, -1.0, 1.0);
        let x = Tensor::new(rand_data(rng, rows * d, -2.0, 2.0), vec![rows, d]).unwrap();
        cases.push(OpCase {
            name: "softmax",
            x,
            f: Box::new(move |g, id| {
                let y = g.softmax(id)?;
                let wc = g.constant(weights.clone(), vec![rows, d])?;
                let yw = g.mul(y, wc)?;
                g.sum(yw)
            }),
        });
    }

    {
        let rows_src = rng.random_range(3..=6usize);
        let picks: Vec<usize> = (0..4).map(|_| rng.random_range(0..rows_src)).collect();
        let x = Tensor::new(rand_data(rng, rows_src * 3, -1.0, 1.0), vec![rows_src, 3]).unwrap();
        cases.push(OpCase {
            name: "gather-rows",
            x,
            f: Box::new(move |g, id| {
                let y = g.gather_rows(id, &picks)?;
                g.sum(y)
            }),
        });
    }

    {
        let mut data = rand_data(rng, 14, -0.5, 1.5);
        with_margin(&mut data, 0.0, 0.05);
        with_margin(&mut data, 1.0, 0.05);
        let x = Tensor::new(data, vec![2, 7]).unwrap();
        cases.push(OpCase {
            name: "clamp",
            x,
            f: Box::new(|g, id| {
                let y = g.clamp(id, 0.0, 1.0)?;
                g.sum(y)
            }),
        });
    }

    cases
}

/// Finite-difference every differentiable operation plus both losses over
/// `seeds` random draws. Returns one report per case name with the worst
/// relative error observed.
pub fn gradient_checks(seeds: u64) -> Vec<CheckReport> {
    let mut worst: std::collections::BTreeMap<&'static str, f64> = Default::default();
    let mut failures: Vec<CheckReport> = Vec::new();
    for s in 0..seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(0xFAC7 + s);
        for case in op_cases(&mut rng) {
            match finite_difference_check(case.f.as_ref(), &case.x, FD_STEP) {
                Ok(err) => {
                    let e = worst.entry(case.name).or_insert(0.0);
                    *e = e.max(err);
                }
                Err(e) => failures.push(CheckReport::fail(case.name, e.to_string())),
            }
        }

        // both losses, differentiated end to end
        let mut rng = ChaCha8Rng::seed_from_u64(0x10_55 + s);
        {
            let (b, d) = (6usize, 4usize);
            let labels: Vec<usize> = (0..b).map(|i| i % 3).collect();
            let raw = rand_data(&mut rng, b * d, -1.0, 1.0);
            let x = Tensor::new(raw, vec![b, d]).unwrap();
            let l = labels.clone();
            match finite_difference_check(
                move |g, id| {
                    let n = g.l2_normalize(id)?;
                    losses::supervised_contrastive_loss(g, n, &l, 0.1)
                },
                &x,
                FD_STEP,
            ) {
                Ok(err) => {
                    let e = worst.entry("supervised-contrastive-loss").or_insert(0.0);
                    *e = e.max(err);
                }
                Err(e) => failures.push(CheckReport::fail("supervised-contrastive-loss", e.to_string())),
            }
        }
        {
            let (b, c) = (4usize, 4usize);
            let labels: Vec<usize> = (0..b).map(|_| rng.random_range(0..c)).collect();
            let raw = rand_data(&mut rng, b * c, -2.0, 2.0);
            let x = Tensor::new(raw, vec![b, c]).unwrap();
            match finite_difference_check(
                move |g, id| losses::cross_entropy_loss(g, id, &labels),
                &x,
                FD_STEP,
            ) {
                Ok(err) => {
                    let e = worst.entry("cross-entropy-loss").or_insert(0.0);
                    *e = e.max(err);
                }
                Err(e) => failures.push(CheckReport::fail("cross-entropy-loss", e.to_string())),
            }
        }
    }

    let mut reports: Vec<CheckReport> = worst
        .into_iter()
        .map(|(name, err)| CheckReport::from_bound(name, err, GRAD_TOLERANCE))
        .collect();
    reports.extend(failures);
    reports
}

/// Compare the graph-based contrastive loss against the brute-force oracle
/// on `batches` random batches, plus the exact-zero degenerate case.
pub fn scl_oracle_suite(batches: usize, seed: u64) -> CheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    let mut compared = 0usize;
    while compared < batches {
        let b = rng.random_range(2..=16usize);
        let d = rng.random_range(2..=8usize);
        let c = rng.random_range(2..=4usize);
        let labels: Vec<usize> = (0..b).map(|_| rng.random_range(0..c)).collect();
        let mut data = rand_data(&mut rng, b * d, -1.0, 1.0);
        for row in data.chunks_exact_mut(d) {
            let n = row.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
            for v in row {
                *v /= n;
            }
        }
        let tau = rng.random_range(0.05..1.0);
        let Some(slow) = reference::supervised_contrastive_loss(&data, b, d, &labels, tau) else {
            continue;
        };
        let mut g = Graph::new();
        let r = match g.constant(data, vec![b, d]) {
            Ok(r) => r,
            Err(e) => return CheckReport::fail("scl-oracle", e.to_string()),
        };
        let fast = match losses::supervised_contrastive_loss(&mut g, r, &labels, tau) {
            Ok(id) => g.scalar_value(id),
            Err(e) => return CheckReport::fail("scl-oracle", e.to_string()),
        };
        worst = worst.max((fast - slow).abs());
        compared += 1;
    }

    // two identical same-class samples: the single numerator equals the
    // denominator, so the loss must be exactly zero
    let mut g = Graph::new();
    let r = g.constant(vec![1.0, 0.0, 1.0, 0.0], vec![2, 2]).unwrap();
    let zero = losses::supervised_contrastive_loss(&mut g, r, &[0, 0], 0.1)
        .map(|id| g.scalar_value(id));
    match zero {
        Ok(v) if v == 0.0 => {}
        Ok(v) => return CheckReport::fail("scl-oracle", format!("degenerate case gave {v}, not 0")),
        Err(e) => return CheckReport::fail("scl-oracle", e.to_string()),
    }

    CheckReport::from_bound("scl-oracle", worst, ORACLE_TOLERANCE)
}

/// All runtime suites. Extended by the attack and pipeline modules.
pub fn run_all(seed: u64) -> Vec<CheckReport> {
    let mut reports = gradient_checks(10);
    reports.push(scl_oracle_suite(100, seed));
    reports.extend(crate::attacks::selftest_suite(seed));
    reports.push(crate::pipeline::metrics_identity_suite(seed));
    reports
}
