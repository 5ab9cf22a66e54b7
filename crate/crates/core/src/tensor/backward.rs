//! Reverse sweep: one visit per node in reverse topological order.

use super::kernels;
use super::{Aux, Graph, OpKind, TensorId, L2_NORM_FLOOR};
use crate::error::{Error, Result};

impl Graph {
    /// Populate `grad` on every tensor that requires it with dRoot/dTensor.
    ///
    /// The root must be scalar-shaped. Gradients accumulate additively across
    /// fan-out, and across repeated backward calls unless the graph was
    /// created single-use.
    pub fn backward(&mut self, root: TensorId) -> Result<()> {
        if self.consumed {
            return Err(Error::GraphConsumed);
        }
        let root_t = &self.nodes[root.0].tensor;
        if !root_t.is_scalar() {
            return Err(Error::NonScalarRoot {
                shape: root_t.shape.clone(),
            });
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; n];
        if self.nodes[root.0].tensor.requires_grad {
            grads[root.0] = Some(vec![1.0]);
        }

        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads)?;
            // keep the node's own gradient for inspection / accumulation
            grads[i] = Some(g);
        }

        for (node, g) in self.nodes.iter_mut().zip(grads) {
            if let Some(g) = g {
                match node.tensor.grad.as_mut() {
                    Some(existing) => {
                        for (e, v) in existing.iter_mut().zip(&g) {
                            *e += v;
                        }
                    }
                    None => node.tensor.grad = Some(g),
                }
            }
        }
        if self.is_single_use() {
            self.consumed = true;
        }
        Ok(())
    }

    fn add_into(
        grads: &mut [Option<Vec<f64>>],
        nodes: &[super::Node],
        id: TensorId,
        contribution: &[f64],
    ) {
        let slot = &mut grads[id.0];
        match slot {
            Some(buf) => {
                for (b, &c) in buf.iter_mut().zip(contribution) {
                    *b += c;
                }
            }
            None => {
                debug_assert_eq!(contribution.len(), nodes[id.0].tensor.numel());
                *slot = Some(contribution.to_vec());
            }
        }
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut Vec<Option<Vec<f64>>>) -> Result<()> {
        let node = &self.nodes[i];
        let parents = &node.parents;
        let needs = |id: TensorId| self.nodes[id.0].tensor.requires_grad;
        match node.op {
            OpKind::Leaf => {}
            OpKind::Add => {
                for &p in parents {
                    if needs(p) {
                        Self::add_into(grads, &self.nodes, p, g);
                    }
                }
            }
            OpKind::Sub => {
                if needs(parents[0]) {
                    Self::add_into(grads, &self.nodes, parents[0], g);
                }
                if needs(parents[1]) {
                    let neg: Vec<f64> = g.iter().map(|v| -v).collect();
                    Self::add_into(grads, &self.nodes, parents[1], &neg);
                }
            }
            OpKind::Mul => {
                let (a, b) = (parents[0], parents[1]);
                if needs(a) {
                    let da: Vec<f64> = g
                        .iter()
                        .zip(&self.nodes[b.0].tensor.data)
                        .map(|(g, v)| g * v)
                        .collect();
                    Self::add_into(grads, &self.nodes, a, &da);
                }
                if needs(b) {
                    let db: Vec<f64> = g
                        .iter()
                        .zip(&self.nodes[a.0].tensor.data)
                        .map(|(g, v)| g * v)
                        .collect();
                    Self::add_into(grads, &self.nodes, b, &db);
                }
            }
            OpKind::ScalarMul { factor } => {
                if needs(parents[0]) {
                    let d: Vec<f64> = g.iter().map(|v| v * factor).collect();
                    Self::add_into(grads, &self.nodes, parents[0], &d);
                }
            }
            OpKind::MatMul { transpose_rhs } => {
                let (a, b) = (parents[0], parents[1]);
                let ta = &self.nodes[a.0].tensor;
                let tb = &self.nodes[b.0].tensor;
                let (m, k) = (ta.shape[0], ta.shape[1]);
                let n = if transpose_rhs { tb.shape[0] } else { tb.shape[1] };
                if needs(a) {
                    let mut da = vec![0.0; m * k];
                    if transpose_rhs {
                        // out = a * b^T, b: [n,k]  =>  da = g * b
                        kernels::mm_nn(g, &tb.data, m, n, k, &mut da);
                    } else {
                        // da = g * b^T, b: [k,n]
                        kernels::mm_nt(g, &tb.data, m, n, k, &mut da);
                    }
                    Self::add_into(grads, &self.nodes, a, &da);
                }
                if needs(b) {
                    if transpose_rhs {
                        // db[j,p] = sum_i g[i,j] a[i,p]
                        let mut db = vec![0.0; n * k];
                        kernels::mm_tn(g, &ta.data, n, m, k, &mut db);
                        Self::add_into(grads, &self.nodes, b, &db);
                    } else {
                        // db[p,j] = sum_i a[i,p] g[i,j]
                        let mut db = vec![0.0; k * n];
                        kernels::mm_tn(&ta.data, g, k, m, n, &mut db);
                        Self::add_into(grads, &self.nodes, b, &db);
                    }
                }
            }
            OpKind::Conv2d { stride, pad } => {
                let (x, k) = (parents[0], parents[1]);
                let tx = &self.nodes[x.0].tensor;
                let tk = &self.nodes[k.0].tensor;
                let (b, cin, h, w) = (tx.shape[0], tx.shape[1], tx.shape[2], tx.shape[3]);
                let (cout, kh, kw) = (tk.shape[0], tk.shape[2], tk.shape[3]);
                if needs(x) {
                    let mut dx = vec![0.0; tx.numel()];
                    kernels::conv2d_backward_input(
                        g, &tk.data, b, cin, h, w, cout, kh, kw, stride, pad, &mut dx,
                    );
                    Self::add_into(grads, &self.nodes, x, &dx);
                }
                if needs(k) {
                    let mut dk = vec![0.0; tk.numel()];
                    kernels::conv2d_backward_kernel(
                        g, &tx.data, b, cin, h, w, cout, kh, kw, stride, pad, &mut dk,
                    );
                    Self::add_into(grads, &self.nodes, k, &dk);
                }
            }
            OpKind::Relu => {
                if needs(parents[0]) {
                    let x = &self.nodes[parents[0].0].tensor.data;
                    let d: Vec<f64> = g
                        .iter()
                        .zip(x)
                        .map(|(g, &v)| if v > 0.0 { *g } else { 0.0 })
                        .collect();
                    Self::add_into(grads, &self.nodes, parents[0], &d);
                }
            }
            OpKind::MaxPool2x2 => {
                if needs(parents[0]) {
                    let Aux::PoolArgmax(argmax) = &node.aux else {
                        unreachable!("pool node carries argmax")
                    };
                    let mut d = vec![0.0; self.nodes[parents[0].0].tensor.numel()];
                    for (&src, &gv) in argmax.iter().zip(g) {
                        d[src] += gv;
                    }
                    Self::add_into(grads, &self.nodes, parents[0], &d);
                }
            }
            OpKind::GlobalAvgPool => {
                if needs(parents[0]) {
                    let tx = &self.nodes[parents[0].0].tensor;
                    let hw = tx.shape[2] * tx.shape[3];
                    let mut d = vec![0.0; tx.numel()];
                    for (chunk, &gv) in d.chunks_exact_mut(hw).zip(g) {
                        let v = gv / hw as f64;
                        for c in chunk {
                            *c = v;
                        }
                    }
                    Self::add_into(grads, &self.nodes, parents[0], &d);
                }
            }
            OpKind::Flatten => {
                if needs(parents[0]) {
                    Self::add_into(grads, &self.nodes, parents[0], g);
                }
            }
            OpKind::Dense => {
                let (x, w, bias) = (parents[0], parents[1], parents[2]);
                let tx = &self.nodes[x.0].tensor;
                let tw = &self.nodes[w.0].tensor;
                let (bsz, din, dout) = (tx.shape[0], tx.shape[1], tw.shape[1]);
                if needs(x) {
                    let mut dx = vec![0.0; bsz * din];
                    kernels::mm_nt(g, &tw.data, bsz, dout, din, &mut dx);
                    Self::add_into(grads, &self.nodes, x, &dx);
                }
                if needs(w) {
                    let mut dw = vec![0.0; din * dout];
                    kernels::mm_tn(&tx.data, g, din, bsz, dout, &mut dw);
                    Self::add_into(grads, &self.nodes, w, &dw);
                }
                if needs(bias) {
                    let mut db = vec![0.0; dout];
                    for row in g.chunks_exact(dout) {
                        for (d, &gv) in db.iter_mut().zip(row) {
                            *d += gv;
                        }
                    }
                    Self::add_into(grads, &self.nodes, bias, &db);
                }
            }
            OpKind::L2Normalize => {
                if needs(parents[0]) {
                    let tx = &self.nodes[parents[0].0].tensor;
                    let ty = &node.tensor;
                    let d = *tx.shape.last().unwrap();
                    let mut dx = vec![0.0; tx.numel()];
                    for ((dv, v), (y, gr)) in dx
                        .chunks_exact_mut(d)
                        .zip(tx.data.chunks_exact(d))
                        .zip(ty.data.chunks_exact(d).zip(g.chunks_exact(d)))
                    {
                        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                        if norm > L2_NORM_FLOOR {
                            let dot: f64 = gr.iter().zip(y).map(|(a, b)| a * b).sum();
                            for ((o, &gi), &yi) in dv.iter_mut().zip(gr).zip(y) {
                                *o = (gi - yi * dot) / norm;
                            }
                        } else {
                            for (o, &gi) in dv.iter_mut().zip(gr) {
                                *o = gi / L2_NORM_FLOOR;
                            }
                        }
                    }
                    Self::add_into(grads, &self.nodes, parents[0], &dx);
                }
            }
            OpKind::Exp => {
                if needs(parents[0]) {
                    let y = &node.tensor.data;
                    let d: Vec<f64> = g.iter().zip(y).map(|(g, y)| g * y).collect();
                    Self::add_into(grads, &self.nodes, parents[0], &d);
                }
            }
            OpKind::Log => {
                if needs(parents[0]) {
                    let x = &self.nodes[parents[0].0].tensor.data;
                    let d: Vec<f64> = g.iter().zip(x).map(|(g, x)| g / x).collect();
                    Self::add_into(grads, &self.nodes, parents[0], &d);
                }
            }
            OpKind::Sum => {
                if needs(parents[0]) {
                    let n = self.nodes[parents[0].0].tensor.numel();
                    let d = vec![g[0]; n];
                    Self::add_into(grads, &self.nodes, parents[0], &d);
                }
            }
            OpKind::Mean => {
                if needs(parents[0]) {
                    let n = self.nodes[parents[0].0].tensor.numel();
                    let d = vec![g[0] / n as f64; n];
                    Self::add_into(grads, &self.nodes, parents[0], &d);
                }
            }
            OpKind::Softmax => {
                if needs(parents[0]) {
                    let ty = &node.tensor;
                    let d = *ty.shape.last().unwrap();
                    let mut dx = vec![0.0; ty.numel()];
                    for ((o, s), gr) in dx
                        .chunks_exact_mut(d)
                        .zip(ty.data.chunks_exact(d))
                        .zip(g.chunks_exact(d))
                    {
                        let dot: f64 = gr.iter().zip(s).map(|(a, b)| a * b).sum();
                        for ((oo, &si), &gi) in o.iter_mut().zip(s).zip(gr) {
                            *oo = si * (gi - dot);
                        }
                    }
                    Self::add_into(grads, &self.nodes, parents[0], &dx);
                }
            }
            OpKind::GatherRows => {
                if needs(parents[0]) {
                    let Aux::Rows(rows) = &node.aux else {
                        unreachable!("gather node carries indices")
                    };
                    let tx = &self.nodes[parents[0].0].tensor;
                    let rest: usize = tx.shape[1..].iter().product();
                    let mut d = vec![0.0; tx.numel()];
                    for (j, &src_row) in rows.iter().enumerate() {
                        let dst = &mut d[src_row * rest..(src_row + 1) * rest];
                        let src = &g[j * rest..(j + 1) * rest];
                        for (dd, &gv) in dst.iter_mut().zip(src) {
                            *dd += gv;
                        }
                    }
                    Self::add_into(grads, &self.nodes, parents[0], &d);
                }
            }
            OpKind::Sign => {
                if needs(parents[0]) {
                    return Err(Error::SignNotDifferentiable);
                }
            }
            OpKind::Clamp { lo, hi } => {
                if needs(parents[0]) {
                    let x = &self.nodes[parents[0].0].tensor.data;
                    let d: Vec<f64> = g
                        .iter()
                        .zip(x)
                        .map(|(g, &v)| if v > lo && v < hi { *g } else { 0.0 })
                        .collect();
                    Self::add_into(grads, &self.nodes, parents[0], &d);
                }
            }
        }
        Ok(())
    }
}
