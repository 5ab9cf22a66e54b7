//! Dense f64 tensors with reverse-mode automatic differentiation.
//!
//! The graph is define-by-run: every operation appends a node holding the
//! output value, the operation kind, and references to its parents. A single
//! [`Graph::backward`] sweep in reverse insertion order then accumulates
//! gradients into every tensor that requires them — including input images,
//! which is what the gradient-based attacks rely on.
//!
//! The operation set is closed and every kernel is hand-verified against a
//! naive oracle in the test suite. All arithmetic is 64-bit and walks fixed
//! loop orders, so forward results are bit-identical across runs.

mod backward;
mod gradcheck;
mod kernels;
pub mod optim;

pub use gradcheck::finite_difference_check;

use crate::error::{Error, Result};

pub(crate) const L2_NORM_FLOOR: f64 = 1e-12;

/// Handle to a tensor stored in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TensorId(pub(crate) usize);

/// Dense row-major n-dimensional array of f64 values.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
    pub requires_grad: bool,
    pub grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn new(data: Vec<f64>, shape: Vec<usize>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() || shape.iter().any(|&d| d == 0) {
            return Err(Error::BadShape {
                op: "tensor",
                shape,
                reason: format!("shape does not describe {} data values", data.len()),
            });
        }
        Ok(Tensor {
            shape,
            data,
            requires_grad: false,
            grad: None,
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; numel],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![v],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn with_requires_grad(mut self, flag: bool) -> Self {
        self.requires_grad = flag;
        self
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.numel() == 1
    }
}

/// The closed set of differentiable (and one forward-only) operations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OpKind {
    Leaf,
    Add,
    Sub,
    Mul,
    ScalarMul { factor: f64 },
    MatMul { transpose_rhs: bool },
    Conv2d { stride: usize, pad: usize },
    Relu,
    MaxPool2x2,
    GlobalAvgPool,
    Flatten,
    Dense,
    L2Normalize,
    Exp,
    Log,
    Sum,
    Mean,
    Softmax,
    GatherRows,
    /// Forward-only: backward through this node is an error.
    Sign,
    Clamp { lo: f64, hi: f64 },
}

impl OpKind {
    pub fn name(&self) -> &'static str {
        match self {
            OpKind::Leaf => "leaf",
            OpKind::Add => "add",
            OpKind::Sub => "sub",
            OpKind::Mul => "elementwise-multiply",
            OpKind::ScalarMul { .. } => "scalar-multiply",
            OpKind::MatMul { .. } => "matmul",
            OpKind::Conv2d { .. } => "conv2d",
            OpKind::Relu => "relu",
            OpKind::MaxPool2x2 => "max-pool-2x2",
            OpKind::GlobalAvgPool => "global-average-pool",
            OpKind::Flatten => "flatten",
            OpKind::Dense => "dense",
            OpKind::L2Normalize => "l2-normalize",
            OpKind::Exp => "exp",
            OpKind::Log => "log",
            OpKind::Sum => "sum",
            OpKind::Mean => "mean",
            OpKind::Softmax => "softmax",
            OpKind::GatherRows => "gather-rows",
            OpKind::Sign => "sign",
            OpKind::Clamp { .. } => "clamp",
        }
    }
}

/// Per-node auxiliary forward state needed by the backward pass.
#[derive(Debug, Clone)]
pub(crate) enum Aux {
    None,
    PoolArgmax(Vec<usize>),
    Rows(Vec<usize>),
}

#[derive(Debug)]
pub(crate) struct Node {
    pub(crate) op: OpKind,
    pub(crate) parents: Vec<TensorId>,
    pub(crate) aux: Aux,
    pub(crate) tensor: Tensor,
}

/// A computation graph: topologically ordered operation nodes.
///
/// Parents always precede children, so one reverse sweep visits every node
/// exactly once.
#[derive(Debug, Default)]
pub struct Graph {
    pub(crate) nodes: Vec<Node>,
    single_use: bool,
    pub(crate) consumed: bool,
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    /// A graph that refuses a second backward pass.
    pub fn new_single_use() -> Self {
        Graph {
            single_use: true,
            ..Graph::default()
        }
    }

    /// Insert an existing tensor as a leaf.
    pub fn leaf(&mut self, tensor: Tensor) -> TensorId {
        self.push(OpKind::Leaf, vec![], Aux::None, tensor)
    }

    /// Leaf that participates in differentiation.
    pub fn var(&mut self, data: Vec<f64>, shape: Vec<usize>) -> Result<TensorId> {
        Ok(self.leaf(Tensor::new(data, shape)?.with_requires_grad(true)))
    }

    /// Leaf that is treated as a constant.
    pub fn constant(&mut self, data: Vec<f64>, shape: Vec<usize>) -> Result<TensorId> {
        Ok(self.leaf(Tensor::new(data, shape)?))
    }

    pub fn tensor(&self, id: TensorId) -> &Tensor {
        &self.nodes[id.0].tensor
    }

    pub fn data(&self, id: TensorId) -> &[f64] {
        &self.nodes[id.0].tensor.data
    }

    pub fn shape(&self, id: TensorId) -> &[usize] {
        &self.nodes[id.0].tensor.shape
    }

    pub fn grad(&self, id: TensorId) -> Option<&[f64]> {
        self.nodes[id.0].tensor.grad.as_deref()
    }

    /// Value of a scalar-shaped tensor.
    pub fn scalar_value(&self, id: TensorId) -> f64 {
        debug_assert!(self.nodes[id.0].tensor.is_scalar());
        self.nodes[id.0].tensor.data[0]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub(crate) fn is_single_use(&self) -> bool {
        self.single_use
    }

    fn push(&mut self, op: OpKind, parents: Vec<TensorId>, aux: Aux, tensor: Tensor) -> TensorId {
        let id = TensorId(self.nodes.len());
        self.nodes.push(Node {
            op,
            parents,
            aux,
            tensor,
        });
        id
    }

    fn any_requires_grad(&self, ids: &[TensorId]) -> bool {
        ids.iter().any(|&i| self.nodes[i.0].tensor.requires_grad)
    }

    fn out(
        &mut self,
        op: OpKind,
        parents: Vec<TensorId>,
        aux: Aux,
        data: Vec<f64>,
        shape: Vec<usize>,
    ) -> TensorId {
        let rg = self.any_requires_grad(&parents);
        let t = Tensor {
            shape,
            data,
            requires_grad: rg,
            grad: None,
        };
        self.push(op, parents, aux, t)
    }

    /// Apply an operation from the closed set to its inputs.
    ///
    /// `GatherRows` carries its row indices out of band; use
    /// [`Graph::gather_rows`] instead.
    pub fn apply(&mut self, op: OpKind, inputs: &[TensorId]) -> Result<TensorId> {
        let arity_err = |expected: usize| {
            Err(Error::InvalidArg(format!(
                "{} expects {} input(s), got {}",
                op.name(),
                expected,
                inputs.len()
            )))
        };
        match op {
            OpKind::Leaf => Err(Error::InvalidArg("leaf is not an applicable op".into())),
            OpKind::GatherRows => Err(Error::InvalidArg(
                "gather-rows needs explicit indices; call gather_rows".into(),
            )),
            OpKind::Add | OpKind::Sub | OpKind::Mul => {
                if inputs.len() != 2 {
                    return arity_err(2);
                }
                self.elementwise_binary(op, inputs[0], inputs[1])
            }
            OpKind::ScalarMul { factor } => {
                if inputs.len() != 1 {
                    return arity_err(1);
                }
                let x = self.tensor(inputs[0]);
                let data = x.data.iter().map(|v| v * factor).collect();
                let shape = x.shape.clone();
                Ok(self.out(op, vec![inputs[0]], Aux::None, data, shape))
            }
            OpKind::MatMul { transpose_rhs } => {
                if inputs.len() != 2 {
                    return arity_err(2);
                }
                self.matmul_inner(inputs[0], inputs[1], transpose_rhs)
            }
            OpKind::Conv2d { stride, pad } => {
                if inputs.len() != 2 {
                    return arity_err(2);
                }
                self.conv2d_inner(inputs[0], inputs[1], stride, pad)
            }
            OpKind::Relu => {
                if inputs.len() != 1 {
                    return arity_err(1);
                }
                let x = self.tensor(inputs[0]);
                let data = x.data.iter().map(|&v| v.max(0.0)).collect();
                let shape = x.shape.clone();
                Ok(self.out(op, vec![inputs[0]], Aux::None, data, shape))
            }
            OpKind::MaxPool2x2 => {
                if inputs.len() != 1 {
                    return arity_err(1);
                }
                self.maxpool_inner(inputs[0])
            }
            OpKind::GlobalAvgPool => {
                if inputs.len() != 1 {
                    return arity_err(1);
                }
                self.gap_inner(inputs[0])
            }
            OpKind::Flatten => {
                if inputs.len() != 1 {
                    return arity_err(1);
                }
                let x = self.tensor(inputs[0]);
                if x.shape.len() < 2 {
                    return Err(Error::BadShape {
                        op: "flatten",
                        shape: x.shape.clone(),
                        reason: "needs rank >= 2".into(),
                    });
                }
                let b = x.shape[0];
                let rest: usize = x.shape[1..].iter().product();
                let data = x.data.clone();
                Ok(self.out(op, vec![inputs[0]], Aux::None, data, vec![b, rest]))
            }
            OpKind::Dense => {
                if inputs.len() != 3 {
                    return arity_err(3);
                }
                self.dense_inner(inputs[0], inputs[1], inputs[2])
            }
            OpKind::L2Normalize => {
                if inputs.len() != 1 {
                    return arity_err(1);
                }
                self.l2_normalize_inner(inputs[0])
            }
            OpKind::Exp => {
                if inputs.len() != 1 {
                    return arity_err(1);
                }
                let x = self.tensor(inputs[0]);
                let data = x.data.iter().map(|v| v.exp()).collect();
                let shape = x.shape.clone();
                Ok(self.out(op, vec![inputs[0]], Aux::None, data, shape))
            }
            OpKind::Log => {
                if inputs.len() != 1 {
                    return arity_err(1);
                }
                let x = self.tensor(inputs[0]);
                let data = x.data.iter().map(|v| v.ln()).collect();
                let shape = x.shape.clone();
                Ok(self.out(op, vec![inputs[0]], Aux::None, data, shape))
            }
            OpKind::Sum => {
                if inputs.len() != 1 {
                    return arity_err(1);
                }
                let s: f64 = self.tensor(inputs[0]).data.iter().sum();
                Ok(self.out(op, vec![inputs[0]], Aux::None, vec![s], vec![1]))
            }
            OpKind::Mean => {
                if inputs.len() != 1 {
                    return arity_err(1);
                }
                let x = self.tensor(inputs[0]);
                let s: f64 = x.data.iter().sum();
                let m = s / x.numel() as f64;
                Ok(self.out(op, vec![inputs[0]], Aux::None, vec![m], vec![1]))
            }
            OpKind::Softmax => {
                if inputs.len() != 1 {
                    return arity_err(1);
                }
                self.softmax_inner(inputs[0])
            }
            OpKind::Sign => {
                if inputs.len() != 1 {
                    return arity_err(1);
                }
                let x = self.tensor(inputs[0]);
                let data = x
                    .data
                    .iter()
                    .map(|&v| {
                        if v > 0.0 {
                            1.0
                        } else if v < 0.0 {
                            -1.0
                        } else {
                            0.0
                        }
                    })
                    .collect();
                let shape = x.shape.clone();
                Ok(self.out(op, vec![inputs[0]], Aux::None, data, shape))
            }
            OpKind::Clamp { lo, hi } => {
                if inputs.len() != 1 {
                    return arity_err(1);
                }
                if !(lo <= hi) {
                    return Err(Error::InvalidArg(format!("clamp bounds {lo} > {hi}")));
                }
                let x = self.tensor(inputs[0]);
                let data = x.data.iter().map(|&v| v.clamp(lo, hi)).collect();
                let shape = x.shape.clone();
                Ok(self.out(op, vec![inputs[0]], Aux::None, data, shape))
            }
        }
    }

    fn elementwise_binary(&mut self, op: OpKind, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (ta, tb) = (&self.nodes[a.0].tensor, &self.nodes[b.0].tensor);
        if ta.shape != tb.shape {
            return Err(Error::ShapeMismatch {
                op: op.name(),
                lhs: ta.shape.clone(),
                rhs: tb.shape.clone(),
            });
        }
        let data: Vec<f64> = match op {
            OpKind::Add => ta.data.iter().zip(&tb.data).map(|(x, y)| x + y).collect(),
            OpKind::Sub => ta.data.iter().zip(&tb.data).map(|(x, y)| x - y).collect(),
            OpKind::Mul => ta.data.iter().zip(&tb.data).map(|(x, y)| x * y).collect(),
            _ => unreachable!(),
        };
        let shape = ta.shape.clone();
        Ok(self.out(op, vec![a, b], Aux::None, data, shape))
    }

    fn matmul_inner(&mut self, a: TensorId, b: TensorId, transpose_rhs: bool) -> Result<TensorId> {
        let (ta, tb) = (&self.nodes[a.0].tensor, &self.nodes[b.0].tensor);
        if ta.shape.len() != 2 || tb.shape.len() != 2 {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: ta.shape.clone(),
                rhs: tb.shape.clone(),
            });
        }
        let (m, k) = (ta.shape[0], ta.shape[1]);
        let (n, inner_ok) = if transpose_rhs {
            (tb.shape[0], tb.shape[1] == k)
        } else {
            (tb.shape[1], tb.shape[0] == k)
        };
        if !inner_ok {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: ta.shape.clone(),
                rhs: tb.shape.clone(),
            });
        }
        let mut data = vec![0.0; m * n];
        if transpose_rhs {
            kernels::mm_nt(&ta.data, &tb.data, m, k, n, &mut data);
        } else {
            kernels::mm_nn(&ta.data, &tb.data, m, k, n, &mut data);
        }
        Ok(self.out(
            OpKind::MatMul { transpose_rhs },
            vec![a, b],
            Aux::None,
            data,
            vec![m, n],
        ))
    }

    fn conv2d_inner(&mut self, x: TensorId, k: TensorId, stride: usize, pad: usize) -> Result<TensorId> {
        if stride == 0 {
            return Err(Error::InvalidArg("conv2d stride must be >= 1".into()));
        }
        let (tx, tk) = (&self.nodes[x.0].tensor, &self.nodes[k.0].tensor);
        if tx.shape.len() != 4 || tk.shape.len() != 4 || tx.shape[1] != tk.shape[1] {
            return Err(Error::ShapeMismatch {
                op: "conv2d",
                lhs: tx.shape.clone(),
                rhs: tk.shape.clone(),
            });
        }
        let (b, cin, h, w) = (tx.shape[0], tx.shape[1], tx.shape[2], tx.shape[3]);
        let (cout, kh, kw) = (tk.shape[0], tk.shape[2], tk.shape[3]);
        let oh = kernels::conv_out_extent(h, kh, stride, pad);
        let ow = kernels::conv_out_extent(w, kw, stride, pad);
        let (oh, ow) = match (oh, ow) {
            (Some(a), Some(b)) if a > 0 && b > 0 => (a, b),
            _ => {
                return Err(Error::BadShape {
                    op: "conv2d",
                    shape: tx.shape.clone(),
                    reason: format!("kernel {kh}x{kw} stride {stride} pad {pad} leaves no output"),
                })
            }
        };
        let mut data = vec![0.0; b * cout * oh * ow];
        kernels::conv2d_forward(
            &tx.data, &tk.data, b, cin, h, w, cout, kh, kw, stride, pad, &mut data,
        );
        Ok(self.out(
            OpKind::Conv2d { stride, pad },
            vec![x, k],
            Aux::None,
            data,
            vec![b, cout, oh, ow],
        ))
    }

    fn maxpool_inner(&mut self, x: TensorId) -> Result<TensorId> {
        let tx = &self.nodes[x.0].tensor;
        if tx.shape.len() != 4 || tx.shape[2] < 2 || tx.shape[3] < 2 {
            return Err(Error::BadShape {
                op: "max-pool-2x2",
                shape: tx.shape.clone(),
                reason: "needs [batch, channels, h>=2, w>=2]".into(),
            });
        }
        let (b, c, h, w) = (tx.shape[0], tx.shape[1], tx.shape[2], tx.shape[3]);
        let (oh, ow) = (h / 2, w / 2);
        let mut data = vec![0.0; b * c * oh * ow];
        let mut argmax = vec![0usize; b * c * oh * ow];
        kernels::maxpool2x2_forward(&tx.data, b, c, h, w, &mut data, &mut argmax);
        Ok(self.out(
            OpKind::MaxPool2x2,
            vec![x],
            Aux::PoolArgmax(argmax),
            data,
            vec![b, c, oh, ow],
        ))
    }

    fn gap_inner(&mut self, x: TensorId) -> Result<TensorId> {
        let tx = &self.nodes[x.0].tensor;
        if tx.shape.len() != 4 {
            return Err(Error::BadShape {
                op: "global-average-pool",
                shape: tx.shape.clone(),
                reason: "needs [batch, channels, h, w]".into(),
            });
        }
        let (b, c, h, w) = (tx.shape[0], tx.shape[1], tx.shape[2], tx.shape[3]);
        let hw = h * w;
        let mut data = vec![0.0; b * c];
        for (i, chunk) in tx.data.chunks_exact(hw).enumerate() {
            data[i] = chunk.iter().sum::<f64>() / hw as f64;
        }
        Ok(self.out(OpKind::GlobalAvgPool, vec![x], Aux::None, data, vec![b, c]))
    }

    fn dense_inner(&mut self, x: TensorId, w: TensorId, bias: TensorId) -> Result<TensorId> {
        let (tx, tw, tb) = (
            &self.nodes[x.0].tensor,
            &self.nodes[w.0].tensor,
            &self.nodes[bias.0].tensor,
        );
        if tx.shape.len() != 2 || tw.shape.len() != 2 || tx.shape[1] != tw.shape[0] {
            return Err(Error::ShapeMismatch {
                op: "dense",
                lhs: tx.shape.clone(),
                rhs: tw.shape.clone(),
            });
        }
        if tb.shape != vec![tw.shape[1]] {
            return Err(Error::ShapeMismatch {
                op: "dense",
                lhs: tw.shape.clone(),
                rhs: tb.shape.clone(),
            });
        }
        let (bsz, din, dout) = (tx.shape[0], tx.shape[1], tw.shape[1]);
        let mut data = vec![0.0; bsz * dout];
        for row in data.chunks_exact_mut(dout) {
            row.copy_from_slice(&tb.data);
        }
        kernels::mm_nn(&tx.data, &tw.data, bsz, din, dout, &mut data);
        Ok(self.out(
            OpKind::Dense,
            vec![x, w, bias],
            Aux::None,
            data,
            vec![bsz, dout],
        ))
    }

    fn l2_normalize_inner(&mut self, x: TensorId) -> Result<TensorId> {
        let tx = &self.nodes[x.0].tensor;
        if tx.shape.is_empty() {
            return Err(Error::BadShape {
                op: "l2-normalize",
                shape: tx.shape.clone(),
                reason: "needs rank >= 1".into(),
            });
        }
        let d = *tx.shape.last().unwrap();
        let mut data = vec![0.0; tx.numel()];
        for (o, v) in data.chunks_exact_mut(d).zip(tx.data.chunks_exact(d)) {
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(L2_NORM_FLOOR);
            for (oo, &vv) in o.iter_mut().zip(v) {
                *oo = vv / norm;
            }
        }
        let shape = tx.shape.clone();
        Ok(self.out(OpKind::L2Normalize, vec![x], Aux::None, data, shape))
    }

    fn softmax_inner(&mut self, x: TensorId) -> Result<TensorId> {
        let tx = &self.nodes[x.0].tensor;
        if tx.shape.is_empty() {
            return Err(Error::BadShape {
                op: "softmax",
                shape: tx.shape.clone(),
                reason: "needs rank >= 1".into(),
            });
        }
        let d = *tx.shape.last().unwrap();
        let mut data = vec![0.0; tx.numel()];
        for (o, v) in data.chunks_exact_mut(d).zip(tx.data.chunks_exact(d)) {
            let mx = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut denom = 0.0;
            for (oo, &vv) in o.iter_mut().zip(v) {
                *oo = (vv - mx).exp();
                denom += *oo;
            }
            for oo in o.iter_mut() {
                *oo /= denom;
            }
        }
        let shape = tx.shape.clone();
        Ok(self.out(OpKind::Softmax, vec![x], Aux::None, data, shape))
    }

    /// Select rows of a rank >= 2 tensor by index. Gradient scatter-adds
    /// back, so duplicate indices accumulate.
    pub fn gather_rows(&mut self, x: TensorId, rows: &[usize]) -> Result<TensorId> {
        let tx = &self.nodes[x.0].tensor;
        if tx.shape.len() < 2 {
            return Err(Error::BadShape {
                op: "gather-rows",
                shape: tx.shape.clone(),
                reason: "needs rank >= 2".into(),
            });
        }
        let r = tx.shape[0];
        let rest: usize = tx.shape[1..].iter().product();
        if let Some(&bad) = rows.iter().find(|&&i| i >= r) {
            return Err(Error::InvalidArg(format!(
                "gather-rows index {bad} out of range for {r} rows"
            )));
        }
        let mut data = Vec::with_capacity(rows.len() * rest);
        for &i in rows {
            data.extend_from_slice(&tx.data[i * rest..(i + 1) * rest]);
        }
        let mut shape = tx.shape.clone();
        shape[0] = rows.len();
        Ok(self.out(
            OpKind::GatherRows,
            vec![x],
            Aux::Rows(rows.to_vec()),
            data,
            shape,
        ))
    }

    // Typed wrappers over `apply`.

    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.apply(OpKind::Add, &[a, b])
    }
    pub fn sub(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.apply(OpKind::Sub, &[a, b])
    }
    pub fn mul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.apply(OpKind::Mul, &[a, b])
    }
    pub fn scalar_mul(&mut self, a: TensorId, factor: f64) -> Result<TensorId> {
        self.apply(OpKind::ScalarMul { factor }, &[a])
    }
    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.apply(OpKind::MatMul { transpose_rhs: false }, &[a, b])
    }
    pub fn matmul_nt(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.apply(OpKind::MatMul { transpose_rhs: true }, &[a, b])
    }
    pub fn conv2d(&mut self, x: TensorId, k: TensorId, stride: usize, pad: usize) -> Result<TensorId> {
        self.apply(OpKind::Conv2d { stride, pad }, &[x, k])
    }
    pub fn relu(&mut self, x: TensorId) -> Result<TensorId> {
        self.apply(OpKind::Relu, &[x])
    }
    pub fn max_pool_2x2(&mut self, x: TensorId) -> Result<TensorId> {
        self.apply(OpKind::MaxPool2x2, &[x])
    }
    pub fn global_avg_pool(&mut self, x: TensorId) -> Result<TensorId> {
        self.apply(OpKind::GlobalAvgPool, &[x])
    }
    pub fn flatten(&mut self, x: TensorId) -> Result<TensorId> {
        self.apply(OpKind::Flatten, &[x])
    }
    pub fn dense(&mut self, x: TensorId, w: TensorId, b: TensorId) -> Result<TensorId> {
        self.apply(OpKind::Dense, &[x, w, b])
    }
    pub fn l2_normalize(&mut self, x: TensorId) -> Result<TensorId> {
        self.apply(OpKind::L2Normalize, &[x])
    }
    pub fn exp(&mut self, x: TensorId) -> Result<TensorId> {
        self.apply(OpKind::Exp, &[x])
    }
    pub fn log(&mut self, x: TensorId) -> Result<TensorId> {
        self.apply(OpKind::Log, &[x])
    }
    pub fn sum(&mut self, x: TensorId) -> Result<TensorId> {
        self.apply(OpKind::Sum, &[x])
    }
    pub fn mean(&mut self, x: TensorId) -> Result<TensorId> {
        self.apply(OpKind::Mean, &[x])
    }
    pub fn softmax(&mut self, x: TensorId) -> Result<TensorId> {
        self.apply(OpKind::Softmax, &[x])
    }
    pub fn sign(&mut self, x: TensorId) -> Result<TensorId> {
        self.apply(OpKind::Sign, &[x])
    }
    pub fn clamp(&mut self, x: TensorId, lo: f64, hi: f64) -> Result<TensorId> {
        self.apply(OpKind::Clamp { lo, hi }, &[x])
    }
}
