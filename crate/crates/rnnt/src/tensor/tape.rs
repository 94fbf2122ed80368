//! Wengert tape: reverse-mode automatic differentiation over dense tensors.
//!
//! Operations append nodes to a linear tape during the forward pass;
//! `backward` replays them once, in reverse topological order (which is the
//! reverse of recording order because ops may only reference earlier nodes).

use super::rng::RngStream;
use super::{Real, Tensor};
use crate::error::{Error, Result};

/// Handle to a tape node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Train/eval switch. Eval mode records no stochastic ops and consumes no
/// RNG draws.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

enum Op {
    Leaf,
    Constant,
    Add(usize, usize),
    AddRow(usize, usize),
    Mul(usize, usize),
    Scale(usize, Real),
    MatMul {
        a: usize,
        b: usize,
        m: usize,
        k: usize,
        n: usize,
    },
    Transpose(usize),
    Relu(usize),
    Sigmoid(usize),
    Tanh(usize),
    Dropout {
        x: usize,
        mask: Vec<Real>,
    },
    SumSquares(usize),
    SumAll(usize),
    Softmax {
        x: usize,
        width: usize,
    },
    LogSoftmax {
        x: usize,
        width: usize,
    },
    LayerNorm {
        x: usize,
        gain: usize,
        bias: usize,
        inv_std: Vec<Real>,
        xhat: Vec<Real>,
        width: usize,
    },
    ConcatRows {
        parts: Vec<usize>,
        width: usize,
    },
    SliceRows {
        x: usize,
        start: usize,
        width: usize,
    },
    ConcatCols {
        parts: Vec<usize>,
    },
    SliceCols {
        x: usize,
        c0: usize,
        src_cols: usize,
    },
    Reshape(usize),
    OuterAdd {
        a: usize,
        b: usize,
    },
    EmbedLookup {
        table: usize,
        indices: Vec<usize>,
    },
    /// Scalar output with a precomputed vector-Jacobian product w.r.t. `x`.
    /// Used by the transducer loss, whose gradient comes out of the same
    /// forward-backward lattice pass that produces the loss.
    OpaqueScalar {
        x: usize,
        grad: Vec<Real>,
    },
}

impl Op {
    fn parents(&self) -> Vec<usize> {
        match self {
            Op::Leaf | Op::Constant => vec![],
            Op::Add(a, b) | Op::AddRow(a, b) | Op::Mul(a, b) | Op::OuterAdd { a, b } => {
                vec![*a, *b]
            }
            Op::Scale(a, _)
            | Op::Transpose(a)
            | Op::Relu(a)
            | Op::Sigmoid(a)
            | Op::Tanh(a)
            | Op::SumSquares(a)
            | Op::SumAll(a)
            | Op::Reshape(a) => vec![*a],
            Op::MatMul { a, b, .. } => vec![*a, *b],
            Op::Dropout { x, .. }
            | Op::Softmax { x, .. }
            | Op::LogSoftmax { x, .. }
            | Op::SliceRows { x, .. }
            | Op::SliceCols { x, .. }
            | Op::OpaqueScalar { x, .. } => vec![*x],
            Op::LayerNorm { x, gain, bias, .. } => vec![*x, *gain, *bias],
            Op::ConcatRows { parts, .. } | Op::ConcatCols { parts } => parts.clone(),
            Op::EmbedLookup { table, .. } => vec![*table],
        }
    }
}

/// Summary of a node's structural role, for tape audits.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum NodeKind {
    Leaf { requires_grad: bool },
    Constant,
    Interior { parents: Vec<usize> },
}

struct Node {
    shape: Vec<usize>,
    data: Vec<Real>,
    requires_grad: bool,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<Real>>>,
}

fn raw_matmul(a: &[Real], b: &[Real], m: usize, k: usize, n: usize) -> Vec<Real> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let crow = &mut c[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for j in 0..n {
                crow[j] += av * brow[j];
            }
        }
    }
    c
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, data: Vec<Real>, requires_grad: bool, op: Op) -> Var {
        self.nodes.push(Node {
            shape,
            data,
            requires_grad,
            op,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn needs_grad(&self, ids: &[usize]) -> bool {
        ids.iter().any(|&i| self.nodes[i].requires_grad)
    }

    /// Insert a tensor as a leaf; tracks gradients iff `t.requires_grad`.
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        self.push(
            t.shape().to_vec(),
            t.data().to_vec(),
            t.requires_grad,
            Op::Leaf,
        )
    }

    /// Insert a tensor as an explicit constant: never differentiated.
    pub fn constant(&mut self, t: &Tensor) -> Var {
        self.push(t.shape().to_vec(), t.data().to_vec(), false, Op::Constant)
    }

    pub fn constant_from(&mut self, shape: Vec<usize>, data: Vec<Real>) -> Var {
        self.push(shape, data, false, Op::Constant)
    }

    pub fn zeros_const(&mut self, shape: Vec<usize>) -> Var {
        let numel = shape.iter().product();
        self.push(shape, vec![0.0; numel], false, Op::Constant)
    }

    pub fn value(&self, v: Var) -> &[Real] {
        &self.nodes[v.0].data
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn to_tensor(&self, v: Var) -> Tensor {
        Tensor::new(self.nodes[v.0].shape.clone(), self.nodes[v.0].data.clone())
            .expect("node shape/data consistent")
    }

    /// Scalar value of a 1-element node.
    pub fn scalar_value(&self, v: Var) -> Real {
        debug_assert_eq!(self.nodes[v.0].data.len(), 1);
        self.nodes[v.0].data[0]
    }

    pub fn grad(&self, v: Var) -> Option<&[Real]> {
        self.grads[v.0].as_deref()
    }

    /// Structural view of every node, for audits.
    pub fn node_kinds(&self) -> Vec<NodeKind> {
        self.nodes
            .iter()
            .map(|n| match n.op {
                Op::Leaf => NodeKind::Leaf {
                    requires_grad: n.requires_grad,
                },
                Op::Constant => NodeKind::Constant,
                _ => NodeKind::Interior {
                    parents: n.op.parents(),
                },
            })
            .collect()
    }

    // ---- ops ----

    fn shape2(&self, v: Var, op: &'static str) -> Result<(usize, usize)> {
        let s = &self.nodes[v.0].shape;
        if s.len() != 2 {
            return Err(Error::ShapeMismatch {
                op,
                lhs: s.clone(),
                rhs: vec![],
            });
        }
        Ok((s[0], s[1]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.nodes[a.0].shape != self.nodes[b.0].shape {
            return Err(Error::ShapeMismatch {
                op: "add",
                lhs: self.nodes[a.0].shape.clone(),
                rhs: self.nodes[b.0].shape.clone(),
            });
        }
        let data: Vec<Real> = self.nodes[a.0]
            .data
            .iter()
            .zip(&self.nodes[b.0].data)
            .map(|(x, y)| x + y)
            .collect();
        let rg = self.needs_grad(&[a.0, b.0]);
        Ok(self.push(self.nodes[a.0].shape.clone(), data, rg, Op::Add(a.0, b.0)))
    }

    /// Broadcast add of a vector `b[d]` to every length-d row of `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var> {
        let d = *self.nodes[a.0].shape.last().unwrap_or(&0);
        if self.nodes[b.0].shape != [d] || d == 0 {
            return Err(Error::ShapeMismatch {
                op: "add_row",
                lhs: self.nodes[a.0].shape.clone(),
                rhs: self.nodes[b.0].shape.clone(),
            });
        }
        let bv = &self.nodes[b.0].data;
        let data: Vec<Real> = self.nodes[a.0]
            .data
            .iter()
            .enumerate()
            .map(|(i, x)| x + bv[i % d])
            .collect();
        let rg = self.needs_grad(&[a.0, b.0]);
        Ok(self.push(self.nodes[a.0].shape.clone(), data, rg, Op::AddRow(a.0, b.0)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.nodes[a.0].shape != self.nodes[b.0].shape {
            return Err(Error::ShapeMismatch {
                op: "mul",
                lhs: self.nodes[a.0].shape.clone(),
                rhs: self.nodes[b.0].shape.clone(),
            });
        }
        let data: Vec<Real> = self.nodes[a.0]
            .data
            .iter()
            .zip(&self.nodes[b.0].data)
            .map(|(x, y)| x * y)
            .collect();
        let rg = self.needs_grad(&[a.0, b.0]);
        Ok(self.push(self.nodes[a.0].shape.clone(), data, rg, Op::Mul(a.0, b.0)))
    }

    pub fn scale(&mut self, a: Var, c: Real) -> Var {
        let data: Vec<Real> = self.nodes[a.0].data.iter().map(|x| x * c).collect();
        let rg = self.nodes[a.0].requires_grad;
        self.push(self.nodes[a.0].shape.clone(), data, rg, Op::Scale(a.0, c))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.shape2(a, "matmul")?;
        let (k2, n) = self.shape2(b, "matmul")?;
        if k != k2 {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: vec![m, k],
                rhs: vec![k2, n],
            });
        }
        let data = raw_matmul(&self.nodes[a.0].data, &self.nodes[b.0].data, m, k, n);
        let rg = self.needs_grad(&[a.0, b.0]);
        Ok(self.push(
            vec![m, n],
            data,
            rg,
            Op::MatMul {
                a: a.0,
                b: b.0,
                m,
                k,
                n,
            },
        ))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.shape2(a, "transpose")?;
        let src = &self.nodes[a.0].data;
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                data[j * m + i] = src[i * n + j];
            }
        }
        let rg = self.nodes[a.0].requires_grad;
        Ok(self.push(vec![n, m], data, rg, Op::Transpose(a.0)))
    }

    fn unary(&mut self, a: Var, f: impl Fn(Real) -> Real, op: impl Fn(usize) -> Op) -> Var {
        let data: Vec<Real> = self.nodes[a.0].data.iter().map(|&x| f(x)).collect();
        let rg = self.nodes[a.0].requires_grad;
        self.push(self.nodes[a.0].shape.clone(), data, rg, op(a.0))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| if x > 0.0 { x } else { 0.0 }, Op::Relu)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, |x| 1.0 / (1.0 + (-x).exp()), Op::Sigmoid)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.tanh(), Op::Tanh)
    }

    /// Inverted dropout: zeroes each element with probability `p` and scales
    /// survivors by 1/(1-p). Training mode only; eval is the identity and
    /// consumes no RNG draws.
    pub fn dropout(&mut self, a: Var, p: Real, mode: Mode, rng: &mut RngStream) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::config(format!("dropout probability {p} not in [0, 1)")));
        }
        if mode == Mode::Eval || p == 0.0 {
            return Ok(a);
        }
        let keep_scale = 1.0 / (1.0 - p);
        let mask: Vec<Real> = (0..self.nodes[a.0].data.len())
            .map(|_| {
                if (rng.next_f64() as Real) < p {
                    0.0
                } else {
                    keep_scale
                }
            })
            .collect();
        let data: Vec<Real> = self.nodes[a.0]
            .data
            .iter()
            .zip(&mask)
            .map(|(x, m)| x * m)
            .collect();
        let rg = self.nodes[a.0].requires_grad;
        Ok(self.push(
            self.nodes[a.0].shape.clone(),
            data,
            rg,
            Op::Dropout { x: a.0, mask },
        ))
    }

    /// Sum of squared entries, as a scalar node.
    pub fn sum_squares(&mut self, a: Var) -> Var {
        let s: Real = self.nodes[a.0].data.iter().map(|x| x * x).sum();
        let rg = self.nodes[a.0].requires_grad;
        self.push(vec![1], vec![s], rg, Op::SumSquares(a.0))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s: Real = self.nodes[a.0].data.iter().sum();
        let rg = self.nodes[a.0].requires_grad;
        self.push(vec![1], vec![s], rg, Op::SumAll(a.0))
    }

    fn last_axis(&self, v: Var, op: &'static str) -> Result<usize> {
        let w = *self.nodes[v.0].shape.last().unwrap_or(&0);
        if w == 0 {
            return Err(Error::ShapeMismatch {
                op,
                lhs: self.nodes[v.0].shape.clone(),
                rhs: vec![],
            });
        }
        Ok(w)
    }

    fn check_finite(&self, v: Var, op: &'static str) -> Result<()> {
        if self.nodes[v.0].data.iter().any(|x| !x.is_finite()) {
            return Err(Error::numeric(format!("{op}: non-finite input")));
        }
        Ok(())
    }

    /// Softmax over the last axis, with max-subtraction stability.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let w = self.last_axis(a, "softmax")?;
        self.check_finite(a, "softmax")?;
        let src = &self.nodes[a.0].data;
        let mut data = vec![0.0; src.len()];
        for r in 0..src.len() / w {
            let row = &src[r * w..(r + 1) * w];
            let m = row.iter().fold(Real::NEG_INFINITY, |a, &b| a.max(b));
            let out = &mut data[r * w..(r + 1) * w];
            let mut sum = 0.0;
            for (o, &x) in out.iter_mut().zip(row) {
                *o = (x - m).exp();
                sum += *o;
            }
            for o in out.iter_mut() {
                *o /= sum;
            }
        }
        let rg = self.nodes[a.0].requires_grad;
        Ok(self.push(
            self.nodes[a.0].shape.clone(),
            data,
            rg,
            Op::Softmax { x: a.0, width: w },
        ))
    }

    /// log(softmax) over the last axis; never -inf for finite inputs.
    pub fn log_softmax(&mut self, a: Var) -> Result<Var> {
        let w = self.last_axis(a, "log_softmax")?;
        self.check_finite(a, "log_softmax")?;
        let src = &self.nodes[a.0].data;
        let mut data = vec![0.0; src.len()];
        for r in 0..src.len() / w {
            let row = &src[r * w..(r + 1) * w];
            let m = row.iter().fold(Real::NEG_INFINITY, |a, &b| a.max(b));
            let lse = row.iter().map(|&x| (x - m).exp()).sum::<Real>().ln() + m;
            for (o, &x) in data[r * w..(r + 1) * w].iter_mut().zip(row) {
                *o = x - lse;
            }
        }
        let rg = self.nodes[a.0].requires_grad;
        Ok(self.push(
            self.nodes[a.0].shape.clone(),
            data,
            rg,
            Op::LogSoftmax { x: a.0, width: w },
        ))
    }

    /// Per-row normalization over the last axis followed by an affine map.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: Real) -> Result<Var> {
        let w = self.last_axis(x, "layer_norm")?;
        if eps <= 0.0 {
            return Err(Error::config(format!("layer_norm eps {eps} must be > 0")));
        }
        if self.nodes[gain.0].shape != [w] || self.nodes[bias.0].shape != [w] {
            return Err(Error::ShapeMismatch {
                op: "layer_norm",
                lhs: self.nodes[x.0].shape.clone(),
                rhs: self.nodes[gain.0].shape.clone(),
            });
        }
        let src = &self.nodes[x.0].data;
        let g = &self.nodes[gain.0].data;
        let b = &self.nodes[bias.0].data;
        let rows = src.len() / w;
        let mut data = vec![0.0; src.len()];
        let mut xhat = vec![0.0; src.len()];
        let mut inv_std = vec![0.0; rows];
        for r in 0..rows {
            let row = &src[r * w..(r + 1) * w];
            let mean = row.iter().sum::<Real>() / w as Real;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<Real>() / w as Real;
            let istd = 1.0 / (var + eps).sqrt();
            inv_std[r] = istd;
            for j in 0..w {
                let xh = (row[j] - mean) * istd;
                xhat[r * w + j] = xh;
                data[r * w + j] = g[j] * xh + b[j];
            }
        }
        let rg = self.needs_grad(&[x.0, gain.0, bias.0]);
        Ok(self.push(
            self.nodes[x.0].shape.clone(),
            data,
            rg,
            Op::LayerNorm {
                x: x.0,
                gain: gain.0,
                bias: bias.0,
                inv_std,
                xhat,
                width: w,
            },
        ))
    }

    /// Stack 2-D blocks with equal column counts along the row axis.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::config("concat_rows: empty part list"));
        }
        let (_, w) = self.shape2(parts[0], "concat_rows")?;
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let (r, wp) = self.shape2(p, "concat_rows")?;
            if wp != w {
                return Err(Error::ShapeMismatch {
                    op: "concat_rows",
                    lhs: vec![rows, w],
                    rhs: vec![r, wp],
                });
            }
            rows += r;
            data.extend_from_slice(&self.nodes[p.0].data);
        }
        let ids: Vec<usize> = parts.iter().map(|v| v.0).collect();
        let rg = self.needs_grad(&ids);
        Ok(self.push(
            vec![rows, w],
            data,
            rg,
            Op::ConcatRows { parts: ids, width: w },
        ))
    }

    /// Rows `[start, end)` of a 2-D tensor.
    pub fn slice_rows(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let (rows, w) = self.shape2(x, "slice_rows")?;
        if start > end || end > rows {
            return Err(Error::ShapeMismatch {
                op: "slice_rows",
                lhs: vec![rows, w],
                rhs: vec![start, end],
            });
        }
        let data = self.nodes[x.0].data[start * w..end * w].to_vec();
        let rg = self.nodes[x.0].requires_grad;
        Ok(self.push(
            vec![end - start, w],
            data,
            rg,
            Op::SliceRows {
                x: x.0,
                start,
                width: w,
            },
        ))
    }

    /// Concatenate 2-D blocks with equal row counts along the column axis.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::config("concat_cols: empty part list"));
        }
        let (rows, _) = self.shape2(parts[0], "concat_cols")?;
        let mut widths = Vec::with_capacity(parts.len());
        let mut total_w = 0;
        for &p in parts {
            let (r, w) = self.shape2(p, "concat_cols")?;
            if r != rows {
                return Err(Error::ShapeMismatch {
                    op: "concat_cols",
                    lhs: vec![rows],
                    rhs: vec![r],
                });
            }
            widths.push(w);
            total_w += w;
        }
        let mut data = vec![0.0; rows * total_w];
        let mut c0 = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            let src = &self.nodes[p.0].data;
            for r in 0..rows {
                data[r * total_w + c0..r * total_w + c0 + w]
                    .copy_from_slice(&src[r * w..(r + 1) * w]);
            }
            c0 += w;
        }
        let ids: Vec<usize> = parts.iter().map(|v| v.0).collect();
        let rg = self.needs_grad(&ids);
        Ok(self.push(vec![rows, total_w], data, rg, Op::ConcatCols { parts: ids }))
    }

    /// Columns `[c0, c1)` of a 2-D tensor.
    pub fn slice_cols(&mut self, x: Var, c0: usize, c1: usize) -> Result<Var> {
        let (rows, w) = self.shape2(x, "slice_cols")?;
        if c0 > c1 || c1 > w {
            return Err(Error::ShapeMismatch {
                op: "slice_cols",
                lhs: vec![rows, w],
                rhs: vec![c0, c1],
            });
        }
        let nw = c1 - c0;
        let src = &self.nodes[x.0].data;
        let mut data = vec![0.0; rows * nw];
        for r in 0..rows {
            data[r * nw..(r + 1) * nw].copy_from_slice(&src[r * w + c0..r * w + c1]);
        }
        let rg = self.nodes[x.0].requires_grad;
        Ok(self.push(
            vec![rows, nw],
            data,
            rg,
            Op::SliceCols {
                x: x.0,
                c0,
                src_cols: w,
            },
        ))
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let numel: usize = shape.iter().product();
        if numel != self.nodes[x.0].data.len() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                lhs: self.nodes[x.0].shape.clone(),
                rhs: shape,
            });
        }
        let data = self.nodes[x.0].data.clone();
        let rg = self.nodes[x.0].requires_grad;
        Ok(self.push(shape, data, rg, Op::Reshape(x.0)))
    }

    /// out[t, u, :] = a[t, :] + b[u, :], the joiner's combine step.
    pub fn outer_add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, d) = self.shape2(a, "outer_add")?;
        let (u, d2) = self.shape2(b, "outer_add")?;
        if d != d2 {
            return Err(Error::ShapeMismatch {
                op: "outer_add",
                lhs: vec![t, d],
                rhs: vec![u, d2],
            });
        }
        let av = &self.nodes[a.0].data;
        let bv = &self.nodes[b.0].data;
        let mut data = vec![0.0; t * u * d];
        for i in 0..t {
            for j in 0..u {
                let out = &mut data[(i * u + j) * d..(i * u + j + 1) * d];
                for x in 0..d {
                    out[x] = av[i * d + x] + bv[j * d + x];
                }
            }
        }
        let rg = self.needs_grad(&[a.0, b.0]);
        Ok(self.push(vec![t, u, d], data, rg, Op::OuterAdd { a: a.0, b: b.0 }))
    }

    /// Gather rows of `table` at `indices`.
    pub fn embed_lookup(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        let (rows, w) = self.shape2(table, "embed_lookup")?;
        if let Some(&bad) = indices.iter().find(|&&i| i >= rows) {
            return Err(Error::Vocab(format!(
                "embedding index {bad} out of range for table with {rows} rows"
            )));
        }
        let src = &self.nodes[table.0].data;
        let mut data = vec![0.0; indices.len() * w];
        for (r, &i) in indices.iter().enumerate() {
            data[r * w..(r + 1) * w].copy_from_slice(&src[i * w..(i + 1) * w]);
        }
        let rg = self.nodes[table.0].requires_grad;
        Ok(self.push(
            vec![indices.len(), w],
            data,
            rg,
            Op::EmbedLookup {
                table: table.0,
                indices: indices.to_vec(),
            },
        ))
    }

    /// Scalar node with a caller-supplied value and vector-Jacobian product.
    pub fn opaque_scalar(&mut self, x: Var, value: Real, grad: Vec<Real>) -> Result<Var> {
        if grad.len() != self.nodes[x.0].data.len() {
            return Err(Error::ShapeMismatch {
                op: "opaque_scalar",
                lhs: self.nodes[x.0].shape.clone(),
                rhs: vec![grad.len()],
            });
        }
        let rg = self.nodes[x.0].requires_grad;
        Ok(self.push(vec![1], vec![value], rg, Op::OpaqueScalar { x: x.0, grad }))
    }

    // ---- backward ----

    fn accum(grads: &mut [Option<Vec<Real>>], nodes: &[Node], id: usize, f: impl FnOnce(&mut [Real])) {
        if !nodes[id].requires_grad {
            return;
        }
        let slot = grads[id].get_or_insert_with(|| vec![0.0; nodes[id].data.len()]);
        f(slot);
    }

    /// Run the chain rule from a scalar `loss` node back to every leaf that
    /// requires gradients. Each recorded op is visited exactly once.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.nodes[loss.0].data.len() != 1 {
            return Err(Error::config("backward requires a scalar loss node"));
        }
        for g in self.grads.iter_mut() {
            *g = None;
        }
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        self.grads[loss.0] = Some(vec![1.0]);

        for i in (0..self.nodes.len()).rev() {
            if self.grads[i].is_none() || !self.nodes[i].requires_grad {
                continue;
            }
            let g = match self.grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            let nodes = &self.nodes;
            let grads = &mut self.grads;
            match &nodes[i].op {
                Op::Leaf | Op::Constant => {
                    // keep leaf gradients for readout
                    grads[i] = Some(g);
                    continue;
                }
                Op::Add(a, b) => {
                    Self::accum(grads, nodes, *a, |ga| {
                        for (x, y) in ga.iter_mut().zip(&g) {
                            *x += y;
                        }
                    });
                    Self::accum(grads, nodes, *b, |gb| {
                        for (x, y) in gb.iter_mut().zip(&g) {
                            *x += y;
                        }
                    });
                }
                Op::AddRow(a, b) => {
                    let d = nodes[*b].data.len();
                    Self::accum(grads, nodes, *a, |ga| {
                        for (x, y) in ga.iter_mut().zip(&g) {
                            *x += y;
                        }
                    });
                    Self::accum(grads, nodes, *b, |gb| {
                        for (idx, y) in g.iter().enumerate() {
                            gb[idx % d] += y;
                        }
                    });
                }
                Op::Mul(a, b) => {
                    let (a, b) = (*a, *b);
                    Self::accum(grads, nodes, a, |ga| {
                        for ((x, y), v) in ga.iter_mut().zip(&g).zip(&nodes[b].data) {
                            *x += y * v;
                        }
                    });
                    Self::accum(grads, nodes, b, |gb| {
                        for ((x, y), v) in gb.iter_mut().zip(&g).zip(&nodes[a].data) {
                            *x += y * v;
                        }
                    });
                }
                Op::Scale(a, c) => {
                    let c = *c;
                    Self::accum(grads, nodes, *a, |ga| {
                        for (x, y) in ga.iter_mut().zip(&g) {
                            *x += c * y;
                        }
                    });
                }
                Op::MatMul { a, b, m, k, n } => {
                    let (a, b, m, k, n) = (*a, *b, *m, *k, *n);
                    Self::accum(grads, nodes, a, |ga| {
                        // ga += g . b^T
                        let bv = &nodes[b].data;
                        for i in 0..m {
                            for p in 0..k {
                                let mut s = 0.0;
                                for j in 0..n {
                                    s += g[i * n + j] * bv[p * n + j];
                                }
                                ga[i * k + p] += s;
                            }
                        }
                    });
                    Self::accum(grads, nodes, b, |gb| {
                        // gb += a^T . g
                        let av = &nodes[a].data;
                        for p in 0..k {
                            for j in 0..n {
                                let mut s = 0.0;
                                for i in 0..m {
                                    s += av[i * k + p] * g[i * n + j];
                                }
                                gb[p * n + j] += s;
                            }
                        }
                    });
                }
                Op::Transpose(a) => {
                    let (n, m) = (nodes[i].shape[0], nodes[i].shape[1]);
                    Self::accum(grads, nodes, *a, |ga| {
                        for r in 0..n {
                            for c in 0..m {
                                ga[c * n + r] += g[r * m + c];
                            }
                        }
                    });
                }
                Op::Relu(a) => {
                    let a = *a;
                    Self::accum(grads, nodes, a, |ga| {
                        for ((x, y), v) in ga.iter_mut().zip(&g).zip(&nodes[a].data) {
                            if *v > 0.0 {
                                *x += y;
                            }
                        }
                    });
                }
                Op::Sigmoid(a) => {
                    Self::accum(grads, nodes, *a, |ga| {
                        for ((x, y), s) in ga.iter_mut().zip(&g).zip(&nodes[i].data) {
                            *x += y * s * (1.0 - s);
                        }
                    });
                }
                Op::Tanh(a) => {
                    Self::accum(grads, nodes, *a, |ga| {
                        for ((x, y), t) in ga.iter_mut().zip(&g).zip(&nodes[i].data) {
                            *x += y * (1.0 - t * t);
                        }
                    });
                }
                Op::Dropout { x, mask } => {
                    Self::accum(grads, nodes, *x, |gx| {
                        for ((o, y), m) in gx.iter_mut().zip(&g).zip(mask) {
                            *o += y * m;
                        }
                    });
                }
                Op::SumSquares(a) => {
                    let a = *a;
                    Self::accum(grads, nodes, a, |ga| {
                        for (x, v) in ga.iter_mut().zip(&nodes[a].data) {
                            *x += 2.0 * v * g[0];
                        }
                    });
                }
                Op::SumAll(a) => {
                    Self::accum(grads, nodes, *a, |ga| {
                        for x in ga.iter_mut() {
                            *x += g[0];
                        }
                    });
                }
                Op::Softmax { x, width } => {
                    let w = *width;
                    Self::accum(grads, nodes, *x, |gx| {
                        let y = &nodes[i].data;
                        for r in 0..y.len() / w {
                            let yr = &y[r * w..(r + 1) * w];
                            let gr = &g[r * w..(r + 1) * w];
                            let dot: Real = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                            let out = &mut gx[r * w..(r + 1) * w];
                            for j in 0..w {
                                out[j] += yr[j] * (gr[j] - dot);
                            }
                        }
                    });
                }
                Op::LogSoftmax { x, width } => {
                    let w = *width;
                    Self::accum(grads, nodes, *x, |gx| {
                        let y = &nodes[i].data;
                        for r in 0..y.len() / w {
                            let yr = &y[r * w..(r + 1) * w];
                            let gr = &g[r * w..(r + 1) * w];
                            let sum: Real = gr.iter().sum();
                            let out = &mut gx[r * w..(r + 1) * w];
                            for j in 0..w {
                                out[j] += gr[j] - yr[j].exp() * sum;
                            }
                        }
                    });
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    inv_std,
                    xhat,
                    width,
                } => {
                    let w = *width;
                    let rows = xhat.len() / w;
                    Self::accum(grads, nodes, *gain, |gg| {
                        for r in 0..rows {
                            for j in 0..w {
                                gg[j] += g[r * w + j] * xhat[r * w + j];
                            }
                        }
                    });
                    Self::accum(grads, nodes, *bias, |gb| {
                        for r in 0..rows {
                            for j in 0..w {
                                gb[j] += g[r * w + j];
                            }
                        }
                    });
                    let gain = *gain;
                    Self::accum(grads, nodes, *x, |gx| {
                        let gv = &nodes[gain].data;
                        for r in 0..rows {
                            let gr = &g[r * w..(r + 1) * w];
                            let xh = &xhat[r * w..(r + 1) * w];
                            let mut mean_gg = 0.0;
                            let mut mean_ggx = 0.0;
                            for j in 0..w {
                                let gg = gr[j] * gv[j];
                                mean_gg += gg;
                                mean_ggx += gg * xh[j];
                            }
                            mean_gg /= w as Real;
                            mean_ggx /= w as Real;
                            let out = &mut gx[r * w..(r + 1) * w];
                            for j in 0..w {
                                let gg = gr[j] * gv[j];
                                out[j] += inv_std[r] * (gg - mean_gg - xh[j] * mean_ggx);
                            }
                        }
                    });
                }
                Op::ConcatRows { parts, width } => {
                    let w = *width;
                    let mut r0 = 0;
                    for &p in parts.clone().iter() {
                        let rows = nodes[p].shape[0];
                        Self::accum(grads, nodes, p, |gp| {
                            gp.iter_mut()
                                .zip(&g[r0 * w..(r0 + rows) * w])
                                .for_each(|(x, y)| *x += y);
                        });
                        r0 += rows;
                    }
                }
                Op::SliceRows { x, start, width } => {
                    let (start, w) = (*start, *width);
                    let len = g.len();
                    Self::accum(grads, nodes, *x, |gx| {
                        gx[start * w..start * w + len]
                            .iter_mut()
                            .zip(&g)
                            .for_each(|(x, y)| *x += y);
                    });
                }
                Op::ConcatCols { parts } => {
                    let total_w = nodes[i].shape[1];
                    let rows = nodes[i].shape[0];
                    let mut c0 = 0;
                    for &p in parts.clone().iter() {
                        let w = nodes[p].shape[1];
                        Self::accum(grads, nodes, p, |gp| {
                            for r in 0..rows {
                                for j in 0..w {
                                    gp[r * w + j] += g[r * total_w + c0 + j];
                                }
                            }
                        });
                        c0 += w;
                    }
                }
                Op::SliceCols { x, c0, src_cols } => {
                    let (c0, sw) = (*c0, *src_cols);
                    let rows = nodes[i].shape[0];
                    let w = nodes[i].shape[1];
                    Self::accum(grads, nodes, *x, |gx| {
                        for r in 0..rows {
                            for j in 0..w {
                                gx[r * sw + c0 + j] += g[r * w + j];
                            }
                        }
                    });
                }
                Op::Reshape(a) => {
                    Self::accum(grads, nodes, *a, |ga| {
                        ga.iter_mut().zip(&g).for_each(|(x, y)| *x += y);
                    });
                }
                Op::OuterAdd { a, b } => {
                    let t = nodes[i].shape[0];
                    let u = nodes[i].shape[1];
                    let d = nodes[i].shape[2];
                    Self::accum(grads, nodes, *a, |ga| {
                        for ti in 0..t {
                            for ui in 0..u {
                                for x in 0..d {
                                    ga[ti * d + x] += g[(ti * u + ui) * d + x];
                                }
                            }
                        }
                    });
                    Self::accum(grads, nodes, *b, |gb| {
                        for ti in 0..t {
                            for ui in 0..u {
                                for x in 0..d {
                                    gb[ui * d + x] += g[(ti * u + ui) * d + x];
                                }
                            }
                        }
                    });
                }
                Op::EmbedLookup { table, indices } => {
                    let w = nodes[i].shape[1];
                    Self::accum(grads, nodes, *table, |gt| {
                        for (r, &idx) in indices.iter().enumerate() {
                            for j in 0..w {
                                gt[idx * w + j] += g[r * w + j];
                            }
                        }
                    });
                }
                Op::OpaqueScalar { x, grad } => {
                    Self::accum(grads, nodes, *x, |gx| {
                        for (o, gv) in gx.iter_mut().zip(grad) {
                            *o += g[0] * gv;
                        }
                    });
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn leaf(tape: &mut Tape, shape: Vec<usize>, data: Vec<Real>) -> Var {
        let t = Tensor::new(shape, data).unwrap().with_grad();
        tape.leaf(&t)
    }

    /// Central finite differences of a scalar-valued rebuild function.
    fn fd_grad(f: impl Fn(&[Real]) -> Real, x: &[Real], h: Real) -> Vec<Real> {
        let mut g = vec![0.0; x.len()];
        let mut buf = x.to_vec();
        for i in 0..x.len() {
            let keep = buf[i];
            buf[i] = keep + h;
            let up = f(&buf);
            buf[i] = keep - h;
            let down = f(&buf);
            buf[i] = keep;
            g[i] = (up - down) / (2.0 * h);
        }
        g
    }

    fn max_rel_err(a: &[Real], b: &[Real]) -> Real {
        a.iter()
            .zip(b)
            .map(|(&x, &y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-8))
            .fold(0.0, Real::max)
    }

    #[test]
    fn matmul_identity() {
        let mut tape = Tape::new();
        let i2 = tape.constant(&Tensor::identity(2));
        let j2 = tape.constant(&Tensor::identity(2));
        let out = tape.matmul(i2, j2).unwrap();
        assert_eq!(tape.value(out), Tensor::identity(2).data());
    }

    #[test]
    fn matmul_hand_case() {
        let mut tape = Tape::new();
        let a = tape.constant(&Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let b = tape.constant(&Tensor::new(vec![2, 1], vec![1.0, 1.0]).unwrap());
        let out = tape.matmul(a, b).unwrap();
        assert_eq!(tape.value(out), &[3.0, 7.0]);
    }

    #[test]
    fn matmul_shape_mismatch_names_both_shapes() {
        let mut tape = Tape::new();
        let a = tape.constant(&Tensor::zeros(vec![2, 3]));
        let b = tape.constant(&Tensor::zeros(vec![2, 3]));
        let err = tape.matmul(a, b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]"), "{msg}");
    }

    #[test]
    fn matmul_gradient_matches_finite_differences() {
        let mut rng = RngStream::new(11);
        let a0 = Tensor::randn(vec![3, 4], 1.0, &mut rng);
        let b0 = Tensor::randn(vec![4, 2], 1.0, &mut rng);

        let mut tape = Tape::new();
        let a = leaf(&mut tape, vec![3, 4], a0.data().to_vec());
        let b = leaf(&mut tape, vec![4, 2], b0.data().to_vec());
        let c = tape.matmul(a, b).unwrap();
        // weight the output so the grad is not all-ones
        let wdata: Vec<Real> = (0..6).map(|i| 0.3 + 0.1 * i as Real).collect();
        let w = tape.constant_from(vec![3, 2], wdata.clone());
        let prod = tape.mul(c, w).unwrap();
        let loss = tape.sum_all(prod);
        tape.backward(loss).unwrap();

        let f_a = |ad: &[Real]| {
            let mut t = Tape::new();
            let av = t.constant_from(vec![3, 4], ad.to_vec());
            let bv = t.constant_from(vec![4, 2], b0.data().to_vec());
            let c = t.matmul(av, bv).unwrap();
            let w = t.constant_from(vec![3, 2], wdata.clone());
            let p = t.mul(c, w).unwrap();
            let l = t.sum_all(p);
            t.scalar_value(l)
        };
        let fd = fd_grad(f_a, a0.data(), 1e-5);
        assert!(max_rel_err(tape.grad(a).unwrap(), &fd) <= 1e-6);

        let f_b = |bd: &[Real]| {
            let mut t = Tape::new();
            let av = t.constant_from(vec![3, 4], a0.data().to_vec());
            let bv = t.constant_from(vec![4, 2], bd.to_vec());
            let c = t.matmul(av, bv).unwrap();
            let w = t.constant_from(vec![3, 2], wdata.clone());
            let p = t.mul(c, w).unwrap();
            let l = t.sum_all(p);
            t.scalar_value(l)
        };
        let fd_b = fd_grad(f_b, b0.data(), 1e-5);
        assert!(max_rel_err(tape.grad(b).unwrap(), &fd_b) <= 1e-6);
    }

    #[test]
    fn layer_norm_constant_row_maps_to_bias() {
        let mut tape = Tape::new();
        let x = tape.constant_from(vec![1, 4], vec![5.0; 4]);
        let g = tape.constant_from(vec![4], vec![1.0; 4]);
        let b = tape.constant_from(vec![4], vec![0.0; 4]);
        let y = tape.layer_norm(x, g, b, 1e-5).unwrap();
        for v in tape.value(y) {
            assert!(v.abs() < 1e-12);
        }
    }

    #[test]
    fn layer_norm_already_normalized_row() {
        let mut tape = Tape::new();
        let x = tape.constant_from(vec![1, 2], vec![1.0, -1.0]);
        let g = tape.constant_from(vec![2], vec![1.0; 2]);
        let b = tape.constant_from(vec![2], vec![0.0; 2]);
        let y = tape.layer_norm(x, g, b, 1e-12).unwrap();
        assert!((tape.value(y)[0] - 1.0).abs() < 1e-6);
        assert!((tape.value(y)[1] + 1.0).abs() < 1e-6);
    }

    #[test]
    fn layer_norm_rejects_empty_width() {
        let mut tape = Tape::new();
        let x = tape.constant_from(vec![2, 0], vec![]);
        let g = tape.constant_from(vec![0], vec![]);
        let b = tape.constant_from(vec![0], vec![]);
        assert!(tape.layer_norm(x, g, b, 1e-5).is_err());
    }

    #[test]
    fn layer_norm_gradient_matches_finite_differences() {
        let mut rng = RngStream::new(3);
        let x0 = Tensor::randn(vec![2, 8], 1.0, &mut rng);
        let g0 = Tensor::randn(vec![8], 0.5, &mut rng);
        let b0 = Tensor::randn(vec![8], 0.5, &mut rng);
        let run = |xd: &[Real], gd: &[Real], bd: &[Real]| {
            let mut t = Tape::new();
            let x = t.constant_from(vec![2, 8], xd.to_vec());
            let g = t.constant_from(vec![8], gd.to_vec());
            let b = t.constant_from(vec![8], bd.to_vec());
            let y = t.layer_norm(x, g, b, 1e-5).unwrap();
            let y2 = t.mul(y, y).unwrap();
            let l = t.sum_all(y2);
            t.scalar_value(l)
        };

        let mut tape = Tape::new();
        let x = leaf(&mut tape, vec![2, 8], x0.data().to_vec());
        let g = leaf(&mut tape, vec![8], g0.data().to_vec());
        let b = leaf(&mut tape, vec![8], b0.data().to_vec());
        let y = tape.layer_norm(x, g, b, 1e-5).unwrap();
        let y2 = tape.mul(y, y).unwrap();
        let l = tape.sum_all(y2);
        tape.backward(l).unwrap();

        let fdx = fd_grad(|v| run(v, g0.data(), b0.data()), x0.data(), 1e-5);
        let fdg = fd_grad(|v| run(x0.data(), v, b0.data()), g0.data(), 1e-5);
        let fdb = fd_grad(|v| run(x0.data(), g0.data(), v), b0.data(), 1e-5);
        assert!(max_rel_err(tape.grad(x).unwrap(), &fdx) <= 1e-5);
        assert!(max_rel_err(tape.grad(g).unwrap(), &fdg) <= 1e-5);
        assert!(max_rel_err(tape.grad(b).unwrap(), &fdb) <= 1e-5);
    }

    #[test]
    fn softmax_uniform_and_stability() {
        let mut tape = Tape::new();
        let x = tape.constant_from(vec![1, 3], vec![0.0, 0.0, 0.0]);
        let y = tape.softmax(x).unwrap();
        for v in tape.value(y) {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let big = tape.constant_from(vec![1, 2], vec![1000.0, 0.0]);
        let yb = tape.softmax(big).unwrap();
        assert!((tape.value(yb)[0] - 1.0).abs() <= 1e-12);
        assert!(tape.value(yb)[1].abs() <= 1e-12);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut rng = RngStream::new(21);
        let x0 = Tensor::randn(vec![5, 7], 3.0, &mut rng);
        let mut tape = Tape::new();
        let x = tape.constant(&x0);
        let y = tape.softmax(x).unwrap();
        for r in 0..5 {
            let s: Real = tape.value(y)[r * 7..(r + 1) * 7].iter().sum();
            assert!((s - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn log_softmax_finite_for_finite_inputs() {
        let mut tape = Tape::new();
        let x = tape.constant_from(vec![1, 3], vec![-1000.0, 0.0, 1000.0]);
        let y = tape.log_softmax(x).unwrap();
        for v in tape.value(y) {
            assert!(v.is_finite());
        }
    }

    #[test]
    fn softmax_rejects_nan_input() {
        let mut tape = Tape::new();
        let x = tape.constant_from(vec![1, 2], vec![Real::NAN, 0.0]);
        assert!(matches!(tape.softmax(x), Err(Error::Numeric(_))));
        assert!(matches!(tape.log_softmax(x), Err(Error::Numeric(_))));
    }

    #[test]
    fn softmax_gradient_matches_finite_differences() {
        let mut rng = RngStream::new(31);
        let x0 = Tensor::randn(vec![1, 7], 1.5, &mut rng);
        let wdata: Vec<Real> = (0..7).map(|i| 0.2 * (i as Real) - 0.5).collect();
        let run = |xd: &[Real]| {
            let mut t = Tape::new();
            let x = t.constant_from(vec![1, 7], xd.to_vec());
            let y = t.softmax(x).unwrap();
            let w = t.constant_from(vec![1, 7], wdata.clone());
            let p = t.mul(y, w).unwrap();
            let l = t.sum_all(p);
            t.scalar_value(l)
        };
        let mut tape = Tape::new();
        let x = leaf(&mut tape, vec![1, 7], x0.data().to_vec());
        let y = tape.softmax(x).unwrap();
        let w = tape.constant_from(vec![1, 7], wdata.clone());
        let p = tape.mul(y, w).unwrap();
        let l = tape.sum_all(p);
        tape.backward(l).unwrap();
        let fd = fd_grad(run, x0.data(), 1e-5);
        assert!(max_rel_err(tape.grad(x).unwrap(), &fd) <= 1e-6);
    }

    #[test]
    fn dropout_zero_probability_is_identity() {
        let mut rng = RngStream::new(77);
        let mut tape = Tape::new();
        let x0: Vec<Real> = (0..32).map(|i| i as Real - 7.5).collect();
        let x = tape.constant_from(vec![4, 8], x0.clone());
        let y = tape.dropout(x, 0.0, Mode::Train, &mut rng).unwrap();
        assert_eq!(tape.value(y), &x0[..]);
    }

    #[test]
    fn dropout_eval_mode_is_identity_and_draws_nothing() {
        let mut rng = RngStream::new(77);
        let mut tape = Tape::new();
        let x = tape.constant_from(vec![4, 8], vec![1.0; 32]);
        let y = tape.dropout(x, 0.5, Mode::Eval, &mut rng).unwrap();
        assert_eq!(y, x);
        assert_eq!(rng.draw_count(), 0);
    }

    #[test]
    fn dropout_rejects_p_of_one() {
        let mut rng = RngStream::new(77);
        let mut tape = Tape::new();
        let x = tape.constant_from(vec![2], vec![1.0, 2.0]);
        assert!(tape.dropout(x, 1.0, Mode::Train, &mut rng).is_err());
    }

    #[test]
    fn dropout_survivor_rate_monte_carlo() {
        // mean of 10^6 mask entries at p=0.3 should be within [0.695, 0.705]
        let mut rng = RngStream::new(4242);
        let n = 1_000_000;
        let mut tape = Tape::new();
        let x = tape.constant_from(vec![n], vec![1.0; n]);
        let y = tape.dropout(x, 0.3, Mode::Train, &mut rng).unwrap();
        let survivors = tape.value(y).iter().filter(|v| **v != 0.0).count();
        let rate = survivors as f64 / n as f64;
        assert!((0.695..=0.705).contains(&rate), "rate {rate}");
    }

    #[test]
    fn elementwise_gradients_match_finite_differences() {
        let mut rng = RngStream::new(9);
        let x0 = Tensor::randn(vec![3, 3], 1.0, &mut rng);
        for which in ["sigmoid", "tanh", "relu", "sumsq"] {
            let run = |xd: &[Real]| {
                let mut t = Tape::new();
                let x = t.constant_from(vec![3, 3], xd.to_vec());
                let y = match which {
                    "sigmoid" => t.sigmoid(x),
                    "tanh" => t.tanh(x),
                    "relu" => t.relu(x),
                    _ => t.sum_squares(x),
                };
                let l = t.sum_all(y);
                t.scalar_value(l)
            };
            let mut tape = Tape::new();
            let x = leaf(&mut tape, vec![3, 3], x0.data().to_vec());
            let y = match which {
                "sigmoid" => tape.sigmoid(x),
                "tanh" => tape.tanh(x),
                "relu" => tape.relu(x),
                _ => tape.sum_squares(x),
            };
            let l = tape.sum_all(y);
            tape.backward(l).unwrap();
            let fd = fd_grad(run, x0.data(), 1e-6);
            assert!(
                max_rel_err(tape.grad(x).unwrap(), &fd) <= 1e-5,
                "op {which}"
            );
        }
    }

    #[test]
    fn structural_ops_gradients() {
        // concat/slice/transpose/reshape/outer_add/embed pipeline vs FD
        let mut rng = RngStream::new(13);
        let x0 = Tensor::randn(vec![4, 6], 1.0, &mut rng);
        let run = |xd: &[Real]| {
            let mut t = Tape::new();
            let x = t.constant_from(vec![4, 6], xd.to_vec());
            let top = t.slice_rows(x, 0, 2).unwrap();
            let bottom = t.slice_rows(x, 2, 4).unwrap();
            let swapped = t.concat_rows(&[bottom, top]).unwrap();
            let left = t.slice_cols(swapped, 0, 3).unwrap();
            let right = t.slice_cols(swapped, 3, 6).unwrap();
            let tr = t.transpose(right).unwrap();
            let prod = t.matmul(left, tr).unwrap();
            let flat = t.reshape(prod, vec![16]).unwrap();
            let sq = t.mul(flat, flat).unwrap();
            let l = t.sum_all(sq);
            t.scalar_value(l)
        };
        let mut tape = Tape::new();
        let x = leaf(&mut tape, vec![4, 6], x0.data().to_vec());
        let top = tape.slice_rows(x, 0, 2).unwrap();
        let bottom = tape.slice_rows(x, 2, 4).unwrap();
        let swapped = tape.concat_rows(&[bottom, top]).unwrap();
        let left = tape.slice_cols(swapped, 0, 3).unwrap();
        let right = tape.slice_cols(swapped, 3, 6).unwrap();
        let tr = tape.transpose(right).unwrap();
        let prod = tape.matmul(left, tr).unwrap();
        let flat = tape.reshape(prod, vec![16]).unwrap();
        let sq = tape.mul(flat, flat).unwrap();
        let l = tape.sum_all(sq);
        tape.backward(l).unwrap();
        let fd = fd_grad(run, x0.data(), 1e-5);
        assert!(max_rel_err(tape.grad(x).unwrap(), &fd) <= 1e-5);
    }

    #[test]
    fn outer_add_and_embed_gradients() {
        let mut rng = RngStream::new(17);
        let table0 = Tensor::randn(vec![5, 3], 1.0, &mut rng);
        let enc0 = Tensor::randn(vec![2, 3], 1.0, &mut rng);
        let idx = vec![4, 0, 2];
        let run = |td: &[Real]| {
            let mut t = Tape::new();
            let table = t.constant_from(vec![5, 3], td.to_vec());
            let e = t.constant_from(vec![2, 3], enc0.data().to_vec());
            let emb = t.embed_lookup(table, &idx).unwrap();
            let oa = t.outer_add(e, emb).unwrap();
            let th = t.tanh(oa);
            let l = t.sum_all(th);
            t.scalar_value(l)
        };
        let mut tape = Tape::new();
        let table = leaf(&mut tape, vec![5, 3], table0.data().to_vec());
        let e = leaf(&mut tape, vec![2, 3], enc0.data().to_vec());
        let emb = tape.embed_lookup(table, &idx).unwrap();
        let oa = tape.outer_add(e, emb).unwrap();
        let th = tape.tanh(oa);
        let l = tape.sum_all(th);
        tape.backward(l).unwrap();
        let fd = fd_grad(run, table0.data(), 1e-5);
        assert!(max_rel_err(tape.grad(table).unwrap(), &fd) <= 1e-5);
    }

    #[test]
    fn embed_rejects_out_of_range_index() {
        let mut tape = Tape::new();
        let table = tape.constant(&Tensor::zeros(vec![3, 2]));
        assert!(matches!(
            tape.embed_lookup(table, &[3]),
            Err(Error::Vocab(_))
        ));
    }

    #[test]
    fn backward_ignores_constants() {
        let mut tape = Tape::new();
        let x = leaf(&mut tape, vec![2], vec![1.0, 2.0]);
        let c = tape.constant_from(vec![2], vec![3.0, 4.0]);
        let p = tape.mul(x, c).unwrap();
        let l = tape.sum_all(p);
        tape.backward(l).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[3.0, 4.0]);
        assert!(tape.grad(c).is_none());
    }
}
