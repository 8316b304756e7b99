//! Reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! A [`Tape`] records every operation of a forward pass together with what
//! its backward rule needs. [`Tape::backward`] walks the records in exact
//! reverse order and returns a [`Gradients`] table indexed by [`Var`].
//! Scalars are `1 × 1` matrices.
//!
//! Every forward value is checked for NaN/∞; the first non-finite result
//! aborts with [`Error::NonFinite`] naming the operation.
//!
//! ```
//! use ndarray::array;
//! use smn::diffcore::Tape;
//!
//! let mut tape = Tape::new();
//! let x = tape.param(array![[1.0, -2.0]]);
//! let y = tape.add(x, x).unwrap();
//! let loss = tape.sum(y).unwrap();
//! let grads = tape.backward(loss).unwrap();
//! assert_eq!(grads.get(x).unwrap(), &array![[2.0, 2.0]]);
//! ```

use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::sync::Arc;

use ndarray::{Array2, Axis, Zip};

use crate::error::{Error, Result};
use crate::sparse::CsrMatrix;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var {
    id: usize,
    generation: u64,
}

/// A constant sparse operator with its transpose precomputed for backward.
#[derive(Debug, Clone)]
pub struct SparseOperator {
    forward: CsrMatrix,
    transpose: CsrMatrix,
}

impl SparseOperator {
    pub fn new(matrix: CsrMatrix) -> Self {
        let transpose = matrix.transpose();
        Self {
            forward: matrix,
            transpose,
        }
    }

    pub fn matrix(&self) -> &CsrMatrix {
        &self.forward
    }
}

/// Per-node neighbor lists for attention aggregation. Each list is the set of
/// nodes that node `i` attends over.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Neighborhoods(pub Vec<Vec<usize>>);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    SpMatMul(Arc<SparseOperator>, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Hadamard(usize, usize),
    Transpose(usize),
    Sum(usize),
    RowSum(usize),
    MeanRows(usize),
    GatherRows(usize, Vec<usize>),
    MaskRows(usize, Vec<bool>),
    Scale(usize, f64),
    ScalarMul(usize, usize),
    Relu(usize),
    LeakyRelu(usize, f64),
    Gelu(usize),
    Sigmoid(usize),
    Exp(usize),
    Abs(usize),
    Huber(usize, f64),
    SteMask(usize),
    SqDistFromGram(usize),
    GraphAttention {
        features: usize,
        src: usize,
        dst: usize,
        neighborhoods: Arc<Neighborhoods>,
        slope: f64,
        weights: Vec<Vec<f64>>,
        pre_activation: Vec<Vec<f64>>,
    },
}

#[derive(Debug, Clone)]
struct Node {
    value: Array2<f64>,
    op: Op,
    requires_grad: bool,
}

/// Recorded forward computation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    generation: u64,
}

/// Gradients produced by one backward sweep.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Array2<f64>>>,
    generation: u64,
}

impl Gradients {
    /// `None` when the variable does not influence the output or does not
    /// require gradients.
    pub fn get(&self, var: Var) -> Option<&Array2<f64>> {
        if var.generation != self.generation {
            return None;
        }
        self.grads.get(var.id).and_then(Option::as_ref)
    }
}

fn shape(a: &Array2<f64>) -> (usize, usize) {
    a.dim()
}

fn check_finite(op: &'static str, value: &Array2<f64>) -> Result<()> {
    if value.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { op })
    }
}

fn same_shape(op: &'static str, a: &Array2<f64>, b: &Array2<f64>) -> Result<()> {
    if a.dim() == b.dim() {
        Ok(())
    } else {
        Err(Error::Shape {
            op,
            lhs: shape(a),
            rhs: shape(b),
        })
    }
}

/// Standard normal CDF, exact form via `erf`.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x * FRAC_1_SQRT_2))
}

fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

pub fn gelu(x: f64) -> f64 {
    x * normal_cdf(x)
}

fn gelu_grad(x: f64) -> f64 {
    normal_cdf(x) + x * normal_pdf(x)
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn huber(r: f64, delta: f64) -> f64 {
    if r.abs() <= delta {
        0.5 * r * r
    } else {
        delta * (r.abs() - 0.5 * delta)
    }
}

fn huber_grad(r: f64, delta: f64) -> f64 {
    if r.abs() <= delta {
        r
    } else {
        delta * r.signum()
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// NaN passes through so the finiteness check still sees it.
fn relu(x: f64) -> f64 {
    if x > 0.0 || x.is_nan() {
        x
    } else {
        0.0
    }
}

fn leaky(x: f64, slope: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        slope * x
    }
}

/// Softmax-normalized attention of every node over its neighborhood, given
/// per-node source and destination scores. Returns `(weights, pre_activation)`
/// where `pre_activation[i][k] = src[i] + dst[nbr_k]`.
pub fn attention_weights(
    src: &[f64],
    dst: &[f64],
    neighborhoods: &Neighborhoods,
    slope: f64,
) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let mut weights = Vec::with_capacity(neighborhoods.0.len());
    let mut pre = Vec::with_capacity(neighborhoods.0.len());
    for (i, nbrs) in neighborhoods.0.iter().enumerate() {
        let s: Vec<f64> = nbrs.iter().map(|&j| src[i] + dst[j]).collect();
        let e: Vec<f64> = s.iter().map(|&v| leaky(v, slope)).collect();
        let max = e.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exp: Vec<f64> = e.iter().map(|&v| (v - max).exp()).collect();
        let total: f64 = exp.iter().sum();
        weights.push(exp.iter().map(|v| v / total).collect());
        pre.push(s);
    }
    (weights, pre)
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drops every record. Vars created before the call become invalid.
    pub fn clear(&mut self) {
        self.nodes.clear();
        self.generation += 1;
    }

    /// Drops records from position `len` on, keeping earlier vars valid.
    /// Vars recorded after `len` must not be used again.
    pub fn truncate(&mut self, len: usize) {
        self.nodes.truncate(len);
    }

    fn resolve(&self, var: Var) -> Result<usize> {
        if var.generation != self.generation {
            return Err(Error::Tape(format!(
                "var {} belongs to a cleared tape (generation {} vs {})",
                var.id, var.generation, self.generation
            )));
        }
        if var.id >= self.nodes.len() {
            return Err(Error::Tape(format!("var {} is not on this tape", var.id)));
        }
        Ok(var.id)
    }

    pub fn value(&self, var: Var) -> Result<&Array2<f64>> {
        let id = self.resolve(var)?;
        Ok(&self.nodes[id].value)
    }

    /// Value of a `1 × 1` variable.
    pub fn scalar(&self, var: Var) -> Result<f64> {
        let v = self.value(var)?;
        if v.dim() != (1, 1) {
            return Err(Error::Shape {
                op: "scalar",
                lhs: v.dim(),
                rhs: (1, 1),
            });
        }
        Ok(v[[0, 0]])
    }

    fn push(&mut self, op_name: &'static str, value: Array2<f64>, op: Op, requires_grad: bool) -> Result<Var> {
        check_finite(op_name, &value)?;
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var {
            id: self.nodes.len() - 1,
            generation: self.generation,
        })
    }

    fn leaf(&mut self, value: Array2<f64>, requires_grad: bool) -> Var {
        // Leaves are caller-provided; non-finite input is reported at first use.
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var {
            id: self.nodes.len() - 1,
            generation: self.generation,
        }
    }

    /// Differentiable input.
    pub fn param(&mut self, value: Array2<f64>) -> Var {
        self.leaf(value, true)
    }

    /// Input that never receives a gradient.
    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.leaf(value, false)
    }

    pub fn scalar_constant(&mut self, value: f64) -> Var {
        self.constant(Array2::from_elem((1, 1), value))
    }

    fn unary(
        &mut self,
        op_name: &'static str,
        a: Var,
        f: impl Fn(f64) -> f64,
        op: impl FnOnce(usize) -> Op,
    ) -> Result<Var> {
        let ia = self.resolve(a)?;
        let value = self.nodes[ia].value.mapv(f);
        let rg = self.nodes[ia].requires_grad;
        self.push(op_name, value, op(ia), rg)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.resolve(a)?, self.resolve(b)?);
        let (va, vb) = (&self.nodes[ia].value, &self.nodes[ib].value);
        if va.ncols() != vb.nrows() {
            return Err(Error::Shape {
                op: "matmul",
                lhs: shape(va),
                rhs: shape(vb),
            });
        }
        let value = va.dot(vb);
        let rg = self.nodes[ia].requires_grad || self.nodes[ib].requires_grad;
        self.push("matmul", value, Op::MatMul(ia, ib), rg)
    }

    /// `matrix · a` for a constant sparse matrix.
    pub fn sparse_matmul(&mut self, matrix: &Arc<SparseOperator>, a: Var) -> Result<Var> {
        let ia = self.resolve(a)?;
        let va = &self.nodes[ia].value;
        let (_, cols) = matrix.forward.shape();
        if cols != va.nrows() {
            return Err(Error::Shape {
                op: "sparse_matmul",
                lhs: matrix.forward.shape(),
                rhs: shape(va),
            });
        }
        let value = matrix.forward.matmul(va);
        let rg = self.nodes[ia].requires_grad;
        self.push("sparse_matmul", value, Op::SpMatMul(Arc::clone(matrix), ia), rg)
    }

    fn binary_same_shape(
        &mut self,
        op_name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let (ia, ib) = (self.resolve(a)?, self.resolve(b)?);
        let (va, vb) = (&self.nodes[ia].value, &self.nodes[ib].value);
        same_shape(op_name, va, vb)?;
        let mut value = va.clone();
        Zip::from(&mut value).and(vb).for_each(|x, &y| *x = f(*x, y));
        let rg = self.nodes[ia].requires_grad || self.nodes[ib].requires_grad;
        self.push(op_name, value, op, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let op = Op::Add(self.resolve(a)?, self.resolve(b)?);
        self.binary_same_shape("add", a, b, |x, y| x + y, op)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let op = Op::Sub(self.resolve(a)?, self.resolve(b)?);
        self.binary_same_shape("sub", a, b, |x, y| x - y, op)
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        let op = Op::Hadamard(self.resolve(a)?, self.resolve(b)?);
        self.binary_same_shape("hadamard", a, b, |x, y| x * y, op)
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let ia = self.resolve(a)?;
        let value = self.nodes[ia].value.t().to_owned();
        let rg = self.nodes[ia].requires_grad;
        self.push("transpose", value, Op::Transpose(ia), rg)
    }

    /// Sum of all entries, as a `1 × 1` value.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let ia = self.resolve(a)?;
        let value = Array2::from_elem((1, 1), self.nodes[ia].value.sum());
        let rg = self.nodes[ia].requires_grad;
        self.push("sum", value, Op::Sum(ia), rg)
    }

    /// `n × m → n × 1`.
    pub fn row_sum(&mut self, a: Var) -> Result<Var> {
        let ia = self.resolve(a)?;
        let value = self.nodes[ia].value.sum_axis(Axis(1)).insert_axis(Axis(1));
        let rg = self.nodes[ia].requires_grad;
        self.push("row_sum", value, Op::RowSum(ia), rg)
    }

    /// Column means, `n × m → 1 × m`. Requires at least one row.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        let ia = self.resolve(a)?;
        let v = &self.nodes[ia].value;
        if v.nrows() == 0 {
            return Err(Error::Shape {
                op: "mean_rows",
                lhs: shape(v),
                rhs: (1, v.ncols()),
            });
        }
        let value = v.mean_axis(Axis(0)).expect("non-empty").insert_axis(Axis(0));
        let rg = self.nodes[ia].requires_grad;
        self.push("mean_rows", value, Op::MeanRows(ia), rg)
    }

    /// Selects rows by index (repeats allowed).
    pub fn gather_rows(&mut self, a: Var, rows: &[usize]) -> Result<Var> {
        let ia = self.resolve(a)?;
        let v = &self.nodes[ia].value;
        if let Some(&bad) = rows.iter().find(|&&r| r >= v.nrows()) {
            return Err(Error::Shape {
                op: "gather_rows",
                lhs: shape(v),
                rhs: (bad, 0),
            });
        }
        let value = v.select(Axis(0), rows);
        let rg = self.nodes[ia].requires_grad;
        self.push("gather_rows", value, Op::GatherRows(ia, rows.to_vec()), rg)
    }

    /// Zeroes rows whose flag is false. The zeroed rows pass no gradient.
    pub fn mask_rows(&mut self, a: Var, keep: &[bool]) -> Result<Var> {
        let ia = self.resolve(a)?;
        let v = &self.nodes[ia].value;
        if keep.len() != v.nrows() {
            return Err(Error::Shape {
                op: "mask_rows",
                lhs: shape(v),
                rhs: (keep.len(), 1),
            });
        }
        let mut value = v.clone();
        for (mut row, &k) in value.rows_mut().into_iter().zip(keep) {
            if !k {
                row.fill(0.0);
            }
        }
        let rg = self.nodes[ia].requires_grad;
        self.push("mask_rows", value, Op::MaskRows(ia, keep.to_vec()), rg)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        self.unary("scale", a, |x| c * x, |ia| Op::Scale(ia, c))
    }

    /// Broadcast product of a `1 × 1` variable with any matrix.
    pub fn scalar_mul(&mut self, s: Var, a: Var) -> Result<Var> {
        let (is, ia) = (self.resolve(s)?, self.resolve(a)?);
        let vs = &self.nodes[is].value;
        if vs.dim() != (1, 1) {
            return Err(Error::Shape {
                op: "scalar_mul",
                lhs: shape(vs),
                rhs: (1, 1),
            });
        }
        let c = vs[[0, 0]];
        let value = self.nodes[ia].value.mapv(|x| c * x);
        let rg = self.nodes[is].requires_grad || self.nodes[ia].requires_grad;
        self.push("scalar_mul", value, Op::ScalarMul(is, ia), rg)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary("relu", a, relu, Op::Relu)
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Result<Var> {
        self.unary("leaky_relu", a, |x| leaky(x, slope), |ia| Op::LeakyRelu(ia, slope))
    }

    /// Exact GELU, `x · Φ(x)`.
    pub fn gelu(&mut self, a: Var) -> Result<Var> {
        self.unary("gelu", a, gelu, Op::Gelu)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary("sigmoid", a, sigmoid, Op::Sigmoid)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.unary("exp", a, f64::exp, Op::Exp)
    }

    /// Subgradient is taken as zero at zero.
    pub fn abs(&mut self, a: Var) -> Result<Var> {
        self.unary("abs", a, f64::abs, Op::Abs)
    }

    /// Elementwise Huber penalty of a residual.
    pub fn huber(&mut self, a: Var, delta: f64) -> Result<Var> {
        self.unary("huber", a, |r| huber(r, delta), |ia| Op::Huber(ia, delta))
    }

    /// Forward `w ⊙ mask`; backward hands the upstream gradient to `w`
    /// untouched (straight-through). `mask` is a constant.
    pub fn ste_mask(&mut self, w: Var, mask: &Array2<f64>) -> Result<Var> {
        let iw = self.resolve(w)?;
        let vw = &self.nodes[iw].value;
        same_shape("ste_mask", vw, mask)?;
        let value = vw * mask;
        let rg = self.nodes[iw].requires_grad;
        self.push("ste_mask", value, Op::SteMask(iw), rg)
    }

    /// From a Gram matrix `z = X Xᵀ`, squared distances
    /// `d_jk = z_jj + z_kk − 2 z_jk`.
    pub fn sq_dist_from_gram(&mut self, z: Var) -> Result<Var> {
        let iz = self.resolve(z)?;
        let vz = &self.nodes[iz].value;
        let m = vz.nrows();
        if vz.ncols() != m {
            return Err(Error::Shape {
                op: "sq_dist_from_gram",
                lhs: shape(vz),
                rhs: (m, m),
            });
        }
        let value = Array2::from_shape_fn((m, m), |(j, k)| vz[[j, j]] + vz[[k, k]] - 2.0 * vz[[j, k]]);
        let rg = self.nodes[iz].requires_grad;
        self.push("sq_dist_from_gram", value, Op::SqDistFromGram(iz), rg)
    }

    /// Attention-weighted neighbor sum: `out_i = Σ_j α_ij x_j` with
    /// `α_i· = softmax_j(leaky_relu(src_i + dst_j))` over `neighborhoods[i]`.
    pub fn graph_attention(
        &mut self,
        features: Var,
        src: Var,
        dst: Var,
        neighborhoods: &Arc<Neighborhoods>,
        slope: f64,
    ) -> Result<Var> {
        let (ix, is, id) = (self.resolve(features)?, self.resolve(src)?, self.resolve(dst)?);
        let vx = &self.nodes[ix].value;
        let n = vx.nrows();
        for v in [&self.nodes[is].value, &self.nodes[id].value] {
            if v.dim() != (n, 1) {
                return Err(Error::Shape {
                    op: "graph_attention",
                    lhs: shape(vx),
                    rhs: shape(v),
                });
            }
        }
        if neighborhoods.0.len() != n
            || neighborhoods
                .0
                .iter()
                .any(|nb| nb.is_empty() || nb.iter().any(|&j| j >= n))
        {
            return Err(Error::Config(
                "every node needs a non-empty, in-range neighborhood".into(),
            ));
        }
        let src_v: Vec<f64> = self.nodes[is].value.iter().copied().collect();
        let dst_v: Vec<f64> = self.nodes[id].value.iter().copied().collect();
        let (weights, pre_activation) = attention_weights(&src_v, &dst_v, neighborhoods, slope);
        let mut value = Array2::zeros(vx.dim());
        for (i, nbrs) in neighborhoods.0.iter().enumerate() {
            let mut row = value.row_mut(i);
            for (&j, &a) in nbrs.iter().zip(&weights[i]) {
                row.scaled_add(a, &vx.row(j));
            }
        }
        let rg = self.nodes[ix].requires_grad || self.nodes[is].requires_grad || self.nodes[id].requires_grad;
        let op = Op::GraphAttention {
            features: ix,
            src: is,
            dst: id,
            neighborhoods: Arc::clone(neighborhoods),
            slope,
            weights,
            pre_activation,
        };
        self.push("graph_attention", value, op, rg)
    }

    /// Attention weights recorded by a [`Tape::graph_attention`] node.
    pub fn attention_of(&self, var: Var) -> Result<&[Vec<f64>]> {
        let id = self.resolve(var)?;
        match &self.nodes[id].op {
            Op::GraphAttention { weights, .. } => Ok(weights),
            _ => Err(Error::Tape("not a graph_attention node".into())),
        }
    }

    /// Gradients of the `1 × 1` variable `output` with respect to every
    /// recorded node that requires them.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        let out = self.resolve(output)?;
        if self.nodes[out].value.dim() != (1, 1) {
            return Err(Error::Shape {
                op: "backward",
                lhs: self.nodes[out].value.dim(),
                rhs: (1, 1),
            });
        }
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; out + 1];
        grads[out] = Some(Array2::ones((1, 1)));

        for id in (0..=out).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            self.propagate(&node.op, &node.value, &g, &mut grads)?;
            grads[id] = Some(g);
        }
        for (id, g) in grads.iter_mut().enumerate() {
            if !self.nodes[id].requires_grad {
                *g = None;
            }
        }
        Ok(Gradients {
            grads,
            generation: self.generation,
        })
    }

    fn accumulate(&self, grads: &mut [Option<Array2<f64>>], id: usize, g: Array2<f64>) {
        if !self.nodes[id].requires_grad {
            return;
        }
        match &mut grads[id] {
            Some(acc) => *acc += &g,
            slot @ None => *slot = Some(g),
        }
    }

    fn input(&self, id: usize) -> &Array2<f64> {
        &self.nodes[id].value
    }

    fn propagate(&self, op: &Op, out: &Array2<f64>, g: &Array2<f64>, grads: &mut [Option<Array2<f64>>]) -> Result<()> {
        match op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (va, vb) = (self.input(*a), self.input(*b));
                if self.nodes[*a].requires_grad {
                    self.accumulate(grads, *a, g.dot(&vb.t()));
                }
                if self.nodes[*b].requires_grad {
                    self.accumulate(grads, *b, va.t().dot(g));
                }
            }
            Op::SpMatMul(m, a) => self.accumulate(grads, *a, m.transpose.matmul(g)),
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, -g);
            }
            Op::Hadamard(a, b) => {
                let (va, vb) = (self.input(*a), self.input(*b));
                self.accumulate(grads, *a, g * vb);
                self.accumulate(grads, *b, g * va);
            }
            Op::Transpose(a) => self.accumulate(grads, *a, g.t().to_owned()),
            Op::Sum(a) => {
                let dim = self.input(*a).dim();
                self.accumulate(grads, *a, Array2::from_elem(dim, g[[0, 0]]));
            }
            Op::RowSum(a) => {
                let dim = self.input(*a).dim();
                let back = Array2::from_shape_fn(dim, |(r, _)| g[[r, 0]]);
                self.accumulate(grads, *a, back);
            }
            Op::MeanRows(a) => {
                let dim = self.input(*a).dim();
                let n = dim.0 as f64;
                let back = Array2::from_shape_fn(dim, |(_, c)| g[[0, c]] / n);
                self.accumulate(grads, *a, back);
            }
            Op::GatherRows(a, rows) => {
                let mut back = Array2::zeros(self.input(*a).dim());
                for (k, &r) in rows.iter().enumerate() {
                    let mut dst = back.row_mut(r);
                    dst += &g.row(k);
                }
                self.accumulate(grads, *a, back);
            }
            Op::MaskRows(a, keep) => {
                let mut back = g.clone();
                for (mut row, &k) in back.rows_mut().into_iter().zip(keep) {
                    if !k {
                        row.fill(0.0);
                    }
                }
                self.accumulate(grads, *a, back);
            }
            Op::Scale(a, c) => self.accumulate(grads, *a, g * *c),
            Op::ScalarMul(s, a) => {
                let c = self.input(*s)[[0, 0]];
                let va = self.input(*a);
                if self.nodes[*s].requires_grad {
                    let ds = (g * va).sum();
                    self.accumulate(grads, *s, Array2::from_elem((1, 1), ds));
                }
                self.accumulate(grads, *a, g * c);
            }
            Op::Relu(a) => {
                let back = Zip::from(g)
                    .and(self.input(*a))
                    .map_collect(|&g, &x| if x > 0.0 { g } else { 0.0 });
                self.accumulate(grads, *a, back);
            }
            Op::LeakyRelu(a, slope) => {
                let back = Zip::from(g)
                    .and(self.input(*a))
                    .map_collect(|&g, &x| if x > 0.0 { g } else { slope * g });
                self.accumulate(grads, *a, back);
            }
            Op::Gelu(a) => {
                let back = Zip::from(g).and(self.input(*a)).map_collect(|&g, &x| g * gelu_grad(x));
                self.accumulate(grads, *a, back);
            }
            Op::Sigmoid(a) => {
                let back = Zip::from(g).and(out).map_collect(|&g, &s| g * s * (1.0 - s));
                self.accumulate(grads, *a, back);
            }
            Op::Exp(a) => self.accumulate(grads, *a, g * out),
            Op::Abs(a) => {
                let back = Zip::from(g).and(self.input(*a)).map_collect(|&g, &x| g * sign(x));
                self.accumulate(grads, *a, back);
            }
            Op::Huber(a, delta) => {
                let back = Zip::from(g)
                    .and(self.input(*a))
                    .map_collect(|&g, &r| g * huber_grad(r, *delta));
                self.accumulate(grads, *a, back);
            }
            Op::SteMask(w) => self.accumulate(grads, *w, g.clone()),
            Op::SqDistFromGram(z) => {
                let m = g.nrows();
                let mut back = g * -2.0;
                let rows = g.sum_axis(Axis(1));
                let cols = g.sum_axis(Axis(0));
                for j in 0..m {
                    back[[j, j]] += rows[j] + cols[j];
                }
                self.accumulate(grads, *z, back);
            }
            Op::GraphAttention {
                features,
                src,
                dst,
                neighborhoods,
                slope,
                weights,
                pre_activation,
            } => {
                let vx = self.input(*features);
                let n = vx.nrows();
                let mut d_features = Array2::zeros(vx.dim());
                let mut d_src = Array2::zeros((n, 1));
                let mut d_dst = Array2::zeros((n, 1));
                for (i, nbrs) in neighborhoods.0.iter().enumerate() {
                    let gi = g.row(i);
                    let alpha = &weights[i];
                    let d_alpha: Vec<f64> = nbrs.iter().map(|&j| gi.dot(&vx.row(j))).collect();
                    let mean: f64 = alpha.iter().zip(&d_alpha).map(|(a, d)| a * d).sum();
                    for (k, &j) in nbrs.iter().enumerate() {
                        d_features.row_mut(j).scaled_add(alpha[k], &gi);
                        let d_e = alpha[k] * (d_alpha[k] - mean);
                        let d_s = if pre_activation[i][k] > 0.0 { d_e } else { slope * d_e };
                        d_src[[i, 0]] += d_s;
                        d_dst[[j, 0]] += d_s;
                    }
                }
                self.accumulate(grads, *features, d_features);
                self.accumulate(grads, *src, d_src);
                self.accumulate(grads, *dst, d_dst);
            }
        }
        Ok(())
    }
}
