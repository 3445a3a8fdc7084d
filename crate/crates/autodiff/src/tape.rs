//! Recording tape and differentiable handles.
//!
//! A [`Tape`] owns every value produced during one forward pass. [`Var`] is a
//! cheap `Copy` handle into it. Operations append a node holding the output
//! value and enough structure to run the local vector-Jacobian product later;
//! [`Tape::backward`] walks the nodes in reverse insertion order, which is a
//! valid topological order because inputs always exist before their consumers.

use std::cell::{Ref, RefCell};
use std::sync::Arc;

use crate::error::{AutodiffError, Result};
use crate::kernels::{self, gemm};
use crate::tensor::Tensor;

/// Pointwise nonlinearities and scalings with a closed-form derivative.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum UnaryOp {
    Neg,
    Sigmoid,
    Tanh,
    Silu,
    Square,
    Softplus,
    Scale(f64),
}

impl UnaryOp {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            UnaryOp::Neg => -x,
            UnaryOp::Sigmoid => kernels::sigmoid(x),
            UnaryOp::Tanh => x.tanh(),
            UnaryOp::Silu => x * kernels::sigmoid(x),
            UnaryOp::Square => x * x,
            UnaryOp::Softplus => kernels::softplus(x),
            UnaryOp::Scale(c) => c * x,
        }
    }

    /// Derivative at input `x` given the already computed output `y`.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            UnaryOp::Neg => -1.0,
            UnaryOp::Sigmoid => y * (1.0 - y),
            UnaryOp::Tanh => 1.0 - y * y,
            UnaryOp::Silu => {
                let s = kernels::sigmoid(x);
                s + x * s * (1.0 - s)
            }
            UnaryOp::Square => 2.0 * x,
            UnaryOp::Softplus => kernels::sigmoid(x),
            UnaryOp::Scale(c) => c,
        }
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Unary(usize, UnaryOp),
    MatMul(usize, usize),
    AddRow(usize, usize),
    MulCol(usize, usize),
    ScaleRows(usize, Arc<[f64]>),
    Sum(usize),
    Mean(usize),
    SumAxis(usize, usize),
    RowSqNorm(usize),
    Gather(usize, Arc<[usize]>),
    ScatterAdd(usize, Arc<[usize]>),
    Concat(Vec<usize>),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Explicit, per-forward-pass operation record.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &self.shape())
            .finish()
    }
}

/// Gradients of one backward pass, indexed by node id.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of a leaf that was created with [`Tape::param`].
    pub fn get(&self, var: Var<'_>) -> Option<&Tensor> {
        self.grads.get(var.id).and_then(Option::as_ref)
    }

    pub fn wrt(&self, var: Var<'_>) -> Tensor {
        self.get(var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(&var.shape()))
    }
}

fn accumulate(slot: &mut Option<Vec<f64>>, contribution: Vec<f64>) {
    match slot {
        Some(existing) => {
            for (e, c) in existing.iter_mut().zip(contribution) {
                *e += c;
            }
        }
        None => *slot = Some(contribution),
    }
}

fn require_rank2(op: &'static str, t: &Tensor) -> Result<(usize, usize)> {
    if t.rank() != 2 {
        return Err(AutodiffError::Rank {
            op,
            expected: 2,
            shape: t.shape().to_vec(),
        });
    }
    Ok((t.shape()[0], t.shape()[1]))
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.borrow().is_empty()
    }

    /// Drops every recorded node. Requires that no [`Var`] is still alive.
    pub fn reset(&mut self) {
        self.nodes.get_mut().clear();
    }

    fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// Differentiable leaf.
    pub fn param(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, false)
    }

    fn requires_grad(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    /// Reverse sweep from a scalar `loss`.
    ///
    /// Every leaf created with [`Tape::param`] receives a gradient, zero when
    /// it does not influence the loss.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        if !std::ptr::eq(loss.tape, self) {
            return Err(AutodiffError::Detached);
        }
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id];
        if root.value.len() != 1 {
            return Err(AutodiffError::NonScalarLoss {
                shape: root.value.shape().to_vec(),
            });
        }
        if !root.requires_grad {
            return Err(AutodiffError::Detached);
        }

        let mut grads: Vec<Option<Vec<f64>>> = vec![None; nodes.len()];
        grads[loss.id] = Some(vec![1.0]);

        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[id].take() else {
                continue;
            };
            propagate(&nodes, node, &g, &mut grads);
        }

        let out = nodes
            .iter()
            .zip(grads)
            .map(|(node, g)| match (&node.op, node.requires_grad) {
                (Op::Leaf, true) => Some(match g {
                    Some(data) => Tensor::new(node.value.shape().to_vec(), data)
                        .expect("gradient matches leaf shape"),
                    None => Tensor::zeros(node.value.shape()),
                }),
                _ => None,
            })
            .collect();
        Ok(Gradients { grads: out })
    }
}

/// Local vector-Jacobian products of `node` given its output gradient `g`.
fn propagate(nodes: &[Node], node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
    let wants = |id: usize| nodes[id].requires_grad;
    let val = |id: usize| &nodes[id].value;
    match &node.op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            if wants(*a) {
                accumulate(&mut grads[*a], g.to_vec());
            }
            if wants(*b) {
                accumulate(&mut grads[*b], g.to_vec());
            }
        }
        Op::Sub(a, b) => {
            if wants(*a) {
                accumulate(&mut grads[*a], g.to_vec());
            }
            if wants(*b) {
                accumulate(&mut grads[*b], g.iter().map(|v| -v).collect());
            }
        }
        Op::Mul(a, b) => {
            let (va, vb) = (val(*a).data(), val(*b).data());
            if wants(*a) {
                accumulate(&mut grads[*a], g.iter().zip(vb).map(|(g, y)| g * y).collect());
            }
            if wants(*b) {
                accumulate(&mut grads[*b], g.iter().zip(va).map(|(g, x)| g * x).collect());
            }
        }
        Op::Unary(a, kind) => {
            let x = val(*a).data();
            let y = node.value.data();
            let d = g
                .iter()
                .zip(x.iter().zip(y))
                .map(|(g, (&x, &y))| g * kind.derivative(x, y))
                .collect();
            accumulate(&mut grads[*a], d);
        }
        Op::MatMul(a, b) => {
            let (ta, tb) = (val(*a), val(*b));
            let (m, k) = (ta.shape()[0], ta.shape()[1]);
            let n = tb.shape()[1];
            if wants(*a) {
                // dA = G * B^T
                let mut da = vec![0.0; m * k];
                gemm(m, n, k, g, false, tb.data(), true, &mut da, 0.0);
                accumulate(&mut grads[*a], da);
            }
            if wants(*b) {
                // dB = A^T * G
                let mut db = vec![0.0; k * n];
                gemm(k, m, n, ta.data(), true, g, false, &mut db, 0.0);
                accumulate(&mut grads[*b], db);
            }
        }
        Op::AddRow(a, b) => {
            if wants(*a) {
                accumulate(&mut grads[*a], g.to_vec());
            }
            if wants(*b) {
                let cols = val(*b).len();
                let mut db = vec![0.0; cols];
                for row in g.chunks_exact(cols) {
                    for (d, v) in db.iter_mut().zip(row) {
                        *d += v;
                    }
                }
                accumulate(&mut grads[*b], db);
            }
        }
        Op::MulCol(a, c) => {
            let ta = val(*a);
            let col = val(*c).data();
            let cols = ta.cols();
            if wants(*a) {
                let mut da = vec![0.0; g.len()];
                for ((drow, grow), s) in da.chunks_exact_mut(cols).zip(g.chunks_exact(cols)).zip(col) {
                    for (d, gv) in drow.iter_mut().zip(grow) {
                        *d = gv * s;
                    }
                }
                accumulate(&mut grads[*a], da);
            }
            if wants(*c) {
                let dc = g
                    .chunks_exact(cols)
                    .zip(ta.data().chunks_exact(cols))
                    .map(|(gr, ar)| gr.iter().zip(ar).map(|(x, y)| x * y).sum())
                    .collect();
                accumulate(&mut grads[*c], dc);
            }
        }
        Op::ScaleRows(a, scale) => {
            let cols = val(*a).cols();
            let mut da = g.to_vec();
            for (row, s) in da.chunks_exact_mut(cols).zip(scale.iter()) {
                for v in row {
                    *v *= s;
                }
            }
            accumulate(&mut grads[*a], da);
        }
        Op::Sum(a) => {
            accumulate(&mut grads[*a], vec![g[0]; val(*a).len()]);
        }
        Op::Mean(a) => {
            let n = val(*a).len();
            accumulate(&mut grads[*a], vec![g[0] / n as f64; n]);
        }
        Op::SumAxis(a, axis) => {
            let ta = val(*a);
            let (r, c) = (ta.shape()[0], ta.shape()[1]);
            let mut da = vec![0.0; r * c];
            for i in 0..r {
                for j in 0..c {
                    da[i * c + j] = if *axis == 0 { g[j] } else { g[i] };
                }
            }
            accumulate(&mut grads[*a], da);
        }
        Op::RowSqNorm(a) => {
            let ta = val(*a);
            let cols = ta.cols();
            let mut da = vec![0.0; ta.len()];
            for ((drow, arow), gv) in da.chunks_exact_mut(cols).zip(ta.data().chunks_exact(cols)).zip(g) {
                for (d, x) in drow.iter_mut().zip(arow) {
                    *d = 2.0 * x * gv;
                }
            }
            accumulate(&mut grads[*a], da);
        }
        Op::Gather(a, idx) => {
            let ta = val(*a);
            let cols = ta.cols();
            let mut da = vec![0.0; ta.len()];
            for (grow, &src) in g.chunks_exact(cols).zip(idx.iter()) {
                for (d, v) in da[src * cols..(src + 1) * cols].iter_mut().zip(grow) {
                    *d += v;
                }
            }
            accumulate(&mut grads[*a], da);
        }
        Op::ScatterAdd(a, idx) => {
            let ta = val(*a);
            let cols = ta.cols();
            let mut da = Vec::with_capacity(ta.len());
            for &dst in idx.iter() {
                da.extend_from_slice(&g[dst * cols..(dst + 1) * cols]);
            }
            accumulate(&mut grads[*a], da);
        }
        Op::Concat(parts) => {
            let total = node.value.cols();
            let rows = node.value.rows();
            let mut offset = 0;
            for &p in parts {
                let pc = val(p).cols();
                if wants(p) {
                    let mut dp = Vec::with_capacity(rows * pc);
                    for r in 0..rows {
                        dp.extend_from_slice(&g[r * total + offset..r * total + offset + pc]);
                    }
                    accumulate(&mut grads[p], dp);
                }
                offset += pc;
            }
        }
    }
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn id(&self) -> usize {
        self.id
    }

    /// Borrow of the recorded value. Do not hold it across calls that record.
    pub fn value_ref(&self) -> Ref<'t, Tensor> {
        Ref::map(self.tape.nodes.borrow(), |n| &n[self.id].value)
    }

    pub fn value(&self) -> Tensor {
        self.value_ref().clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value_ref().shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.requires_grad(self.id)
    }

    fn same_tape(&self, other: &Var<'t>) {
        assert!(
            std::ptr::eq(self.tape, other.tape),
            "operands recorded on different tapes"
        );
    }

    fn binary_same_shape(
        self,
        other: Var<'t>,
        op_name: &'static str,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var<'t>> {
        self.same_tape(&other);
        let value = {
            let nodes = self.tape.nodes.borrow();
            let (a, b) = (&nodes[self.id].value, &nodes[other.id].value);
            if a.shape() != b.shape() {
                return Err(AutodiffError::ShapeMismatch {
                    op: op_name,
                    lhs: a.shape().to_vec(),
                    rhs: b.shape().to_vec(),
                });
            }
            let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
            Tensor::new(a.shape().to_vec(), data)?
        };
        let rg = self.requires_grad() || other.requires_grad();
        Ok(self.tape.push(value, op, rg))
    }

    pub fn add(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary_same_shape(other, "add", |a, b| a + b, Op::Add(self.id, other.id))
    }

    pub fn sub(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary_same_shape(other, "sub", |a, b| a - b, Op::Sub(self.id, other.id))
    }

    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary_same_shape(other, "mul", |a, b| a * b, Op::Mul(self.id, other.id))
    }

    pub fn unary(self, kind: UnaryOp) -> Var<'t> {
        let value = self.value_ref().map(|x| kind.apply(x));
        let rg = self.requires_grad();
        self.tape.push(value, Op::Unary(self.id, kind), rg)
    }

    pub fn neg(self) -> Var<'t> {
        self.unary(UnaryOp::Neg)
    }

    pub fn sigmoid(self) -> Var<'t> {
        self.unary(UnaryOp::Sigmoid)
    }

    pub fn tanh(self) -> Var<'t> {
        self.unary(UnaryOp::Tanh)
    }

    pub fn silu(self) -> Var<'t> {
        self.unary(UnaryOp::Silu)
    }

    pub fn square(self) -> Var<'t> {
        self.unary(UnaryOp::Square)
    }

    pub fn softplus(self) -> Var<'t> {
        self.unary(UnaryOp::Softplus)
    }

    pub fn scale(self, c: f64) -> Var<'t> {
        self.unary(UnaryOp::Scale(c))
    }

    pub fn matmul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&other);
        let value = {
            let nodes = self.tape.nodes.borrow();
            let (a, b) = (&nodes[self.id].value, &nodes[other.id].value);
            let (m, k) = require_rank2("matmul", a)?;
            let (k2, n) = require_rank2("matmul", b)?;
            if k != k2 {
                return Err(AutodiffError::ShapeMismatch {
                    op: "matmul",
                    lhs: a.shape().to_vec(),
                    rhs: b.shape().to_vec(),
                });
            }
            let mut out = vec![0.0; m * n];
            gemm(m, k, n, a.data(), false, b.data(), false, &mut out, 0.0);
            Tensor::matrix(m, n, out)?
        };
        let rg = self.requires_grad() || other.requires_grad();
        Ok(self.tape.push(value, Op::MatMul(self.id, other.id), rg))
    }

    /// Adds a bias row (`[n]` or `[1, n]`) to every row of an `m x n` matrix.
    pub fn add_row(self, bias: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&bias);
        let value = {
            let nodes = self.tape.nodes.borrow();
            let (a, b) = (&nodes[self.id].value, &nodes[bias.id].value);
            let (_, n) = require_rank2("add_row", a)?;
            if b.len() != n || b.rows() != 1 {
                return Err(AutodiffError::ShapeMismatch {
                    op: "add_row",
                    lhs: a.shape().to_vec(),
                    rhs: b.shape().to_vec(),
                });
            }
            let mut data = a.data().to_vec();
            for row in data.chunks_exact_mut(n) {
                for (x, y) in row.iter_mut().zip(b.data()) {
                    *x += y;
                }
            }
            Tensor::new(a.shape().to_vec(), data)?
        };
        let rg = self.requires_grad() || bias.requires_grad();
        Ok(self.tape.push(value, Op::AddRow(self.id, bias.id), rg))
    }

    /// Multiplies row `i` of an `m x n` matrix by entry `i` of an `m x 1` column.
    pub fn mul_col(self, col: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&col);
        let value = {
            let nodes = self.tape.nodes.borrow();
            let (a, c) = (&nodes[self.id].value, &nodes[col.id].value);
            let (m, n) = require_rank2("mul_col", a)?;
            if c.shape() != [m, 1] {
                return Err(AutodiffError::ShapeMismatch {
                    op: "mul_col",
                    lhs: a.shape().to_vec(),
                    rhs: c.shape().to_vec(),
                });
            }
            let mut data = a.data().to_vec();
            if n > 0 {
                for (row, s) in data.chunks_exact_mut(n).zip(c.data()) {
                    for x in row {
                        *x *= s;
                    }
                }
            }
            Tensor::new(a.shape().to_vec(), data)?
        };
        let rg = self.requires_grad() || col.requires_grad();
        Ok(self.tape.push(value, Op::MulCol(self.id, col.id), rg))
    }

    /// Multiplies row `i` by the constant `scale[i]`.
    pub fn scale_rows(self, scale: Arc<[f64]>) -> Result<Var<'t>> {
        let value = {
            let a = self.value_ref();
            let (m, n) = require_rank2("scale_rows", &a)?;
            if scale.len() != m {
                return Err(AutodiffError::ShapeMismatch {
                    op: "scale_rows",
                    lhs: a.shape().to_vec(),
                    rhs: vec![scale.len()],
                });
            }
            let mut data = a.data().to_vec();
            if n > 0 {
                for (row, s) in data.chunks_exact_mut(n).zip(scale.iter()) {
                    for x in row {
                        *x *= s;
                    }
                }
            }
            Tensor::new(a.shape().to_vec(), data)?
        };
        let rg = self.requires_grad();
        Ok(self.tape.push(value, Op::ScaleRows(self.id, scale), rg))
    }

    pub fn sum(self) -> Var<'t> {
        let value = Tensor::scalar(self.value_ref().sum());
        let rg = self.requires_grad();
        self.tape.push(value, Op::Sum(self.id), rg)
    }

    pub fn mean(self) -> Var<'t> {
        let value = {
            let a = self.value_ref();
            Tensor::scalar(a.sum() / a.len() as f64)
        };
        let rg = self.requires_grad();
        self.tape.push(value, Op::Mean(self.id), rg)
    }

    /// Sums a matrix along `axis`, keeping rank 2: axis 0 gives `1 x n`, axis 1 gives `m x 1`.
    pub fn sum_axis(self, axis: usize) -> Result<Var<'t>> {
        let value = {
            let a = self.value_ref();
            if a.rank() != 2 || axis > 1 {
                return Err(AutodiffError::InvalidAxis {
                    axis,
                    shape: a.shape().to_vec(),
                });
            }
            let (m, n) = (a.shape()[0], a.shape()[1]);
            if axis == 0 {
                let mut out = vec![0.0; n];
                for r in 0..m {
                    for (o, v) in out.iter_mut().zip(a.row(r)) {
                        *o += v;
                    }
                }
                Tensor::matrix(1, n, out)?
            } else {
                Tensor::matrix(m, 1, (0..m).map(|r| a.row(r).iter().sum()).collect())?
            }
        };
        let rg = self.requires_grad();
        Ok(self.tape.push(value, Op::SumAxis(self.id, axis), rg))
    }

    /// Squared Euclidean norm of each row, as an `m x 1` column.
    pub fn row_sq_norm(self) -> Result<Var<'t>> {
        let value = {
            let a = self.value_ref();
            let (m, _) = require_rank2("row_sq_norm", &a)?;
            let data = (0..m).map(|r| a.row(r).iter().map(|v| v * v).sum()).collect();
            Tensor::matrix(m, 1, data)?
        };
        let rg = self.requires_grad();
        Ok(self.tape.push(value, Op::RowSqNorm(self.id), rg))
    }

    /// Row selection: output row `r` is input row `index[r]`.
    pub fn gather(self, index: Arc<[usize]>) -> Result<Var<'t>> {
        let value = {
            let a = self.value_ref();
            let (m, n) = require_rank2("gather", &a)?;
            let mut data = Vec::with_capacity(index.len() * n);
            for &i in index.iter() {
                if i >= m {
                    return Err(AutodiffError::IndexOutOfBounds {
                        op: "gather",
                        index: i,
                        bound: m,
                    });
                }
                data.extend_from_slice(a.row(i));
            }
            Tensor::matrix(index.len(), n, data)?
        };
        let rg = self.requires_grad();
        Ok(self.tape.push(value, Op::Gather(self.id, index), rg))
    }

    /// Segment sum: input row `r` is added into output row `index[r]` of `rows` rows.
    pub fn scatter_add(self, index: Arc<[usize]>, rows: usize) -> Result<Var<'t>> {
        let value = {
            let a = self.value_ref();
            let (m, n) = require_rank2("scatter_add", &a)?;
            if index.len() != m {
                return Err(AutodiffError::ShapeMismatch {
                    op: "scatter_add",
                    lhs: a.shape().to_vec(),
                    rhs: vec![index.len()],
                });
            }
            let mut data = vec![0.0; rows * n];
            for (r, &dst) in index.iter().enumerate() {
                if dst >= rows {
                    return Err(AutodiffError::IndexOutOfBounds {
                        op: "scatter_add",
                        index: dst,
                        bound: rows,
                    });
                }
                for (o, v) in data[dst * n..(dst + 1) * n].iter_mut().zip(a.row(r)) {
                    *o += v;
                }
            }
            Tensor::matrix(rows, n, data)?
        };
        let rg = self.requires_grad();
        Ok(self.tape.push(value, Op::ScatterAdd(self.id, index), rg))
    }
}

/// Concatenates rank-2 tensors with equal row counts along columns.
pub fn concat_cols<'t>(parts: &[Var<'t>]) -> Result<Var<'t>> {
    let first = parts.first().ok_or(AutodiffError::EmptyConcat)?;
    let tape = first.tape;
    let value = {
        let nodes = tape.nodes.borrow();
        let vals: Vec<&Tensor> = parts
            .iter()
            .map(|p| {
                first.same_tape(p);
                &nodes[p.id].value
            })
            .collect();
        let (rows, _) = require_rank2("concat_cols", vals[0])?;
        for v in &vals {
            let (r, _) = require_rank2("concat_cols", v)?;
            if r != rows {
                return Err(AutodiffError::ShapeMismatch {
                    op: "concat_cols",
                    lhs: vals[0].shape().to_vec(),
                    rhs: v.shape().to_vec(),
                });
            }
        }
        let total: usize = vals.iter().map(|v| v.cols()).sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for v in &vals {
                data.extend_from_slice(v.row(r));
            }
        }
        Tensor::matrix(rows, total, data)?
    };
    let rg = parts.iter().any(|p| p.requires_grad());
    Ok(tape.push(value, Op::Concat(parts.iter().map(|p| p.id).collect()), rg))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: usize, cols: usize, data: &[f64]) -> Tensor {
        Tensor::matrix(rows, cols, data.to_vec()).unwrap()
    }

    #[test]
    fn add_componentwise() {
        let tape = Tape::new();
        let a = tape.constant(Tensor::vector(vec![1.0, 2.0]));
        let b = tape.constant(Tensor::vector(vec![3.0, 4.0]));
        assert_eq!(a.add(b).unwrap().value().data(), &[4.0, 6.0]);
    }

    #[test]
    fn sigmoid_at_zero_is_half() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::scalar(0.0));
        assert_eq!(x.sigmoid().value().item(), 0.5);
    }

    #[test]
    fn binary_shape_mismatch_names_both_shapes() {
        let tape = Tape::new();
        let a = tape.constant(Tensor::zeros(&[2, 3]));
        let b = tape.constant(Tensor::zeros(&[3, 2]));
        let err = a.mul(b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[3, 2]"), "{msg}");
    }

    #[test]
    fn matmul_identity_and_hand_example() {
        let tape = Tape::new();
        let eye = tape.constant(Tensor::identity(2));
        let mm = tape.constant(m(2, 2, &[1.5, -2.0, 0.25, 7.0]));
        assert_eq!(eye.matmul(mm).unwrap().value(), mm.value());

        let a = tape.constant(m(2, 2, &[1.0, 2.0, 3.0, 4.0]));
        let ones = tape.constant(m(2, 1, &[1.0, 1.0]));
        assert_eq!(a.matmul(ones).unwrap().value().data(), &[3.0, 7.0]);
    }

    #[test]
    fn matmul_inner_dimension_mismatch() {
        let tape = Tape::new();
        let a = tape.constant(Tensor::zeros(&[2, 3]));
        let b = tape.constant(Tensor::zeros(&[2, 3]));
        assert!(matches!(
            a.matmul(b),
            Err(AutodiffError::ShapeMismatch { op: "matmul", .. })
        ));
    }

    #[test]
    fn reductions() {
        let tape = Tape::new();
        let v = tape.param(Tensor::vector(vec![1.0, 2.0, 3.0]));
        assert_eq!(v.sum().value().item(), 6.0);
        let r = tape.constant(m(1, 2, &[3.0, 4.0]));
        assert_eq!(r.row_sq_norm().unwrap().value().data(), &[25.0]);

        let mean = v.mean();
        let g = tape.backward(mean).unwrap();
        for &x in g.wrt(v).data() {
            assert!((x - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn invalid_axis_is_rejected() {
        let tape = Tape::new();
        let a = tape.constant(Tensor::zeros(&[2, 2]));
        assert!(matches!(a.sum_axis(2), Err(AutodiffError::InvalidAxis { .. })));
        let v = tape.constant(Tensor::vector(vec![1.0]));
        assert!(matches!(v.sum_axis(0), Err(AutodiffError::InvalidAxis { .. })));
    }

    #[test]
    fn power_rule() {
        let tape = Tape::new();
        let x = tape.param(Tensor::scalar(3.0));
        let loss = x.square();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.wrt(x).item(), 6.0);
    }

    #[test]
    fn linear_layer_gradient_is_outer_product() {
        // L = sum(W x), dL/dW = 1 x^T
        let tape = Tape::new();
        let w = tape.param(m(2, 3, &[0.1, 0.2, 0.3, -0.4, 0.5, 0.6]));
        let x = tape.constant(m(3, 1, &[1.0, -2.0, 4.0]));
        let loss = w.matmul(x).unwrap().sum();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.wrt(w).data(), &[1.0, -2.0, 4.0, 1.0, -2.0, 4.0]);
    }

    #[test]
    fn backward_errors() {
        let tape = Tape::new();
        let x = tape.param(Tensor::vector(vec![1.0, 2.0]));
        assert!(matches!(
            tape.backward(x.square()),
            Err(AutodiffError::NonScalarLoss { .. })
        ));
        let c = tape.constant(Tensor::scalar(2.0));
        assert_eq!(tape.backward(c.square()).unwrap_err(), AutodiffError::Detached);

        let other = Tape::new();
        let y = other.param(Tensor::scalar(1.0));
        assert_eq!(tape.backward(y).unwrap_err(), AutodiffError::Detached);
    }

    #[test]
    fn unused_params_get_zero_gradient() {
        let tape = Tape::new();
        let used = tape.param(Tensor::scalar(2.0));
        let unused = tape.param(Tensor::zeros(&[2, 2]));
        let g = tape.backward(used.square()).unwrap();
        assert_eq!(g.wrt(unused), Tensor::zeros(&[2, 2]));
        assert_eq!(g.get(unused).unwrap().shape(), &[2, 2]);
    }

    #[test]
    fn gather_scatter_roundtrip_gradient() {
        let tape = Tape::new();
        let x = tape.param(m(3, 2, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let idx: Arc<[usize]> = Arc::from(vec![2, 0, 2]);
        let g1 = x.gather(idx.clone()).unwrap();
        assert_eq!(g1.value().data(), &[5.0, 6.0, 1.0, 2.0, 5.0, 6.0]);
        let s = g1.scatter_add(idx, 3).unwrap();
        assert_eq!(s.value().data(), &[1.0, 2.0, 0.0, 0.0, 10.0, 12.0]);
        let g = tape.backward(s.sum()).unwrap();
        // row 2 is gathered twice, row 1 never
        assert_eq!(g.wrt(x).data(), &[1.0, 1.0, 0.0, 0.0, 2.0, 2.0]);
    }

    #[test]
    fn out_of_range_index() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::zeros(&[2, 2]));
        assert!(matches!(
            x.gather(Arc::from(vec![2])),
            Err(AutodiffError::IndexOutOfBounds { .. })
        ));
    }

    #[test]
    fn reset_clears_nodes() {
        let mut tape = Tape::new();
        {
            let x = tape.param(Tensor::scalar(1.0));
            let _ = x.square();
        }
        assert_eq!(tape.len(), 2);
        tape.reset();
        assert!(tape.is_empty());
    }
}
