//! Tape-based reverse-mode differentiation over dense matrices.
//!
//! A [`Tape`] records every primitive as it executes. Each recorded node
//! holds its forward value and references to its parents; since nodes are
//! appended only after their parents, walking the tape backwards from the
//! loss visits them in reverse topological order exactly once.
//!
//! Gradients persist on the tape and accumulate across repeated
//! [`Var::backward`] calls until [`Tape::zero_grad`].

use std::cell::RefCell;
use std::rc::Rc;

use crate::error::{Error, Result};
use crate::matrix::{CsrMatrix, Matrix};

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    ScalarMul(usize, f64),
    AddScalar(usize),
    ConcatCols(usize, usize),
    Relu(usize),
    Sigmoid(usize),
    SoftmaxRows(usize),
    Log { x: usize, floor: f64 },
    MeanRows(usize),
    SumRows(usize),
    Sum(usize),
    L2NormalizeRows { x: usize, eps: f64 },
    Bilinear { e: usize, w: usize, r: usize },
    GatherRows(usize, Rc<[usize]>),
    SpMM(Rc<CsrMatrix>, usize),
    GradScale(usize, f64),
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
struct TapeInner {
    nodes: Vec<Node>,
    grads: Vec<Option<Matrix>>,
}

/// Recording of one forward computation.
#[derive(Clone, Debug, Default)]
pub struct Tape {
    inner: Rc<RefCell<TapeInner>>,
}

/// Handle to one node on a [`Tape`].
#[derive(Clone, Debug)]
pub struct Var {
    tape: Tape,
    id: usize,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// A trainable leaf.
    pub fn param(&self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A constant leaf; no gradient is tracked for it.
    pub fn constant(&self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// A leaf with an explicit gradient flag.
    pub fn leaf(&self, value: Matrix, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Clears every accumulated gradient.
    pub fn zero_grad(&self) {
        for g in self.inner.borrow_mut().grads.iter_mut() {
            *g = None;
        }
    }

    fn push(&self, value: Matrix, op: Op, requires_grad: bool) -> Var {
        let mut inner = self.inner.borrow_mut();
        inner.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        inner.grads.push(None);
        Var {
            tape: self.clone(),
            id: inner.nodes.len() - 1,
        }
    }

    fn same(&self, other: &Tape) -> bool {
        Rc::ptr_eq(&self.inner, &other.inner)
    }
}

impl Var {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &Tape {
        &self.tape
    }

    pub fn value(&self) -> Matrix {
        self.tape.inner.borrow().nodes[self.id].value.clone()
    }

    pub fn with_value<R>(&self, f: impl FnOnce(&Matrix) -> R) -> R {
        f(&self.tape.inner.borrow().nodes[self.id].value)
    }

    pub fn shape(&self) -> (usize, usize) {
        self.with_value(Matrix::shape)
    }

    /// Value of a 1x1 node.
    pub fn item(&self) -> Option<f64> {
        self.with_value(Matrix::item)
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.inner.borrow().nodes[self.id].requires_grad
    }

    /// Accumulated gradient, if any backward pass reached this node.
    pub fn grad(&self) -> Option<Matrix> {
        self.tape.inner.borrow().grads[self.id].clone()
    }

    fn check_tape(&self, other: &Var, op: &'static str) -> Result<()> {
        if self.tape.same(&other.tape) {
            Ok(())
        } else {
            Err(Error::shape(op, "operands live on different tapes"))
        }
    }

    fn unary(&self, value: Matrix, op: Op) -> Var {
        let rg = self.requires_grad();
        self.tape.push(value, op, rg)
    }

    fn binary(&self, other: &Var, value: Matrix, op: Op) -> Var {
        let rg = self.requires_grad() || other.requires_grad();
        self.tape.push(value, op, rg)
    }

    fn same_shape(&self, other: &Var, op: &'static str) -> Result<()> {
        self.check_tape(other, op)?;
        let (a, b) = (self.shape(), other.shape());
        if a != b {
            return Err(Error::shape(op, format!("{a:?} vs {b:?}")));
        }
        Ok(())
    }

    pub fn matmul(&self, rhs: &Var) -> Result<Var> {
        self.check_tape(rhs, "matmul")?;
        let value = {
            let inner = self.tape.inner.borrow();
            inner.nodes[self.id]
                .value
                .matmul(&inner.nodes[rhs.id].value)?
        };
        Ok(self.binary(rhs, value, Op::MatMul(self.id, rhs.id)))
    }

    pub fn add(&self, rhs: &Var) -> Result<Var> {
        self.same_shape(rhs, "add")?;
        let value = self.with_value(|a| rhs.with_value(|b| a.zip_map(b, |x, y| x + y)));
        Ok(self.binary(rhs, value, Op::Add(self.id, rhs.id)))
    }

    pub fn sub(&self, rhs: &Var) -> Result<Var> {
        self.same_shape(rhs, "sub")?;
        let value = self.with_value(|a| rhs.with_value(|b| a.zip_map(b, |x, y| x - y)));
        Ok(self.binary(rhs, value, Op::Sub(self.id, rhs.id)))
    }

    /// Elementwise product.
    pub fn mul(&self, rhs: &Var) -> Result<Var> {
        self.same_shape(rhs, "mul")?;
        let value = self.with_value(|a| rhs.with_value(|b| a.zip_map(b, |x, y| x * y)));
        Ok(self.binary(rhs, value, Op::Mul(self.id, rhs.id)))
    }

    pub fn scalar_mul(&self, s: f64) -> Var {
        let value = self.with_value(|a| a.scale(s));
        self.unary(value, Op::ScalarMul(self.id, s))
    }

    pub fn add_scalar(&self, s: f64) -> Var {
        let value = self.with_value(|a| a.map(|x| x + s));
        self.unary(value, Op::AddScalar(self.id))
    }

    /// Row-wise concatenation `[self | rhs]`.
    pub fn concat_cols(&self, rhs: &Var) -> Result<Var> {
        self.check_tape(rhs, "concat")?;
        let value = {
            let inner = self.tape.inner.borrow();
            let (a, b) = (&inner.nodes[self.id].value, &inner.nodes[rhs.id].value);
            if a.rows() != b.rows() {
                return Err(Error::shape(
                    "concat",
                    format!("{:?} vs {:?}", a.shape(), b.shape()),
                ));
            }
            let mut out = Matrix::zeros(a.rows(), a.cols() + b.cols());
            for r in 0..a.rows() {
                let row = out.row_mut(r);
                row[..a.cols()].copy_from_slice(a.row(r));
                row[a.cols()..].copy_from_slice(b.row(r));
            }
            out
        };
        Ok(self.binary(rhs, value, Op::ConcatCols(self.id, rhs.id)))
    }

    pub fn relu(&self) -> Var {
        let value = self.with_value(|a| a.map(|x| x.max(0.0)));
        self.unary(value, Op::Relu(self.id))
    }

    pub fn sigmoid(&self) -> Var {
        let value = self.with_value(|a| a.map(sigmoid));
        self.unary(value, Op::Sigmoid(self.id))
    }

    /// Softmax over each row, computed with max subtraction.
    pub fn softmax_rows(&self) -> Var {
        let value = self.with_value(|a| {
            let mut out = a.clone();
            for r in 0..out.rows() {
                let row = out.row_mut(r);
                let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for x in row.iter_mut() {
                    *x = (*x - m).exp();
                    z += *x;
                }
                for x in row.iter_mut() {
                    *x /= z;
                }
            }
            out
        });
        self.unary(value, Op::SoftmaxRows(self.id))
    }

    /// Natural log of `max(x, floor)`; the gradient is zero where the floor binds.
    pub fn log_clamped(&self, floor: f64) -> Var {
        let value = self.with_value(|a| a.map(|x| x.max(floor).ln()));
        self.unary(value, Op::Log { x: self.id, floor })
    }

    /// Mean over rows: `n x d -> 1 x d`.
    pub fn mean_rows(&self) -> Result<Var> {
        let value = self.with_value(|a| {
            if a.rows() == 0 {
                return Err(Error::shape("mean_rows", "no rows"));
            }
            let mut out = Matrix::zeros(1, a.cols());
            for r in 0..a.rows() {
                for (o, &x) in out.row_mut(0).iter_mut().zip(a.row(r)) {
                    *o += x;
                }
            }
            Ok(out.scale(1.0 / a.rows() as f64))
        })?;
        Ok(self.unary(value, Op::MeanRows(self.id)))
    }

    /// Sum of each row: `n x d -> n x 1`.
    pub fn sum_rows(&self) -> Var {
        let value = self.with_value(|a| {
            let v: Vec<f64> = (0..a.rows()).map(|r| a.row(r).iter().sum()).collect();
            Matrix::from_vec(a.rows(), 1, v).expect("row sums")
        });
        self.unary(value, Op::SumRows(self.id))
    }

    /// Sum of all entries as a 1x1 node.
    pub fn sum(&self) -> Var {
        let value = self.with_value(|a| Matrix::scalar(a.sum()));
        self.unary(value, Op::Sum(self.id))
    }

    /// Mean of all entries as a 1x1 node.
    pub fn mean(&self) -> Result<Var> {
        let n = self.with_value(Matrix::len);
        if n == 0 {
            return Err(Error::shape("mean", "empty tensor"));
        }
        Ok(self.sum().scalar_mul(1.0 / n as f64))
    }

    /// Row-wise `x / sqrt(|x|² + eps²)`.
    pub fn l2_normalize_rows(&self, eps: f64) -> Var {
        let value = self.with_value(|a| {
            let mut out = a.clone();
            for r in 0..out.rows() {
                let row = out.row_mut(r);
                let n = (row.iter().map(|x| x * x).sum::<f64>() + eps * eps).sqrt();
                for x in row.iter_mut() {
                    *x /= n;
                }
            }
            out
        });
        self.unary(value, Op::L2NormalizeRows { x: self.id, eps })
    }

    /// Per-row bilinear form `e_i W rᵀ` for `e: n x d1`, `W: d1 x d2`, `r: 1 x d2`;
    /// returns `n x 1`.
    pub fn bilinear(&self, w: &Var, r: &Var) -> Result<Var> {
        self.check_tape(w, "bilinear")?;
        self.check_tape(r, "bilinear")?;
        let value = {
            let inner = self.tape.inner.borrow();
            let (e, wm, rv) = (
                &inner.nodes[self.id].value,
                &inner.nodes[w.id].value,
                &inner.nodes[r.id].value,
            );
            if e.cols() != wm.rows() || rv.rows() != 1 || rv.cols() != wm.cols() {
                return Err(Error::shape(
                    "bilinear",
                    format!("e {:?}, W {:?}, r {:?}", e.shape(), wm.shape(), rv.shape()),
                ));
            }
            let u = wm.matmul(&rv.transpose())?;
            e.matmul(&u)?
        };
        let rg = self.requires_grad() || w.requires_grad() || r.requires_grad();
        Ok(self.tape.push(
            value,
            Op::Bilinear {
                e: self.id,
                w: w.id,
                r: r.id,
            },
            rg,
        ))
    }

    /// Rows `idx[0], idx[1], ...` of `self`.
    pub fn gather_rows(&self, idx: &[usize]) -> Result<Var> {
        let value = self.with_value(|a| {
            if let Some(&bad) = idx.iter().find(|&&i| i >= a.rows()) {
                return Err(Error::shape(
                    "gather_rows",
                    format!("row {bad} of {}", a.rows()),
                ));
            }
            Ok(a.select_rows(idx))
        })?;
        Ok(self.unary(value, Op::GatherRows(self.id, idx.into())))
    }

    /// `sparse * self` with a constant sparse left factor.
    pub fn spmm(&self, sparse: Rc<CsrMatrix>) -> Result<Var> {
        let value = self.with_value(|a| sparse.spmm(a))?;
        Ok(self.unary(value, Op::SpMM(sparse, self.id)))
    }

    /// Identity in the forward pass; multiplies the incoming gradient by
    /// `factor` in the backward pass. A negative factor reverses it.
    pub fn grad_scale(&self, factor: f64) -> Var {
        let value = self.value();
        self.unary(value, Op::GradScale(self.id, factor))
    }

    /// Back-propagates from this scalar node, accumulating into every
    /// reachable node that requires a gradient.
    pub fn backward(&self) -> Result<()> {
        let shape = self.shape();
        if shape != (1, 1) {
            return Err(Error::shape(
                "backward",
                format!("loss must be 1x1, got {shape:?}"),
            ));
        }
        let mut inner = self.tape.inner.borrow_mut();
        let TapeInner { nodes, grads } = &mut *inner;
        let mut adj: Vec<Option<Matrix>> = vec![None; self.id + 1];
        adj[self.id] = Some(Matrix::scalar(1.0));

        for id in (0..=self.id).rev() {
            let Some(g) = adj[id].take() else { continue };
            if !nodes[id].requires_grad {
                continue;
            }
            propagate(nodes, id, &g, &mut adj)?;
            match &mut grads[id] {
                Some(acc) => acc.add_assign(&g),
                slot @ None => *slot = Some(g),
            }
        }
        Ok(())
    }
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn accumulate(nodes: &[Node], adj: &mut [Option<Matrix>], id: usize, g: Matrix) {
    if !nodes[id].requires_grad {
        return;
    }
    match &mut adj[id] {
        Some(acc) => acc.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

/// Pushes the adjoint `g` of node `id` to its parents.
fn propagate(nodes: &[Node], id: usize, g: &Matrix, adj: &mut [Option<Matrix>]) -> Result<()> {
    let out = &nodes[id].value;
    match &nodes[id].op {
        Op::Leaf => {}
        &Op::MatMul(a, b) => {
            if nodes[a].requires_grad {
                let ga = g.matmul(&nodes[b].value.transpose())?;
                accumulate(nodes, adj, a, ga);
            }
            if nodes[b].requires_grad {
                let gb = nodes[a].value.transpose().matmul(g)?;
                accumulate(nodes, adj, b, gb);
            }
        }
        &Op::Add(a, b) => {
            accumulate(nodes, adj, a, g.clone());
            accumulate(nodes, adj, b, g.clone());
        }
        &Op::Sub(a, b) => {
            accumulate(nodes, adj, a, g.clone());
            accumulate(nodes, adj, b, g.scale(-1.0));
        }
        &Op::Mul(a, b) => {
            if nodes[a].requires_grad {
                accumulate(nodes, adj, a, g.zip_map(&nodes[b].value, |x, y| x * y));
            }
            if nodes[b].requires_grad {
                accumulate(nodes, adj, b, g.zip_map(&nodes[a].value, |x, y| x * y));
            }
        }
        &Op::ScalarMul(a, s) => accumulate(nodes, adj, a, g.scale(s)),
        &Op::AddScalar(a) => accumulate(nodes, adj, a, g.clone()),
        &Op::ConcatCols(a, b) => {
            let ca = nodes[a].value.cols();
            let cb = nodes[b].value.cols();
            let mut ga = Matrix::zeros(g.rows(), ca);
            let mut gb = Matrix::zeros(g.rows(), cb);
            for r in 0..g.rows() {
                ga.row_mut(r).copy_from_slice(&g.row(r)[..ca]);
                gb.row_mut(r).copy_from_slice(&g.row(r)[ca..]);
            }
            accumulate(nodes, adj, a, ga);
            accumulate(nodes, adj, b, gb);
        }
        &Op::Relu(a) => {
            let ga = g.zip_map(&nodes[a].value, |gi, x| if x > 0.0 { gi } else { 0.0 });
            accumulate(nodes, adj, a, ga);
        }
        &Op::Sigmoid(a) => {
            let ga = g.zip_map(out, |gi, y| gi * y * (1.0 - y));
            accumulate(nodes, adj, a, ga);
        }
        &Op::SoftmaxRows(a) => {
            let mut ga = Matrix::zeros(g.rows(), g.cols());
            for r in 0..g.rows() {
                let (y, gr) = (out.row(r), g.row(r));
                let dot: f64 = y.iter().zip(gr).map(|(a, b)| a * b).sum();
                for ((o, &yi), &gi) in ga.row_mut(r).iter_mut().zip(y).zip(gr) {
                    *o = yi * (gi - dot);
                }
            }
            accumulate(nodes, adj, a, ga);
        }
        &Op::Log { x, floor } => {
            let ga = g.zip_map(&nodes[x].value, |gi, xi| if xi > floor { gi / xi } else { 0.0 });
            accumulate(nodes, adj, x, ga);
        }
        &Op::MeanRows(a) => {
            let rows = nodes[a].value.rows();
            let mut ga = Matrix::zeros(rows, g.cols());
            let inv = 1.0 / rows as f64;
            for r in 0..rows {
                for (o, &gi) in ga.row_mut(r).iter_mut().zip(g.row(0)) {
                    *o = gi * inv;
                }
            }
            accumulate(nodes, adj, a, ga);
        }
        &Op::SumRows(a) => {
            let (rows, cols) = nodes[a].value.shape();
            let mut ga = Matrix::zeros(rows, cols);
            for r in 0..rows {
                let gi = g.get(r, 0);
                ga.row_mut(r).fill(gi);
            }
            accumulate(nodes, adj, a, ga);
        }
        &Op::Sum(a) => {
            let (rows, cols) = nodes[a].value.shape();
            accumulate(nodes, adj, a, Matrix::filled(rows, cols, g.get(0, 0)));
        }
        &Op::L2NormalizeRows { x, eps } => {
            let xv = &nodes[x].value;
            let mut ga = Matrix::zeros(xv.rows(), xv.cols());
            for r in 0..xv.rows() {
                let (xr, gr) = (xv.row(r), g.row(r));
                let n = (xr.iter().map(|v| v * v).sum::<f64>() + eps * eps).sqrt();
                let xg: f64 = xr.iter().zip(gr).map(|(a, b)| a * b).sum();
                let n3 = n * n * n;
                for ((o, &xi), &gi) in ga.row_mut(r).iter_mut().zip(xr).zip(gr) {
                    *o = gi / n - xi * xg / n3;
                }
            }
            accumulate(nodes, adj, x, ga);
        }
        &Op::Bilinear { e, w, r } => {
            let (ev, wv, rv) = (&nodes[e].value, &nodes[w].value, &nodes[r].value);
            if nodes[e].requires_grad {
                // u = W rᵀ; de = g uᵀ
                let u = wv.matmul(&rv.transpose())?;
                accumulate(nodes, adj, e, g.matmul(&u.transpose())?);
            }
            if nodes[w].requires_grad {
                // dW = (eᵀ g) r
                let eg = ev.transpose().matmul(g)?;
                accumulate(nodes, adj, w, eg.matmul(rv)?);
            }
            if nodes[r].requires_grad {
                // dr = gᵀ e W
                let ge = g.transpose().matmul(ev)?;
                accumulate(nodes, adj, r, ge.matmul(wv)?);
            }
        }
        Op::GatherRows(a, idx) => {
            let a = *a;
            let mut ga = Matrix::zeros(nodes[a].value.rows(), g.cols());
            for (o, &i) in idx.iter().enumerate() {
                for (dst, &src) in ga.row_mut(i).iter_mut().zip(g.row(o)) {
                    *dst += src;
                }
            }
            accumulate(nodes, adj, a, ga);
        }
        Op::SpMM(sparse, a) => {
            let ga = sparse.spmm_transposed(g)?;
            accumulate(nodes, adj, *a, ga);
        }
        &Op::GradScale(a, f) => accumulate(nodes, adj, a, g.scale(f)),
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn row(v: &[f64]) -> Matrix {
        Matrix::row_vector(v)
    }

    #[test]
    fn relu_forward_and_backward() {
        let t = Tape::new();
        let x = t.param(row(&[-1.0, 2.0]));
        let y = x.relu();
        assert_eq!(y.value().as_slice(), &[0.0, 2.0]);
        let g = t.constant(row(&[3.0, 5.0]));
        y.mul(&g).unwrap().sum().backward().unwrap();
        assert_eq!(x.grad().unwrap().as_slice(), &[0.0, 5.0]);
    }

    #[test]
    fn l2_normalize_three_four_five() {
        let t = Tape::new();
        let y = t.constant(row(&[3.0, 4.0])).l2_normalize_rows(1e-12);
        assert_abs_diff_eq!(y.value().get(0, 0), 0.6, epsilon = 1e-15);
        assert_abs_diff_eq!(y.value().get(0, 1), 0.8, epsilon = 1e-15);
    }

    #[test]
    fn l2_normalize_zero_row_is_zero() {
        let t = Tape::new();
        let x = t.param(row(&[0.0, 0.0]));
        let y = x.l2_normalize_rows(1e-12);
        assert_eq!(y.value().as_slice(), &[0.0, 0.0]);
        y.sum().backward().unwrap();
        assert!(x.grad().unwrap().as_slice().iter().all(|g| g.is_finite()));
    }

    #[test]
    fn bilinear_identity() {
        let t = Tape::new();
        let e = t.constant(row(&[1.0, 0.0]));
        let r = t.constant(row(&[1.0, 0.0]));
        let w = t.constant(Matrix::identity(2));
        let s = e.bilinear(&w, &r).unwrap().sigmoid();
        assert_abs_diff_eq!(s.item().unwrap(), 0.731_058_578_630_004_9, epsilon = 1e-15);
    }

    #[test]
    fn quadratic_gradient() {
        let t = Tape::new();
        let w = t.param(row(&[1.0, 2.0]));
        w.mul(&w).unwrap().sum().backward().unwrap();
        assert_eq!(w.grad().unwrap().as_slice(), &[2.0, 4.0]);
    }

    #[test]
    fn independent_parameter_gets_no_gradient() {
        let t = Tape::new();
        let w = t.param(row(&[1.0, 2.0]));
        let x = t.param(row(&[3.0]));
        x.scalar_mul(2.0).sum().backward().unwrap();
        assert!(w.grad().is_none());
    }

    #[test]
    fn repeated_backward_accumulates_until_zeroed() {
        let t = Tape::new();
        let w = t.param(row(&[1.0, 2.0]));
        let loss = w.mul(&w).unwrap().sum();
        loss.backward().unwrap();
        loss.backward().unwrap();
        assert_eq!(w.grad().unwrap().as_slice(), &[4.0, 8.0]);
        t.zero_grad();
        loss.backward().unwrap();
        assert_eq!(w.grad().unwrap().as_slice(), &[2.0, 4.0]);
    }

    #[test]
    fn non_scalar_backward_is_rejected() {
        let t = Tape::new();
        let w = t.param(row(&[1.0, 2.0]));
        assert!(matches!(w.backward(), Err(Error::Shape { op: "backward", .. })));
    }

    #[test]
    fn shape_errors_name_the_primitive() {
        let t = Tape::new();
        let a = t.param(row(&[1.0, 2.0]));
        let b = t.param(row(&[1.0, 2.0, 3.0]));
        match a.add(&b) {
            Err(Error::Shape { op, detail }) => {
                assert_eq!(op, "add");
                assert!(detail.contains("(1, 2)"));
            }
            other => panic!("expected shape error, got {other:?}"),
        }
        assert!(matches!(a.matmul(&b), Err(Error::Shape { op: "matmul", .. })));
    }

    #[test]
    fn grad_scale_sign_flip() {
        let t = Tape::new();
        let x = t.param(row(&[1.0, -2.0]));
        x.grad_scale(1.0).sum().backward().unwrap();
        assert_eq!(x.grad().unwrap().as_slice(), &[1.0, 1.0]);
        t.zero_grad();
        let y = x.grad_scale(-1.0);
        assert_eq!(y.value(), x.value());
        y.scalar_mul(3.0).sum().backward().unwrap();
        assert_eq!(x.grad().unwrap().as_slice(), &[-3.0, -3.0]);
    }

    #[test]
    fn shared_subexpression_sums_uses() {
        // y = a*a + a  with a used three times: dy/da = 2a + 1
        let t = Tape::new();
        let a = t.param(row(&[1.5, -0.5]));
        let y = a.mul(&a).unwrap().add(&a).unwrap().sum();
        y.backward().unwrap();
        assert_eq!(a.grad().unwrap().as_slice(), &[4.0, 0.0]);
    }
}
