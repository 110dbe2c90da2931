//! Tape-based reverse-mode differentiation over dense matrices.
//!
//! Values are computed eagerly as nodes are pushed, so a [`Graph`] doubles as
//! the forward evaluator. [`Graph::backward`] walks the tape once in reverse
//! and accumulates adjoints only along nodes that depend on a parameter.

use std::collections::BTreeMap;

use super::linalg::{pseudo_inverse_parts, softmax_axis, Axis};
use super::{Matrix, NumericsError};

/// Handle to a node on a [`Graph`] tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Constant,
    Param,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Hadamard(Var, Var),
    MulCol(Var, Var),
    Relu(Var),
    Tanh(Var),
    Abs(Var),
    Softmax(Var, Axis),
    FrobSq(Var),
    Trace(Var),
    Sum(Var),
    Mean(Var),
    RowSum(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize, usize),
    /// Keeps `S = (HᵀH + ridge·I)⁻¹` for the backward pass.
    PseudoInverse(Var, Matrix),
    KhatriRao(Var, Var),
}

struct Node {
    value: Matrix,
    op: Op,
    needs_grad: bool,
}

/// A differentiable computation recorded as a tape.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    names: BTreeMap<String, Var>,
}

/// Adjoints produced by [`Graph::backward`], indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    /// Gradient with respect to `v`, or `None` when the root does not depend
    /// on it.
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient with respect to `v`, zero-filled when absent.
    pub fn get_or_zeros(&self, v: Var, shape: (usize, usize)) -> Matrix {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Matrix::zeros(shape.0, shape.1))
    }

    pub fn take(&mut self, v: Var) -> Option<Matrix> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    /// Scalar value of a `1×1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.item()
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        let needs_grad = match &op {
            Op::Constant => false,
            Op::Param => true,
            other => inputs(other).iter().any(|v| self.nodes[v.0].needs_grad),
        };
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// A leaf that receives no gradient.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Constant)
    }

    /// A differentiable leaf.
    pub fn param(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Param)
    }

    /// A differentiable leaf reported under `name` by [`Graph::gradient`].
    pub fn param_named(&mut self, name: impl Into<String>, value: Matrix) -> Var {
        let v = self.param(value);
        self.names.insert(name.into(), v);
        v
    }

    fn mismatch(&self, op: &'static str, a: Var, b: Var) -> NumericsError {
        NumericsError::ShapeMismatch {
            op,
            left: self.shape(a),
            right: self.shape(b),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let value = self.value(a).matmul(self.value(b))?;
        Ok(self.push(value, Op::MatMul(a, b)))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).transpose();
        self.push(value, Op::Transpose(a))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let value = self.value(a).add(self.value(b))?;
        Ok(self.push(value, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let value = self.value(a).sub(self.value(b))?;
        Ok(self.push(value, Op::Sub(a, b)))
    }

    /// Adds the `1×m` row `b` to every row of the `n×m` matrix `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (n, m) = self.shape(a);
        if self.shape(b) != (1, m) {
            return Err(self.mismatch("add_row", a, b));
        }
        let bias = self.value(b).as_slice().to_vec();
        let mut value = self.value(a).clone();
        for i in 0..n {
            for (x, &bj) in value.row_mut(i).iter_mut().zip(&bias) {
                *x += bj;
            }
        }
        Ok(self.push(value, Op::AddRow(a, b)))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let value = self.value(a).scale(s);
        self.push(value, Op::Scale(a, s))
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let value = self.value(a).hadamard(self.value(b))?;
        Ok(self.push(value, Op::Hadamard(a, b)))
    }

    /// Scales row `i` of the `n×m` matrix `b` by entry `i` of the `n×1`
    /// column `a`.
    pub fn mul_col(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (n, _) = self.shape(b);
        if self.shape(a) != (n, 1) {
            return Err(self.mismatch("mul_col", a, b));
        }
        let scales = self.value(a).as_slice().to_vec();
        let mut value = self.value(b).clone();
        for (i, s) in scales.iter().enumerate() {
            value.row_mut(i).iter_mut().for_each(|x| *x *= s);
        }
        Ok(self.push(value, Op::MulCol(a, b)))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| x.max(0.0));
        self.push(value, Op::Relu(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::tanh);
        self.push(value, Op::Tanh(a))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::abs);
        self.push(value, Op::Abs(a))
    }

    pub fn softmax(&mut self, a: Var, axis: Axis) -> Var {
        let value = softmax_axis(self.value(a), axis);
        self.push(value, Op::Softmax(a, axis))
    }

    /// `‖a‖²_F` as a `1×1` node.
    pub fn frob_sq(&mut self, a: Var) -> Var {
        let value = Matrix::scalar(self.value(a).frobenius_sq());
        self.push(value, Op::FrobSq(a))
    }

    pub fn trace(&mut self, a: Var) -> Var {
        let value = Matrix::scalar(self.value(a).trace());
        self.push(value, Op::Trace(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Matrix::scalar(self.value(a).sum());
        self.push(value, Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let m = self.value(a);
        let value = Matrix::scalar(m.sum() / m.len().max(1) as f64);
        self.push(value, Op::Mean(a))
    }

    /// Row sums as an `n×1` column.
    pub fn row_sum(&mut self, a: Var) -> Var {
        let m = self.value(a);
        let sums: Vec<f64> = (0..m.rows()).map(|i| m.row(i).iter().sum()).collect();
        self.push(Matrix::col_vector(&sums), Op::RowSum(a))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, NumericsError> {
        let mats: Vec<&Matrix> = parts.iter().map(|&v| self.value(v)).collect();
        let value = Matrix::hstack(&mats)?;
        Ok(self.push(value, Op::ConcatCols(parts.to_vec())))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, NumericsError> {
        let mats: Vec<&Matrix> = parts.iter().map(|&v| self.value(v)).collect();
        let value = Matrix::vstack(&mats)?;
        Ok(self.push(value, Op::ConcatRows(parts.to_vec())))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var, NumericsError> {
        let (_, cols) = self.shape(a);
        if start > end || end > cols {
            return Err(NumericsError::InvalidArgument(format!(
                "column slice {start}..{end} out of range for {cols} columns"
            )));
        }
        let value = self.value(a).slice_cols(start, end);
        Ok(self.push(value, Op::SliceCols(a, start, end)))
    }

    /// `(HᵀH + ridge·I)⁻¹Hᵀ`, differentiated through the closed form.
    pub fn pseudo_inverse(&mut self, h: Var, ridge: f64) -> Result<Var, NumericsError> {
        let (value, s) = pseudo_inverse_parts(self.value(h), ridge)?;
        Ok(self.push(value, Op::PseudoInverse(h, s)))
    }

    /// Column-wise Kronecker product: column `r` of the `(L·d)×R` result is
    /// `a_r ⊗ b_r`, with row index `l·d + c`.
    pub fn khatri_rao(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (la, ra) = self.shape(a);
        let (lb, rb) = self.shape(b);
        if ra != rb {
            return Err(self.mismatch("khatri_rao", a, b));
        }
        let (am, bm) = (self.value(a), self.value(b));
        let mut value = Matrix::zeros(la * lb, ra);
        for l in 0..la {
            for c in 0..lb {
                for r in 0..ra {
                    value[(l * lb + c, r)] = am[(l, r)] * bm[(c, r)];
                }
            }
        }
        Ok(self.push(value, Op::KhatriRao(a, b)))
    }

    /// `x·Wᵀ + b` for an `n×in` batch, `out×in` weight and `1×out` bias.
    pub fn linear(&mut self, x: Var, weight: Var, bias: Var) -> Result<Var, NumericsError> {
        let wt = self.transpose(weight);
        let xw = self.matmul(x, wt)?;
        self.add_row(xw, bias)
    }

    /// Reverse-mode adjoints of the scalar `root` with respect to every node
    /// that depends on a parameter.
    pub fn backward(&self, root: Var) -> Result<Gradients, NumericsError> {
        let shape = self.shape(root);
        if shape != (1, 1) {
            return Err(NumericsError::NonScalarRoot { shape });
        }
        let mut grads: Vec<Option<Matrix>> = vec![None; root.0 + 1];
        grads[root.0] = Some(Matrix::scalar(1.0));
        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(upstream) = grads[idx].take() else {
                continue;
            };
            self.propagate(&node.op, &node.value, &upstream, &mut grads)?;
            grads[idx] = Some(upstream);
        }
        Ok(Gradients { grads })
    }

    /// Gradients of `root` for every parameter registered by name.
    pub fn gradient(&self, root: Var) -> Result<BTreeMap<String, Matrix>, NumericsError> {
        let grads = self.backward(root)?;
        Ok(self
            .names
            .iter()
            .map(|(name, &v)| (name.clone(), grads.get_or_zeros(v, self.shape(v))))
            .collect())
    }

    fn accumulate(
        &self,
        grads: &mut [Option<Matrix>],
        v: Var,
        delta: Matrix,
    ) -> Result<(), NumericsError> {
        if !self.nodes[v.0].needs_grad {
            return Ok(());
        }
        match &mut grads[v.0] {
            Some(existing) => existing.axpy(1.0, &delta)?,
            slot @ None => *slot = Some(delta),
        }
        Ok(())
    }

    fn propagate(
        &self,
        op: &Op,
        out: &Matrix,
        up: &Matrix,
        grads: &mut [Option<Matrix>],
    ) -> Result<(), NumericsError> {
        match op {
            Op::Constant | Op::Param => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.nodes[a.0].needs_grad {
                    self.accumulate(grads, *a, up.matmul_t(bv)?)?;
                }
                if self.nodes[b.0].needs_grad {
                    self.accumulate(grads, *b, av.t_matmul(up)?)?;
                }
            }
            Op::Transpose(a) => self.accumulate(grads, *a, up.transpose())?,
            Op::Add(a, b) => {
                self.accumulate(grads, *a, up.clone())?;
                self.accumulate(grads, *b, up.clone())?;
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, up.clone())?;
                self.accumulate(grads, *b, up.scale(-1.0))?;
            }
            Op::AddRow(a, b) => {
                self.accumulate(grads, *a, up.clone())?;
                let mut col_sums = Matrix::zeros(1, up.cols());
                for i in 0..up.rows() {
                    for (s, &x) in col_sums.as_mut_slice().iter_mut().zip(up.row(i)) {
                        *s += x;
                    }
                }
                self.accumulate(grads, *b, col_sums)?;
            }
            Op::Scale(a, s) => self.accumulate(grads, *a, up.scale(*s))?,
            Op::Hadamard(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                self.accumulate(grads, *a, up.hadamard(bv)?)?;
                self.accumulate(grads, *b, up.hadamard(av)?)?;
            }
            Op::MulCol(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let da: Vec<f64> = (0..bv.rows())
                    .map(|i| up.row(i).iter().zip(bv.row(i)).map(|(u, x)| u * x).sum())
                    .collect();
                self.accumulate(grads, *a, Matrix::col_vector(&da))?;
                let mut db = up.clone();
                for i in 0..db.rows() {
                    let s = av[(i, 0)];
                    db.row_mut(i).iter_mut().for_each(|x| *x *= s);
                }
                self.accumulate(grads, *b, db)?;
            }
            Op::Relu(a) => {
                let av = self.value(*a);
                let d = up.zip_with(av, "relu", |u, x| if x > 0.0 { u } else { 0.0 })?;
                self.accumulate(grads, *a, d)?;
            }
            Op::Tanh(a) => {
                let d = up.zip_with(out, "tanh", |u, y| u * (1.0 - y * y))?;
                self.accumulate(grads, *a, d)?;
            }
            Op::Abs(a) => {
                let av = self.value(*a);
                // subgradient 0 at the kink
                let d = up.zip_with(av, "abs", |u, x| {
                    if x > 0.0 {
                        u
                    } else if x < 0.0 {
                        -u
                    } else {
                        0.0
                    }
                })?;
                self.accumulate(grads, *a, d)?;
            }
            Op::Softmax(a, axis) => {
                let d = match axis {
                    Axis::Row => softmax_backward_rows(out, up),
                    Axis::Col => {
                        softmax_backward_rows(&out.transpose(), &up.transpose()).transpose()
                    }
                };
                self.accumulate(grads, *a, d)?;
            }
            Op::FrobSq(a) => {
                let av = self.value(*a);
                self.accumulate(grads, *a, av.scale(2.0 * up.item()))?;
            }
            Op::Trace(a) => {
                let (r, c) = self.shape(*a);
                let mut d = Matrix::zeros(r, c);
                for i in 0..r.min(c) {
                    d[(i, i)] = up.item();
                }
                self.accumulate(grads, *a, d)?;
            }
            Op::Sum(a) => {
                let (r, c) = self.shape(*a);
                self.accumulate(grads, *a, Matrix::filled(r, c, up.item()))?;
            }
            Op::Mean(a) => {
                let (r, c) = self.shape(*a);
                let n = (r * c).max(1) as f64;
                self.accumulate(grads, *a, Matrix::filled(r, c, up.item() / n))?;
            }
            Op::RowSum(a) => {
                let (r, c) = self.shape(*a);
                let d = Matrix::from_fn(r, c, |i, _| up[(i, 0)]);
                self.accumulate(grads, *a, d)?;
            }
            Op::ConcatCols(parts) => {
                let mut start = 0;
                for &p in parts {
                    let w = self.shape(p).1;
                    self.accumulate(grads, p, up.slice_cols(start, start + w))?;
                    start += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut start = 0;
                for &p in parts {
                    let h = self.shape(p).0;
                    let idx: Vec<usize> = (start..start + h).collect();
                    self.accumulate(grads, p, up.select_rows(&idx))?;
                    start += h;
                }
            }
            Op::SliceCols(a, start, end) => {
                let (r, c) = self.shape(*a);
                let mut d = Matrix::zeros(r, c);
                for i in 0..r {
                    d.row_mut(i)[*start..*end].copy_from_slice(up.row(i));
                }
                self.accumulate(grads, *a, d)?;
            }
            Op::PseudoInverse(h, s) => {
                // P = S Hᵀ;  H̄ = (I − H P) Ḡᵀ S − H S Ḡ Pᵀ
                let hv = self.value(*h);
                let p = out;
                let gt_s = up.t_matmul(s)?;
                let hp_gt_s = hv.matmul(&p.matmul(&gt_s)?)?;
                let first = gt_s.sub(&hp_gt_s)?;
                let second = hv.matmul(&s.matmul(&up.matmul_t(p)?)?)?;
                self.accumulate(grads, *h, first.sub(&second)?)?;
            }
            Op::KhatriRao(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (la, rr) = av.shape();
                let lb = bv.rows();
                let mut da = Matrix::zeros(la, rr);
                let mut db = Matrix::zeros(lb, rr);
                for l in 0..la {
                    for c in 0..lb {
                        for r in 0..rr {
                            let u = up[(l * lb + c, r)];
                            da[(l, r)] += u * bv[(c, r)];
                            db[(c, r)] += u * av[(l, r)];
                        }
                    }
                }
                self.accumulate(grads, *a, da)?;
                self.accumulate(grads, *b, db)?;
            }
        }
        Ok(())
    }
}

fn softmax_backward_rows(s: &Matrix, up: &Matrix) -> Matrix {
    let mut d = Matrix::zeros(s.rows(), s.cols());
    for i in 0..s.rows() {
        let (si, ui) = (s.row(i), up.row(i));
        let dotp: f64 = si.iter().zip(ui).map(|(a, b)| a * b).sum();
        for (o, (a, b)) in d.row_mut(i).iter_mut().zip(si.iter().zip(ui)) {
            *o = a * (b - dotp);
        }
    }
    d
}

fn inputs(op: &Op) -> Vec<Var> {
    match op {
        Op::Constant | Op::Param => vec![],
        Op::MatMul(a, b)
        | Op::Add(a, b)
        | Op::Sub(a, b)
        | Op::AddRow(a, b)
        | Op::Hadamard(a, b)
        | Op::MulCol(a, b)
        | Op::KhatriRao(a, b) => vec![*a, *b],
        Op::Transpose(a)
        | Op::Scale(a, _)
        | Op::Relu(a)
        | Op::Tanh(a)
        | Op::Abs(a)
        | Op::Softmax(a, _)
        | Op::FrobSq(a)
        | Op::Trace(a)
        | Op::Sum(a)
        | Op::Mean(a)
        | Op::RowSum(a)
        | Op::SliceCols(a, _, _)
        | Op::PseudoInverse(a, _) => vec![*a],
        Op::ConcatCols(parts) | Op::ConcatRows(parts) => parts.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::check::{check_gradients, FD_STEP};
    use crate::rng::SeededRng;

    #[test]
    fn frobenius_square_gradient_is_twice_p() {
        let p = Matrix::from_rows(&[vec![1.0, -2.0], vec![0.5, 3.0]]);
        let mut g = Graph::new();
        let pv = g.param_named("P", p.clone());
        let root = g.frob_sq(pv);
        let grads = g.gradient(root).unwrap();
        assert_eq!(grads["P"], p.scale(2.0));
    }

    #[test]
    fn trace_quadratic_form_gradient() {
        let mut rng = SeededRng::new(17);
        let b = rng.normal_matrix(4, 4, 1.0);
        let a = b.add(&b.transpose()).unwrap();
        let p = rng.normal_matrix(4, 2, 1.0);
        let mut g = Graph::new();
        let pv = g.param(p.clone());
        let av = g.constant(a.clone());
        let pt = g.transpose(pv);
        let ap = g.matmul(av, pv).unwrap();
        let ptap = g.matmul(pt, ap).unwrap();
        let root = g.trace(ptap);
        let grads = g.backward(root).unwrap();
        let expected = a.matmul(&p).unwrap().scale(2.0);
        assert!(grads.get(pv).unwrap().sub(&expected).unwrap().max_abs() < 1e-12);

        let report = check_gradients(&[p], FD_STEP, |g, vars| {
            let av = g.constant(a.clone());
            let pt = g.transpose(vars[0]);
            let ap = g.matmul(av, vars[0])?;
            let ptap = g.matmul(pt, ap)?;
            Ok(g.trace(ptap))
        })
        .unwrap();
        assert!(report.max_rel_error < 1e-6, "{report:?}");
    }

    #[test]
    fn non_scalar_root_rejected() {
        let mut g = Graph::new();
        let p = g.param(Matrix::zeros(2, 2));
        assert!(matches!(g.backward(p), Err(NumericsError::NonScalarRoot { .. })));
    }

    #[test]
    fn shape_mismatch_during_construction() {
        let mut g = Graph::new();
        let a = g.param(Matrix::zeros(2, 3));
        let b = g.param(Matrix::zeros(2, 3));
        assert!(matches!(g.matmul(a, b), Err(NumericsError::ShapeMismatch { .. })));
        let bias = g.constant(Matrix::zeros(1, 2));
        assert!(g.add_row(a, bias).is_err());
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut g = Graph::new();
        let c = g.constant(Matrix::filled(2, 2, 1.0));
        let p = g.param(Matrix::filled(2, 2, 2.0));
        let h = g.hadamard(c, p).unwrap();
        let root = g.sum(h);
        let grads = g.backward(root).unwrap();
        assert!(grads.get(c).is_none());
        assert_eq!(grads.get(p).unwrap(), &Matrix::filled(2, 2, 1.0));
    }
}
