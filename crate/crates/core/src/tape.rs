//! Reverse-mode differentiation over a linear record of tensor ops.
//!
//! A [`Tape`] is filled during one forward pass, then consumed by
//! [`Tape::backward`]. Nodes are appended in evaluation order, so the
//! record is topologically sorted by construction. Gradients of a
//! parameter used more than once are summed.

use crate::error::{Error, Result};
use crate::kernels::{gemm, Operand};
use crate::params::{Gradients, ParamId, ParamStore};
use crate::tensor::Tensor;

/// Handle to a node of a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Param(ParamId),
    Constant,
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    ScaleRows(Var, Var),
    RowDot(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Sigmoid(Var),
    Mask(Var, Vec<f64>),
    Gather { table: Var, ids: Vec<usize>, rows: usize },
    Sum(Var),
    BceSum { pred: Var, labels: Vec<f64> },
}

/// Numerically stable logistic function.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// The computation record of a single forward pass.
#[derive(Clone, Debug, Default)]
pub struct Tape {
    ops: Vec<Op>,
    values: Vec<Tensor>,
    requires_grad: Vec<bool>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.values[v.0]
    }

    fn push(&mut self, op: Op) -> Result<Var> {
        let value = eval(&op, &self.values)?;
        let requires_grad = inputs(&op).iter().any(|v| self.requires_grad[v.0]);
        self.ops.push(op);
        self.values.push(value);
        self.requires_grad.push(requires_grad);
        Ok(Var(self.ops.len() - 1))
    }

    fn leaf(&mut self, op: Op, value: Tensor, requires_grad: bool) -> Var {
        self.ops.push(op);
        self.values.push(value);
        self.requires_grad.push(requires_grad);
        Var(self.ops.len() - 1)
    }

    /// Records a trainable parameter, snapshotting its current value.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.leaf(Op::Param(id), store.get(id).clone(), true)
    }

    /// Records a value that receives no gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(Op::Constant, value, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::MatMul(a, b))
    }

    /// Adds a bias vector to every row.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        self.push(Op::AddBias(a, bias))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::Mul(a, b))
    }

    /// Multiplies row `i` of `a` by the scalar `s[i]`.
    pub fn scale_rows(&mut self, a: Var, s: Var) -> Result<Var> {
        self.push(Op::ScaleRows(a, s))
    }

    /// Per-row dot product, giving an `n x 1` column.
    pub fn row_dot(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::RowDot(a, b))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        self.push(Op::Scale(a, c))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.push(Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.push(Op::Sigmoid(a))
    }

    /// Elementwise product with a fixed mask (used for dropout).
    pub fn mask(&mut self, a: Var, mask: Vec<f64>) -> Result<Var> {
        self.push(Op::Mask(a, mask))
    }

    /// Looks up table rows for a `rows x fields` id matrix and concatenates
    /// them per row, giving `rows x (fields * d)`.
    pub fn gather(&mut self, table: Var, ids: Vec<usize>, rows: usize) -> Result<Var> {
        self.push(Op::Gather { table, ids, rows })
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        self.push(Op::Sum(a))
    }

    /// Summed binary cross-entropy `-sum(y ln p + (1-y) ln(1-p))`.
    pub fn bce_sum(&mut self, pred: Var, labels: Vec<f64>) -> Result<Var> {
        self.push(Op::BceSum { pred, labels })
    }

    /// Recomputes every node from the recorded leaves.
    pub fn replay(&self) -> Result<Vec<Tensor>> {
        let mut values: Vec<Tensor> = Vec::with_capacity(self.values.len());
        for (op, recorded) in self.ops.iter().zip(&self.values) {
            let v = match op {
                Op::Param(_) | Op::Constant => recorded.clone(),
                _ => eval(op, &values)?,
            };
            values.push(v);
        }
        Ok(values)
    }

    /// Sign pattern of every ReLU input. Two evaluations with equal patterns
    /// lie on the same smooth piece of the recorded function.
    pub fn relu_pattern(&self) -> Vec<bool> {
        let mut out = Vec::new();
        for op in &self.ops {
            if let Op::Relu(a) = op {
                out.extend(self.values[a.0].data().iter().map(|&x| x > 0.0));
            }
        }
        out
    }

    /// Gradient of the scalar `loss` with respect to every parameter of
    /// `store`. Parameters that do not reach `loss` get zero tensors.
    pub fn backward(&self, loss: Var, store: &ParamStore) -> Result<Gradients> {
        if loss.0 >= self.ops.len() {
            return Err(Error::Contract("loss is not part of this record".into()));
        }
        if !self.values[loss.0].is_scalar() {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.values[loss.0].shape()
            )));
        }
        let mut out = Gradients::zeros_like(store);
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.requires_grad[i] {
                continue;
            }
            if let Op::Param(id) = self.ops[i] {
                if id.0 >= out.len() {
                    return Err(Error::Contract(format!(
                        "parameter {} is not in the store",
                        id.0
                    )));
                }
                out.accumulate(id, &g);
                continue;
            }
            let parts = self.vjp(&self.ops[i], i, g)?;
            for (v, part) in parts {
                if !self.requires_grad[v.0] {
                    continue;
                }
                match &mut grads[v.0] {
                    Some(acc) => acc.add_assign(&part),
                    slot => *slot = Some(part),
                }
            }
        }
        Ok(out)
    }

    /// Vector-Jacobian products of one node with respect to its inputs.
    fn vjp(&self, op: &Op, node: usize, mut g: Tensor) -> Result<Vec<(Var, Tensor)>> {
        let val = |v: Var| &self.values[v.0];
        let need = |v: Var| self.requires_grad[v.0];
        let gd = g.data();
        let parts = match op {
            Op::Param(_) | Op::Constant => vec![],
            Op::MatMul(a, b) => {
                let (at, bt) = (val(*a), val(*b));
                let (m, k, n) = (at.rows(), at.cols(), bt.cols());
                let mut parts = Vec::with_capacity(2);
                if need(*a) {
                    let mut ga = vec![0.0; m * k];
                    gemm(
                        m,
                        n,
                        k,
                        Operand::normal(gd, n),
                        Operand::transposed(bt.data(), n),
                        &mut ga,
                    );
                    parts.push((*a, Tensor::new(at.shape().to_vec(), ga)?));
                }
                if need(*b) {
                    let mut gb = vec![0.0; k * n];
                    gemm(
                        k,
                        m,
                        n,
                        Operand::transposed(at.data(), k),
                        Operand::normal(gd, n),
                        &mut gb,
                    );
                    parts.push((*b, Tensor::new(bt.shape().to_vec(), gb)?));
                }
                parts
            }
            Op::AddBias(a, b) => {
                let bt = val(*b);
                let cols = bt.len();
                let mut gb = vec![0.0; cols];
                for row in gd.chunks(cols) {
                    for (acc, x) in gb.iter_mut().zip(row) {
                        *acc += x;
                    }
                }
                vec![(*a, g), (*b, Tensor::new(bt.shape().to_vec(), gb)?)]
            }
            Op::Add(a, b) => vec![(*a, g.clone()), (*b, g)],
            Op::Sub(a, b) => {
                let neg = g.map(|x| -x);
                vec![(*a, g), (*b, neg)]
            }
            Op::Mul(a, b) => {
                let (at, bt) = (val(*a), val(*b));
                vec![(*a, zip_map(&g, bt, |x, y| x * y)), (*b, zip_map(&g, at, |x, y| x * y))]
            }
            Op::ScaleRows(a, s) => {
                let (at, st) = (val(*a), val(*s));
                let cols = at.cols();
                let mut ga = g;
                let mut gs = vec![0.0; st.len()];
                for (r, (grow, arow)) in ga
                    .data_mut()
                    .chunks_mut(cols)
                    .zip(at.data().chunks(cols))
                    .enumerate()
                {
                    let sr = st.data()[r];
                    let mut dot = 0.0;
                    for (gx, ax) in grow.iter_mut().zip(arow) {
                        dot += *gx * ax;
                        *gx *= sr;
                    }
                    gs[r] = dot;
                }
                vec![(*a, ga), (*s, Tensor::new(st.shape().to_vec(), gs)?)]
            }
            Op::RowDot(a, b) => {
                let (at, bt) = (val(*a), val(*b));
                let cols = at.cols();
                let mut ga = at.clone();
                let mut gb = bt.clone();
                for r in 0..at.rows() {
                    let gr = gd[r];
                    let span = r * cols..(r + 1) * cols;
                    for (x, y) in ga.data_mut()[span.clone()].iter_mut().zip(&bt.data()[span.clone()]) {
                        *x = gr * y;
                    }
                    for (x, y) in gb.data_mut()[span.clone()].iter_mut().zip(&at.data()[span]) {
                        *x = gr * y;
                    }
                }
                vec![(*a, ga), (*b, gb)]
            }
            Op::Scale(a, c) => {
                g.data_mut().iter_mut().for_each(|x| *x *= c);
                vec![(*a, g)]
            }
            Op::Relu(a) => {
                for (x, &y) in g.data_mut().iter_mut().zip(val(*a).data()) {
                    if y <= 0.0 {
                        *x = 0.0;
                    }
                }
                vec![(*a, g)]
            }
            Op::Sigmoid(a) => {
                for (x, &s) in g.data_mut().iter_mut().zip(self.values[node].data()) {
                    *x *= s * (1.0 - s);
                }
                vec![(*a, g)]
            }
            Op::Mask(a, mask) => {
                for (x, m) in g.data_mut().iter_mut().zip(mask) {
                    *x *= m;
                }
                vec![(*a, g)]
            }
            Op::Gather { table, ids, rows } => {
                let tt = val(*table);
                let d = tt.cols();
                let fields = ids.len() / rows;
                let mut gt = Tensor::zeros(tt.shape());
                let gtd = gt.data_mut();
                for (r, grow) in gd.chunks(fields * d).enumerate() {
                    for f in 0..fields {
                        let id = ids[r * fields + f];
                        for (acc, x) in gtd[id * d..(id + 1) * d]
                            .iter_mut()
                            .zip(&grow[f * d..(f + 1) * d])
                        {
                            *acc += x;
                        }
                    }
                }
                vec![(*table, gt)]
            }
            Op::Sum(a) => vec![(*a, Tensor::filled(val(*a).shape(), gd[0]))],
            Op::BceSum { pred, labels } => {
                let pt = val(*pred);
                let mut gp = pt.clone();
                for (x, (&p, &y)) in gp.data_mut().iter_mut().zip(pt.data().iter().zip(labels)) {
                    *x = -gd[0] * (y / p - (1.0 - y) / (1.0 - p));
                }
                vec![(*pred, gp)]
            }
        };
        Ok(parts)
    }
}

fn inputs(op: &Op) -> Vec<Var> {
    match op {
        Op::Param(_) | Op::Constant => vec![],
        Op::MatMul(a, b)
        | Op::AddBias(a, b)
        | Op::Add(a, b)
        | Op::Sub(a, b)
        | Op::Mul(a, b)
        | Op::ScaleRows(a, b)
        | Op::RowDot(a, b) => vec![*a, *b],
        Op::Scale(a, _) | Op::Relu(a) | Op::Sigmoid(a) | Op::Mask(a, _) | Op::Sum(a) => vec![*a],
        Op::Gather { table, .. } => vec![*table],
        Op::BceSum { pred, .. } => vec![*pred],
    }
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape().to_vec(), data).expect("shapes checked at record time")
}

fn eval(op: &Op, values: &[Tensor]) -> Result<Tensor> {
    let val = |v: &Var| &values[v.0];
    match op {
        Op::Param(_) | Op::Constant => unreachable!("leaves are never evaluated"),
        Op::MatMul(a, b) => {
            let (at, bt) = (val(a), val(b));
            if at.cols() != bt.rows() || bt.shape().len() != 2 {
                return Err(Error::dim("matmul", at.shape(), bt.shape()));
            }
            let (m, k, n) = (at.rows(), at.cols(), bt.cols());
            let mut out = vec![0.0; m * n];
            gemm(m, k, n, Operand::normal(at.data(), k), Operand::normal(bt.data(), n), &mut out);
            Tensor::matrix(m, n, out)
        }
        Op::AddBias(a, b) => {
            let (at, bt) = (val(a), val(b));
            if bt.len() != at.cols() {
                return Err(Error::dim("add_bias", at.shape(), bt.shape()));
            }
            let mut out = at.clone();
            for row in out.data_mut().chunks_mut(bt.len()) {
                for (x, y) in row.iter_mut().zip(bt.data()) {
                    *x += y;
                }
            }
            Ok(out)
        }
        Op::Add(a, b) => binary(val(a), val(b), "add", |x, y| x + y),
        Op::Sub(a, b) => binary(val(a), val(b), "sub", |x, y| x - y),
        Op::Mul(a, b) => binary(val(a), val(b), "mul", |x, y| x * y),
        Op::ScaleRows(a, s) => {
            let (at, st) = (val(a), val(s));
            if st.len() != at.rows() || (st.cols() != 1 && st.shape().len() != 1) {
                return Err(Error::dim("scale_rows", at.shape(), st.shape()));
            }
            let mut out = at.clone();
            let cols = at.cols();
            for (row, &w) in out.data_mut().chunks_mut(cols).zip(st.data()) {
                for x in row {
                    *x *= w;
                }
            }
            Ok(out)
        }
        Op::RowDot(a, b) => {
            let (at, bt) = (val(a), val(b));
            at.same_shape(bt, "row_dot")?;
            let cols = at.cols();
            let out = at
                .data()
                .chunks(cols)
                .zip(bt.data().chunks(cols))
                .map(|(x, y)| x.iter().zip(y).map(|(p, q)| p * q).sum())
                .collect();
            Tensor::matrix(at.rows(), 1, out)
        }
        Op::Scale(a, c) => Ok(val(a).map(|x| x * c)),
        Op::Relu(a) => Ok(val(a).map(|x| if x > 0.0 { x } else { 0.0 })),
        Op::Sigmoid(a) => Ok(val(a).map(sigmoid)),
        Op::Mask(a, mask) => {
            let at = val(a);
            if mask.len() != at.len() {
                return Err(Error::dim("mask", at.shape(), &[mask.len()]));
            }
            let data = at.data().iter().zip(mask).map(|(x, m)| x * m).collect();
            Tensor::new(at.shape().to_vec(), data)
        }
        Op::Gather { table, ids, rows } => {
            let tt = val(table);
            if *rows == 0 || ids.len() % rows != 0 || ids.is_empty() {
                return Err(Error::dim("gather", &[*rows], &[ids.len()]));
            }
            let (vocab, d) = (tt.rows(), tt.cols());
            if let Some(bad) = ids.iter().find(|&&id| id >= vocab) {
                return Err(Error::Encoding(format!(
                    "feature id {bad} out of range for vocabulary of size {vocab}"
                )));
            }
            let fields = ids.len() / rows;
            let mut out = Vec::with_capacity(ids.len() * d);
            for &id in ids {
                out.extend_from_slice(tt.row(id));
            }
            Tensor::matrix(*rows, fields * d, out)
        }
        Op::Sum(a) => Ok(Tensor::scalar(val(a).data().iter().sum())),
        Op::BceSum { pred, labels } => {
            let pt = val(pred);
            if labels.len() != pt.len() {
                return Err(Error::dim("bce", pt.shape(), &[labels.len()]));
            }
            let mut total = 0.0;
            for (&p, &y) in pt.data().iter().zip(labels) {
                if !(p > 0.0 && p < 1.0) {
                    return Err(Error::Domain(format!(
                        "prediction {p} outside the open interval (0, 1)"
                    )));
                }
                total -= y * p.ln() + (1.0 - y) * (1.0 - p).ln();
            }
            Ok(Tensor::scalar(total))
        }
    }
}

fn binary(a: &Tensor, b: &Tensor, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
    a.same_shape(b, op)?;
    Ok(zip_map(a, b, f))
}
