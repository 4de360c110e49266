//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every operation applied to its [`Var`]s. Calling
//! [`Graph::backward`] on a scalar walks the tape in reverse and returns the
//! gradient of that scalar with respect to every leaf that requires one.
//! Graphs are single-use: build one per forward pass.

use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;

use crate::error::{Error, Result};
use crate::param::{Module, ParamId, Parameter};
use crate::tensor::{gelu_grad, Tensor};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf { param: Option<ParamId> },
    MatMul { a: usize, b: usize, ta: bool, tb: bool },
    Add { a: usize, b: usize },
    Sub { a: usize, b: usize },
    Mul { a: usize, b: usize },
    AddRow { a: usize, row: usize },
    MulRow { a: usize, row: usize },
    MulCol { a: usize, col: usize },
    Scale { a: usize, c: f64 },
    Sigmoid { a: usize },
    Tanh { a: usize },
    Relu { a: usize },
    Gelu { a: usize },
    Exp { a: usize },
    Log { a: usize },
    ClampMin { a: usize, min: f64 },
    Softmax { a: usize, axis: usize },
    Concat { parts: Vec<usize>, axis: usize },
    Slice { a: usize, axis: usize, start: usize },
    Sum { a: usize },
    Mean { a: usize },
    MeanRows { a: usize },
    Transpose { a: usize },
    GatherRows { table: usize, ids: Vec<usize> },
    NormalizeRows { a: usize, inv_std: Vec<f64> },
    StraightThrough { a: usize, pass: Vec<bool> },
}

struct Node {
    value: Rc<Tensor>,
    op: Op,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Graph {
    nodes: RefCell<Vec<Node>>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            op,
            needs_grad,
        });
        Var(nodes.len() - 1)
    }

    fn val(&self, v: Var) -> Rc<Tensor> {
        self.nodes.borrow()[v.0].value.clone()
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes.borrow()[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> Rc<Tensor> {
        self.val(v)
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.ng(v)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&self, t: Tensor) -> Var {
        self.push(t, Op::Leaf { param: None }, false)
    }

    /// A leaf that receives a gradient but is not tied to a parameter.
    pub fn input(&self, t: Tensor) -> Var {
        self.push(t, Op::Leaf { param: None }, true)
    }

    /// Binds a parameter's current value. Frozen parameters behave as
    /// constants.
    pub fn param(&self, p: &Parameter) -> Var {
        self.push(
            p.value.clone(),
            Op::Leaf {
                param: Some(p.id()),
            },
            p.trainable,
        )
    }

    fn unary(&self, a: Var, value: Tensor, op: Op) -> Var {
        let ng = self.ng(a);
        self.push(value, op, ng)
    }

    fn binary(&self, a: Var, b: Var, value: Tensor, op: Op) -> Var {
        let ng = self.ng(a) || self.ng(b);
        self.push(value, op, ng)
    }

    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        self.matmul_t(a, b, false, false)
    }

    /// `op(a) · op(b)` with optional transposes.
    pub fn matmul_t(&self, a: Var, b: Var, ta: bool, tb: bool) -> Result<Var> {
        let v = self.val(a).matmul_t(&self.val(b), ta, tb)?;
        Ok(self.binary(a, b, v, Op::MatMul { a: a.0, b: b.0, ta, tb }))
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        let v = self.val(a).add(&self.val(b))?;
        Ok(self.binary(a, b, v, Op::Add { a: a.0, b: b.0 }))
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        let v = self.val(a).sub(&self.val(b))?;
        Ok(self.binary(a, b, v, Op::Sub { a: a.0, b: b.0 }))
    }

    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        let v = self.val(a).mul(&self.val(b))?;
        Ok(self.binary(a, b, v, Op::Mul { a: a.0, b: b.0 }))
    }

    /// Bias-add: broadcasts `row` over the rows of `a`.
    pub fn add_row(&self, a: Var, row: Var) -> Result<Var> {
        let v = self.val(a).add_row(&self.val(row))?;
        Ok(self.binary(a, row, v, Op::AddRow { a: a.0, row: row.0 }))
    }

    pub fn mul_row(&self, a: Var, row: Var) -> Result<Var> {
        let v = self.val(a).mul_row(&self.val(row))?;
        Ok(self.binary(a, row, v, Op::MulRow { a: a.0, row: row.0 }))
    }

    /// Scales row `i` of `a` by `col[i]`; `col` is `rows x 1`.
    pub fn mul_col(&self, a: Var, col: Var) -> Result<Var> {
        let v = self.val(a).mul_col(&self.val(col))?;
        Ok(self.binary(a, col, v, Op::MulCol { a: a.0, col: col.0 }))
    }

    pub fn scale(&self, a: Var, c: f64) -> Var {
        let v = self.val(a).scale(c);
        self.unary(a, v, Op::Scale { a: a.0, c })
    }

    pub fn sigmoid(&self, a: Var) -> Var {
        let v = self.val(a).sigmoid();
        self.unary(a, v, Op::Sigmoid { a: a.0 })
    }

    pub fn tanh(&self, a: Var) -> Var {
        let v = self.val(a).tanh();
        self.unary(a, v, Op::Tanh { a: a.0 })
    }

    pub fn relu(&self, a: Var) -> Var {
        let v = self.val(a).relu();
        self.unary(a, v, Op::Relu { a: a.0 })
    }

    pub fn gelu(&self, a: Var) -> Var {
        let v = self.val(a).gelu();
        self.unary(a, v, Op::Gelu { a: a.0 })
    }

    pub fn exp(&self, a: Var) -> Var {
        let v = self.val(a).exp();
        self.unary(a, v, Op::Exp { a: a.0 })
    }

    pub fn log(&self, a: Var) -> Result<Var> {
        let v = self.val(a).log()?;
        Ok(self.unary(a, v, Op::Log { a: a.0 }))
    }

    pub fn clamp_min(&self, a: Var, min: f64) -> Var {
        let v = self.val(a).clamp_min(min);
        self.unary(a, v, Op::ClampMin { a: a.0, min })
    }

    pub fn softmax(&self, a: Var, axis: usize) -> Result<Var> {
        let v = self.val(a).softmax(axis)?;
        Ok(self.unary(a, v, Op::Softmax { a: a.0, axis }))
    }

    pub fn concat(&self, parts: &[Var], axis: usize) -> Result<Var> {
        let vals: Vec<Rc<Tensor>> = parts.iter().map(|&p| self.val(p)).collect();
        let refs: Vec<&Tensor> = vals.iter().map(|v| v.as_ref()).collect();
        let v = Tensor::concat(&refs, axis)?;
        let ng = parts.iter().any(|&p| self.ng(p));
        Ok(self.push(
            v,
            Op::Concat {
                parts: parts.iter().map(|p| p.0).collect(),
                axis,
            },
            ng,
        ))
    }

    pub fn slice(&self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let v = self.val(a).slice(axis, start, len)?;
        Ok(self.unary(a, v, Op::Slice { a: a.0, axis, start }))
    }

    pub fn sum(&self, a: Var) -> Var {
        let v = Tensor::scalar(self.val(a).sum());
        self.unary(a, v, Op::Sum { a: a.0 })
    }

    pub fn mean(&self, a: Var) -> Var {
        let v = Tensor::scalar(self.val(a).mean());
        self.unary(a, v, Op::Mean { a: a.0 })
    }

    /// Mean over rows, giving `1 x cols`.
    pub fn mean_rows(&self, a: Var) -> Var {
        let v = self.val(a).mean_rows();
        self.unary(a, v, Op::MeanRows { a: a.0 })
    }

    pub fn transpose(&self, a: Var) -> Result<Var> {
        let v = self.val(a).transpose()?;
        Ok(self.unary(a, v, Op::Transpose { a: a.0 }))
    }

    /// Embedding lookup: selects rows of `table`.
    pub fn gather_rows(&self, table: Var, ids: &[usize]) -> Result<Var> {
        let v = self.val(table).gather_rows(ids)?;
        Ok(self.unary(
            table,
            v,
            Op::GatherRows {
                table: table.0,
                ids: ids.to_vec(),
            },
        ))
    }

    /// Per-row standardization (layer norm without the affine part).
    pub fn normalize_rows(&self, a: Var, eps: f64) -> Var {
        let (v, inv_std) = self.val(a).normalize_rows(eps);
        self.unary(a, v, Op::NormalizeRows { a: a.0, inv_std })
    }

    /// Replaces the forward value of `a` with `value` while passing the
    /// upstream gradient through unchanged where `pass` is true and blocking
    /// it elsewhere.
    pub fn straight_through(&self, a: Var, value: Tensor, pass: Vec<bool>) -> Result<Var> {
        let src = self.val(a);
        if value.shape() != src.shape() || pass.len() != src.numel() {
            return Err(Error::Dimension {
                op: "straight_through",
                lhs: src.shape().to_vec(),
                rhs: value.shape().to_vec(),
            });
        }
        Ok(self.unary(a, value, Op::StraightThrough { a: a.0, pass }))
    }

    /// `x · wᵀ + b` for a weight stored as `out x in`.
    pub fn linear(&self, x: Var, w: Var, b: Var) -> Result<Var> {
        let y = self.matmul_t(x, w, false, true)?;
        self.add_row(y, b)
    }

    /// Row normalization followed by elementwise gain and bias.
    pub fn layer_norm(&self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let n = self.normalize_rows(x, eps);
        let s = self.mul_row(n, gain)?;
        self.add_row(s, bias)
    }

    /// Reverse pass from a single-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.0];
        if root.value.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward requires a scalar, got shape {:?}",
                root.value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::full(root.value.shape(), 1.0));

        for idx in (0..=loss.0).rev() {
            let node = &nodes[idx];
            if !node.needs_grad || matches!(node.op, Op::Leaf { .. }) {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            backprop_node(&nodes, idx, &g, &mut grads)?;
        }

        let mut leaves = HashMap::new();
        let mut params: HashMap<ParamId, Tensor> = HashMap::new();
        for (idx, slot) in grads.into_iter().enumerate() {
            let Some(g) = slot else { continue };
            if let Op::Leaf { param } = nodes[idx].op {
                if !nodes[idx].needs_grad {
                    continue;
                }
                if let Some(id) = param {
                    match params.get_mut(&id) {
                        Some(acc) => acc.add_assign(&g)?,
                        None => {
                            params.insert(id, g.clone());
                        }
                    }
                }
                leaves.insert(idx, g);
            }
        }
        Ok(Gradients { leaves, params })
    }
}

fn accumulate(grads: &mut [Option<Tensor>], nodes: &[Node], idx: usize, g: Tensor) -> Result<()> {
    if !nodes[idx].needs_grad {
        return Ok(());
    }
    let shape = nodes[idx].value.shape();
    let g = if g.shape() != shape {
        g.reshape(shape.to_vec())?
    } else {
        g
    };
    match &mut grads[idx] {
        Some(existing) => existing.add_assign(&g)?,
        slot @ None => *slot = Some(g),
    }
    Ok(())
}

fn column_sums(t: &Tensor) -> Vec<f64> {
    let c = t.cols();
    let mut out = vec![0.0; c];
    for row in t.data().chunks(c) {
        for (o, v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
    out
}

fn backprop_node(nodes: &[Node], idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
    let node = &nodes[idx];
    let out = &node.value;
    let val = |i: usize| -> &Tensor { &nodes[i].value };
    let ng = |i: usize| nodes[i].needs_grad;

    match &node.op {
        Op::Leaf { .. } => {}
        &Op::MatMul { a, b, ta, tb } => {
            let (av, bv) = (val(a), val(b));
            if ng(a) {
                let da = match (ta, tb) {
                    (false, false) => g.matmul_t(bv, false, true)?,
                    (false, true) => g.matmul_t(bv, false, false)?,
                    (true, false) => bv.matmul_t(g, false, true)?,
                    (true, true) => bv.matmul_t(g, true, true)?,
                };
                accumulate(grads, nodes, a, da)?;
            }
            if ng(b) {
                let db = match (ta, tb) {
                    (false, false) => av.matmul_t(g, true, false)?,
                    (false, true) => g.matmul_t(av, true, false)?,
                    (true, false) => av.matmul_t(g, false, false)?,
                    (true, true) => g.matmul_t(av, true, true)?,
                };
                accumulate(grads, nodes, b, db)?;
            }
        }
        &Op::Add { a, b } => {
            accumulate(grads, nodes, a, g.clone())?;
            accumulate(grads, nodes, b, g.clone())?;
        }
        &Op::Sub { a, b } => {
            accumulate(grads, nodes, a, g.clone())?;
            accumulate(grads, nodes, b, g.scale(-1.0))?;
        }
        &Op::Mul { a, b } => {
            if ng(a) {
                accumulate(grads, nodes, a, g.mul(val(b))?)?;
            }
            if ng(b) {
                accumulate(grads, nodes, b, g.mul(val(a))?)?;
            }
        }
        &Op::AddRow { a, row } => {
            accumulate(grads, nodes, a, g.clone())?;
            if ng(row) {
                accumulate(grads, nodes, row, Tensor::vector(column_sums(g)))?;
            }
        }
        &Op::MulRow { a, row } => {
            if ng(a) {
                accumulate(grads, nodes, a, g.mul_row(val(row))?)?;
            }
            if ng(row) {
                let prod = g.mul(val(a))?;
                accumulate(grads, nodes, row, Tensor::vector(column_sums(&prod)))?;
            }
        }
        &Op::MulCol { a, col } => {
            if ng(a) {
                accumulate(grads, nodes, a, g.mul_col(val(col))?)?;
            }
            if ng(col) {
                let prod = g.mul(val(a))?;
                let c = prod.cols();
                let sums = prod.data().chunks(c).map(|r| r.iter().sum()).collect();
                accumulate(grads, nodes, col, Tensor::new(val(col).shape().to_vec(), sums)?)?;
            }
        }
        &Op::Scale { a, c } => accumulate(grads, nodes, a, g.scale(c))?,
        &Op::Sigmoid { a } => {
            let d = out.map(|y| y * (1.0 - y));
            accumulate(grads, nodes, a, g.mul(&d)?)?;
        }
        &Op::Tanh { a } => {
            let d = out.map(|y| 1.0 - y * y);
            accumulate(grads, nodes, a, g.mul(&d)?)?;
        }
        &Op::Relu { a } => {
            let d = val(a).map(|x| if x > 0.0 { 1.0 } else { 0.0 });
            accumulate(grads, nodes, a, g.mul(&d)?)?;
        }
        &Op::Gelu { a } => {
            let d = val(a).map(gelu_grad);
            accumulate(grads, nodes, a, g.mul(&d)?)?;
        }
        &Op::Exp { a } => accumulate(grads, nodes, a, g.mul(out)?)?,
        &Op::Log { a } => {
            let d = val(a).map(|x| 1.0 / x);
            accumulate(grads, nodes, a, g.mul(&d)?)?;
        }
        &Op::ClampMin { a, min } => {
            let d = val(a).map(|x| if x >= min { 1.0 } else { 0.0 });
            accumulate(grads, nodes, a, g.mul(&d)?)?;
        }
        &Op::Softmax { a, axis } => {
            let column_wise = axis == 0 && out.shape().len() == 2;
            let (y, gg) = if column_wise {
                (out.transpose()?, g.transpose()?)
            } else {
                (out.as_ref().clone(), g.clone())
            };
            let c = y.cols();
            let mut dx = gg.clone();
            for (dxr, yr) in dx.data_mut().chunks_mut(c).zip(y.data().chunks(c)) {
                let dot: f64 = dxr.iter().zip(yr).map(|(g, y)| g * y).sum();
                for (d, y) in dxr.iter_mut().zip(yr) {
                    *d = y * (*d - dot);
                }
            }
            let dx = if column_wise { dx.transpose()? } else { dx };
            accumulate(grads, nodes, a, dx)?;
        }
        Op::Concat { parts, axis } => {
            let mut offset = 0;
            for &p in parts {
                let pv = val(p);
                let len = if *axis == 0 { pv.rows() } else { pv.cols() };
                if ng(p) {
                    accumulate(grads, nodes, p, g.slice(*axis, offset, len)?)?;
                }
                offset += len;
            }
        }
        &Op::Slice { a, axis, start } => {
            let src = val(a);
            let (r, c) = (src.rows(), src.cols());
            let mut d = Tensor::zeros(&[r, c]);
            let (gr, gc) = (g.rows(), g.cols());
            for i in 0..gr {
                for j in 0..gc {
                    let (si, sj) = if axis == 0 { (i + start, j) } else { (i, j + start) };
                    d.data_mut()[si * c + sj] = g.data()[i * gc + j];
                }
            }
            accumulate(grads, nodes, a, d)?;
        }
        &Op::Sum { a } => {
            let gv = g.item()?;
            accumulate(grads, nodes, a, Tensor::full(val(a).shape(), gv))?;
        }
        &Op::Mean { a } => {
            let src = val(a);
            let gv = g.item()? / src.numel() as f64;
            accumulate(grads, nodes, a, Tensor::full(src.shape(), gv))?;
        }
        &Op::MeanRows { a } => {
            let src = val(a);
            let r = src.rows();
            let mut d = Vec::with_capacity(src.numel());
            for _ in 0..r {
                d.extend(g.data().iter().map(|v| v / r as f64));
            }
            accumulate(grads, nodes, a, Tensor::new(src.shape().to_vec(), d)?)?;
        }
        &Op::Transpose { a } => accumulate(grads, nodes, a, g.transpose()?)?,
        Op::GatherRows { table, ids } => {
            let tv = val(*table);
            let c = tv.cols();
            let mut d = Tensor::zeros(tv.shape());
            for (i, &id) in ids.iter().enumerate() {
                let dst = &mut d.data_mut()[id * c..(id + 1) * c];
                for (o, v) in dst.iter_mut().zip(g.row_slice(i)) {
                    *o += v;
                }
            }
            accumulate(grads, nodes, *table, d)?;
        }
        Op::NormalizeRows { a, inv_std } => {
            let c = out.cols();
            let mut dx = g.clone();
            for ((dxr, yr), is) in dx
                .data_mut()
                .chunks_mut(c)
                .zip(out.data().chunks(c))
                .zip(inv_std)
            {
                let mg = dxr.iter().sum::<f64>() / c as f64;
                let mgy = dxr.iter().zip(yr).map(|(g, y)| g * y).sum::<f64>() / c as f64;
                for (d, y) in dxr.iter_mut().zip(yr) {
                    *d = is * (*d - mg - y * mgy);
                }
            }
            accumulate(grads, nodes, *a, dx)?;
        }
        Op::StraightThrough { a, pass } => {
            let mut d = g.clone();
            for (v, &p) in d.data_mut().iter_mut().zip(pass) {
                if !p {
                    *v = 0.0;
                }
            }
            accumulate(grads, nodes, *a, d)?;
        }
    }
    Ok(())
}

/// Result of a backward pass.
#[derive(Debug)]
pub struct Gradients {
    leaves: HashMap<usize, Tensor>,
    params: HashMap<ParamId, Tensor>,
}

impl Gradients {
    /// Gradient with respect to a leaf created by [`Graph::input`] or
    /// [`Graph::param`]. `None` when the leaf is unreachable from the loss.
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.leaves.get(&v.0)
    }

    pub fn param(&self, id: ParamId) -> Option<&Tensor> {
        self.params.get(&id)
    }

    /// Adds gradients into every reachable parameter of `module`;
    /// parameters the loss does not depend on are left untouched.
    pub fn accumulate_into<M: Module + ?Sized>(&self, module: &mut M) -> Result<()> {
        for (_, p) in module.named_params_mut() {
            if let Some(g) = self.params.get(&p.id()) {
                p.accumulate_grad(g)?;
            }
        }
        Ok(())
    }
}
