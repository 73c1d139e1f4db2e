//! Define-by-run computation graph with reverse-mode differentiation.
//!
//! Every op evaluates eagerly when it is recorded, so building the graph *is*
//! the forward pass. `backward` then walks the tape in reverse. Nodes that do
//! not depend on a differentiable leaf (or that sit behind `stop_gradient`)
//! are never visited on the way back.

use std::collections::HashMap;

use super::tensor::{matmul_a_bt_acc, matmul_at_b_acc, matmul_into};
use super::{NumericsError, Tensor};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    AddBias(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    Relu(usize),
    Tanh(usize),
    Concat(Vec<usize>),
    SliceCols(usize, usize),
    Gather(usize, Vec<usize>),
    BankLinear {
        x: usize,
        bank: usize,
        index: Vec<usize>,
        inputs: usize,
        outputs: usize,
    },
    StopGradient(usize),
    Mse(usize, usize),
    Sum(usize),
    Mean(usize),
}

impl Op {
    fn inputs(&self) -> Vec<usize> {
        match self {
            Op::Leaf => vec![],
            Op::MatMul(a, b)
            | Op::AddBias(a, b)
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::Mse(a, b) => vec![*a, *b],
            Op::Scale(a, _)
            | Op::Relu(a)
            | Op::Tanh(a)
            | Op::SliceCols(a, _)
            | Op::Gather(a, _)
            | Op::StopGradient(a)
            | Op::Sum(a)
            | Op::Mean(a) => vec![*a],
            Op::Concat(parts) => parts.clone(),
            Op::BankLinear { x, bank, .. } => vec![*x, *bank],
        }
    }

    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::AddBias(..) => "add_bias",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Relu(..) => "relu",
            Op::Tanh(..) => "tanh",
            Op::Concat(..) => "concat",
            Op::SliceCols(..) => "slice_cols",
            Op::Gather(..) => "gather",
            Op::BankLinear { .. } => "bank_linear",
            Op::StopGradient(..) => "stop_gradient",
            Op::Mse(..) => "mse",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// A tape of eagerly evaluated ops.
#[derive(Debug, Default, Clone)]
pub struct Graph {
    nodes: Vec<Node>,
    names: HashMap<String, usize>,
}

/// Gradients of a scalar seed with respect to every node that needed one.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient for `v`; the zero tensor when nothing flowed into it.
    pub fn get(&self, v: Var) -> Tensor {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(self.shapes[v.0].clone()),
        }
    }

    /// Borrowed gradient, `None` when it is identically zero.
    pub fn get_ref(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    /// Append the gradient of `v` to `out` (zeros when absent).
    pub fn extend_into(&self, v: Var, out: &mut Vec<f64>) {
        match &self.grads[v.0] {
            Some(g) => out.extend_from_slice(g.data()),
            None => out.extend(std::iter::repeat_n(0.0, self.shapes[v.0].iter().product())),
        }
    }
}

fn shape_err(node: usize, op: &str, detail: String) -> NumericsError {
    NumericsError::Shape {
        node: format!("#{node} ({op})"),
        detail,
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

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, i: usize) -> bool {
        self.nodes[i].requires_grad
    }

    /// Differentiable leaf (a parameter).
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Non-differentiable leaf (data, targets, frozen weights).
    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Named leaf; the name can be used with [`Graph::lookup`].
    pub fn leaf_named(&mut self, name: &str, value: Tensor, requires_grad: bool) -> Var {
        let v = self.push(value, Op::Leaf, requires_grad);
        self.names.insert(name.to_string(), v.0);
        v
    }

    pub fn set_name(&mut self, v: Var, name: &str) {
        self.names.insert(name.to_string(), v.0);
    }

    pub fn lookup(&self, name: &str) -> Option<Var> {
        self.names.get(name).copied().map(Var)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.item()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let (n, k, k2, m) = (ta.rows(), ta.cols(), tb.rows(), tb.cols());
        if k != k2 {
            return Err(shape_err(
                self.nodes.len(),
                "matmul",
                format!("[{n},{k}] x [{k2},{m}]"),
            ));
        }
        let mut out = vec![0.0; n * m];
        matmul_into(ta.data(), tb.data(), &mut out, n, k, m);
        let rg = self.rg(a.0) || self.rg(b.0);
        Ok(self.push(Tensor::matrix(n, m, out)?, Op::MatMul(a.0, b.0), rg))
    }

    /// `a[n,m] + bias[1,m]` broadcast over rows.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var, NumericsError> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[bias.0].value);
        let (n, m) = (ta.rows(), ta.cols());
        if tb.len() != m {
            return Err(shape_err(
                self.nodes.len(),
                "add_bias",
                format!("bias of {} values for {m} columns", tb.len()),
            ));
        }
        let mut out = ta.data().to_vec();
        for r in 0..n {
            for (o, b) in out[r * m..(r + 1) * m].iter_mut().zip(tb.data()) {
                *o += b;
            }
        }
        let rg = self.rg(a.0) || self.rg(bias.0);
        Ok(self.push(Tensor::matrix(n, m, out)?, Op::AddBias(a.0, bias.0), rg))
    }

    fn binary(
        &mut self,
        a: Var,
        b: Var,
        name: &str,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var, NumericsError> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if ta.shape() != tb.shape() {
            return Err(shape_err(
                self.nodes.len(),
                name,
                format!("{:?} vs {:?}", ta.shape(), tb.shape()),
            ));
        }
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        let rg = self.rg(a.0) || self.rg(b.0);
        Ok(self.push(value, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.binary(a, b, "add", |x, y| x + y, Op::Add(a.0, b.0))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.binary(a, b, "sub", |x, y| x - y, Op::Sub(a.0, b.0))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.binary(a, b, "mul", |x, y| x * y, Op::Mul(a.0, b.0))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = self.nodes[a.0].value.map(|x| x * c);
        let rg = self.rg(a.0);
        self.push(value, Op::Scale(a.0, c), rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.nodes[a.0].value.map(|x| if x > 0.0 { x } else { 0.0 });
        let rg = self.rg(a.0);
        self.push(value, Op::Relu(a.0), rg)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.nodes[a.0].value.map(f64::tanh);
        let rg = self.rg(a.0);
        self.push(value, Op::Tanh(a.0), rg)
    }

    /// Column-wise concatenation of tensors with equal row counts.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var, NumericsError> {
        let rows = parts.first().map_or(0, |p| self.nodes[p.0].value.rows());
        let mut cols = 0;
        for p in parts {
            let t = &self.nodes[p.0].value;
            if t.rows() != rows {
                return Err(shape_err(
                    self.nodes.len(),
                    "concat",
                    format!("row count {} vs {rows}", t.rows()),
                ));
            }
            cols += t.cols();
        }
        let mut out = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for p in parts {
                out.extend_from_slice(self.nodes[p.0].value.row_slice(r));
            }
        }
        let rg = parts.iter().any(|p| self.rg(p.0));
        let idx = parts.iter().map(|p| p.0).collect();
        Ok(self.push(Tensor::matrix(rows, cols, out)?, Op::Concat(idx), rg))
    }

    /// Columns `[start, end)` of a rank-2 tensor.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var, NumericsError> {
        let t = &self.nodes[a.0].value;
        let (rows, cols) = (t.rows(), t.cols());
        if start > end || end > cols {
            return Err(shape_err(
                self.nodes.len(),
                "slice_cols",
                format!("[{start},{end}) out of {cols} columns"),
            ));
        }
        let mut out = Vec::with_capacity(rows * (end - start));
        for r in 0..rows {
            out.extend_from_slice(&t.row_slice(r)[start..end]);
        }
        let rg = self.rg(a.0);
        Ok(self.push(
            Tensor::matrix(rows, end - start, out)?,
            Op::SliceCols(a.0, start),
            rg,
        ))
    }

    /// Row gather: `out[i] = src[index[i]]`.
    pub fn gather_rows(&mut self, src: Var, index: &[usize]) -> Result<Var, NumericsError> {
        let t = &self.nodes[src.0].value;
        let (rows, cols) = (t.rows(), t.cols());
        let mut out = Vec::with_capacity(index.len() * cols);
        for &i in index {
            if i >= rows {
                return Err(shape_err(
                    self.nodes.len(),
                    "gather",
                    format!("row {i} out of {rows}"),
                ));
            }
            out.extend_from_slice(t.row_slice(i));
        }
        let rg = self.rg(src.0);
        let value = Tensor::matrix(index.len(), cols, out)?;
        Ok(self.push(value, Op::Gather(src.0, index.to_vec()), rg))
    }

    /// Per-row linear layer with weights drawn from a bank.
    ///
    /// Row `c` of `bank` holds one layer's parameters: the weight matrix
    /// `[inputs, outputs]` in row-major order followed by the bias. Sample `i`
    /// uses row `index[i]`: `y_i = x_i · W_c + b_c`.
    pub fn bank_linear(
        &mut self,
        x: Var,
        bank: Var,
        index: &[usize],
        inputs: usize,
        outputs: usize,
    ) -> Result<Var, NumericsError> {
        let (tx, tb) = (&self.nodes[x.0].value, &self.nodes[bank.0].value);
        let id = self.nodes.len();
        if tx.cols() != inputs || tx.rows() != index.len() {
            return Err(shape_err(
                id,
                "bank_linear",
                format!(
                    "x {:?} for {} samples of width {inputs}",
                    tx.shape(),
                    index.len()
                ),
            ));
        }
        let width = inputs * outputs + outputs;
        if tb.cols() != width {
            return Err(shape_err(
                id,
                "bank_linear",
                format!("bank width {} but layer needs {width}", tb.cols()),
            ));
        }
        let mut out = vec![0.0; index.len() * outputs];
        for (i, &c) in index.iter().enumerate() {
            if c >= tb.rows() {
                return Err(shape_err(
                    id,
                    "bank_linear",
                    format!("bank row {c} out of {}", tb.rows()),
                ));
            }
            let row = tb.row_slice(c);
            let (w, b) = row.split_at(inputs * outputs);
            let y = &mut out[i * outputs..(i + 1) * outputs];
            if outputs == 1 {
                y[0] = b[0] + dot(tx.row_slice(i), w);
                continue;
            }
            y.copy_from_slice(b);
            for (k, &xk) in tx.row_slice(i).iter().enumerate() {
                for (yj, wj) in y.iter_mut().zip(&w[k * outputs..(k + 1) * outputs]) {
                    *yj += xk * wj;
                }
            }
        }
        let rg = self.rg(x.0) || self.rg(bank.0);
        let value = Tensor::matrix(index.len(), outputs, out)?;
        let op = Op::BankLinear {
            x: x.0,
            bank: bank.0,
            index: index.to_vec(),
            inputs,
            outputs,
        };
        Ok(self.push(value, op, rg))
    }

    /// Passes the value forward and blocks every gradient.
    pub fn stop_gradient(&mut self, a: Var) -> Var {
        let value = self.nodes[a.0].value.clone();
        self.push(value, Op::StopGradient(a.0), false)
    }

    /// Mean squared difference over all elements.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if ta.shape() != tb.shape() {
            return Err(shape_err(
                self.nodes.len(),
                "mse",
                format!("{:?} vs {:?}", ta.shape(), tb.shape()),
            ));
        }
        let n = ta.len().max(1) as f64;
        let s: f64 = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(x, y)| (x - y) * (x - y))
            .sum();
        let rg = self.rg(a.0) || self.rg(b.0);
        Ok(self.push(Tensor::scalar(s / n), Op::Mse(a.0, b.0), rg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.nodes[a.0].value.sum();
        let rg = self.rg(a.0);
        self.push(Tensor::scalar(s), Op::Sum(a.0), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = &self.nodes[a.0].value;
        let s = t.sum() / t.len().max(1) as f64;
        let rg = self.rg(a.0);
        self.push(Tensor::scalar(s), Op::Mean(a.0), rg)
    }

    /// Reverse sweep from a scalar node.
    pub fn backward(&self, seed: Var) -> Result<Gradients, NumericsError> {
        let root = &self.nodes[seed.0];
        if !root.value.is_scalar() {
            return Err(NumericsError::NonScalarSeed {
                shape: root.value.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        let shapes = self
            .nodes
            .iter()
            .map(|n| n.value.shape().to_vec())
            .collect();
        if root.requires_grad {
            grads[seed.0] = Some(Tensor::full(root.value.shape().to_vec(), 1.0));
        }
        for id in (0..=seed.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            self.propagate(id, &g, &mut grads);
            grads[id] = Some(g);
        }
        Ok(Gradients { grads, shapes })
    }

    fn propagate(&self, id: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[id];
        let gd = g.data();
        match &node.op {
            Op::Leaf | Op::StopGradient(_) => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (&self.nodes[*a].value, &self.nodes[*b].value);
                let (n, k, m) = (ta.rows(), ta.cols(), tb.cols());
                if self.rg(*a) {
                    let acc = acc_buf(grads, *a, ta);
                    matmul_a_bt_acc(gd, tb.data(), acc, n, k, m);
                }
                if self.rg(*b) {
                    let acc = acc_buf(grads, *b, tb);
                    matmul_at_b_acc(ta.data(), gd, acc, n, k, m);
                }
            }
            Op::AddBias(a, b) => {
                if self.rg(*a) {
                    add_into(acc_buf(grads, *a, &self.nodes[*a].value), gd);
                }
                if self.rg(*b) {
                    let tb = &self.nodes[*b].value;
                    let m = tb.len();
                    let acc = acc_buf(grads, *b, tb);
                    for row in gd.chunks(m) {
                        add_into(acc, row);
                    }
                }
            }
            Op::Add(a, b) => {
                for &p in [a, b] {
                    if self.rg(p) {
                        add_into(acc_buf(grads, p, &self.nodes[p].value), gd);
                    }
                }
            }
            Op::Sub(a, b) => {
                if self.rg(*a) {
                    add_into(acc_buf(grads, *a, &self.nodes[*a].value), gd);
                }
                if self.rg(*b) {
                    let acc = acc_buf(grads, *b, &self.nodes[*b].value);
                    for (o, v) in acc.iter_mut().zip(gd) {
                        *o -= v;
                    }
                }
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (&self.nodes[*a].value, &self.nodes[*b].value);
                if self.rg(*a) {
                    let acc = acc_buf(grads, *a, ta);
                    for ((o, v), y) in acc.iter_mut().zip(gd).zip(tb.data()) {
                        *o += v * y;
                    }
                }
                if self.rg(*b) {
                    let acc = acc_buf(grads, *b, tb);
                    for ((o, v), x) in acc.iter_mut().zip(gd).zip(ta.data()) {
                        *o += v * x;
                    }
                }
            }
            Op::Scale(a, c) => {
                if self.rg(*a) {
                    let acc = acc_buf(grads, *a, &self.nodes[*a].value);
                    for (o, v) in acc.iter_mut().zip(gd) {
                        *o += v * c;
                    }
                }
            }
            Op::Relu(a) => {
                if self.rg(*a) {
                    let x = &self.nodes[*a].value;
                    let acc = acc_buf(grads, *a, x);
                    for ((o, v), xv) in acc.iter_mut().zip(gd).zip(x.data()) {
                        if *xv > 0.0 {
                            *o += v;
                        }
                    }
                }
            }
            Op::Tanh(a) => {
                if self.rg(*a) {
                    let y = node.value.data();
                    let acc = acc_buf(grads, *a, &self.nodes[*a].value);
                    for ((o, v), yv) in acc.iter_mut().zip(gd).zip(y) {
                        *o += v * (1.0 - yv * yv);
                    }
                }
            }
            Op::Concat(parts) => {
                let rows = node.value.rows();
                let total = node.value.cols();
                let mut offset = 0;
                for &p in parts {
                    let tp = &self.nodes[p].value;
                    let w = tp.cols();
                    if self.rg(p) {
                        let acc = acc_buf(grads, p, tp);
                        for r in 0..rows {
                            add_into(
                                &mut acc[r * w..(r + 1) * w],
                                &gd[r * total + offset..r * total + offset + w],
                            );
                        }
                    }
                    offset += w;
                }
            }
            Op::SliceCols(a, start) => {
                if self.rg(*a) {
                    let ta = &self.nodes[*a].value;
                    let (rows, cols) = (ta.rows(), ta.cols());
                    let w = node.value.cols();
                    let acc = acc_buf(grads, *a, ta);
                    for r in 0..rows {
                        add_into(
                            &mut acc[r * cols + start..r * cols + start + w],
                            &gd[r * w..(r + 1) * w],
                        );
                    }
                }
            }
            Op::Gather(src, index) => {
                if self.rg(*src) {
                    let ts = &self.nodes[*src].value;
                    let cols = ts.cols();
                    let acc = acc_buf(grads, *src, ts);
                    for (i, &r) in index.iter().enumerate() {
                        add_into(
                            &mut acc[r * cols..(r + 1) * cols],
                            &gd[i * cols..(i + 1) * cols],
                        );
                    }
                }
            }
            Op::BankLinear {
                x,
                bank,
                index,
                inputs,
                outputs,
            } => {
                let (inputs, outputs) = (*inputs, *outputs);
                let (tx, tb) = (&self.nodes[*x].value, &self.nodes[*bank].value);
                let width = tb.cols();
                if self.rg(*x) {
                    let acc = acc_buf(grads, *x, tx);
                    for (i, &c) in index.iter().enumerate() {
                        let w = &tb.row_slice(c)[..inputs * outputs];
                        let gy = &gd[i * outputs..(i + 1) * outputs];
                        if outputs == 1 {
                            for (o, wk) in acc[i * inputs..(i + 1) * inputs].iter_mut().zip(w) {
                                *o += wk * gy[0];
                            }
                            continue;
                        }
                        for (k, o) in acc[i * inputs..(i + 1) * inputs].iter_mut().enumerate() {
                            *o += dot(&w[k * outputs..(k + 1) * outputs], gy);
                        }
                    }
                }
                if self.rg(*bank) {
                    let acc = acc_buf(grads, *bank, tb);
                    for (i, &c) in index.iter().enumerate() {
                        let row = &mut acc[c * width..(c + 1) * width];
                        let gy = &gd[i * outputs..(i + 1) * outputs];
                        let (gw, gb) = row.split_at_mut(inputs * outputs);
                        add_into(gb, gy);
                        if outputs == 1 {
                            for (o, xk) in gw.iter_mut().zip(tx.row_slice(i)) {
                                *o += xk * gy[0];
                            }
                            continue;
                        }
                        for (k, &xk) in tx.row_slice(i).iter().enumerate() {
                            if xk == 0.0 {
                                continue;
                            }
                            for (o, gj) in gw[k * outputs..(k + 1) * outputs].iter_mut().zip(gy) {
                                *o += xk * gj;
                            }
                        }
                    }
                }
            }
            Op::Mse(a, b) => {
                let (ta, tb) = (&self.nodes[*a].value, &self.nodes[*b].value);
                let scale = 2.0 * gd[0] / ta.len().max(1) as f64;
                if self.rg(*a) {
                    let acc = acc_buf(grads, *a, ta);
                    for ((o, x), y) in acc.iter_mut().zip(ta.data()).zip(tb.data()) {
                        *o += scale * (x - y);
                    }
                }
                if self.rg(*b) {
                    let acc = acc_buf(grads, *b, tb);
                    for ((o, x), y) in acc.iter_mut().zip(ta.data()).zip(tb.data()) {
                        *o -= scale * (x - y);
                    }
                }
            }
            Op::Sum(a) => {
                if self.rg(*a) {
                    let acc = acc_buf(grads, *a, &self.nodes[*a].value);
                    acc.iter_mut().for_each(|o| *o += gd[0]);
                }
            }
            Op::Mean(a) => {
                if self.rg(*a) {
                    let ta = &self.nodes[*a].value;
                    let v = gd[0] / ta.len().max(1) as f64;
                    let acc = acc_buf(grads, *a, ta);
                    acc.iter_mut().for_each(|o| *o += v);
                }
            }
        }
    }

    /// Every node's inputs precede it (the tape is topologically ordered).
    pub fn is_topologically_ordered(&self) -> bool {
        self.nodes
            .iter()
            .enumerate()
            .all(|(i, n)| n.op.inputs().iter().all(|&p| p < i))
    }

    /// Name of the op that produced `v`, for diagnostics.
    pub fn op_name(&self, v: Var) -> &'static str {
        self.nodes[v.0].op.name()
    }
}

fn acc_buf<'a>(grads: &'a mut [Option<Tensor>], i: usize, like: &Tensor) -> &'a mut [f64] {
    grads[i]
        .get_or_insert_with(|| Tensor::zeros(like.shape().to_vec()))
        .data_mut()
}

/// Dot product with four independent partial sums so it vectorizes.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut lanes = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca
        .remainder()
        .iter()
        .zip(cb.remainder())
        .map(|(x, y)| x * y)
        .sum();
    for (x, y) in ca.zip(cb) {
        for l in 0..4 {
            lanes[l] += x[l] * y[l];
        }
    }
    (lanes[0] + lanes[1]) + (lanes[2] + lanes[3]) + tail
}

fn add_into(acc: &mut [f64], g: &[f64]) {
    for (o, v) in acc.iter_mut().zip(g) {
        *o += v;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_graph_passes_input_through() {
        let mut g = Graph::new();
        let x = g.leaf_named("x", Tensor::row(vec![1.0, 2.0]), false);
        assert_eq!(g.value(x).data(), &[1.0, 2.0]);
        assert_eq!(g.lookup("x"), Some(x));
    }

    #[test]
    fn linear_layer_with_identity_weights() {
        let mut g = Graph::new();
        let x = g.input(Tensor::row(vec![3.0, -1.0]));
        let w = g.param(Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap());
        let b = g.param(Tensor::row(vec![0.0, 0.0]));
        let h = g.matmul(x, w).unwrap();
        let y = g.add_bias(h, b).unwrap();
        assert_eq!(g.value(y).data(), &[3.0, -1.0]);
    }

    #[test]
    fn tanh_of_zero_is_zero() {
        let mut g = Graph::new();
        let x = g.input(Tensor::zeros(vec![1, 4]));
        let y = g.tanh(x);
        assert!(g.value(y).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn square_has_derivative_two_x() {
        let mut g = Graph::new();
        let x = g.param(Tensor::scalar(3.0));
        let y = g.mul(x, x).unwrap();
        let grads = g.backward(y).unwrap();
        assert_eq!(grads.get(x).item(), 6.0);
    }

    #[test]
    fn stop_gradient_blocks_one_factor() {
        let mut g = Graph::new();
        let x = g.param(Tensor::scalar(3.0));
        let sx = g.stop_gradient(x);
        let y = g.mul(sx, x).unwrap();
        assert_eq!(g.scalar(y), 9.0);
        let grads = g.backward(y).unwrap();
        assert_eq!(grads.get(x).item(), 3.0);
        assert!(g.is_topologically_ordered());
        assert_eq!(g.op_name(sx), "stop_gradient");
    }

    #[test]
    fn gradient_only_through_stop_gradient_is_exact_zero() {
        let mut g = Graph::new();
        let x = g.param(Tensor::row(vec![1.0, -2.0, 0.5]));
        let sx = g.stop_gradient(x);
        let t = g.tanh(sx);
        let s = g.sum(t);
        let grads = g.backward(s).unwrap();
        assert!(grads.get_ref(x).is_none());
        assert_eq!(grads.get(x).data(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn non_scalar_seed_is_rejected() {
        let mut g = Graph::new();
        let x = g.param(Tensor::row(vec![1.0, 2.0]));
        assert!(matches!(
            g.backward(x),
            Err(NumericsError::NonScalarSeed { .. })
        ));
    }

    #[test]
    fn shape_mismatch_names_the_node() {
        let mut g = Graph::new();
        let a = g.input(Tensor::zeros(vec![2, 3]));
        let b = g.input(Tensor::zeros(vec![2, 3]));
        match g.matmul(a, b) {
            Err(NumericsError::Shape { node, .. }) => assert!(node.contains("matmul")),
            other => panic!("expected shape error, got {other:?}"),
        }
    }

    #[test]
    fn bank_linear_matches_dense_layer() {
        // bank with two rows; sample 0 uses row 1, sample 1 uses row 0
        let inputs = 2;
        let outputs = 3;
        let row0: Vec<f64> = (0..9).map(|v| v as f64 * 0.1).collect();
        let row1: Vec<f64> = (0..9).map(|v| 1.0 - v as f64 * 0.2).collect();
        let mut g = Graph::new();
        let x = g.input(Tensor::matrix(2, 2, vec![1.0, 2.0, -1.0, 0.5]).unwrap());
        let bank = g.param(Tensor::from_rows(&[row0.clone(), row1.clone()]).unwrap());
        let y = g.bank_linear(x, bank, &[1, 0], inputs, outputs).unwrap();
        let dense = |row: &[f64], x: &[f64]| -> Vec<f64> {
            (0..outputs)
                .map(|j| row[6 + j] + x[0] * row[j] + x[1] * row[outputs + j])
                .collect()
        };
        let expect: Vec<f64> = [dense(&row1, &[1.0, 2.0]), dense(&row0, &[-1.0, 0.5])].concat();
        for (a, b) in g.value(y).data().iter().zip(&expect) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn repeated_evaluation_is_bit_identical() {
        let build = || {
            let mut g = Graph::new();
            let x = g.input(Tensor::matrix(2, 3, vec![0.1, -0.3, 0.7, 1.1, 0.2, -0.9]).unwrap());
            let w = g.param(Tensor::matrix(3, 2, vec![0.3, -0.2, 0.5, 0.9, -0.4, 0.1]).unwrap());
            let h = g.matmul(x, w).unwrap();
            let a = g.tanh(h);
            let s = g.sum(a);
            let grads = g.backward(s).unwrap();
            (g.value(a).clone(), grads.get(w))
        };
        assert_eq!(build(), build());
    }
}
