//! Dense row-major tensors and a recorded-operation tape for reverse-mode
//! differentiation.
//!
//! Every value produced during a forward pass lives on a [`Tape`] and is
//! addressed by a [`Var`] handle. Calling [`Tape::backward`] replays the
//! recorded operations in reverse and returns the gradient of a scalar
//! output with respect to every leaf that was registered with
//! `requires_grad = true`.
//!
//! Only scalar-vs-tensor broadcasting exists. Anything wider (bias columns,
//! per-column masks) is expressed as a product with a ones vector so that
//! every backward rule stays a plain matrix identity.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("non-finite value: {0}")]
    Numeric(String),
}

pub type Result<T> = std::result::Result<T, TensorError>;

/// A dense array of `f64` in row-major order.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    values: Vec<f64>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    requires_grad: bool,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("values", &self.values)
            .finish()
    }
}

impl Tensor {
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != values.len() {
            return Err(TensorError::Contract(format!(
                "shape {:?} holds {} values, got {}",
                shape,
                expected,
                values.len()
            )));
        }
        Ok(Self {
            shape,
            values,
            requires_grad: false,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            values: vec![value; n],
            requires_grad: false,
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![],
            values: vec![value],
            requires_grad: false,
        }
    }

    /// Builds an `rows × cols` matrix from nested rows.
    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != cols) {
            return Err(TensorError::Contract("ragged rows".into()));
        }
        let values = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Self::new(vec![rows.len(), cols], values)
    }

    /// A column vector of shape `[n, 1]`.
    pub fn column(values: Vec<f64>) -> Self {
        let n = values.len();
        Self {
            shape: vec![n, 1],
            values,
            requires_grad: false,
        }
    }

    pub fn with_grad(mut self, requires_grad: bool) -> Self {
        self.requires_grad = requires_grad;
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// `(rows, cols)` of a rank-2 tensor. Rank-1 tensors are read as columns
    /// and scalars as `1 × 1`.
    pub fn dims2(&self) -> (usize, usize) {
        match self.shape.len() {
            0 => (1, 1),
            1 => (self.shape[0], 1),
            _ => (self.shape[0], self.shape[1..].iter().product()),
        }
    }

    pub fn get2(&self, row: usize, col: usize) -> f64 {
        let (_, cols) = self.dims2();
        self.values[row * cols + col]
    }

    /// Returns the single value of a one-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.values.len() != 1 {
            return Err(TensorError::Contract(format!(
                "expected a scalar, got shape {:?}",
                self.shape
            )));
        }
        Ok(self.values[0])
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElementwiseKind {
    Add,
    Sub,
    Mul,
}

/// Right-hand operand of an elementwise operation.
#[derive(Debug, Clone, Copy)]
pub enum Rhs {
    Var(Var),
    Scalar(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Sigmoid,
    Tanh,
    Relu,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Sigmoid => sigmoid(x),
            Activation::Tanh => tanh(x),
            Activation::Relu => {
                if x > 0.0 {
                    x
                } else {
                    0.0
                }
            }
        }
    }
}

/// Logistic function, evaluated without overflow for large `|x|`.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Hyperbolic tangent through one `exp`; `f64::tanh` is used near zero,
/// where `1 − e` would cancel.
pub fn tanh(x: f64) -> f64 {
    let a = x.abs();
    if a < 0.0625 {
        return x.tanh();
    }
    let e = (-2.0 * a).exp();
    ((1.0 - e) / (1.0 + e)).copysign(x)
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddScalar(Var),
    MulScalar(Var, f64),
    Act(Activation, Var),
    Concat { parts: Vec<Var>, axis: usize },
    SliceRows { src: Var, start: usize },
    SliceCols { src: Var, start: usize },
    Sum(Var),
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient for `var`. Leaves that require grad but were not reached
    /// by the backward pass report `None`.
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(|g| g.as_ref())
    }

    /// Gradient for `var`, or zeros shaped like `like` when unreached.
    pub fn get_or_zeros(&self, var: Var, like: &Tensor) -> Tensor {
        self.get(var).cloned().unwrap_or_else(|| Tensor::zeros(like.shape()))
    }
}

/// An ordered record of operations. Operands always precede their results,
/// so node order is a valid topological order.
#[derive(Debug, Clone, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    relu_signs: Vec<bool>,
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

    /// Registers a leaf. Its `requires_grad` flag decides whether the
    /// backward pass reports a gradient for it.
    pub fn leaf(&mut self, tensor: Tensor) -> Var {
        let requires_grad = tensor.requires_grad;
        self.push(tensor, Op::Leaf, requires_grad)
    }

    /// Registers a leaf that never receives a gradient.
    pub fn constant(&mut self, tensor: Tensor) -> Var {
        self.push(tensor.with_grad(false), Op::Leaf, false)
    }

    /// Registers a leaf that receives a gradient.
    pub fn param(&mut self, tensor: Tensor) -> Var {
        self.push(tensor.with_grad(true), Op::Leaf, true)
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        &self.nodes[var.0].value.shape
    }

    /// Sign pattern (`input > 0`) of every relu element evaluated so far.
    /// Two forward passes with equal signatures lie on the same smooth piece.
    pub fn relu_signature(&self) -> &[bool] {
        &self.relu_signs
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let (m, k) = dims_of_matrix(av, "matmul")?;
        let (k2, n) = dims_of_matrix(bv, "matmul")?;
        if k != k2 {
            return Err(TensorError::Shape {
                op: "matmul",
                left: av.shape.clone(),
                right: bv.shape.clone(),
            });
        }
        let mut out = vec![0.0; m * n];
        gemm_nn(&av.values, &bv.values, &mut out, m, k, n);
        let rg = self.needs(a) || self.needs(b);
        let value = Tensor::new(vec![m, n], out)?;
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    pub fn elementwise(&mut self, kind: ElementwiseKind, a: Var, b: Rhs) -> Result<Var> {
        match (kind, b) {
            (ElementwiseKind::Add, Rhs::Var(b)) => self.add(a, b),
            (ElementwiseKind::Sub, Rhs::Var(b)) => self.sub(a, b),
            (ElementwiseKind::Mul, Rhs::Var(b)) => self.mul(a, b),
            (ElementwiseKind::Add, Rhs::Scalar(s)) => Ok(self.add_scalar(a, s)),
            (ElementwiseKind::Sub, Rhs::Scalar(s)) => Ok(self.add_scalar(a, -s)),
            (ElementwiseKind::Mul, Rhs::Scalar(s)) => Ok(self.scale(a, s)),
        }
    }

    fn zip(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape != bv.shape {
            return Err(TensorError::Shape {
                op: name,
                left: av.shape.clone(),
                right: bv.shape.clone(),
            });
        }
        let values = av.values.iter().zip(&bv.values).map(|(&x, &y)| f(x, y)).collect();
        Ok(Tensor {
            shape: av.shape.clone(),
            values,
            requires_grad: false,
        })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.zip(a, b, "add", |x, y| x + y)?;
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.zip(a, b, "sub", |x, y| x - y)?;
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.zip(a, b, "mul", |x, y| x * y)?;
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Mul(a, b), rg))
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        let src = self.value(a);
        let value = Tensor {
            shape: src.shape.clone(),
            values: src.values.iter().map(|x| x + s).collect(),
            requires_grad: false,
        };
        let rg = self.needs(a);
        self.push(value, Op::AddScalar(a), rg)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let src = self.value(a);
        let value = Tensor {
            shape: src.shape.clone(),
            values: src.values.iter().map(|x| x * s).collect(),
            requires_grad: false,
        };
        let rg = self.needs(a);
        self.push(value, Op::MulScalar(a, s), rg)
    }

    pub fn activation(&mut self, kind: Activation, a: Var) -> Var {
        let src = self.value(a);
        let values: Vec<f64> = src.values.iter().map(|&x| kind.apply(x)).collect();
        let shape = src.shape.clone();
        if kind == Activation::Relu {
            let signs: Vec<bool> = self.value(a).values.iter().map(|&x| x > 0.0).collect();
            self.relu_signs.extend(signs);
        }
        let rg = self.needs(a);
        self.push(
            Tensor {
                shape,
                values,
                requires_grad: false,
            },
            Op::Act(kind, a),
            rg,
        )
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.activation(Activation::Sigmoid, a)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.activation(Activation::Tanh, a)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.activation(Activation::Relu, a)
    }

    /// Concatenates rank-2 tensors along `axis` (0 = rows, 1 = columns),
    /// in argument order.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| TensorError::Contract("concat of zero tensors".into()))?;
        if parts.len() == 1 {
            return Ok(first);
        }
        if axis > 1 {
            return Err(TensorError::Contract(format!("concat axis {axis} out of range")));
        }
        let (r0, c0) = dims_of_matrix(self.value(first), "concat")?;
        let mut total = 0;
        for &p in parts {
            let (r, c) = dims_of_matrix(self.value(p), "concat")?;
            let ok = if axis == 0 { c == c0 } else { r == r0 };
            if !ok {
                return Err(TensorError::Shape {
                    op: "concat",
                    left: self.value(first).shape.clone(),
                    right: self.value(p).shape.clone(),
                });
            }
            total += if axis == 0 { r } else { c };
        }
        let (rows, cols) = if axis == 0 { (total, c0) } else { (r0, total) };
        let mut out = Vec::with_capacity(rows * cols);
        if axis == 0 {
            for &p in parts {
                out.extend_from_slice(&self.value(p).values);
            }
        } else {
            for r in 0..rows {
                for &p in parts {
                    let (_, c) = self.value(p).dims2();
                    out.extend_from_slice(&self.value(p).values[r * c..(r + 1) * c]);
                }
            }
        }
        let rg = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(
            Tensor::new(vec![rows, cols], out)?,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            rg,
        ))
    }

    /// Rows `start..start + len` of a rank-2 tensor.
    pub fn slice_rows(&mut self, src: Var, start: usize, len: usize) -> Result<Var> {
        let (rows, cols) = dims_of_matrix(self.value(src), "slice_rows")?;
        if start + len > rows {
            return Err(TensorError::Contract(format!(
                "row slice {start}..{} out of {rows} rows",
                start + len
            )));
        }
        let values = self.value(src).values[start * cols..(start + len) * cols].to_vec();
        let rg = self.needs(src);
        Ok(self.push(Tensor::new(vec![len, cols], values)?, Op::SliceRows { src, start }, rg))
    }

    /// Columns `start..start + len` of a rank-2 tensor.
    pub fn slice_cols(&mut self, src: Var, start: usize, len: usize) -> Result<Var> {
        let (rows, cols) = dims_of_matrix(self.value(src), "slice_cols")?;
        if start + len > cols {
            return Err(TensorError::Contract(format!(
                "column slice {start}..{} out of {cols} columns",
                start + len
            )));
        }
        let srcv = &self.value(src).values;
        let mut values = Vec::with_capacity(rows * len);
        for r in 0..rows {
            values.extend_from_slice(&srcv[r * cols + start..r * cols + start + len]);
        }
        let rg = self.needs(src);
        Ok(self.push(Tensor::new(vec![rows, len], values)?, Op::SliceCols { src, start }, rg))
    }

    /// Sum of every element, as a scalar.
    pub fn sum(&mut self, a: Var) -> Var {
        let total = self.value(a).values.iter().sum();
        let rg = self.needs(a);
        self.push(Tensor::scalar(total), Op::Sum(a), rg)
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let value = self.value(loss);
        if value.values.len() != 1 {
            return Err(TensorError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                value.shape
            )));
        }
        self.backward_from(loss, &Tensor::ones(&value.shape.clone()))
    }

    /// Reverse pass seeded with an arbitrary upstream gradient for `output`
    /// (a vector-Jacobian product).
    pub fn backward_from(&self, output: Var, seed: &Tensor) -> Result<Gradients> {
        if output.0 >= self.nodes.len() {
            return Err(TensorError::Contract("output is not on this tape".into()));
        }
        let out_shape = &self.value(output).shape;
        if seed.values.len() != self.value(output).values.len() {
            return Err(TensorError::Shape {
                op: "backward",
                left: out_shape.clone(),
                right: seed.shape.clone(),
            });
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; output.0 + 1];
        grads[output.0] = Some(seed.values.clone());

        for idx in (0..=output.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(node, &g, &mut grads);
        }

        let grads = grads
            .into_iter()
            .enumerate()
            .map(|(i, g)| {
                let node = &self.nodes[i];
                match (&node.op, node.requires_grad, g) {
                    (Op::Leaf, true, Some(values)) => Some(Tensor {
                        shape: node.value.shape.clone(),
                        values,
                        requires_grad: false,
                    }),
                    _ => None,
                }
            })
            .collect();
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k) = av.dims2();
                let (_, n) = bv.dims2();
                if self.needs(*a) {
                    gemm_nt(g, &bv.values, slot(grads, *a, m * k), m, n, k);
                }
                if self.needs(*b) {
                    gemm_tn(&av.values, g, slot(grads, *b, k * n), m, k, n);
                }
            }
            Op::Add(a, b) => {
                if self.needs(*a) {
                    accumulate(grads, *a, g.iter().copied());
                }
                if self.needs(*b) {
                    accumulate(grads, *b, g.iter().copied());
                }
            }
            Op::Sub(a, b) => {
                if self.needs(*a) {
                    accumulate(grads, *a, g.iter().copied());
                }
                if self.needs(*b) {
                    accumulate(grads, *b, g.iter().map(|x| -x));
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (&self.value(*a).values, &self.value(*b).values);
                if self.needs(*a) {
                    accumulate(grads, *a, g.iter().zip(bv).map(|(x, y)| x * y));
                }
                if self.needs(*b) {
                    accumulate(grads, *b, g.iter().zip(av).map(|(x, y)| x * y));
                }
            }
            Op::AddScalar(a) => accumulate(grads, *a, g.iter().copied()),
            Op::MulScalar(a, s) => accumulate(grads, *a, g.iter().map(|x| x * s)),
            Op::Act(kind, a) => {
                let out = &node.value.values;
                match kind {
                    Activation::Sigmoid => accumulate(grads, *a, g.iter().zip(out).map(|(gi, y)| gi * y * (1.0 - y))),
                    Activation::Tanh => accumulate(grads, *a, g.iter().zip(out).map(|(gi, y)| gi * (1.0 - y * y))),
                    // derivative at exactly 0 is 0
                    Activation::Relu => accumulate(
                        grads,
                        *a,
                        g.iter()
                            .zip(&self.value(*a).values)
                            .map(|(gi, &x)| if x > 0.0 { *gi } else { 0.0 }),
                    ),
                }
            }
            Op::Concat { parts, axis } => {
                let (rows, cols) = node.value.dims2();
                if *axis == 0 {
                    let mut offset = 0;
                    for &p in parts {
                        let n = self.value(p).values.len();
                        if self.needs(p) {
                            accumulate(grads, p, g[offset..offset + n].iter().copied());
                        }
                        offset += n;
                    }
                } else {
                    let mut col_off = 0;
                    for &p in parts {
                        let (_, c) = self.value(p).dims2();
                        if self.needs(p) {
                            let part =
                                (0..rows).flat_map(|r| g[r * cols + col_off..r * cols + col_off + c].iter().copied());
                            accumulate(grads, p, part);
                        }
                        col_off += c;
                    }
                }
            }
            Op::SliceRows { src, start } => {
                if self.needs(*src) {
                    let srcv = self.value(*src);
                    let (_, cols) = srcv.dims2();
                    let dst = slot(grads, *src, srcv.values.len());
                    for (d, x) in dst[start * cols..start * cols + g.len()].iter_mut().zip(g) {
                        *d += x;
                    }
                }
            }
            Op::SliceCols { src, start } => {
                if self.needs(*src) {
                    let srcv = self.value(*src);
                    let (rows, cols) = srcv.dims2();
                    let (_, len) = node.value.dims2();
                    let dst = slot(grads, *src, srcv.values.len());
                    for r in 0..rows {
                        let row = &mut dst[r * cols + start..r * cols + start + len];
                        for (d, x) in row.iter_mut().zip(&g[r * len..(r + 1) * len]) {
                            *d += x;
                        }
                    }
                }
            }
            Op::Sum(a) => {
                let n = self.value(*a).values.len();
                accumulate(grads, *a, std::iter::repeat_n(g[0], n));
            }
        }
    }
}

/// Gradient buffer of `var`, zero-initialised on first use.
fn slot(grads: &mut [Option<Vec<f64>>], var: Var, len: usize) -> &mut Vec<f64> {
    grads[var.0].get_or_insert_with(|| vec![0.0; len])
}

/// Adds `delta` into the gradient of `var`, taking it as the buffer when
/// there is none yet.
fn accumulate(grads: &mut [Option<Vec<f64>>], var: Var, delta: impl Iterator<Item = f64>) {
    match &mut grads[var.0] {
        Some(existing) => {
            for (e, d) in existing.iter_mut().zip(delta) {
                *e += d;
            }
        }
        slot @ None => *slot = Some(delta.collect()),
    }
}

fn dims_of_matrix(t: &Tensor, op: &'static str) -> Result<(usize, usize)> {
    if t.shape.len() != 2 {
        return Err(TensorError::Shape {
            op,
            left: t.shape.clone(),
            right: vec![],
        });
    }
    Ok((t.shape[0], t.shape[1]))
}

/// `out += a · b` for row-major operands, where `a` is `m×k` with strides
/// `(rsa, csa)`, `b` is `k×n` with strides `(rsb, csb)` and `out` is a
/// contiguous `m×n` matrix.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: usize,
    csa: usize,
    b: &[f64],
    rsb: usize,
    csb: usize,
    out: &mut [f64],
) {
    assert!(
        a.len() >= m * k && b.len() >= k * n && out.len() == m * n,
        "gemm operand sizes"
    );
    if m == 0 || n == 0 || k == 0 {
        return;
    }
    // SAFETY: the assertion above keeps every strided access of the three
    // row- or column-major operands inside its slice.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            1.0,
            out.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// out(m×n) += a(m×k) · b(k×n)
fn gemm_nn(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    gemm(m, k, n, a, k, 1, b, n, 1, out);
}

/// out(m×k) += g(m×n) · b(k×n)ᵀ
fn gemm_nt(g: &[f64], b: &[f64], out: &mut [f64], m: usize, n: usize, k: usize) {
    gemm(m, n, k, g, n, 1, b, 1, n, out);
}

/// out(k×n) += a(m×k)ᵀ · g(m×n)
fn gemm_tn(a: &[f64], g: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    gemm(k, m, n, a, 1, k, g, n, 1, out);
}

/// Outcome of [`grad_check`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    /// max over checked coordinates of |analytic − numeric| / max(floor, |analytic| + |numeric|),
    /// where floor = max(1e-8, 1e-6·|f|)
    pub max_rel_error: f64,
    pub checked: usize,
    /// Coordinates whose ±step probes land on different sides of a relu kink.
    pub skipped_kinks: usize,
}

/// Gradients below this fraction of |f| are compared on absolute error:
/// the cancellation in `f(x+h) − f(x−h)` leaves about `ε·|f|/h` of noise.
const NOISE_FLOOR: f64 = 1e-6;

/// Compares reverse-mode gradients of a scalar function against central
/// finite differences.
///
/// `f` builds the function on a fresh tape from the parameter handles and
/// returns a scalar output. Coordinates where the `+step` and `-step`
/// evaluations see a different relu sign pattern sit on a kink and are not
/// checked; they are counted in [`GradCheck::skipped_kinks`].
pub fn grad_check<F>(f: F, params: &[Tensor], step: f64) -> Result<GradCheck>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if !(step > 0.0) {
        return Err(TensorError::Contract(format!("step must be positive, got {step}")));
    }
    let eval = |ps: &[Tensor]| -> Result<(f64, Vec<bool>)> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ps.iter().map(|p| tape.constant(p.clone())).collect();
        let out = f(&mut tape, &vars)?;
        let v = tape.value(out).item()?;
        if !v.is_finite() {
            return Err(TensorError::Numeric(format!("function value {v}")));
        }
        Ok((v, tape.relu_signs))
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let v = tape.value(out).item()?;
    if !v.is_finite() {
        return Err(TensorError::Numeric(format!("function value {v}")));
    }
    let grads = tape.backward(out)?;
    let floor = (NOISE_FLOOR * v.abs()).max(1e-8);

    let mut report = GradCheck {
        max_rel_error: 0.0,
        checked: 0,
        skipped_kinks: 0,
    };
    let mut probe: Vec<Tensor> = params.to_vec();
    for (pi, param) in params.iter().enumerate() {
        let analytic = grads.get_or_zeros(vars[pi], param);
        for j in 0..param.len() {
            let orig = param.values[j];
            probe[pi].values[j] = orig + step;
            let (plus, plus_sig) = eval(&probe)?;
            probe[pi].values[j] = orig - step;
            let (minus, minus_sig) = eval(&probe)?;
            probe[pi].values[j] = orig;
            if plus_sig != minus_sig {
                report.skipped_kinks += 1;
                continue;
            }
            let numeric = (plus - minus) / (2.0 * step);
            let a = analytic.values[j];
            let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(floor);
            report.max_rel_error = report.max_rel_error.max(rel);
            report.checked += 1;
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn m(rows: &[&[f64]]) -> Tensor {
        Tensor::from_rows(rows).unwrap()
    }

    #[test]
    fn tensor_rejects_inconsistent_shape() {
        assert!(Tensor::new(vec![2, 2], vec![1.0; 3]).is_err());
    }

    #[test]
    fn matmul_identity_and_dot() {
        let mut t = Tape::new();
        let i = t.constant(m(&[&[1.0, 0.0], &[0.0, 1.0]]));
        let x = t.constant(m(&[&[3.0], &[4.0]]));
        let y = t.matmul(i, x).unwrap();
        assert_eq!(t.value(y).values(), &[3.0, 4.0]);

        let a = t.constant(m(&[&[1.0, 2.0]]));
        let b = t.constant(m(&[&[3.0], &[4.0]]));
        let c = t.matmul(a, b).unwrap();
        assert_eq!(t.value(c).shape(), &[1, 1]);
        assert_eq!(t.value(c).values(), &[11.0]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::zeros(&[2, 3]));
        let b = t.constant(Tensor::zeros(&[2, 3]));
        let err = t.matmul(a, b).unwrap_err();
        assert_eq!(
            err,
            TensorError::Shape {
                op: "matmul",
                left: vec![2, 3],
                right: vec![2, 3]
            }
        );
        assert!(err.to_string().contains("[2, 3] vs [2, 3]"));
    }

    #[test]
    fn matmul_gradient_of_sum() {
        let mut t = Tape::new();
        let a = t.param(m(&[&[1.0, 2.0], &[3.0, 4.0]]));
        let b = t.constant(m(&[&[1.0], &[1.0]]));
        let c = t.matmul(a, b).unwrap();
        let s = t.sum(c);
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(a).unwrap().values(), &[1.0, 1.0, 1.0, 1.0]);
        assert!(g.get(b).is_none());
    }

    #[test]
    fn elementwise_ops() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::column(vec![1.0, 2.0, 3.0]));
        let z = t.constant(Tensor::column(vec![0.0; 3]));
        let p = t.elementwise(ElementwiseKind::Mul, a, Rhs::Var(z)).unwrap();
        assert_eq!(t.value(p).values(), &[0.0, 0.0, 0.0]);

        let x = t.constant(Tensor::column(vec![1.0, 2.0]));
        let y = t.constant(Tensor::column(vec![3.0, 4.0]));
        let s = t.elementwise(ElementwiseKind::Add, x, Rhs::Var(y)).unwrap();
        assert_eq!(t.value(s).values(), &[4.0, 6.0]);
        let d = t.elementwise(ElementwiseKind::Sub, x, Rhs::Scalar(1.0)).unwrap();
        assert_eq!(t.value(d).values(), &[0.0, 1.0]);

        let bad = t.constant(Tensor::column(vec![1.0; 3]));
        assert!(matches!(t.add(x, bad), Err(TensorError::Shape { op: "add", .. })));
    }

    #[test]
    fn mul_gradient_is_other_operand() {
        let mut t = Tape::new();
        let a = t.param(Tensor::column(vec![2.0]));
        let b = t.constant(Tensor::column(vec![5.0]));
        let p = t.mul(a, b).unwrap();
        let g = t.backward(p).unwrap();
        assert_eq!(g.get(a).unwrap().values(), &[5.0]);
    }

    #[test]
    fn fast_tanh_matches_libm() {
        for i in -4000..=4000 {
            let x = i as f64 * 0.005;
            assert!((tanh(x) - x.tanh()).abs() <= 4.0 * f64::EPSILON, "{x}");
        }
        assert_eq!(tanh(800.0), 1.0);
        assert_eq!(tanh(-800.0), -1.0);
        assert!(tanh(f64::NAN).is_nan());
    }

    #[test]
    fn activations_at_zero() {
        let mut t = Tape::new();
        let x = t.param(Tensor::scalar(0.0));
        let s = t.sigmoid(x);
        assert_eq!(t.value(s).item().unwrap(), 0.5);
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap().item().unwrap(), 0.25);

        let mut t = Tape::new();
        let x = t.param(Tensor::scalar(0.0));
        let h = t.tanh(x);
        assert_eq!(t.value(h).item().unwrap(), 0.0);
        assert_eq!(t.backward(h).unwrap().get(x).unwrap().item().unwrap(), 1.0);

        let mut t = Tape::new();
        let x = t.param(Tensor::scalar(0.0));
        let r = t.relu(x);
        assert_eq!(t.backward(r).unwrap().get(x).unwrap().item().unwrap(), 0.0);
    }

    #[test]
    fn activation_ranges() {
        for &x in &[-800.0, -3.0, 0.0, 2.5, 800.0] {
            let s = Activation::Sigmoid.apply(x);
            assert!((0.0..=1.0).contains(&s) && s.is_finite());
            assert!(Activation::Tanh.apply(x).abs() <= 1.0);
            assert!(Activation::Relu.apply(x) >= 0.0);
        }
        assert!(Activation::Sigmoid.apply(3.0) < 1.0 && Activation::Sigmoid.apply(-3.0) > 0.0);
    }

    #[test]
    fn concat_rows_and_identity() {
        let mut t = Tape::new();
        let a = t.constant(m(&[&[1.0, 2.0]]));
        let b = t.constant(m(&[&[3.0, 4.0]]));
        let c = t.concat(&[a, b], 0).unwrap();
        assert_eq!(t.value(c).shape(), &[2, 2]);
        assert_eq!(t.value(c).values(), &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(t.concat(&[a], 0).unwrap(), a);

        let d = t.concat(&[a, b], 1).unwrap();
        assert_eq!(t.value(d).shape(), &[1, 4]);
        let wide = t.constant(Tensor::zeros(&[1, 3]));
        assert!(t.concat(&[a, wide], 0).is_err());
    }

    #[test]
    fn concat_gradient_matches_finite_differences() {
        let params = vec![
            m(&[&[0.3, -1.2], &[0.7, 0.1]]),
            m(&[&[2.0, 0.5]]),
            m(&[&[-0.4], &[0.9]]),
        ];
        let check = grad_check(
            |t, v| {
                let rows = t.concat(&[v[0], v[1]], 0)?;
                let sq = t.mul(rows, rows)?;
                let cols = t.concat(&[v[0], v[2]], 1)?;
                let th = t.tanh(cols);
                let a = t.sum(sq);
                let b = t.sum(th);
                t.add(a, b)
            },
            &params,
            1e-5,
        )
        .unwrap();
        assert!(check.max_rel_error < 1e-7, "{check:?}");
        assert_eq!(check.checked, 4 + 2 + 2);
    }

    #[test]
    fn slice_rows_routes_gradient() {
        let mut t = Tape::new();
        let a = t.param(m(&[&[1.0, 2.0], &[3.0, 4.0], &[5.0, 6.0]]));
        let s = t.slice_rows(a, 1, 2).unwrap();
        assert_eq!(t.value(s).values(), &[3.0, 4.0, 5.0, 6.0]);
        let total = t.sum(s);
        let g = t.backward(total).unwrap();
        assert_eq!(g.get(a).unwrap().values(), &[0.0, 0.0, 1.0, 1.0, 1.0, 1.0]);
        assert!(t.slice_rows(a, 2, 2).is_err());

        let c = t.slice_cols(a, 1, 1).unwrap();
        assert_eq!(t.value(c).values(), &[2.0, 4.0, 6.0]);
        let weighted = t.scale(c, 2.0);
        let total = t.sum(weighted);
        let g = t.backward(total).unwrap();
        assert_eq!(g.get(a).unwrap().values(), &[0.0, 2.0, 0.0, 2.0, 0.0, 2.0]);
        assert!(t.slice_cols(a, 1, 2).is_err());
    }

    #[test]
    fn backward_square_and_fan_out() {
        let mut t = Tape::new();
        let x = t.param(Tensor::scalar(3.0));
        let y = t.mul(x, x).unwrap();
        let g = t.backward(y).unwrap();
        assert_eq!(g.get(x).unwrap().item().unwrap(), 6.0);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut t = Tape::new();
        let x = t.param(Tensor::column(vec![1.0, 2.0]));
        assert!(matches!(t.backward(x), Err(TensorError::Contract(_))));
    }

    #[test]
    fn grad_check_quadratic_form() {
        let q = m(&[&[2.0, 0.5], &[0.5, 1.0]]);
        let x = Tensor::column(vec![0.3, -0.7]);
        let check = grad_check(
            |t, v| {
                let qx = t.matmul(v[1], v[0])?;
                let xq = t.mul(v[0], qx)?;
                Ok(t.sum(xq))
            },
            &[x, q],
            1e-5,
        )
        .unwrap();
        assert!(check.max_rel_error < 1e-7, "{check:?}");
    }

    #[test]
    fn grad_check_skips_relu_kink() {
        // x = 0 sits on the kink: +step and -step see different sign patterns
        let check = grad_check(
            |t, v| {
                let r = t.relu(v[0]);
                Ok(t.sum(r))
            },
            &[Tensor::column(vec![0.0, 1.0, -1.0])],
            1e-5,
        )
        .unwrap();
        assert_eq!(check.skipped_kinks, 1);
        assert_eq!(check.checked, 2);
        assert!(check.max_rel_error < 1e-9);
    }

    #[test]
    fn grad_check_reports_non_finite() {
        let err = grad_check(
            |t, v| {
                let s = t.scale(v[0], f64::INFINITY);
                Ok(t.sum(s))
            },
            &[Tensor::scalar(1.0)],
            1e-5,
        )
        .unwrap_err();
        assert!(matches!(err, TensorError::Numeric(_)));
        assert!(grad_check(|t, v| Ok(t.sum(v[0])), &[Tensor::scalar(1.0)], 0.0).is_err());
    }

    #[test]
    fn forward_and_backward_are_replayable() {
        let build = || {
            let mut t = Tape::new();
            let w = t.param(m(&[&[0.1, -0.2], &[0.3, 0.4]]));
            let x = t.constant(Tensor::column(vec![1.5, -2.5]));
            let y = t.matmul(w, x).unwrap();
            let a = t.tanh(y);
            let s = t.sum(a);
            let g = t.backward(s).unwrap();
            (t.value(s).clone(), g.get(w).unwrap().clone())
        };
        let (v1, g1) = build();
        let (v2, g2) = build();
        assert_eq!(v1.values()[0].to_bits(), v2.values()[0].to_bits());
        assert_eq!(g1, g2);
        assert_abs_diff_eq!(v1.item().unwrap(), v2.item().unwrap());
    }

    #[test]
    fn backward_from_seed_is_vjp() {
        let mut t = Tape::new();
        let x = t.param(Tensor::column(vec![1.0, 2.0]));
        let y = t.scale(x, 3.0);
        let g = t.backward_from(y, &Tensor::column(vec![1.0, -1.0])).unwrap();
        assert_eq!(g.get(x).unwrap().values(), &[3.0, -3.0]);
    }

    #[test]
    fn types_are_send() {
        fn assert_send<T: Send + Sync>() {}
        assert_send::<Tensor>();
        assert_send::<Tape>();
        assert_send::<Gradients>();
    }
}
