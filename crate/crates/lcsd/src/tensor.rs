//! Dense fp64 tensors with tape-based reverse-mode differentiation.
//!
//! The tape records every operation applied to [`Var`] handles; a single
//! [`Tape::backward`] pass from a scalar loss yields gradients for every
//! reachable leaf. Tensors are rank 1 or 2 (vectors, matrices, and `[1]`
//! scalars), which is all the networks here need.

use crate::error::{Error, Result};

/// Row-major dense tensor of 64-bit floats.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::contract(format!(
                "tensor dimensions must be positive, got {shape:?}"
            )));
        }
        if n != data.len() {
            return Err(Error::ShapeMismatch {
                op: "Tensor::new",
                detail: format!("shape {shape:?} holds {n} values, got {}", data.len()),
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n: usize = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![v],
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Tensor::new(vec![rows, cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// Rows of a matrix; a vector counts as a single row.
    pub fn rows(&self) -> usize {
        if self.shape.len() == 2 {
            self.shape[0]
        } else {
            1
        }
    }

    /// Columns of a matrix, or the length of a vector.
    pub fn cols(&self) -> usize {
        *self.shape.last().unwrap_or(&1)
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.numel(), 1);
        self.data[0]
    }

    pub fn is_scalar(&self) -> bool {
        self.numel() == 1
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn check_finite(&self, context: &str) -> Result<()> {
        if self.all_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite(context.to_string()))
        }
    }
}

/// C[m,n] = A[m,k] * B[k,n]
pub fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let crow = &mut c[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            let brow = &b[p * n..(p + 1) * n];
            for j in 0..n {
                crow[j] += av * brow[j];
            }
        }
    }
    c
}

/// C[m,k] = A[m,n] * B[k,n]^T
fn matmul_nt_raw(a: &[f64], b: &[f64], m: usize, n: usize, k: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * k];
    for i in 0..m {
        let arow = &a[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            let mut s = 0.0;
            for j in 0..n {
                s += arow[j] * brow[j];
            }
            c[i * k + p] = s;
        }
    }
    c
}

/// C[k,n] = A[m,k]^T * B[m,n]
fn matmul_tn_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; k * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let brow = &b[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            let crow = &mut c[p * n..(p + 1) * n];
            for j in 0..n {
                crow[j] += av * brow[j];
            }
        }
    }
    c
}

/// Handle to a tape node.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddBias(Var, Var),
    MatMul(Var, Var),
    Tanh(Var),
    Sum(Var),
    Mean(Var),
    ConcatCols(Var, Var),
    GatherRows(Var, Vec<usize>),
    Reshape(Var),
    Detach,
}

/// Records a forward computation for one training step. Build a fresh tape
/// per step; it is confined to a single thread.
#[derive(Default)]
pub struct Tape {
    values: Vec<Tensor>,
    ops: Vec<Op>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.values.push(value);
        self.ops.push(op);
        Var(self.values.len() - 1)
    }

    /// Insert a tensor as a differentiable leaf (parameters) or a constant
    /// input; both are leaves, the distinction is only whether the caller
    /// reads its gradient afterwards.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.values[v.0]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::ShapeMismatch {
                op,
                detail: format!("{sa:?} vs {sb:?}"),
            });
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        let shape = self.value(a).shape().to_vec();
        Ok(self.push(Tensor { shape, data }, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x - y)
            .collect();
        let shape = self.value(a).shape().to_vec();
        Ok(self.push(Tensor { shape, data }, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .collect();
        let shape = self.value(a).shape().to_vec();
        Ok(self.push(Tensor { shape, data }, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let data = self.value(a).data().iter().map(|x| x * c).collect();
        let shape = self.value(a).shape().to_vec();
        self.push(Tensor { shape, data }, Op::Scale(a, c))
    }

    /// Matrix `[n,m]` plus a bias vector `[m]` broadcast over rows.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (rows, cols) = (self.value(a).rows(), self.value(a).cols());
        if self.value(bias).numel() != cols {
            return Err(Error::ShapeMismatch {
                op: "add_bias",
                detail: format!(
                    "matrix cols {cols} vs bias len {}",
                    self.value(bias).numel()
                ),
            });
        }
        let mut data = self.value(a).data().to_vec();
        let b = self.value(bias).data();
        for r in 0..rows {
            for j in 0..cols {
                data[r * cols + j] += b[j];
            }
        }
        let shape = self.value(a).shape().to_vec();
        Ok(self.push(Tensor { shape, data }, Op::AddBias(a, bias)))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = (self.value(a).rows(), self.value(a).cols());
        let (k2, n) = (self.value(b).rows(), self.value(b).cols());
        if k != k2 {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                detail: format!("inner dims {k} vs {k2} ({:?} x {:?})",
                    self.value(a).shape(), self.value(b).shape()),
            });
        }
        let data = matmul_raw(self.value(a).data(), self.value(b).data(), m, k, n);
        Ok(self.push(Tensor { shape: vec![m, n], data }, Op::MatMul(a, b)))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let data = self.value(a).data().iter().map(|x| x.tanh()).collect();
        let shape = self.value(a).shape().to_vec();
        self.push(Tensor { shape, data }, Op::Tanh(a))
    }

    /// Sum of all entries, a `[1]` scalar.
    pub fn sum(&mut self, a: Var) -> Var {
        let s: f64 = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    /// Mean of all entries, a `[1]` scalar.
    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).numel() as f64;
        let s: f64 = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s / n), Op::Mean(a))
    }

    /// Concatenate two matrices with equal row counts along columns.
    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ra, ca) = (self.value(a).rows(), self.value(a).cols());
        let (rb, cb) = (self.value(b).rows(), self.value(b).cols());
        if ra != rb {
            return Err(Error::ShapeMismatch {
                op: "concat_cols",
                detail: format!("row counts {ra} vs {rb}"),
            });
        }
        let mut data = Vec::with_capacity(ra * (ca + cb));
        for r in 0..ra {
            data.extend_from_slice(self.value(a).row(r));
            data.extend_from_slice(self.value(b).row(r));
        }
        Ok(self.push(
            Tensor { shape: vec![ra, ca + cb], data },
            Op::ConcatCols(a, b),
        ))
    }

    /// Select rows of a matrix by index (repeats allowed). Gradient
    /// scatter-adds back into the source rows.
    pub fn gather_rows(&mut self, a: Var, indices: Vec<usize>) -> Result<Var> {
        let (rows, cols) = (self.value(a).rows(), self.value(a).cols());
        if let Some(&bad) = indices.iter().find(|&&i| i >= rows) {
            return Err(Error::contract(format!(
                "gather_rows index {bad} out of range for {rows} rows"
            )));
        }
        let mut data = Vec::with_capacity(indices.len() * cols);
        for &i in &indices {
            data.extend_from_slice(self.value(a).row(i));
        }
        Ok(self.push(
            Tensor { shape: vec![indices.len(), cols], data },
            Op::GatherRows(a, indices),
        ))
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let n: usize = shape.iter().product();
        if n != self.value(a).numel() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                detail: format!("{:?} -> {shape:?}", self.value(a).shape()),
            });
        }
        let data = self.value(a).data().to_vec();
        Ok(self.push(Tensor { shape, data }, Op::Reshape(a)))
    }

    /// Forward identity that blocks gradient flow (`sg` in loss notation).
    pub fn detach(&mut self, a: Var) -> Var {
        let t = self.value(a).clone();
        self.push(t, Op::Detach)
    }

    /// Reverse pass from a scalar loss. Every node unreachable from the loss
    /// gets a zero gradient (available via [`Grads::get`]).
    pub fn backward(&self, loss: Var) -> Result<Grads> {
        let lt = self.value(loss);
        if !lt.is_scalar() {
            return Err(Error::contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                lt.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.values.len()];
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            match &self.ops[i] {
                Op::Leaf => {
                    grads[i] = Some(g);
                    continue;
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, &g);
                    accumulate(&mut grads, *b, &g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *a, &g);
                    let neg: Vec<f64> = g.iter().map(|x| -x).collect();
                    accumulate(&mut grads, *b, &neg);
                }
                Op::Mul(a, b) => {
                    let ga: Vec<f64> = g
                        .iter()
                        .zip(self.value(*b).data())
                        .map(|(x, y)| x * y)
                        .collect();
                    let gb: Vec<f64> = g
                        .iter()
                        .zip(self.value(*a).data())
                        .map(|(x, y)| x * y)
                        .collect();
                    accumulate(&mut grads, *a, &ga);
                    accumulate(&mut grads, *b, &gb);
                }
                Op::Scale(a, c) => {
                    let ga: Vec<f64> = g.iter().map(|x| x * c).collect();
                    accumulate(&mut grads, *a, &ga);
                }
                Op::AddBias(a, bias) => {
                    accumulate(&mut grads, *a, &g);
                    let cols = self.value(*bias).numel();
                    let rows = self.value(*a).rows();
                    let mut gb = vec![0.0; cols];
                    for r in 0..rows {
                        for j in 0..cols {
                            gb[j] += g[r * cols + j];
                        }
                    }
                    accumulate(&mut grads, *bias, &gb);
                }
                Op::MatMul(a, b) => {
                    let (m, k) = (self.value(*a).rows(), self.value(*a).cols());
                    let n = self.value(*b).cols();
                    let ga = matmul_nt_raw(&g, self.value(*b).data(), m, n, k);
                    let gb = matmul_tn_raw(self.value(*a).data(), &g, m, k, n);
                    accumulate(&mut grads, *a, &ga);
                    accumulate(&mut grads, *b, &gb);
                }
                Op::Tanh(a) => {
                    let ga: Vec<f64> = g
                        .iter()
                        .zip(self.values[i].data())
                        .map(|(gy, y)| gy * (1.0 - y * y))
                        .collect();
                    accumulate(&mut grads, *a, &ga);
                }
                Op::Sum(a) => {
                    let ga = vec![g[0]; self.value(*a).numel()];
                    accumulate(&mut grads, *a, &ga);
                }
                Op::Mean(a) => {
                    let n = self.value(*a).numel();
                    let ga = vec![g[0] / n as f64; n];
                    accumulate(&mut grads, *a, &ga);
                }
                Op::ConcatCols(a, b) => {
                    let (rows, ca) = (self.value(*a).rows(), self.value(*a).cols());
                    let cb = self.value(*b).cols();
                    let mut ga = vec![0.0; rows * ca];
                    let mut gb = vec![0.0; rows * cb];
                    for r in 0..rows {
                        let grow = &g[r * (ca + cb)..(r + 1) * (ca + cb)];
                        ga[r * ca..(r + 1) * ca].copy_from_slice(&grow[..ca]);
                        gb[r * cb..(r + 1) * cb].copy_from_slice(&grow[ca..]);
                    }
                    accumulate(&mut grads, *a, &ga);
                    accumulate(&mut grads, *b, &gb);
                }
                Op::GatherRows(a, indices) => {
                    let cols = self.value(*a).cols();
                    let mut ga = vec![0.0; self.value(*a).numel()];
                    for (r, &src) in indices.iter().enumerate() {
                        for j in 0..cols {
                            ga[src * cols + j] += g[r * cols + j];
                        }
                    }
                    accumulate(&mut grads, *a, &ga);
                }
                Op::Reshape(a) => {
                    accumulate(&mut grads, *a, &g);
                }
                Op::Detach => {}
            }
        }

        let by_var = grads
            .into_iter()
            .enumerate()
            .map(|(i, g)| {
                g.map(|data| Tensor {
                    shape: self.values[i].shape().to_vec(),
                    data,
                })
            })
            .collect();
        Ok(Grads { by_var })
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], v: Var, g: &[f64]) {
    match &mut grads[v.0] {
        Some(acc) => {
            for (a, x) in acc.iter_mut().zip(g) {
                *a += x;
            }
        }
        None => grads[v.0] = Some(g.to_vec()),
    }
}

/// Gradients keyed by tape variable.
pub struct Grads {
    by_var: Vec<Option<Tensor>>,
}

impl Grads {
    /// Gradient of the loss with respect to `v`; zeros when `v` was not
    /// reached by the backward pass.
    pub fn get(&self, tape: &Tape, v: Var) -> Tensor {
        match &self.by_var[v.0] {
            Some(t) => t.clone(),
            None => Tensor::zeros(tape.value(v).shape().to_vec()),
        }
    }

    pub fn opt(&self, v: Var) -> Option<&Tensor> {
        self.by_var[v.0].as_ref()
    }
}
