//! Dense f64 tensors with reverse-mode automatic differentiation.
//!
//! A [`Tensor`] is an immutable row-major buffer plus an optional link to a
//! node on a [`Tape`]. Operations whose inputs are tracked record a backward
//! closure on the same tape; operations on untracked inputs are plain
//! evaluation with no bookkeeping.

mod gradcheck;
pub mod memory;
mod tape;

use std::rc::Rc;

pub use gradcheck::{grad_check, relative_error, GradCheckError, GradCheckReport};
pub use tape::{Gradients, NodeId, Tape};

use tape::BackwardFn;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TensorError {
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("shape {shape:?} needs {expected} elements, got {actual}")]
    Length {
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },
    #[error("{op}: axis {axis} out of range for shape {shape:?}")]
    Axis {
        op: &'static str,
        axis: usize,
        shape: Vec<usize>,
    },
    #[error("{op}: {reason}")]
    Invalid { op: &'static str, reason: String },
    #[error("backward needs a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    #[error("loss is not recorded on this tape")]
    NotOnTape,
}

pub type Result<T> = std::result::Result<T, TensorError>;

struct Buffer(Vec<f64>);

impl Buffer {
    fn new(data: Vec<f64>) -> Rc<Self> {
        memory::track_alloc(data.len() * std::mem::size_of::<f64>());
        Rc::new(Buffer(data))
    }
}

impl Drop for Buffer {
    fn drop(&mut self) {
        memory::track_free(self.0.len() * std::mem::size_of::<f64>());
    }
}

#[derive(Clone)]
struct Var {
    tape: Tape,
    id: NodeId,
}

#[derive(Clone)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Rc<Buffer>,
    var: Option<Var>,
}

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("data", &self.data.0)
            .field("node", &self.var.as_ref().map(|v| v.id))
            .finish()
    }
}

fn numel_of(shape: &[usize]) -> usize {
    shape.iter().product()
}

/// Splits `shape` around `axis` into (outer, dim, inner) extents.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = numel_of(&shape[..axis]);
    let inner = numel_of(&shape[axis + 1..]);
    (outer, shape[axis], inner)
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let expected = numel_of(shape);
        if expected != data.len() || shape.contains(&0) {
            return Err(TensorError::Length {
                shape: shape.to_vec(),
                expected,
                actual: data.len(),
            });
        }
        Ok(Self::raw(shape.to_vec(), data))
    }

    fn raw(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(numel_of(&shape), data.len());
        Tensor {
            shape,
            data: Buffer::new(data),
            var: None,
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self::raw(Vec::new(), vec![value])
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        Self::raw(shape.to_vec(), vec![value; numel_of(shape)])
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.0.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data.0
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.data.0.clone()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.numel(), 1, "item() on tensor of shape {:?}", self.shape);
        self.data.0[0]
    }

    pub fn is_tracked(&self) -> bool {
        self.var.is_some()
    }

    pub fn node(&self) -> Option<NodeId> {
        self.var.as_ref().map(|v| v.id)
    }

    pub(crate) fn var(&self) -> Option<(&Tape, NodeId)> {
        self.var.as_ref().map(|v| (&v.tape, v.id))
    }

    pub(crate) fn with_var(&self, tape: Tape, id: NodeId) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: Rc::clone(&self.data),
            var: Some(Var { tape, id }),
        }
    }

    /// Same values, cut loose from any tape.
    pub fn detach(&self) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: Rc::clone(&self.data),
            var: None,
        }
    }

    /// Builds the result of an operation, recording it when any input is
    /// tracked. `backward` returns one gradient buffer per input.
    pub(crate) fn from_op(
        shape: Vec<usize>,
        data: Vec<f64>,
        inputs: &[&Tensor],
        backward: impl Fn(&[f64]) -> Vec<Vec<f64>> + 'static,
    ) -> Tensor {
        let out = Self::raw(shape, data);
        let Some(tape) = inputs.iter().find_map(|t| t.var.as_ref().map(|v| v.tape.clone())) else {
            return out;
        };
        let parents = inputs
            .iter()
            .map(|t| {
                t.var.as_ref().map(|v| {
                    assert!(v.tape.same(&tape), "operation mixes tensors from different tapes");
                    v.id
                })
            })
            .collect();
        let backward: BackwardFn = Rc::new(backward);
        let id = tape.push(out.numel(), parents, backward);
        out.with_var(tape, id)
    }

    fn unary(
        &self,
        forward: impl Fn(f64) -> f64,
        // derivative given (input, output)
        derivative: impl Fn(f64, f64) -> f64 + 'static,
    ) -> Tensor {
        let data: Vec<f64> = self.data().iter().map(|&x| forward(x)).collect();
        if !self.is_tracked() {
            return Self::raw(self.shape.clone(), data);
        }
        let input = Rc::clone(&self.data);
        let output = Rc::new(data.clone());
        Self::from_op(self.shape.clone(), data, &[self], move |g| {
            vec![g
                .iter()
                .zip(&input.0)
                .zip(output.iter())
                .map(|((g, &x), &y)| g * derivative(x, y))
                .collect()]
        })
    }

    fn same_shape(&self, other: &Tensor, op: &'static str) -> Result<()> {
        if self.shape != other.shape {
            return Err(TensorError::Shape {
                op,
                lhs: self.shape.clone(),
                rhs: other.shape.clone(),
            });
        }
        Ok(())
    }

    // ---- elementwise ------------------------------------------------------

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.same_shape(other, "add")?;
        let data = self.data().iter().zip(other.data()).map(|(a, b)| a + b).collect();
        Ok(Self::from_op(self.shape.clone(), data, &[self, other], |g| {
            vec![g.to_vec(), g.to_vec()]
        }))
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.same_shape(other, "sub")?;
        let data = self.data().iter().zip(other.data()).map(|(a, b)| a - b).collect();
        Ok(Self::from_op(self.shape.clone(), data, &[self, other], |g| {
            vec![g.to_vec(), g.iter().map(|v| -v).collect()]
        }))
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.same_shape(other, "mul")?;
        let data = self.data().iter().zip(other.data()).map(|(a, b)| a * b).collect();
        let (a, b) = (Rc::clone(&self.data), Rc::clone(&other.data));
        Ok(Self::from_op(self.shape.clone(), data, &[self, other], move |g| {
            vec![
                g.iter().zip(&b.0).map(|(g, b)| g * b).collect(),
                g.iter().zip(&a.0).map(|(g, a)| g * a).collect(),
            ]
        }))
    }

    /// Adds a vector along the last axis, broadcasting over all leading axes.
    pub fn add_bias(&self, bias: &Tensor) -> Result<Tensor> {
        let n = *self.shape.last().unwrap_or(&1);
        if bias.rank() != 1 || bias.shape[0] != n || self.rank() == 0 {
            return Err(TensorError::Shape {
                op: "add_bias",
                lhs: self.shape.clone(),
                rhs: bias.shape.clone(),
            });
        }
        let b = bias.data();
        let mut data = self.data().to_vec();
        for row in data.chunks_exact_mut(n) {
            for (x, b) in row.iter_mut().zip(b) {
                *x += b;
            }
        }
        Ok(Self::from_op(self.shape.clone(), data, &[self, bias], move |g| {
            let mut gb = vec![0.0; n];
            for row in g.chunks(n) {
                for (acc, v) in gb.iter_mut().zip(row) {
                    *acc += v;
                }
            }
            vec![g.to_vec(), gb]
        }))
    }

    pub fn scale(&self, factor: f64) -> Tensor {
        let data = self.data().iter().map(|x| x * factor).collect();
        Self::from_op(self.shape.clone(), data, &[self], move |g| {
            vec![g.iter().map(|v| v * factor).collect()]
        })
    }

    pub fn add_scalar(&self, value: f64) -> Tensor {
        let data = self.data().iter().map(|x| x + value).collect();
        Self::from_op(self.shape.clone(), data, &[self], |g| vec![g.to_vec()])
    }

    pub fn square(&self) -> Tensor {
        self.unary(|x| x * x, |x, _| 2.0 * x)
    }

    pub fn exp(&self) -> Tensor {
        self.unary(f64::exp, |_, y| y)
    }

    pub fn ln(&self) -> Tensor {
        self.unary(f64::ln, |x, _| 1.0 / x)
    }

    pub fn tanh(&self) -> Tensor {
        self.unary(f64::tanh, |_, y| 1.0 - y * y)
    }

    pub fn sigmoid(&self) -> Tensor {
        self.unary(sigmoid, |_, y| y * (1.0 - y))
    }

    pub fn relu(&self) -> Tensor {
        self.unary(|x| x.max(0.0), |x, _| if x > 0.0 { 1.0 } else { 0.0 })
    }

    // ---- reductions -------------------------------------------------------

    pub fn sum(&self) -> Tensor {
        let n = self.numel();
        let total = self.data().iter().sum();
        Self::from_op(Vec::new(), vec![total], &[self], move |g| vec![vec![g[0]; n]])
    }

    pub fn mean(&self) -> Tensor {
        let n = self.numel() as f64;
        self.sum().scale(1.0 / n)
    }

    /// Sums out `axis`, removing it from the shape.
    pub fn sum_axis(&self, axis: usize) -> Result<Tensor> {
        if axis >= self.rank() {
            return Err(TensorError::Axis {
                op: "sum_axis",
                axis,
                shape: self.shape.clone(),
            });
        }
        let (outer, dim, inner) = split_axis(&self.shape, axis);
        let src = self.data();
        let mut data = vec![0.0; outer * inner];
        for o in 0..outer {
            for k in 0..dim {
                let row = &src[(o * dim + k) * inner..][..inner];
                for (acc, v) in data[o * inner..][..inner].iter_mut().zip(row) {
                    *acc += v;
                }
            }
        }
        let mut shape = self.shape.clone();
        shape.remove(axis);
        Ok(Self::from_op(shape, data, &[self], move |g| {
            let mut out = vec![0.0; outer * dim * inner];
            for o in 0..outer {
                for k in 0..dim {
                    out[(o * dim + k) * inner..][..inner].copy_from_slice(&g[o * inner..][..inner]);
                }
            }
            vec![out]
        }))
    }

    // ---- shape manipulation -----------------------------------------------

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        if numel_of(shape) != self.numel() || shape.contains(&0) {
            return Err(TensorError::Shape {
                op: "reshape",
                lhs: self.shape.clone(),
                rhs: shape.to_vec(),
            });
        }
        let mut out = self.clone();
        if !self.is_tracked() {
            out.shape = shape.to_vec();
            return Ok(out);
        }
        Ok(Self::from_op(shape.to_vec(), self.to_vec(), &[self], |g| vec![g.to_vec()]))
    }

    /// Contiguous slice `[start, start + len)` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Tensor> {
        if axis >= self.rank() {
            return Err(TensorError::Axis {
                op: "narrow",
                axis,
                shape: self.shape.clone(),
            });
        }
        if len == 0 || start + len > self.shape[axis] {
            return Err(TensorError::Invalid {
                op: "narrow",
                reason: format!("range {start}..{} outside axis of size {}", start + len, self.shape[axis]),
            });
        }
        let (outer, dim, inner) = split_axis(&self.shape, axis);
        let src = self.data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            data.extend_from_slice(&src[(o * dim + start) * inner..][..len * inner]);
        }
        let mut shape = self.shape.clone();
        shape[axis] = len;
        Ok(Self::from_op(shape, data, &[self], move |g| {
            let mut out = vec![0.0; outer * dim * inner];
            for o in 0..outer {
                out[(o * dim + start) * inner..][..len * inner].copy_from_slice(&g[o * len * inner..][..len * inner]);
            }
            vec![out]
        }))
    }

    /// Joins tensors along `axis`; all other extents must agree.
    pub fn concat(parts: &[&Tensor], axis: usize) -> Result<Tensor> {
        let first = parts.first().ok_or(TensorError::Invalid {
            op: "concat",
            reason: "no inputs".into(),
        })?;
        if axis >= first.rank() {
            return Err(TensorError::Axis {
                op: "concat",
                axis,
                shape: first.shape.clone(),
            });
        }
        for part in &parts[1..] {
            let compatible = part.rank() == first.rank()
                && part.shape.iter().zip(&first.shape).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(TensorError::Shape {
                    op: "concat",
                    lhs: first.shape.clone(),
                    rhs: part.shape.clone(),
                });
            }
        }
        let (outer, _, inner) = split_axis(&first.shape, axis);
        let dims: Vec<usize> = parts.iter().map(|p| p.shape[axis]).collect();
        let total: usize = dims.iter().sum();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (part, &dim) in parts.iter().zip(&dims) {
                data.extend_from_slice(&part.data()[o * dim * inner..][..dim * inner]);
            }
        }
        let mut shape = first.shape.clone();
        shape[axis] = total;
        Ok(Self::from_op(shape, data, parts, move |g| {
            let mut grads: Vec<Vec<f64>> = dims.iter().map(|d| Vec::with_capacity(outer * d * inner)).collect();
            let mut offset = 0;
            for _ in 0..outer {
                for (grad, &dim) in grads.iter_mut().zip(&dims) {
                    grad.extend_from_slice(&g[offset..offset + dim * inner]);
                    offset += dim * inner;
                }
            }
            grads
        }))
    }

    /// Picks rows along axis 0: `out[r] = self[index[r]]`.
    pub fn gather_rows(&self, index: &[usize]) -> Result<Tensor> {
        if self.rank() == 0 || index.is_empty() {
            return Err(TensorError::Invalid {
                op: "gather_rows",
                reason: "needs a non-scalar tensor and at least one index".into(),
            });
        }
        let rows = self.shape[0];
        if let Some(&bad) = index.iter().find(|&&i| i >= rows) {
            return Err(TensorError::Invalid {
                op: "gather_rows",
                reason: format!("index {bad} out of range for {rows} rows"),
            });
        }
        let width = self.numel() / rows;
        let src = self.data();
        let mut data = Vec::with_capacity(index.len() * width);
        for &i in index {
            data.extend_from_slice(&src[i * width..][..width]);
        }
        let mut shape = self.shape.clone();
        shape[0] = index.len();
        let index = index.to_vec();
        Ok(Self::from_op(shape, data, &[self], move |g| {
            let mut out = vec![0.0; rows * width];
            for (r, &i) in index.iter().enumerate() {
                for (acc, v) in out[i * width..][..width].iter_mut().zip(&g[r * width..][..width]) {
                    *acc += v;
                }
            }
            vec![out]
        }))
    }

    /// Swaps the two innermost axes.
    pub fn transpose(&self) -> Result<Tensor> {
        if self.rank() < 2 {
            return Err(TensorError::Invalid {
                op: "transpose",
                reason: format!("needs rank >= 2, got shape {:?}", self.shape),
            });
        }
        let r = self.rank();
        let (m, n) = (self.shape[r - 2], self.shape[r - 1]);
        let batch = self.numel() / (m * n);
        let data = transpose_blocks(self.data(), batch, m, n);
        let mut shape = self.shape.clone();
        shape.swap(r - 2, r - 1);
        Ok(Self::from_op(shape, data, &[self], move |g| vec![transpose_blocks(g, batch, n, m)]))
    }

    // ---- linear algebra ---------------------------------------------------

    /// Matrix product over the two innermost axes.
    ///
    /// `self` is `[.., m, k]`. `rhs` is either a single `[k, n]` matrix
    /// shared by every leading index, or `[.., k, n]` with the same leading
    /// extents as `self`.
    pub fn matmul(&self, rhs: &Tensor) -> Result<Tensor> {
        let mismatch = || TensorError::Shape {
            op: "matmul",
            lhs: self.shape.clone(),
            rhs: rhs.shape.clone(),
        };
        let (ra, rb) = (self.rank(), rhs.rank());
        if ra < 2 || rb < 2 {
            return Err(mismatch());
        }
        let (m, k) = (self.shape[ra - 2], self.shape[ra - 1]);
        let (k2, n) = (rhs.shape[rb - 2], rhs.shape[rb - 1]);
        if k != k2 {
            return Err(mismatch());
        }
        let shared = rb == 2;
        if !shared && (ra != rb || self.shape[..ra - 2] != rhs.shape[..rb - 2]) {
            return Err(mismatch());
        }
        let batch = self.numel() / (m * k);
        let mut shape = self.shape.clone();
        shape[ra - 1] = n;

        let a = Rc::clone(&self.data);
        let b = Rc::clone(&rhs.data);
        let data = if shared {
            // fold the batch into the row dimension
            let mut out = vec![0.0; batch * m * n];
            gemm(batch * m, k, n, (&a.0, k, 1), (&b.0, n, 1), &mut out);
            out
        } else {
            let mut out = vec![0.0; batch * m * n];
            for t in 0..batch {
                gemm(m, k, n, (&a.0[t * m * k..][..m * k], k, 1), (&b.0[t * k * n..][..k * n], n, 1), &mut out[t * m * n..][..m * n]);
            }
            out
        };
        Ok(Self::from_op(shape, data, &[self, rhs], move |g| {
            // dA = dC · Bᵀ, dB = Aᵀ · dC, with the transposes expressed as strides
            if shared {
                let rows = batch * m;
                let mut ga = vec![0.0; rows * k];
                gemm(rows, n, k, (g, n, 1), (&b.0, 1, n), &mut ga);
                let mut gb = vec![0.0; k * n];
                gemm(k, rows, n, (&a.0, 1, k), (g, n, 1), &mut gb);
                vec![ga, gb]
            } else {
                let mut ga = vec![0.0; batch * m * k];
                let mut gb = vec![0.0; batch * k * n];
                for t in 0..batch {
                    let gt = &g[t * m * n..][..m * n];
                    gemm(m, n, k, (gt, n, 1), (&b.0[t * k * n..][..k * n], 1, n), &mut ga[t * m * k..][..m * k]);
                    gemm(k, m, n, (&a.0[t * m * k..][..m * k], 1, k), (gt, n, 1), &mut gb[t * k * n..][..k * n]);
                }
                vec![ga, gb]
            }
        }))
    }

    /// Softmax over the last axis, stabilised by subtracting the row max.
    pub fn softmax_lastdim(&self) -> Tensor {
        let n = *self.shape.last().unwrap_or(&1);
        let mut data = Vec::with_capacity(self.numel());
        for row in self.data().chunks(n) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let start = data.len();
            let mut total = 0.0;
            for &x in row {
                let e = (x - max).exp();
                total += e;
                data.push(e);
            }
            for v in &mut data[start..] {
                *v /= total;
            }
        }
        let output = Rc::new(data.clone());
        Self::from_op(self.shape.clone(), data, &[self], move |g| {
            let mut out = Vec::with_capacity(g.len());
            for (gr, yr) in g.chunks(n).zip(output.chunks(n)) {
                let dot: f64 = gr.iter().zip(yr).map(|(g, y)| g * y).sum();
                out.extend(gr.iter().zip(yr).map(|(g, y)| y * (g - dot)));
            }
            vec![out]
        })
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `out[m×n] += a[m×k] · b[k×n]`; `a` and `b` are given as
/// `(data, row_stride, col_stride)`, `out` is row-major.
fn gemm(m: usize, k: usize, n: usize, a: (&[f64], usize, usize), b: (&[f64], usize, usize), out: &mut [f64]) {
    let last = |rows: usize, cols: usize, rs: usize, cs: usize| (rows.max(1) - 1) * rs + (cols.max(1) - 1) * cs;
    assert!(m * k == 0 || last(m, k, a.1, a.2) < a.0.len());
    assert!(k * n == 0 || last(k, n, b.1, b.2) < b.0.len());
    assert!(out.len() >= m * n);
    // SAFETY: the asserts above keep every strided access inside its slice.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.0.as_ptr(),
            a.1 as isize,
            a.2 as isize,
            b.0.as_ptr(),
            b.1 as isize,
            b.2 as isize,
            1.0,
            out.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn transpose_blocks(src: &[f64], batch: usize, m: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; batch * m * n];
    for t in 0..batch {
        let s = &src[t * m * n..][..m * n];
        let d = &mut out[t * m * n..][..m * n];
        for i in 0..m {
            for j in 0..n {
                d[j * m + i] = s[i * n + j];
            }
        }
    }
    out
}

#[cfg(test)]
mod tests;
