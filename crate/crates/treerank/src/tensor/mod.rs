//! Minimal dense numeric kernel: 2-D tensors, the forward/backward pairs the
//! model needs, Adam, a finite-difference gradient checker, and a checkpoint
//! format. Not a general autodiff engine; callers compose backward passes by
//! hand in reverse order of the forward ones.

mod adam;
mod checkpoint;
mod gradcheck;

pub use adam::{adam_step, AdamConfig};
pub use checkpoint::{apply_checkpoint, load_checkpoint, save_checkpoint, CHECKPOINT_VERSION};
pub use gradcheck::{gradcheck, GradCheckReport};

use crate::error::{Error, Result};

/// Dense row-major matrix of f64 values.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor2D {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Tensor2D {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_flat(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Input(format!(
                "flat data length {} does not match {}x{}",
                data.len(),
                rows,
                cols
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            if row.len() != c {
                return Err(Error::Input("ragged row lengths".into()));
            }
            data.extend_from_slice(row);
        }
        Ok(Self {
            rows: r,
            cols: c,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn fill(&mut self, v: f64) {
        self.data.fill(v);
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Largest elementwise |a - b|; errors on shape mismatch.
    pub fn max_abs_diff(&self, other: &Tensor2D) -> Result<f64> {
        check_same_shape("max_abs_diff", self, other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    /// Accumulate `scale * other` into self.
    pub fn add_scaled(&mut self, other: &Tensor2D, scale: f64) -> Result<()> {
        check_same_shape("add_scaled", self, other)?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += scale * b;
        }
        Ok(())
    }
}

fn check_same_shape(context: &'static str, a: &Tensor2D, b: &Tensor2D) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Dimension {
            context,
            lhs: a.shape(),
            rhs: b.shape(),
        });
    }
    Ok(())
}

/// A learnable tensor with its gradient and Adam state. All four tensors
/// share one shape; `grad` is cleared by `adam_step` at the end of each
/// update cycle.
#[derive(Debug, Clone)]
pub struct ParamTensor {
    pub value: Tensor2D,
    pub grad: Tensor2D,
    pub adam_m: Tensor2D,
    pub adam_v: Tensor2D,
    pub step_count: u64,
}

impl ParamTensor {
    pub fn new(value: Tensor2D) -> Self {
        let (r, c) = value.shape();
        Self {
            value,
            grad: Tensor2D::zeros(r, c),
            adam_m: Tensor2D::zeros(r, c),
            adam_v: Tensor2D::zeros(r, c),
            step_count: 0,
        }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::new(Tensor2D::zeros(rows, cols))
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }
}

/// A named set of learnable tensors. Adam, the gradient checker, and the
/// checkpoint format all operate through this trait.
pub trait ParamCollection {
    fn for_each_param(&self, f: &mut dyn FnMut(&str, &ParamTensor));
    fn for_each_param_mut(&mut self, f: &mut dyn FnMut(&str, &mut ParamTensor));

    fn param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        self.for_each_param(&mut |name, _| names.push(name.to_string()));
        names
    }

    fn zero_grads(&mut self) {
        self.for_each_param_mut(&mut |_, p| p.zero_grad());
    }
}

impl ParamCollection for Vec<(String, ParamTensor)> {
    fn for_each_param(&self, f: &mut dyn FnMut(&str, &ParamTensor)) {
        for (name, p) in self {
            f(name, p);
        }
    }

    fn for_each_param_mut(&mut self, f: &mut dyn FnMut(&str, &mut ParamTensor)) {
        for (name, p) in self {
            f(name, p);
        }
    }
}

// ---------------------------------------------------------------------------
// Forward / backward op pairs
// ---------------------------------------------------------------------------

/// C = A * B.
pub fn matmul(a: &Tensor2D, b: &Tensor2D) -> Result<Tensor2D> {
    if a.cols != b.rows {
        return Err(Error::Dimension {
            context: "matmul",
            lhs: a.shape(),
            rhs: b.shape(),
        });
    }
    let mut out = Tensor2D::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        let a_row = a.row(i);
        let out_row = out.row_mut(i);
        for (k, &aik) in a_row.iter().enumerate() {
            if aik == 0.0 {
                continue;
            }
            let b_row = b.row(k);
            for (o, &bkj) in out_row.iter_mut().zip(b_row) {
                *o += aik * bkj;
            }
        }
    }
    Ok(out)
}

/// C = A * B^T.
pub fn matmul_bt(a: &Tensor2D, b: &Tensor2D) -> Result<Tensor2D> {
    if a.cols != b.cols {
        return Err(Error::Dimension {
            context: "matmul_bt",
            lhs: a.shape(),
            rhs: b.shape(),
        });
    }
    let mut out = Tensor2D::zeros(a.rows, b.rows);
    for i in 0..a.rows {
        let a_row = a.row(i);
        for j in 0..b.rows {
            out.set(i, j, dot(a_row, b.row(j)));
        }
    }
    Ok(out)
}

/// C = A^T * B.
pub fn matmul_at(a: &Tensor2D, b: &Tensor2D) -> Result<Tensor2D> {
    if a.rows != b.rows {
        return Err(Error::Dimension {
            context: "matmul_at",
            lhs: a.shape(),
            rhs: b.shape(),
        });
    }
    let mut out = Tensor2D::zeros(a.cols, b.cols);
    for k in 0..a.rows {
        let a_row = a.row(k);
        let b_row = b.row(k);
        for (i, &aki) in a_row.iter().enumerate() {
            if aki == 0.0 {
                continue;
            }
            let out_row = out.row_mut(i);
            for (o, &bkj) in out_row.iter_mut().zip(b_row) {
                *o += aki * bkj;
            }
        }
    }
    Ok(out)
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

/// y = x * W + b, with b broadcast across rows.
pub fn affine(x: &Tensor2D, w: &ParamTensor, b: &ParamTensor) -> Result<Tensor2D> {
    if x.cols != w.value.rows {
        return Err(Error::Dimension {
            context: "affine: x vs w",
            lhs: x.shape(),
            rhs: w.value.shape(),
        });
    }
    if b.value.rows != 1 || b.value.cols != w.value.cols {
        return Err(Error::Dimension {
            context: "affine: w vs b",
            lhs: w.value.shape(),
            rhs: b.value.shape(),
        });
    }
    let mut y = matmul(x, &w.value)?;
    for i in 0..y.rows {
        let row = y.row_mut(i);
        for (v, &bias) in row.iter_mut().zip(b.value.row(0)) {
            *v += bias;
        }
    }
    Ok(y)
}

/// Accumulates dW += x^T dy and db += column sums of dy; returns dx = dy W^T.
pub fn affine_backward(
    x: &Tensor2D,
    w: &mut ParamTensor,
    b: &mut ParamTensor,
    dy: &Tensor2D,
) -> Result<Tensor2D> {
    if dy.rows != x.rows || dy.cols != w.value.cols {
        return Err(Error::Dimension {
            context: "affine_backward",
            lhs: dy.shape(),
            rhs: (x.rows, w.value.cols),
        });
    }
    let dw = matmul_at(x, dy)?;
    w.grad.add_scaled(&dw, 1.0)?;
    for i in 0..dy.rows {
        let dy_row = dy.row(i);
        let db_row = b.grad.row_mut(0);
        for (g, &d) in db_row.iter_mut().zip(dy_row) {
            *g += d;
        }
    }
    matmul_bt(dy, &w.value)
}

/// Row-wise softmax with per-row max subtraction.
pub fn softmax_rows(x: &Tensor2D) -> Tensor2D {
    let mut y = x.clone();
    for i in 0..y.rows {
        softmax_in_place(y.row_mut(i));
    }
    y
}

pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut denom = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        denom += *v;
    }
    for v in row.iter_mut() {
        *v /= denom;
    }
}

/// Backward of row-wise softmax given forward output `y`:
/// dx_i = y_i * (dy_i - <dy_i, y_i>).
pub fn softmax_rows_backward(y: &Tensor2D, dy: &Tensor2D) -> Result<Tensor2D> {
    check_same_shape("softmax_rows_backward", y, dy)?;
    let mut dx = Tensor2D::zeros(y.rows, y.cols);
    for i in 0..y.rows {
        let yr = y.row(i);
        let dyr = dy.row(i);
        let inner = dot(dyr, yr);
        let dxr = dx.row_mut(i);
        for ((d, &yv), &dyv) in dxr.iter_mut().zip(yr).zip(dyr) {
            *d = yv * (dyv - inner);
        }
    }
    Ok(dx)
}

#[inline]
pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Elementwise logistic sigmoid.
pub fn sigmoid(x: &Tensor2D) -> Tensor2D {
    let mut y = x.clone();
    for v in y.data.iter_mut() {
        *v = sigmoid_scalar(*v);
    }
    y
}

/// Backward of sigmoid given forward output: dx = dy * y * (1 - y).
pub fn sigmoid_backward(y: &Tensor2D, dy: &Tensor2D) -> Result<Tensor2D> {
    check_same_shape("sigmoid_backward", y, dy)?;
    let mut dx = dy.clone();
    for (d, &yv) in dx.data.iter_mut().zip(&y.data) {
        *d *= yv * (1.0 - yv);
    }
    Ok(dx)
}

/// Elementwise max(0, x).
pub fn relu(x: &Tensor2D) -> Tensor2D {
    let mut y = x.clone();
    for v in y.data.iter_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    y
}

/// Backward of relu given forward input: dx = dy * 1[x > 0].
pub fn relu_backward(x: &Tensor2D, dy: &Tensor2D) -> Result<Tensor2D> {
    check_same_shape("relu_backward", x, dy)?;
    let mut dx = dy.clone();
    for (d, &xv) in dx.data.iter_mut().zip(&x.data) {
        if xv <= 0.0 {
            *d = 0.0;
        }
    }
    Ok(dx)
}
