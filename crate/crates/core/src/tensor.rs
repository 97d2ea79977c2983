//! Dense row-major `f64` tensors and the raw kernels behind the autograd ops.

use std::fmt;

use crate::error::{Error, Result};

/// A dense N-dimensional array of `f64` in row-major order.
#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::shape(
                "tensor",
                format!("shape {shape:?} needs {expected} values, got {}", data.len()),
            ));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    pub fn from_fn(shape: &[usize], f: impl FnMut(usize) -> f64) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: (0..n).map(f).collect(),
        }
    }

    /// `n × n` identity matrix.
    pub fn eye(n: usize) -> Self {
        Self::from_fn(&[n, n], |i| if i / n == i % n { 1.0 } else { 0.0 })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        Tensor::new(shape, self.data.clone())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        assert_eq!(self.shape, other.shape, "max_abs_diff shape");
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    pub(crate) fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const SHOWN: usize = 8;
        write!(f, "Tensor{:?} [", self.shape)?;
        for (i, v) in self.data.iter().take(SHOWN).enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{v}")?;
        }
        if self.data.len() > SHOWN {
            write!(f, ", ...")?;
        }
        write!(f, "]")
    }
}

/// Row-major strides for `shape`.
pub(crate) fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Flat source indices realising an axis permutation: output element `i`
/// (in the permuted shape) reads input element `index[i]`.
pub(crate) fn permute_index(shape: &[usize], axes: &[usize]) -> Vec<usize> {
    let in_strides = strides(shape);
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let mapped: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let n: usize = shape.iter().product();
    let mut index = Vec::with_capacity(n);
    let mut counter = vec![0usize; out_shape.len()];
    for _ in 0..n {
        index.push(counter.iter().zip(&mapped).map(|(c, s)| c * s).sum());
        for d in (0..counter.len()).rev() {
            counter[d] += 1;
            if counter[d] < out_shape[d] {
                break;
            }
            counter[d] = 0;
        }
    }
    index
}

// ---------------------------------------------------------------------------
// Matrix kernels. All accumulate into `c`.

/// `c[m,p] += a[m,k] · b[k,p]`
pub(crate) fn mm_acc(c: &mut [f64], a: &[f64], b: &[f64], m: usize, k: usize, p: usize) {
    for i in 0..m {
        let c_row = &mut c[i * p..(i + 1) * p];
        for kk in 0..k {
            let aik = a[i * k + kk];
            if aik == 0.0 {
                continue;
            }
            let b_row = &b[kk * p..(kk + 1) * p];
            for (cv, bv) in c_row.iter_mut().zip(b_row) {
                *cv += aik * bv;
            }
        }
    }
}

/// `c[m,k] += a[m,p] · b[k,p]ᵀ`
pub(crate) fn mm_abt_acc(c: &mut [f64], a: &[f64], b: &[f64], m: usize, p: usize, k: usize) {
    for i in 0..m {
        let a_row = &a[i * p..(i + 1) * p];
        for kk in 0..k {
            let b_row = &b[kk * p..(kk + 1) * p];
            let dot: f64 = a_row.iter().zip(b_row).map(|(x, y)| x * y).sum();
            c[i * k + kk] += dot;
        }
    }
}

/// `c[k,p] += a[m,k]ᵀ · b[m,p]`
pub(crate) fn mm_atb_acc(c: &mut [f64], a: &[f64], b: &[f64], m: usize, k: usize, p: usize) {
    for i in 0..m {
        let b_row = &b[i * p..(i + 1) * p];
        for kk in 0..k {
            let aik = a[i * k + kk];
            if aik == 0.0 {
                continue;
            }
            let c_row = &mut c[kk * p..(kk + 1) * p];
            for (cv, bv) in c_row.iter_mut().zip(b_row) {
                *cv += aik * bv;
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Convolution kernels: input [c_in, h, w], weight [c_out, c_in, k, k],
// zero "same" padding, cross-correlation.

pub(crate) struct ConvGeom {
    pub c_in: usize,
    pub c_out: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
}

impl ConvGeom {
    /// Output column range `[lo, hi)` for which `x + kx - pad` stays inside
    /// `[0, len)`.
    fn valid(len: usize, kx: usize, pad: usize) -> (usize, usize) {
        let lo = pad.saturating_sub(kx);
        let hi = (len + pad).saturating_sub(kx).min(len);
        (lo, hi.max(lo))
    }
}

pub(crate) fn conv2d_forward(x: &[f64], wgt: &[f64], bias: Option<&[f64]>, g: &ConvGeom) -> Vec<f64> {
    let (h, w, k) = (g.h, g.w, g.k);
    let pad = k / 2;
    let plane = h * w;
    let mut out = vec![0.0; g.c_out * plane];
    for co in 0..g.c_out {
        let o = &mut out[co * plane..(co + 1) * plane];
        if let Some(b) = bias {
            o.iter_mut().for_each(|v| *v = b[co]);
        }
        for ci in 0..g.c_in {
            let xin = &x[ci * plane..(ci + 1) * plane];
            for ky in 0..k {
                let (y0, y1) = ConvGeom::valid(h, ky, pad);
                for kx in 0..k {
                    let wv = wgt[((co * g.c_in + ci) * k + ky) * k + kx];
                    if wv == 0.0 {
                        continue;
                    }
                    let (x0, x1) = ConvGeom::valid(w, kx, pad);
                    for y in y0..y1 {
                        let sy = y + ky - pad;
                        let orow = &mut o[y * w + x0..y * w + x1];
                        let irow = &xin[sy * w + x0 + kx - pad..sy * w + x1 + kx - pad];
                        for (ov, iv) in orow.iter_mut().zip(irow) {
                            *ov += wv * iv;
                        }
                    }
                }
            }
        }
    }
    out
}

/// Returns `(dx, dw, db)` for upstream gradient `dy` of shape `[c_out, h, w]`.
pub(crate) fn conv2d_backward(x: &[f64], wgt: &[f64], dy: &[f64], g: &ConvGeom) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let (h, w, k) = (g.h, g.w, g.k);
    let pad = k / 2;
    let plane = h * w;
    let mut dx = vec![0.0; g.c_in * plane];
    let mut dw = vec![0.0; wgt.len()];
    let mut db = vec![0.0; g.c_out];
    for co in 0..g.c_out {
        let d = &dy[co * plane..(co + 1) * plane];
        db[co] = d.iter().sum();
        for ci in 0..g.c_in {
            let xin = &x[ci * plane..(ci + 1) * plane];
            let dxin = &mut dx[ci * plane..(ci + 1) * plane];
            for ky in 0..k {
                let (y0, y1) = ConvGeom::valid(h, ky, pad);
                for kx in 0..k {
                    let widx = ((co * g.c_in + ci) * k + ky) * k + kx;
                    let wv = wgt[widx];
                    let (x0, x1) = ConvGeom::valid(w, kx, pad);
                    let mut acc = 0.0;
                    for y in y0..y1 {
                        let sy = y + ky - pad;
                        let drow = &d[y * w + x0..y * w + x1];
                        let src = sy * w + x0 + kx - pad..sy * w + x1 + kx - pad;
                        for (dv, iv) in drow.iter().zip(&xin[src.clone()]) {
                            acc += dv * iv;
                        }
                        for (dxv, dv) in dxin[src].iter_mut().zip(drow) {
                            *dxv += wv * dv;
                        }
                    }
                    dw[widx] += acc;
                }
            }
        }
    }
    (dx, dw, db)
}

// ---------------------------------------------------------------------------
// GELU, tanh form.

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

pub(crate) fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

pub(crate) fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}
