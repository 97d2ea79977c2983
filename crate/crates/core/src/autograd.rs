//! Reverse-mode differentiation over an implicit operation graph.
//!
//! A [`Var`] is an immutable tensor value plus, when any of its inputs
//! requires a gradient, the operation that produced it. Node ids increase
//! monotonically, so sorting the reachable nodes by descending id yields a
//! valid reverse topological order; that ordered record is the [`Tape`].
//! Values computed only from constants keep no history and are freed as soon
//! as their last handle drops, which keeps inference memory flat.

use std::collections::{HashMap, HashSet};
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::tensor::{self, ConvGeom, Tensor};

static NEXT_ID: AtomicU64 = AtomicU64::new(0);

fn next_id() -> u64 {
    NEXT_ID.fetch_add(1, Ordering::Relaxed)
}

#[derive(Clone)]
pub struct Var(Rc<Node>);

struct Node {
    id: u64,
    value: Tensor,
    requires_grad: bool,
    op: Option<Op>,
}

enum Op {
    MatMul {
        a: Var,
        b: Var,
        plan: MatMulPlan,
    },
    Add {
        a: Var,
        b: Var,
    },
    Sub {
        a: Var,
        b: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    Scale {
        a: Var,
        factor: f64,
    },
    Gather {
        a: Var,
        index: Rc<[usize]>,
    },
    Reshape {
        a: Var,
    },
    Concat {
        parts: Vec<Var>,
    },
    Gelu {
        a: Var,
    },
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Sum {
        a: Var,
    },
    L1 {
        a: Var,
        b: Var,
    },
}

#[derive(Clone, Copy)]
struct MatMulPlan {
    batches: usize,
    a_batched: bool,
    b_batched: bool,
    m: usize,
    k: usize,
    p: usize,
}

impl std::fmt::Debug for Var {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.0.id)
            .field("requires_grad", &self.0.requires_grad)
            .field("value", &self.0.value)
            .finish()
    }
}

impl Var {
    /// A leaf that never receives a gradient.
    pub fn constant(value: Tensor) -> Var {
        Var(Rc::new(Node {
            id: next_id(),
            value,
            requires_grad: false,
            op: None,
        }))
    }

    /// A trainable leaf.
    pub fn param(value: Tensor) -> Var {
        Var(Rc::new(Node {
            id: next_id(),
            value,
            requires_grad: true,
            op: None,
        }))
    }

    fn from_op(value: Tensor, op: Op) -> Var {
        let requires_grad = op.inputs().iter().any(|v| v.requires_grad());
        Var(Rc::new(Node {
            id: next_id(),
            value,
            requires_grad,
            op: requires_grad.then_some(op),
        }))
    }

    pub fn id(&self) -> u64 {
        self.0.id
    }

    pub fn value(&self) -> &Tensor {
        &self.0.value
    }

    pub fn shape(&self) -> &[usize] {
        self.0.value.shape()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.0.op.is_none()
    }

    /// Same value as a fresh leaf, trainable or not.
    pub fn detach(&self, requires_grad: bool) -> Var {
        if requires_grad {
            Var::param(self.value().clone())
        } else {
            Var::constant(self.value().clone())
        }
    }

    /// Backpropagate from this scalar.
    pub fn backward(&self) -> Result<Gradients> {
        Tape::record(self).backward(self)
    }

    // -----------------------------------------------------------------------
    // Linear algebra

    /// Batched matrix product `[.., M, K] · [.., K, P]`. Leading dimensions
    /// must agree, or one side must have none (it is then broadcast).
    pub fn matmul(&self, other: &Var) -> Result<Var> {
        let (sa, sb) = (self.shape(), other.shape());
        let fail = || Error::mismatch("matmul", sa, sb);
        if sa.len() < 2 || sb.len() < 2 {
            return Err(fail());
        }
        let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (k2, p) = (sb[sb.len() - 2], sb[sb.len() - 1]);
        if k != k2 {
            return Err(fail());
        }
        let (ba, bb) = (&sa[..sa.len() - 2], &sb[..sb.len() - 2]);
        let (pa, pb) = (ba.iter().product::<usize>(), bb.iter().product::<usize>());
        let (batch_dims, a_batched, b_batched) = if ba == bb {
            (ba.to_vec(), true, true)
        } else if pb == 1 && (pa != 1 || ba.len() >= bb.len()) {
            (ba.to_vec(), true, false)
        } else if pa == 1 {
            (bb.to_vec(), false, true)
        } else {
            return Err(fail());
        };
        let batches = batch_dims.iter().product::<usize>();
        let plan = MatMulPlan {
            batches,
            a_batched,
            b_batched,
            m,
            k,
            p,
        };

        let (a, b) = (self.value().data(), other.value().data());
        let mut out = vec![0.0; batches * m * p];
        for bi in 0..batches {
            let ai = if a_batched { bi } else { 0 };
            let bj = if b_batched { bi } else { 0 };
            tensor::mm_acc(
                &mut out[bi * m * p..(bi + 1) * m * p],
                &a[ai * m * k..(ai + 1) * m * k],
                &b[bj * k * p..(bj + 1) * k * p],
                m,
                k,
                p,
            );
        }
        let mut shape = batch_dims;
        shape.extend([m, p]);
        let value = Tensor::new(&shape, out)?;
        Ok(Var::from_op(
            value,
            Op::MatMul {
                a: self.clone(),
                b: other.clone(),
                plan,
            },
        ))
    }

    /// Swap the last two axes.
    pub fn transpose(&self) -> Result<Var> {
        let n = self.shape().len();
        if n < 2 {
            return Err(Error::shape("transpose", format!("rank {n} < 2")));
        }
        let mut axes: Vec<usize> = (0..n).collect();
        axes.swap(n - 2, n - 1);
        self.permute(&axes)
    }

    pub fn permute(&self, axes: &[usize]) -> Result<Var> {
        let shape = self.shape();
        let mut seen = vec![false; shape.len()];
        if axes.len() != shape.len()
            || axes
                .iter()
                .any(|&a| a >= shape.len() || std::mem::replace(&mut seen[a], true))
        {
            return Err(Error::shape("permute", format!("axes {axes:?} for shape {shape:?}")));
        }
        let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
        self.gather(tensor::permute_index(shape, axes).into(), &out_shape)
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Var> {
        let value = self.value().reshape(shape)?;
        Ok(Var::from_op(value, Op::Reshape { a: self.clone() }))
    }

    /// `out[i] = self[index[i]]`, flat indices. Gradients scatter-add, so
    /// indices may repeat.
    pub fn gather(&self, index: Rc<[usize]>, shape: &[usize]) -> Result<Var> {
        let src = self.value().data();
        if let Some(&bad) = index.iter().find(|&&i| i >= src.len()) {
            return Err(Error::shape(
                "gather",
                format!("index {bad} out of range for {} elements", src.len()),
            ));
        }
        let value = Tensor::new(shape, index.iter().map(|&i| src[i]).collect())?;
        Ok(Var::from_op(value, Op::Gather { a: self.clone(), index }))
    }

    /// Columns `[start, start + len)` of the last axis.
    pub fn slice_last(&self, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape();
        let width = *shape.last().ok_or_else(|| Error::shape("slice_last", "scalar input"))?;
        if start + len > width {
            return Err(Error::shape(
                "slice_last",
                format!("range {start}..{} exceeds width {width}", start + len),
            ));
        }
        let rows = self.value().len() / width.max(1);
        let index: Vec<usize> = (0..rows)
            .flat_map(|r| (start..start + len).map(move |c| r * width + c))
            .collect();
        let mut out_shape = shape.to_vec();
        *out_shape.last_mut().unwrap() = len;
        self.gather(index.into(), &out_shape)
    }

    /// Concatenate along the last axis.
    pub fn concat_last(parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or_else(|| Error::shape("concat", "no inputs"))?;
        let lead = &first.shape()[..first.shape().len().saturating_sub(1)];
        for p in parts {
            let s = p.shape();
            if s.is_empty() || &s[..s.len() - 1] != lead {
                return Err(Error::mismatch("concat", first.shape(), s));
            }
        }
        let widths: Vec<usize> = parts.iter().map(|p| *p.shape().last().unwrap()).collect();
        let total: usize = widths.iter().sum();
        let rows: usize = lead.iter().product();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&p.value().data()[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead.to_vec();
        shape.push(total);
        Ok(Var::from_op(
            Tensor::new(&shape, data)?,
            Op::Concat { parts: parts.to_vec() },
        ))
    }

    // -----------------------------------------------------------------------
    // Elementwise

    fn suffix_broadcast(&self, other: &Var, op: &'static str) -> Result<()> {
        let (sa, sb) = (self.shape(), other.shape());
        if sb.len() > sa.len() || sa[sa.len() - sb.len()..] != *sb {
            return Err(Error::mismatch(op, sa, sb));
        }
        Ok(())
    }

    /// Elementwise sum. `other`'s shape must be a suffix of `self`'s; it is
    /// repeated over the leading axes.
    pub fn add(&self, other: &Var) -> Result<Var> {
        self.suffix_broadcast(other, "add")?;
        let b = other.value().data();
        let data = self
            .value()
            .data()
            .iter()
            .enumerate()
            .map(|(i, a)| a + b[i % b.len()])
            .collect();
        let value = Tensor::new(self.shape(), data)?;
        Ok(Var::from_op(
            value,
            Op::Add {
                a: self.clone(),
                b: other.clone(),
            },
        ))
    }

    /// Elementwise difference with the same broadcasting rule as [`Var::add`].
    pub fn sub(&self, other: &Var) -> Result<Var> {
        self.suffix_broadcast(other, "sub")?;
        let b = other.value().data();
        let data = self
            .value()
            .data()
            .iter()
            .enumerate()
            .map(|(i, a)| a - b[i % b.len()])
            .collect();
        let value = Tensor::new(self.shape(), data)?;
        Ok(Var::from_op(
            value,
            Op::Sub {
                a: self.clone(),
                b: other.clone(),
            },
        ))
    }

    /// Elementwise (Hadamard) product of equally shaped tensors.
    pub fn mul(&self, other: &Var) -> Result<Var> {
        if self.shape() != other.shape() {
            return Err(Error::mismatch("mul", self.shape(), other.shape()));
        }
        let data = self
            .value()
            .data()
            .iter()
            .zip(other.value().data())
            .map(|(a, b)| a * b)
            .collect();
        let value = Tensor::new(self.shape(), data)?;
        Ok(Var::from_op(
            value,
            Op::Mul {
                a: self.clone(),
                b: other.clone(),
            },
        ))
    }

    /// Multiply by a constant.
    pub fn scale(&self, factor: f64) -> Var {
        let value = self.value().map(|x| x * factor);
        Var::from_op(
            value,
            Op::Scale {
                a: self.clone(),
                factor,
            },
        )
    }

    pub fn gelu(&self) -> Var {
        let value = self.value().map(tensor::gelu);
        Var::from_op(value, Op::Gelu { a: self.clone() })
    }

    // -----------------------------------------------------------------------
    // Reductions and losses

    pub fn sum(&self) -> Var {
        let value = Tensor::scalar(self.value().data().iter().sum());
        Var::from_op(value, Op::Sum { a: self.clone() })
    }

    pub fn mean(&self) -> Var {
        let n = self.value().len().max(1) as f64;
        self.sum().scale(1.0 / n)
    }

    /// Mean absolute difference.
    pub fn l1_loss(&self, target: &Var) -> Result<Var> {
        if self.shape() != target.shape() {
            return Err(Error::mismatch("l1_loss", self.shape(), target.shape()));
        }
        let n = self.value().len().max(1) as f64;
        let total: f64 = self
            .value()
            .data()
            .iter()
            .zip(target.value().data())
            .map(|(a, b)| (a - b).abs())
            .sum();
        Ok(Var::from_op(
            Tensor::scalar(total / n),
            Op::L1 {
                a: self.clone(),
                b: target.clone(),
            },
        ))
    }

    // -----------------------------------------------------------------------
    // Network layers

    /// Normalize over the last axis with population variance, then apply
    /// the per-channel affine.
    pub fn layer_norm(&self, gamma: &Var, beta: &Var, eps: f64) -> Result<Var> {
        let c = *self
            .shape()
            .last()
            .ok_or_else(|| Error::shape("layer_norm", "scalar input"))?;
        if gamma.shape() != [c] || beta.shape() != [c] {
            return Err(Error::mismatch("layer_norm", self.shape(), gamma.shape()));
        }
        let x = self.value().data();
        let (g, b) = (gamma.value().data(), beta.value().data());
        let rows = x.len() / c.max(1);
        let mut xhat = vec![0.0; x.len()];
        let mut rstd = vec![0.0; rows];
        let mut out = vec![0.0; x.len()];
        for r in 0..rows {
            let row = &x[r * c..(r + 1) * c];
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let rs = 1.0 / (var + eps).sqrt();
            rstd[r] = rs;
            for j in 0..c {
                let xh = (row[j] - mean) * rs;
                xhat[r * c + j] = xh;
                out[r * c + j] = g[j] * xh + b[j];
            }
        }
        let value = Tensor::new(self.shape(), out)?;
        Ok(Var::from_op(
            value,
            Op::LayerNorm {
                x: self.clone(),
                gamma: gamma.clone(),
                beta: beta.clone(),
                xhat,
                rstd,
            },
        ))
    }

    /// Same-size 2-D cross-correlation of `[C_in, H, W]` with
    /// `[C_out, C_in, k, k]` (odd `k`, zero padding), plus optional bias.
    pub fn conv2d(&self, weight: &Var, bias: Option<&Var>) -> Result<Var> {
        let (xs, ws) = (self.shape(), weight.shape());
        if xs.len() != 3 || ws.len() != 4 || ws[2] != ws[3] {
            return Err(Error::mismatch("conv2d", xs, ws));
        }
        if ws[1] != xs[0] {
            return Err(Error::mismatch("conv2d", xs, ws));
        }
        if ws[2] % 2 == 0 {
            return Err(Error::shape("conv2d", format!("kernel size {} is even", ws[2])));
        }
        if let Some(b) = bias {
            if b.shape() != [ws[0]] {
                return Err(Error::mismatch("conv2d bias", ws, b.shape()));
            }
        }
        let g = ConvGeom {
            c_in: xs[0],
            c_out: ws[0],
            h: xs[1],
            w: xs[2],
            k: ws[2],
        };
        let out = tensor::conv2d_forward(
            self.value().data(),
            weight.value().data(),
            bias.map(|b| b.value().data()),
            &g,
        );
        let value = Tensor::new(&[g.c_out, g.h, g.w], out)?;
        Ok(Var::from_op(
            value,
            Op::Conv2d {
                x: self.clone(),
                w: weight.clone(),
                b: bias.cloned(),
            },
        ))
    }

    /// Sub-pixel rearrangement `[C·s², H, W] → [C, s·H, s·W]` with
    /// `out[c, h·s + i, w·s + j] = in[c·s² + i·s + j, h, w]`.
    pub fn pixel_shuffle(&self, s: usize) -> Result<Var> {
        let shape = self.shape();
        if shape.len() != 3 || s == 0 || !shape[0].is_multiple_of(s * s) {
            return Err(Error::shape(
                "pixel_shuffle",
                format!("shape {shape:?} not divisible by scale² = {}", s * s),
            ));
        }
        let (c, h, w) = (shape[0] / (s * s), shape[1], shape[2]);
        self.gather(pixel_shuffle_index(c, h, w, s).into(), &[c, h * s, w * s])
    }

    /// Inverse of [`Var::pixel_shuffle`].
    pub fn pixel_unshuffle(&self, s: usize) -> Result<Var> {
        let shape = self.shape();
        if shape.len() != 3 || s == 0 || !shape[1].is_multiple_of(s) || !shape[2].is_multiple_of(s) {
            return Err(Error::shape(
                "pixel_unshuffle",
                format!("shape {shape:?} not divisible by scale {s}"),
            ));
        }
        let (c, h, w) = (shape[0], shape[1] / s, shape[2] / s);
        let fwd = pixel_shuffle_index(c, h, w, s);
        let mut inv = vec![0; fwd.len()];
        for (dst, &src) in fwd.iter().enumerate() {
            inv[src] = dst;
        }
        self.gather(inv.into(), &[c * s * s, h, w])
    }
}

fn pixel_shuffle_index(c: usize, h: usize, w: usize, s: usize) -> Vec<usize> {
    let (oh, ow) = (h * s, w * s);
    let mut index = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        for y in 0..oh {
            for x in 0..ow {
                let src_c = ch * s * s + (y % s) * s + (x % s);
                index.push((src_c * h + y / s) * w + x / s);
            }
        }
    }
    index
}

impl Op {
    fn inputs(&self) -> Vec<&Var> {
        match self {
            Op::MatMul { a, b, .. } | Op::Add { a, b } | Op::Sub { a, b } | Op::Mul { a, b } | Op::L1 { a, b } => {
                vec![a, b]
            }
            Op::Scale { a, .. } | Op::Gather { a, .. } | Op::Reshape { a } | Op::Gelu { a } | Op::Sum { a } => vec![a],
            Op::Concat { parts } => parts.iter().collect(),
            Op::LayerNorm { x, gamma, beta, .. } => vec![x, gamma, beta],
            Op::Conv2d { x, w, b } => {
                let mut v = vec![x, w];
                v.extend(b.as_ref());
                v
            }
        }
    }

    /// Gradients of the inputs given the gradient of the output. Inputs that
    /// do not require gradients are skipped.
    fn backward(&self, grad: &Tensor) -> Vec<(Var, Tensor)> {
        let mut res = Vec::new();
        let mut emit = |v: &Var, g: Tensor| {
            if v.requires_grad() {
                res.push((v.clone(), g));
            }
        };
        let g = grad.data();
        match self {
            Op::MatMul { a, b, plan } => {
                let MatMulPlan {
                    batches,
                    a_batched,
                    b_batched,
                    m,
                    k,
                    p,
                } = *plan;
                let (av, bv) = (a.value().data(), b.value().data());
                if a.requires_grad() {
                    let mut da = vec![0.0; av.len()];
                    for bi in 0..batches {
                        let ai = if a_batched { bi } else { 0 };
                        let bj = if b_batched { bi } else { 0 };
                        tensor::mm_abt_acc(
                            &mut da[ai * m * k..(ai + 1) * m * k],
                            &g[bi * m * p..(bi + 1) * m * p],
                            &bv[bj * k * p..(bj + 1) * k * p],
                            m,
                            p,
                            k,
                        );
                    }
                    emit(a, Tensor::new(a.shape(), da).unwrap());
                }
                if b.requires_grad() {
                    let mut db = vec![0.0; bv.len()];
                    for bi in 0..batches {
                        let ai = if a_batched { bi } else { 0 };
                        let bj = if b_batched { bi } else { 0 };
                        tensor::mm_atb_acc(
                            &mut db[bj * k * p..(bj + 1) * k * p],
                            &av[ai * m * k..(ai + 1) * m * k],
                            &g[bi * m * p..(bi + 1) * m * p],
                            m,
                            k,
                            p,
                        );
                    }
                    emit(b, Tensor::new(b.shape(), db).unwrap());
                }
            }
            Op::Add { a, b } | Op::Sub { a, b } => {
                let sign = if matches!(self, Op::Sub { .. }) { -1.0 } else { 1.0 };
                emit(a, grad.clone());
                if b.requires_grad() {
                    let n = b.value().len();
                    let mut db = vec![0.0; n];
                    for (i, gv) in g.iter().enumerate() {
                        db[i % n] += sign * gv;
                    }
                    emit(b, Tensor::new(b.shape(), db).unwrap());
                }
            }
            Op::Mul { a, b } => {
                if a.requires_grad() {
                    let d = g.iter().zip(b.value().data()).map(|(x, y)| x * y).collect();
                    emit(a, Tensor::new(a.shape(), d).unwrap());
                }
                if b.requires_grad() {
                    let d = g.iter().zip(a.value().data()).map(|(x, y)| x * y).collect();
                    emit(b, Tensor::new(b.shape(), d).unwrap());
                }
            }
            Op::Scale { a, factor } => emit(a, grad.map(|x| x * factor)),
            Op::Gather { a, index } => {
                let mut da = vec![0.0; a.value().len()];
                for (gv, &src) in g.iter().zip(index.iter()) {
                    da[src] += gv;
                }
                emit(a, Tensor::new(a.shape(), da).unwrap());
            }
            Op::Reshape { a } => emit(a, grad.reshape(a.shape()).unwrap()),
            Op::Concat { parts } => {
                let widths: Vec<usize> = parts.iter().map(|p| *p.shape().last().unwrap()).collect();
                let total: usize = widths.iter().sum();
                let rows = g.len() / total.max(1);
                let mut offset = 0;
                for (p, &w) in parts.iter().zip(&widths) {
                    if p.requires_grad() {
                        let mut d = Vec::with_capacity(rows * w);
                        for r in 0..rows {
                            d.extend_from_slice(&g[r * total + offset..r * total + offset + w]);
                        }
                        emit(p, Tensor::new(p.shape(), d).unwrap());
                    }
                    offset += w;
                }
            }
            Op::Gelu { a } => {
                let d = g
                    .iter()
                    .zip(a.value().data())
                    .map(|(gv, &x)| gv * tensor::gelu_grad(x))
                    .collect();
                emit(a, Tensor::new(a.shape(), d).unwrap());
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            } => {
                let c = gamma.value().len();
                let gm = gamma.value().data();
                let rows = g.len() / c;
                if x.requires_grad() {
                    let mut dx = vec![0.0; g.len()];
                    for r in 0..rows {
                        let span = r * c..(r + 1) * c;
                        let (gr, xr) = (&g[span.clone()], &xhat[span.clone()]);
                        let mut mean_d = 0.0;
                        let mut mean_dx = 0.0;
                        for j in 0..c {
                            let dxh = gr[j] * gm[j];
                            mean_d += dxh;
                            mean_dx += dxh * xr[j];
                        }
                        mean_d /= c as f64;
                        mean_dx /= c as f64;
                        for j in 0..c {
                            let dxh = gr[j] * gm[j];
                            dx[r * c + j] = rstd[r] * (dxh - mean_d - xr[j] * mean_dx);
                        }
                    }
                    emit(x, Tensor::new(x.shape(), dx).unwrap());
                }
                if gamma.requires_grad() || beta.requires_grad() {
                    let mut dg = vec![0.0; c];
                    let mut db = vec![0.0; c];
                    for r in 0..rows {
                        for j in 0..c {
                            dg[j] += g[r * c + j] * xhat[r * c + j];
                            db[j] += g[r * c + j];
                        }
                    }
                    emit(gamma, Tensor::new(&[c], dg).unwrap());
                    emit(beta, Tensor::new(&[c], db).unwrap());
                }
            }
            Op::Conv2d { x, w, b } => {
                let (xs, ws) = (x.shape(), w.shape());
                let geom = ConvGeom {
                    c_in: xs[0],
                    c_out: ws[0],
                    h: xs[1],
                    w: xs[2],
                    k: ws[2],
                };
                let (dx, dw, db) = tensor::conv2d_backward(x.value().data(), w.value().data(), g, &geom);
                emit(x, Tensor::new(xs, dx).unwrap());
                emit(w, Tensor::new(ws, dw).unwrap());
                if let Some(b) = b {
                    emit(b, Tensor::new(b.shape(), db).unwrap());
                }
            }
            Op::Sum { a } => emit(a, Tensor::full(a.shape(), g[0])),
            Op::L1 { a, b } => {
                let n = a.value().len().max(1) as f64;
                let sign: Vec<f64> = a
                    .value()
                    .data()
                    .iter()
                    .zip(b.value().data())
                    .map(|(x, y)| {
                        let d = x - y;
                        if d > 0.0 {
                            g[0] / n
                        } else if d < 0.0 {
                            -g[0] / n
                        } else {
                            0.0
                        }
                    })
                    .collect();
                if b.requires_grad() {
                    emit(b, Tensor::new(b.shape(), sign.iter().map(|s| -s).collect()).unwrap());
                }
                emit(a, Tensor::new(a.shape(), sign).unwrap());
            }
        }
        res
    }
}

/// Reverse-ordered record of every gradient-carrying node reachable from a
/// loss. Replaying it visits each recorded operation exactly once.
pub struct Tape {
    nodes: Vec<Var>,
}

impl Tape {
    pub fn record(loss: &Var) -> Tape {
        let mut seen = HashSet::new();
        let mut stack = vec![loss.clone()];
        let mut nodes = Vec::new();
        while let Some(v) = stack.pop() {
            if !v.requires_grad() || !seen.insert(v.id()) {
                continue;
            }
            if let Some(op) = &v.0.op {
                stack.extend(op.inputs().into_iter().cloned());
            }
            nodes.push(v);
        }
        nodes.sort_by_key(|n| std::cmp::Reverse(n.id()));
        Tape { nodes }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Number of recorded operations (non-leaf nodes).
    pub fn op_count(&self) -> usize {
        self.nodes.iter().filter(|v| !v.is_leaf()).count()
    }

    pub fn backward(&self, loss: &Var) -> Result<Gradients> {
        if loss.value().len() != 1 {
            return Err(Error::shape(
                "backward",
                format!("loss must be a scalar, got shape {:?}", loss.shape()),
            ));
        }
        let mut grads: HashMap<u64, Tensor> = HashMap::new();
        if !loss.requires_grad() {
            return Ok(Gradients { grads });
        }
        grads.insert(loss.id(), Tensor::full(loss.shape(), 1.0));
        for node in &self.nodes {
            let Some(op) = &node.0.op else { continue };
            let Some(g) = grads.get(&node.id()) else { continue };
            let g = g.clone();
            for (input, dg) in op.backward(&g) {
                match grads.get_mut(&input.id()) {
                    Some(acc) => acc.add_assign(&dg),
                    None => {
                        grads.insert(input.id(), dg);
                    }
                }
            }
            // interior gradients are no longer needed
            grads.remove(&node.id());
        }
        Ok(Gradients { grads })
    }
}

/// Gradients of the leaves reached during a backward pass.
pub struct Gradients {
    grads: HashMap<u64, Tensor>,
}

impl Gradients {
    pub fn get(&self, v: &Var) -> Option<&Tensor> {
        self.grads.get(&v.id())
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn identity_matmul() {
        let eye = Var::constant(Tensor::eye(2));
        let m = Var::constant(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
        assert_eq!(eye.matmul(&m).unwrap().value().data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn row_times_column() {
        let a = Var::constant(t(&[1, 2], &[1.0, 2.0]));
        let b = Var::constant(t(&[2, 1], &[3.0, 4.0]));
        assert_eq!(a.matmul(&b).unwrap().value().data(), &[11.0]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let a = Var::constant(Tensor::zeros(&[2, 3]));
        let b = Var::constant(Tensor::zeros(&[2, 3]));
        let msg = a.matmul(&b).unwrap_err().to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("matmul"), "{msg}");
    }

    #[test]
    fn matmul_broadcasts_unbatched_side() {
        let w = Var::constant(t(&[1, 2], &[0.5, 0.5]));
        let v = Var::constant(t(&[3, 2, 1], &[1.0, 3.0, 2.0, 4.0, 0.0, 0.0]));
        let out = w.matmul(&v).unwrap();
        assert_eq!(out.shape(), &[3, 1, 1]);
        assert_eq!(out.value().data(), &[2.0, 3.0, 0.0]);
    }

    #[test]
    fn pixel_shuffle_definitional_layout() {
        let x = Var::constant(t(&[4, 1, 1], &[1.0, 2.0, 3.0, 4.0]));
        let y = x.pixel_shuffle(2).unwrap();
        assert_eq!(y.shape(), &[1, 2, 2]);
        assert_eq!(y.value().data(), &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(x.pixel_shuffle(1).unwrap().value(), x.value());
        assert!(Var::constant(Tensor::zeros(&[3, 2, 2])).pixel_shuffle(2).is_err());
    }

    #[test]
    fn layer_norm_two_values() {
        let x = Var::constant(t(&[1, 2], &[1.0, 3.0]));
        let g = Var::constant(Tensor::full(&[2], 1.0));
        let b = Var::constant(Tensor::zeros(&[2]));
        let y = x.layer_norm(&g, &b, 1e-5).unwrap();
        let expect = 1.0 / (1.0f64 + 1e-5).sqrt();
        assert!((y.value().data()[0] + expect).abs() < 1e-15);
        assert!((y.value().data()[1] - expect).abs() < 1e-15);
    }

    #[test]
    fn layer_norm_of_constant_rows_is_zero() {
        let x = Var::constant(Tensor::full(&[3, 4], 2.5));
        let g = Var::constant(Tensor::full(&[4], 1.0));
        let b = Var::constant(Tensor::zeros(&[4]));
        let y = x.layer_norm(&g, &b, 1e-5).unwrap();
        assert!(y.value().data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn conv_identity_and_constant_field() {
        let x = Var::constant(Tensor::from_fn(&[1, 4, 4], |i| i as f64));
        let one = Var::constant(Tensor::full(&[1, 1, 1, 1], 1.0));
        assert_eq!(x.conv2d(&one, None).unwrap().value(), x.value());

        let c = Var::constant(Tensor::full(&[1, 5, 5], 0.5));
        let ones = Var::constant(Tensor::full(&[1, 1, 3, 3], 1.0));
        let y = c.conv2d(&ones, None).unwrap();
        assert_eq!(y.value().data()[2 * 5 + 2], 4.5);

        let bad = Var::constant(Tensor::zeros(&[1, 2, 3, 3]));
        assert!(x.conv2d(&bad, None).is_err());
    }

    #[test]
    fn elementwise_trivial_cases() {
        let a = Var::constant(t(&[2], &[1.0, 2.0]));
        let b = Var::constant(t(&[2], &[3.0, 5.0]));
        assert_eq!(a.add(&b).unwrap().value().data(), &[4.0, 7.0]);
        assert_eq!(a.sub(&b).unwrap().value().data(), &[-2.0, -3.0]);
        assert_eq!(a.mul(&b).unwrap().value().data(), &[3.0, 10.0]);
        assert_eq!(a.scale(-2.0).value().data(), &[-2.0, -4.0]);
        assert_eq!(a.gelu().value().data()[0], tensor::gelu(1.0));
        let m = Var::constant(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
        assert_eq!(m.add(&a).unwrap().value().data(), &[2.0, 4.0, 4.0, 6.0]);
        assert!(a.add(&m).is_err());
    }

    #[test]
    fn split_concat_transpose_reshape() {
        let m = Var::constant(t(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let left = m.slice_last(0, 1).unwrap();
        let right = m.slice_last(1, 2).unwrap();
        assert_eq!(right.value().data(), &[2.0, 3.0, 5.0, 6.0]);
        let back = Var::concat_last(&[left, right]).unwrap();
        assert_eq!(back.value(), m.value());
        assert_eq!(m.transpose().unwrap().value().data(), &[1.0, 4.0, 2.0, 5.0, 3.0, 6.0]);
        assert_eq!(m.reshape(&[3, 2]).unwrap().shape(), &[3, 2]);
        assert!(m.reshape(&[4, 2]).is_err());
    }

    #[test]
    fn leaves_receive_gradients() {
        let a = Var::param(t(&[2], &[1.0, -2.0]));
        let b = Var::param(t(&[2], &[3.0, 0.5]));
        let c = Var::constant(t(&[2], &[1.0, 1.0]));
        let loss = a.mul(&b).unwrap().add(&c).unwrap().sum();
        let g = loss.backward().unwrap();
        assert_eq!(g.get(&a).unwrap().data(), &[3.0, 0.5]);
        assert_eq!(g.get(&b).unwrap().data(), &[1.0, -2.0]);
        assert!(g.get(&c).is_none());
    }

    #[test]
    fn shared_subexpression_accumulates() {
        let x = Var::param(Tensor::scalar(3.0));
        let y = x.mul(&x).unwrap().add(&x).unwrap();
        let g = y.backward().unwrap();
        assert_eq!(g.get(&x).unwrap().item(), 7.0);
    }

    #[test]
    fn tape_visits_each_op_once() {
        let x = Var::param(Tensor::scalar(2.0));
        let y = x.scale(2.0);
        let z = y.mul(&y).unwrap().add(&y).unwrap();
        let tape = Tape::record(&z);
        // x, y, y*y, z
        assert_eq!(tape.len(), 4);
        assert_eq!(tape.op_count(), 3);
    }

    #[test]
    fn constants_keep_no_history() {
        let a = Var::constant(Tensor::scalar(1.0));
        let b = a.scale(2.0);
        assert!(b.is_leaf());
        assert!(!b.requires_grad());
    }

    #[test]
    fn backward_requires_scalar() {
        let a = Var::param(Tensor::zeros(&[2]));
        assert!(a.scale(1.0).backward().is_err());
    }
}
