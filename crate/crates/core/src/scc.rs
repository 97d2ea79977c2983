//! Spatial-channel correlation (SCC) transformer layer.
//!
//! A layer is pre-norm with two residual branches:
//!
//! ```text
//! y   = x + proj(SCC(LN1(x)))
//! out = y + FFN(LN2(y))
//! ```
//!
//! `SCC` runs dual feature extraction on the full map to get queries and
//! values (keys are the values), partitions both into the layer's windows,
//! then sums two softmax-free correlations per window:
//!
//! * spatial: `(Q V↓ᵀ / D + B) · V↓` with multiple heads, where `V↓` is the
//!   window's values summarized along the spatial axis to at most the base
//!   window's token count;
//! * channel: `((Qᵀ V) / (h·w) · Vᵀ)ᵀ` with a single head.
//!
//! The sum (`C/2` channels) is projected back to `C` channels.

use std::collections::BTreeMap;
use std::rc::Rc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::nn::{join, Conv, Linear, Module, Norm};
use crate::tensor::Tensor;
use crate::windowing::{crop_tokens, image_to_tokens, merge_tokens, pad_tokens, partition_tokens, tokens_to_image};

/// Denominator used by the spatial correlation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpatialScale {
    /// `D = C/2` regardless of the head split.
    #[default]
    HalfChannels,
    /// `D` = per-head channel count.
    HeadDim,
}

/// Shape hyperparameters of one layer.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerConfig {
    pub channels: usize,
    pub heads: usize,
    pub window: (usize, usize),
    pub downsampled: (usize, usize),
    pub dfe_r: usize,
    pub dfe_kernels: [usize; 3],
    pub ffn_ratio: usize,
    pub bias_hidden: usize,
    pub spatial_scale: SpatialScale,
}

impl LayerConfig {
    pub fn validate(&self) -> Result<()> {
        let c = self.channels;
        if c == 0 || !c.is_multiple_of(2) {
            return Err(Error::Config(format!("channel count {c} must be even")));
        }
        if self.heads == 0 || !(c / 2).is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "{} spatial heads do not divide C/2 = {}",
                self.heads,
                c / 2
            )));
        }
        if self.dfe_r == 0 || !c.is_multiple_of(self.dfe_r) {
            return Err(Error::Config(format!(
                "reduction ratio {} does not divide C = {c}",
                self.dfe_r
            )));
        }
        if self.dfe_kernels.iter().any(|k| k % 2 == 0) {
            return Err(Error::Config(format!(
                "convolution kernels {:?} must be odd",
                self.dfe_kernels
            )));
        }
        let (h, w) = self.window;
        let (dh, dw) = self.downsampled;
        if h == 0 || w == 0 || dh == 0 || dw == 0 || dh > h || dw > w {
            return Err(Error::Config(format!(
                "downsampled grid {dh}x{dw} must be non-empty and within window {h}x{w}"
            )));
        }
        if self.ffn_ratio == 0 || self.bias_hidden == 0 {
            return Err(Error::Config("ffn ratio and bias width must be positive".into()));
        }
        Ok(())
    }

    pub fn half(&self) -> usize {
        self.channels / 2
    }

    pub fn window_tokens(&self) -> usize {
        self.window.0 * self.window.1
    }

    pub fn downsampled_tokens(&self) -> usize {
        self.downsampled.0 * self.downsampled.1
    }

    pub fn spatial_denominator(&self) -> f64 {
        match self.spatial_scale {
            SpatialScale::HalfChannels => self.half() as f64,
            SpatialScale::HeadDim => (self.half() / self.heads) as f64,
        }
    }

    pub fn channel_denominator(&self) -> f64 {
        self.window_tokens() as f64
    }
}

/// Dual feature extraction: a linear channel branch times a three-convolution
/// channel hourglass `C → C/r → C/r → C` with GELU between convolutions.
#[derive(Clone, Debug)]
pub struct DfeParams {
    pub linear: Linear,
    pub convs: [Conv; 3],
    pub r: usize,
}

impl DfeParams {
    pub fn init(rng: &mut impl Rng, channels: usize, r: usize, kernels: [usize; 3]) -> Self {
        let hidden = channels / r;
        DfeParams {
            linear: Linear::init(rng, channels, channels),
            convs: [
                Conv::init(rng, channels, hidden, kernels[0]),
                Conv::init(rng, hidden, hidden, kernels[1]),
                Conv::init(rng, hidden, channels, kernels[2]),
            ],
            r,
        }
    }
}

impl Module for DfeParams {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Var)>) {
        self.linear.visit(&join(prefix, "linear"), out);
        for (i, c) in self.convs.iter().enumerate() {
            c.visit(&join(prefix, &format!("conv{}", i + 1)), out);
        }
    }
    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Var)>) {
        self.linear.visit_mut(&join(prefix, "linear"), out);
        for (i, c) in self.convs.iter_mut().enumerate() {
            c.visit_mut(&join(prefix, &format!("conv{}", i + 1)), out);
        }
    }
}

/// Two-layer map from a normalized 2-D offset to one bias per head.
#[derive(Clone, Debug)]
pub struct BiasMlp {
    pub hidden: Linear,
    pub out: Linear,
}

impl BiasMlp {
    pub fn init(rng: &mut impl Rng, hidden: usize, heads: usize) -> Self {
        BiasMlp {
            hidden: Linear::init(rng, 2, hidden),
            out: Linear::init(rng, hidden, heads),
        }
    }

    pub fn heads(&self) -> usize {
        self.out.bias.shape()[0]
    }

    /// `[U, 2]` offsets → `[U, heads]` biases.
    pub fn forward(&self, coords: &Var) -> Result<Var> {
        self.out.forward(&self.hidden.forward(coords)?.gelu())
    }
}

impl Module for BiasMlp {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Var)>) {
        self.hidden.visit(&join(prefix, "hidden"), out);
        self.out.visit(&join(prefix, "out"), out);
    }
    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Var)>) {
        self.hidden.visit_mut(&join(prefix, "hidden"), out);
        self.out.visit_mut(&join(prefix, "out"), out);
    }
}

/// All parameters of one transformer layer.
#[derive(Clone, Debug)]
pub struct SccLayerParams {
    pub cfg: LayerConfig,
    pub norm1: Norm,
    pub dfe: DfeParams,
    /// `[h↓·w↓, h·w]`, applied to each window's values along the token axis.
    pub s_linear: Var,
    pub bias_mlp: BiasMlp,
    /// `C/2 → C` projection of the summed correlations.
    pub proj: Linear,
    pub norm2: Norm,
    pub ffn_in: Linear,
    pub ffn_out: Linear,
}

impl SccLayerParams {
    pub fn init(cfg: LayerConfig, rng: &mut impl Rng) -> Result<Self> {
        cfg.validate()?;
        let c = cfg.channels;
        let hidden = c * cfg.ffn_ratio;
        Ok(SccLayerParams {
            norm1: Norm::new(c),
            dfe: DfeParams::init(rng, c, cfg.dfe_r, cfg.dfe_kernels),
            s_linear: Var::param(s_linear_init(cfg.window, cfg.downsampled)),
            bias_mlp: BiasMlp::init(rng, cfg.bias_hidden, cfg.heads),
            proj: Linear::init(rng, cfg.half(), c),
            norm2: Norm::new(c),
            ffn_in: Linear::init(rng, c, hidden),
            ffn_out: Linear::init(rng, hidden, c),
            cfg,
        })
    }

    /// Zero the projections that feed both residual branches, turning the
    /// layer into the identity.
    pub fn zero_output_projections(&mut self) {
        for lin in [&mut self.proj, &mut self.ffn_out] {
            lin.weight = Var::param(Tensor::zeros(lin.weight.shape()));
            lin.bias = Var::param(Tensor::zeros(lin.bias.shape()));
        }
    }
}

impl Module for SccLayerParams {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Var)>) {
        self.norm1.visit(&join(prefix, "norm1"), out);
        self.dfe.visit(&join(prefix, "dfe"), out);
        out.push((join(prefix, "s_linear"), &self.s_linear));
        self.bias_mlp.visit(&join(prefix, "bias_mlp"), out);
        self.proj.visit(&join(prefix, "proj"), out);
        self.norm2.visit(&join(prefix, "norm2"), out);
        self.ffn_in.visit(&join(prefix, "ffn_in"), out);
        self.ffn_out.visit(&join(prefix, "ffn_out"), out);
    }
    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Var)>) {
        self.norm1.visit_mut(&join(prefix, "norm1"), out);
        self.dfe.visit_mut(&join(prefix, "dfe"), out);
        out.push((join(prefix, "s_linear"), &mut self.s_linear));
        self.bias_mlp.visit_mut(&join(prefix, "bias_mlp"), out);
        self.proj.visit_mut(&join(prefix, "proj"), out);
        self.norm2.visit_mut(&join(prefix, "norm2"), out);
        self.ffn_in.visit_mut(&join(prefix, "ffn_in"), out);
        self.ffn_out.visit_mut(&join(prefix, "ffn_out"), out);
    }
}

/// Spatial summarizer initialization: identity for equal grids, otherwise
/// each output cell averages the window pixels it covers (area weights).
pub fn s_linear_init(window: (usize, usize), downsampled: (usize, usize)) -> Tensor {
    if window == downsampled {
        return Tensor::eye(window.0 * window.1);
    }
    let ay = area_weights(window.0, downsampled.0);
    let ax = area_weights(window.1, downsampled.1);
    let (h, w) = window;
    let (dh, dw) = downsampled;
    Tensor::from_fn(&[dh * dw, h * w], |i| {
        let (cell, px) = (i / (h * w), i % (h * w));
        ay[cell / dw][px / w] * ax[cell % dw][px % w]
    })
}

/// `cells × len` matrix: overlap of pixel `[p, p+1)` with cell `j`, divided by
/// the cell length, so every row sums to one.
fn area_weights(len: usize, cells: usize) -> Vec<Vec<f64>> {
    let size = len as f64 / cells as f64;
    (0..cells)
        .map(|j| {
            let (lo, hi) = (j as f64 * size, (j + 1) as f64 * size);
            (0..len)
                .map(|p| {
                    let overlap = (hi.min(p as f64 + 1.0) - lo.max(p as f64)).max(0.0);
                    overlap / size
                })
                .collect()
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Dual feature extraction

/// Returns `(Q, V)`, each `[H·W, C/2]`, from tokens `x` of shape `[H·W, C]`.
pub fn dfe_forward(x: &Var, p: &DfeParams, geom: (usize, usize)) -> Result<(Var, Var)> {
    let c = match *x.shape() {
        [n, c] if n == geom.0 * geom.1 => c,
        _ => {
            return Err(Error::shape(
                "dfe",
                format!("tokens {:?} do not match geometry {geom:?}", x.shape()),
            ))
        }
    };
    if c % 2 != 0 {
        return Err(Error::Config(format!("channel count {c} must be even")));
    }
    let x_ch = p.linear.forward(x)?;
    let img = tokens_to_image(x, geom)?;
    let s1 = p.convs[0].forward(&img)?.gelu();
    let s2 = p.convs[1].forward(&s1)?.gelu();
    let x_sp = image_to_tokens(&p.convs[2].forward(&s2)?)?;
    let fused = x_ch.mul(&x_sp)?;
    Ok((fused.slice_last(0, c / 2)?, fused.slice_last(c / 2, c / 2)?))
}

// ---------------------------------------------------------------------------
// Correlations

/// `V↓ᵀ = W · Vᵀ` per window: `[N, h·w, c]` → `[N, h↓·w↓, c]`.
pub fn s_linear_downsample(v: &Var, w: &Var) -> Result<Var> {
    if v.shape().len() != 3 || w.shape().len() != 2 || w.shape()[1] != v.shape()[1] {
        return Err(Error::mismatch("s_linear", w.shape(), v.shape()));
    }
    w.matmul(v)
}

fn split_heads(x: &Var, heads: usize) -> Result<Var> {
    let [n, t, c] = *x.shape() else {
        return Err(Error::shape("split_heads", format!("{:?}", x.shape())));
    };
    if heads == 0 || c % heads != 0 {
        return Err(Error::Config(format!("{heads} heads do not divide {c} channels")));
    }
    x.reshape(&[n, t, heads, c / heads])?.permute(&[0, 2, 1, 3])
}

fn join_heads(x: &Var) -> Result<Var> {
    let [n, heads, t, d] = *x.shape() else {
        return Err(Error::shape("join_heads", format!("{:?}", x.shape())));
    };
    x.permute(&[0, 2, 1, 3])?.reshape(&[n, t, heads * d])
}

/// Per-head correlation map `Q V↓ᵀ / D`, shape `[N, heads, h·w, h↓·w↓]`.
pub fn spatial_correlation(q: &Var, v_down: &Var, heads: usize, denom: f64) -> Result<Var> {
    let qh = split_heads(q, heads)?;
    let vh = split_heads(v_down, heads)?;
    Ok(qh.matmul(&vh.transpose()?)?.scale(1.0 / denom))
}

/// Spatial self-correlation `(Q V↓ᵀ / D + B) · V↓`, heads concatenated.
///
/// `q`: `[N, h·w, c]`, `v_down`: `[N, h↓·w↓, c]`, `bias`: `[heads, h·w, h↓·w↓]`.
pub fn s_sc(q: &Var, v_down: &Var, bias: &Var, heads: usize, denom: f64) -> Result<Var> {
    if q.shape().len() != 3 || v_down.shape().len() != 3 || q.shape()[0] != v_down.shape()[0] {
        return Err(Error::mismatch("s_sc", q.shape(), v_down.shape()));
    }
    let (hw, m) = (q.shape()[1], v_down.shape()[1]);
    if bias.shape() != [heads, hw, m] {
        return Err(Error::mismatch("s_sc bias", &[heads, hw, m], bias.shape()));
    }
    let corr = spatial_correlation(q, v_down, heads, denom)?.add(bias)?;
    join_heads(&corr.matmul(&split_heads(v_down, heads)?)?)
}

/// Channel self-correlation `((Qᵀ V) / D · Vᵀ)ᵀ` with one head spanning all
/// channels. `q`, `v`: `[N, h·w, c]`.
pub fn c_sc(q: &Var, v: &Var, denom: f64) -> Result<Var> {
    if q.shape() != v.shape() || q.shape().len() != 3 {
        return Err(Error::mismatch("c_sc", q.shape(), v.shape()));
    }
    let corr = q.transpose()?.matmul(v)?.scale(1.0 / denom);
    // (A · Vᵀ)ᵀ = V · Aᵀ
    v.matmul(&corr.transpose()?)
}

// ---------------------------------------------------------------------------
// Position bias

/// Unique per-axis offsets and the pair → offset lookup for one axis.
struct AxisOffsets {
    values: Vec<f64>,
    /// `[query][cell]` → index into `values`
    lookup: Vec<Vec<usize>>,
}

/// Offset between query pixel `q` and the center of value cell `j` when `cells`
/// cells tile `len` pixels, in pixel units. Computed from an exact integer
/// numerator over `2·cells`.
fn axis_offsets(len: usize, cells: usize) -> AxisOffsets {
    let numer = |q: usize, j: usize| -> i64 { 2 * (q * cells) as i64 - ((2 * j + 1) * len) as i64 + cells as i64 };
    let norm = (len.max(2) - 1) as f64 * 2.0 * cells as f64;
    let mut unique = BTreeMap::new();
    for q in 0..len {
        for j in 0..cells {
            unique.entry(numer(q, j)).or_insert(0usize);
        }
    }
    for (i, slot) in unique.values_mut().enumerate() {
        *slot = i;
    }
    let values = unique.keys().map(|&n| n as f64 / norm).collect();
    let lookup = (0..len)
        .map(|q| (0..cells).map(|j| unique[&numer(q, j)]).collect())
        .collect();
    AxisOffsets { values, lookup }
}

/// Normalized `(dy, dx)` offsets in `[-1, 1]` for every (query pixel, value
/// cell) pair, queries and cells both in raster order.
pub fn relative_offsets(window: (usize, usize), downsampled: (usize, usize)) -> Vec<[f64; 2]> {
    let (ay, ax) = (
        axis_offsets(window.0, downsampled.0),
        axis_offsets(window.1, downsampled.1),
    );
    let mut out = Vec::with_capacity(window.0 * window.1 * downsampled.0 * downsampled.1);
    for qy in 0..window.0 {
        for qx in 0..window.1 {
            for cy in 0..downsampled.0 {
                for cx in 0..downsampled.1 {
                    out.push([ay.values[ay.lookup[qy][cy]], ax.values[ax.lookup[qx][cx]]]);
                }
            }
        }
    }
    out
}

/// Number of distinct offsets the bias map is evaluated on.
pub fn unique_offset_count(window: (usize, usize), downsampled: (usize, usize)) -> usize {
    axis_offsets(window.0, downsampled.0).values.len() * axis_offsets(window.1, downsampled.1).values.len()
}

/// Bias `B` of shape `[heads, h·w, h↓·w↓]`: the value grid is spread
/// uniformly over the window, and each (query pixel, value cell-center)
/// offset, normalized to `[-1, 1]`, is mapped through the per-head MLP. The
/// MLP runs once per distinct offset.
pub fn position_bias(window: (usize, usize), downsampled: (usize, usize), mlp: &BiasMlp) -> Result<Var> {
    let (ay, ax) = (
        axis_offsets(window.0, downsampled.0),
        axis_offsets(window.1, downsampled.1),
    );
    let (ny, nx) = (ay.values.len(), ax.values.len());
    let mut coords = Vec::with_capacity(ny * nx * 2);
    for &dy in &ay.values {
        for &dx in &ax.values {
            coords.extend([dy, dx]);
        }
    }
    let table = mlp.forward(&Var::constant(Tensor::new(&[ny * nx, 2], coords)?))?;

    let heads = mlp.heads();
    let (hw, m) = (window.0 * window.1, downsampled.0 * downsampled.1);
    let mut index = Vec::with_capacity(heads * hw * m);
    for head in 0..heads {
        for qy in 0..window.0 {
            for qx in 0..window.1 {
                for cy in 0..downsampled.0 {
                    for cx in 0..downsampled.1 {
                        let u = ay.lookup[qy][cy] * nx + ax.lookup[qx][cx];
                        index.push(u * heads + head);
                    }
                }
            }
        }
    }
    let index: Rc<[usize]> = index.into();
    table.gather(index, &[heads, hw, m])
}

// ---------------------------------------------------------------------------
// Layer

/// The correlation branch: DFE, window partition, summed spatial and channel
/// correlations, merge, projection. `x` is the normalized `[H·W, C]` input.
pub fn scc_forward(x: &Var, p: &SccLayerParams, geom: (usize, usize)) -> Result<Var> {
    let cfg = &p.cfg;
    let (q, v) = dfe_forward(x, &p.dfe, geom)?;
    // windows that do not tile the map get a reflected margin that is cropped
    // again after merging
    let (q, rec) = pad_tokens(&q, geom, cfg.window)?;
    let (v, _) = pad_tokens(&v, geom, cfg.window)?;
    let padded = (rec.padded_height, rec.padded_width);

    let qw = partition_tokens(&q, padded, cfg.window)?;
    let vw = partition_tokens(&v, padded, cfg.window)?;
    let v_down = s_linear_downsample(&vw, &p.s_linear)?;
    let bias = position_bias(cfg.window, cfg.downsampled, &p.bias_mlp)?;
    let spatial = s_sc(&qw, &v_down, &bias, cfg.heads, cfg.spatial_denominator())?;
    let channel = c_sc(&qw, &vw, cfg.channel_denominator())?;

    let merged = merge_tokens(&spatial.add(&channel)?, padded, cfg.window)?;
    p.proj.forward(&crop_tokens(&merged, &rec)?)
}

/// One full transformer layer on tokens `[H·W, C]`.
pub fn layer_forward(x: &Var, p: &SccLayerParams, geom: (usize, usize)) -> Result<Var> {
    let y = x.add(&scc_forward(&p.norm1.forward(x)?, p, geom)?)?;
    let hidden = p.ffn_in.forward(&p.norm2.forward(&y)?)?.gelu();
    y.add(&p.ffn_out.forward(&hidden)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny_cfg(window: (usize, usize), downsampled: (usize, usize)) -> LayerConfig {
        LayerConfig {
            channels: 8,
            heads: 2,
            window,
            downsampled,
            dfe_r: 4,
            dfe_kernels: [1, 3, 1],
            ffn_ratio: 2,
            bias_hidden: 8,
            spatial_scale: SpatialScale::HalfChannels,
        }
    }

    fn c(shape: &[usize], data: &[f64]) -> Var {
        Var::constant(Tensor::new(shape, data.to_vec()).unwrap())
    }

    #[test]
    fn s_sc_scalar_case() {
        let out = s_sc(
            &c(&[1, 1, 1], &[2.0]),
            &c(&[1, 1, 1], &[3.0]),
            &c(&[1, 1, 1], &[0.0]),
            1,
            0.5,
        )
        .unwrap();
        assert_eq!(out.value().data(), &[36.0]);
    }

    #[test]
    fn c_sc_scalar_case() {
        let out = c_sc(&c(&[1, 1, 1], &[2.0]), &c(&[1, 1, 1], &[3.0]), 1.0).unwrap();
        assert_eq!(out.value().data(), &[18.0]);
    }

    #[test]
    fn zero_queries_give_zero() {
        let q = Var::constant(Tensor::zeros(&[2, 4, 6]));
        let v = Var::constant(Tensor::from_fn(&[2, 4, 6], |i| i as f64));
        let bias = Var::constant(Tensor::zeros(&[3, 4, 4]));
        assert!(s_sc(&q, &v, &bias, 3, 6.0)
            .unwrap()
            .value()
            .data()
            .iter()
            .all(|x| *x == 0.0));
        assert!(c_sc(&q, &v, 4.0).unwrap().value().data().iter().all(|x| *x == 0.0));
    }

    #[test]
    fn head_count_must_divide_channels() {
        let q = Var::constant(Tensor::zeros(&[1, 4, 6]));
        let bias = Var::constant(Tensor::zeros(&[4, 4, 4]));
        assert!(matches!(s_sc(&q, &q, &bias, 4, 6.0), Err(Error::Config(_))));
    }

    #[test]
    fn s_linear_identity_and_mean() {
        let v = Var::constant(Tensor::from_fn(&[3, 4, 2], |i| i as f64 * 0.5));
        let eye = Var::constant(s_linear_init((2, 2), (2, 2)));
        assert_eq!(s_linear_downsample(&v, &eye).unwrap().value(), v.value());

        let v2 = c(&[1, 2, 2], &[1.0, 4.0, 3.0, 8.0]);
        let avg = c(&[1, 2], &[0.5, 0.5]);
        assert_eq!(s_linear_downsample(&v2, &avg).unwrap().value().data(), &[2.0, 6.0]);
        assert!(s_linear_downsample(&v2, &c(&[1, 3], &[0.0; 3])).is_err());
    }

    #[test]
    fn s_linear_rectangular_init_pools_blocks() {
        let w = s_linear_init((4, 4), (2, 2));
        assert_eq!(w.shape(), &[4, 16]);
        // cell 0 covers pixels (0,0),(0,1),(1,0),(1,1)
        let row0: Vec<f64> = w.data()[..16].to_vec();
        for (px, &wt) in row0.iter().enumerate() {
            let inside = px / 4 < 2 && px % 4 < 2;
            assert_eq!(wt, if inside { 0.25 } else { 0.0 });
        }
        for r in 0..4 {
            let s: f64 = w.data()[r * 16..(r + 1) * 16].iter().sum();
            assert!((s - 1.0).abs() < 1e-15);
        }
        // non-integral factor still gives normalized rows
        let w = s_linear_init((12, 12), (8, 8));
        for r in 0..64 {
            let s: f64 = w.data()[r * 144..(r + 1) * 144].iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn bias_offsets_geometry() {
        assert_eq!(relative_offsets((1, 1), (1, 1)), vec![[0.0, 0.0]]);
        let offs = relative_offsets((2, 2), (1, 1));
        assert_eq!(offs, vec![[-0.5, -0.5], [-0.5, 0.5], [0.5, -0.5], [0.5, 0.5]]);
        // equal grids: offsets span exactly [-1, 1]
        let offs = relative_offsets((4, 4), (4, 4));
        let max = offs.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
        assert_eq!(max, 1.0);
        assert_eq!(unique_offset_count((4, 4), (4, 4)), 49);
    }

    #[test]
    fn zeroed_bias_mlp_gives_zero_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut mlp = BiasMlp::init(&mut rng, 8, 3);
        mlp.out.weight = Var::param(Tensor::zeros(&[8, 3]));
        let b = position_bias((4, 4), (2, 2), &mlp).unwrap();
        assert_eq!(b.shape(), &[3, 16, 4]);
        assert!(b.value().data().iter().all(|x| *x == 0.0));
    }

    #[test]
    fn bias_is_a_function_of_offset_only() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mlp = BiasMlp::init(&mut rng, 8, 2);
        let b = position_bias((4, 4), (4, 4), &mlp).unwrap();
        let d = b.value().data();
        // query (0,0) vs value (1,1) and query (2,2) vs value (3,3) share an offset
        let at = |h: usize, q: usize, v: usize| d[(h * 16 + q) * 16 + v];
        assert_eq!(at(1, 0, 5), at(1, 10, 15));
        assert_ne!(at(1, 0, 5), at(1, 5, 0));
    }

    #[test]
    fn dfe_with_silent_conv_branch_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut p = DfeParams::init(&mut rng, 8, 4, [1, 3, 1]);
        p.convs[2].weight = Var::param(Tensor::zeros(p.convs[2].weight.shape()));
        let x = Var::constant(Tensor::from_fn(&[16, 8], |i| (i as f64).cos()));
        let (q, v) = dfe_forward(&x, &p, (4, 4)).unwrap();
        assert_eq!(q.shape(), &[16, 4]);
        assert!(q.value().data().iter().chain(v.value().data()).all(|x| *x == 0.0));
    }

    #[test]
    fn dfe_with_unit_conv_branch_returns_channel_branch() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut p = DfeParams::init(&mut rng, 8, 4, [1, 3, 1]);
        p.linear.weight = Var::param(Tensor::eye(8));
        p.convs[2].weight = Var::param(Tensor::zeros(p.convs[2].weight.shape()));
        p.convs[2].bias = Var::param(Tensor::full(&[8], 1.0));
        let x = Var::constant(Tensor::from_fn(&[16, 8], |i| (i as f64 * 0.37).sin()));
        let (q, v) = dfe_forward(&x, &p, (4, 4)).unwrap();
        assert_eq!(q.value(), x.slice_last(0, 4).unwrap().value());
        assert_eq!(v.value(), x.slice_last(4, 4).unwrap().value());
        assert!(dfe_forward(&x, &p, (4, 5)).is_err());
    }

    #[test]
    fn odd_channels_rejected() {
        let mut cfg = tiny_cfg((4, 4), (4, 4));
        cfg.channels = 7;
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        let mut cfg = tiny_cfg((4, 4), (4, 4));
        cfg.heads = 3;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn zeroed_projections_make_identity_layer() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut p = SccLayerParams::init(tiny_cfg((4, 4), (4, 4)), &mut rng).unwrap();
        p.zero_output_projections();
        let x = Var::constant(Tensor::from_fn(&[64, 8], |i| (i as f64 * 0.1).sin()));
        let y = layer_forward(&x, &p, (8, 8)).unwrap();
        assert_eq!(y.value(), x.value());
    }

    #[test]
    fn layer_preserves_shape_with_internal_padding() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        // 6x6 windows on an 8x8 map need an internal reflected margin
        let p = SccLayerParams::init(tiny_cfg((6, 6), (4, 4)), &mut rng).unwrap();
        let x = Var::constant(Tensor::from_fn(&[64, 8], |i| (i as f64 * 0.1).cos()));
        assert_eq!(layer_forward(&x, &p, (8, 8)).unwrap().shape(), &[64, 8]);
    }
}
