//! Hierarchical window schedules and lossless window partition/merge.
//!
//! Feature maps appear in two layouts: image layout `[C, H, W]` and token
//! layout `[H·W, C]` (raster order, channels last). Windows are numbered in
//! raster order and flattened row-major, giving `[N, h·w, C]`. Every
//! rearrangement here is a pure index permutation, so partition and merge are
//! exact inverses and are differentiable through [`Var::gather`].

use std::rc::Rc;

use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Per-layer window sizes `h_i = α_i·h_B`, `w_i = α_i·w_B`.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowSchedule {
    base: (usize, usize),
    ratios: Vec<f64>,
    windows: Vec<(usize, usize)>,
}

fn scaled(ratio: f64, base: usize) -> Option<usize> {
    let v = ratio * base as f64;
    let r = v.round();
    ((v - r).abs() < 1e-9 && r >= 1.0).then_some(r as usize)
}

impl WindowSchedule {
    pub fn from_ratios(base: (usize, usize), ratios: &[f64]) -> Result<Self> {
        if base.0 == 0 || base.1 == 0 {
            return Err(Error::Config(format!("base window {base:?} must be positive")));
        }
        let mut windows = Vec::with_capacity(ratios.len());
        for &ratio in ratios {
            if !(ratio.is_finite() && ratio > 0.0) {
                return Err(Error::Config(format!("hierarchical ratio {ratio} must be positive")));
            }
            match (scaled(ratio, base.0), scaled(ratio, base.1)) {
                (Some(h), Some(w)) => windows.push((h, w)),
                _ => {
                    return Err(Error::Config(format!(
                        "hierarchical ratio {ratio} gives a non-integral window {}x{} for base {}x{}",
                        ratio * base.0 as f64,
                        ratio * base.1 as f64,
                        base.0,
                        base.1
                    )))
                }
            }
        }
        Ok(WindowSchedule {
            base,
            ratios: ratios.to_vec(),
            windows,
        })
    }

    pub fn base(&self) -> (usize, usize) {
        self.base
    }

    pub fn ratios(&self) -> &[f64] {
        &self.ratios
    }

    pub fn windows(&self) -> &[(usize, usize)] {
        &self.windows
    }

    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    /// Value-grid size after spatial summarization: the window itself when
    /// `α ≤ 1`, otherwise the base window.
    pub fn downsampled(&self, layer: usize) -> (usize, usize) {
        if self.ratios[layer] <= 1.0 {
            self.windows[layer]
        } else {
            self.base
        }
    }

    /// Largest window height and width; inputs are padded to multiples of it.
    pub fn max_window(&self) -> (usize, usize) {
        self.windows
            .iter()
            .fold((1, 1), |(h, w), &(wh, ww)| (h.max(wh), w.max(ww)))
    }
}

/// Shorthand for [`WindowSchedule::from_ratios`].
pub fn schedule_from_ratios(base: (usize, usize), ratios: &[f64]) -> Result<WindowSchedule> {
    WindowSchedule::from_ratios(base, ratios)
}

// ---------------------------------------------------------------------------
// Padding

/// Enough to crop a padded map back to its original extent.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PadRecord {
    pub height: usize,
    pub width: usize,
    pub padded_height: usize,
    pub padded_width: usize,
}

impl PadRecord {
    pub fn new(height: usize, width: usize, mult_h: usize, mult_w: usize) -> Self {
        PadRecord {
            height,
            width,
            padded_height: height.div_ceil(mult_h) * mult_h,
            padded_width: width.div_ceil(mult_w) * mult_w,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.height == self.padded_height && self.width == self.padded_width
    }
}

/// Mirror index without edge repetition, periodic for pads wider than the
/// input (`n = 4`: 0 1 2 3 2 1 0 1 2 ...).
pub fn reflect(i: usize, n: usize) -> usize {
    if n <= 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let r = i % period;
    if r < n {
        r
    } else {
        period - r
    }
}

fn pad_image_index(c: usize, rec: &PadRecord) -> Vec<usize> {
    let (h, w) = (rec.height, rec.width);
    let mut idx = Vec::with_capacity(c * rec.padded_height * rec.padded_width);
    for ch in 0..c {
        for y in 0..rec.padded_height {
            let sy = reflect(y, h);
            for x in 0..rec.padded_width {
                idx.push((ch * h + sy) * w + reflect(x, w));
            }
        }
    }
    idx
}

fn crop_image_index(c: usize, rec: &PadRecord) -> Vec<usize> {
    let (ph, pw) = (rec.padded_height, rec.padded_width);
    let mut idx = Vec::with_capacity(c * rec.height * rec.width);
    for ch in 0..c {
        for y in 0..rec.height {
            for x in 0..rec.width {
                idx.push((ch * ph + y) * pw + x);
            }
        }
    }
    idx
}

fn pad_token_index(c: usize, rec: &PadRecord) -> Vec<usize> {
    let (h, w) = (rec.height, rec.width);
    let mut idx = Vec::with_capacity(c * rec.padded_height * rec.padded_width);
    for y in 0..rec.padded_height {
        let sy = reflect(y, h);
        for x in 0..rec.padded_width {
            let base = (sy * w + reflect(x, w)) * c;
            idx.extend(base..base + c);
        }
    }
    idx
}

fn crop_token_index(c: usize, rec: &PadRecord) -> Vec<usize> {
    let mut idx = Vec::with_capacity(c * rec.height * rec.width);
    for y in 0..rec.height {
        for x in 0..rec.width {
            let base = (y * rec.padded_width + x) * c;
            idx.extend(base..base + c);
        }
    }
    idx
}

fn image_dims(shape: &[usize], op: &'static str) -> Result<(usize, usize, usize)> {
    match *shape {
        [c, h, w] if h > 0 && w > 0 => Ok((c, h, w)),
        _ => Err(Error::shape(op, format!("expected [C, H, W], got {shape:?}"))),
    }
}

/// Reflect-pad `[C, H, W]` on the bottom and right up to multiples of
/// `(h, w)`.
pub fn pad_to_multiple(x: &Tensor, h: usize, w: usize) -> Result<(Tensor, PadRecord)> {
    let (v, rec) = pad_var(&Var::constant(x.clone()), h, w)?;
    Ok((v.value().clone(), rec))
}

/// Undo [`pad_to_multiple`].
pub fn crop(x: &Tensor, rec: &PadRecord) -> Result<Tensor> {
    Ok(crop_var(&Var::constant(x.clone()), rec)?.value().clone())
}

pub fn pad_var(x: &Var, h: usize, w: usize) -> Result<(Var, PadRecord)> {
    if h == 0 || w == 0 {
        return Err(Error::Config(format!("pad multiple {h}x{w} must be positive")));
    }
    let (c, ih, iw) = image_dims(x.shape(), "pad")?;
    let rec = PadRecord::new(ih, iw, h, w);
    if rec.is_empty() {
        return Ok((x.clone(), rec));
    }
    let padded = x.gather(
        pad_image_index(c, &rec).into(),
        &[c, rec.padded_height, rec.padded_width],
    )?;
    Ok((padded, rec))
}

pub fn crop_var(x: &Var, rec: &PadRecord) -> Result<Var> {
    let (c, h, w) = image_dims(x.shape(), "crop")?;
    if (h, w) != (rec.padded_height, rec.padded_width) {
        return Err(Error::shape(
            "crop",
            format!(
                "map is {h}x{w}, record expects {}x{}",
                rec.padded_height, rec.padded_width
            ),
        ));
    }
    if rec.is_empty() {
        return Ok(x.clone());
    }
    x.gather(crop_image_index(c, rec).into(), &[c, rec.height, rec.width])
}

/// Reflect-pad a token map `[H·W, C]` of geometry `geom` to multiples of
/// `window`.
pub fn pad_tokens(x: &Var, geom: (usize, usize), window: (usize, usize)) -> Result<(Var, PadRecord)> {
    let c = token_channels(x, geom, "pad_tokens")?;
    let rec = PadRecord::new(geom.0, geom.1, window.0, window.1);
    if rec.is_empty() {
        return Ok((x.clone(), rec));
    }
    let padded = x.gather(
        pad_token_index(c, &rec).into(),
        &[rec.padded_height * rec.padded_width, c],
    )?;
    Ok((padded, rec))
}

pub fn crop_tokens(x: &Var, rec: &PadRecord) -> Result<Var> {
    let c = token_channels(x, (rec.padded_height, rec.padded_width), "crop_tokens")?;
    if rec.is_empty() {
        return Ok(x.clone());
    }
    x.gather(crop_token_index(c, rec).into(), &[rec.height * rec.width, c])
}

fn token_channels(x: &Var, geom: (usize, usize), op: &'static str) -> Result<usize> {
    match *x.shape() {
        [n, c] if n == geom.0 * geom.1 => Ok(c),
        _ => Err(Error::shape(
            op,
            format!("expected [{}, C] tokens, got {:?}", geom.0 * geom.1, x.shape()),
        )),
    }
}

// ---------------------------------------------------------------------------
// Partition / merge

fn check_divisible(geom: (usize, usize), window: (usize, usize), op: &'static str) -> Result<()> {
    if window.0 == 0 || window.1 == 0 || !geom.0.is_multiple_of(window.0) || !geom.1.is_multiple_of(window.1) {
        return Err(Error::shape(
            op,
            format!(
                "{}x{} map is not divisible into {}x{} windows",
                geom.0, geom.1, window.0, window.1
            ),
        ));
    }
    Ok(())
}

/// Source index in token layout for each element of the partitioned
/// `[N, h·w, C]` tensor.
fn partition_token_index(c: usize, geom: (usize, usize), window: (usize, usize)) -> Vec<usize> {
    let (height, width) = geom;
    let (wh, ww) = window;
    let mut idx = Vec::with_capacity(height * width * c);
    for wy in 0..height / wh {
        for wx in 0..width / ww {
            for ty in 0..wh {
                for tx in 0..ww {
                    let base = ((wy * wh + ty) * width + wx * ww + tx) * c;
                    idx.extend(base..base + c);
                }
            }
        }
    }
    idx
}

fn invert(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (dst, &src) in perm.iter().enumerate() {
        inv[src] = dst;
    }
    inv
}

/// `[H·W, C]` tokens → `[N, h·w, C]` windows.
pub fn partition_tokens(x: &Var, geom: (usize, usize), window: (usize, usize)) -> Result<Var> {
    let c = token_channels(x, geom, "partition")?;
    check_divisible(geom, window, "partition")?;
    let n = (geom.0 / window.0) * (geom.1 / window.1);
    let idx: Rc<[usize]> = partition_token_index(c, geom, window).into();
    x.gather(idx, &[n, window.0 * window.1, c])
}

/// Inverse of [`partition_tokens`].
pub fn merge_tokens(wins: &Var, geom: (usize, usize), window: (usize, usize)) -> Result<Var> {
    check_divisible(geom, window, "merge")?;
    let n = (geom.0 / window.0) * (geom.1 / window.1);
    let c = match *wins.shape() {
        [wn, hw, c] if wn == n && hw == window.0 * window.1 => c,
        _ => {
            return Err(Error::shape(
                "merge",
                format!(
                    "expected [{n}, {}, C] windows, got {:?}",
                    window.0 * window.1,
                    wins.shape()
                ),
            ))
        }
    };
    let idx: Rc<[usize]> = invert(&partition_token_index(c, geom, window)).into();
    wins.gather(idx, &[geom.0 * geom.1, c])
}

/// `[C, H, W]` ↔ `[H·W, C]`.
pub fn image_to_tokens(x: &Var) -> Result<Var> {
    let (c, h, w) = image_dims(x.shape(), "image_to_tokens")?;
    x.reshape(&[c, h * w])?.transpose()
}

pub fn tokens_to_image(x: &Var, geom: (usize, usize)) -> Result<Var> {
    let c = token_channels(x, geom, "tokens_to_image")?;
    x.transpose()?.reshape(&[c, geom.0, geom.1])
}

/// `[C, H, W]` → `[N, h·w, C]` with windows in raster order.
pub fn partition(x: &Tensor, h: usize, w: usize) -> Result<Tensor> {
    let (_, ih, iw) = image_dims(x.shape(), "partition")?;
    check_divisible((ih, iw), (h, w), "partition")?;
    let tokens = image_to_tokens(&Var::constant(x.clone()))?;
    Ok(partition_tokens(&tokens, (ih, iw), (h, w))?.value().clone())
}

/// `[N, h·w, C]` → `[C, H, W]`, the inverse of [`partition`].
pub fn merge(wins: &Tensor, window: (usize, usize), height: usize, width: usize) -> Result<Tensor> {
    let tokens = merge_tokens(&Var::constant(wins.clone()), (height, width), window)?;
    Ok(tokens_to_image(&tokens, (height, width))?.value().clone())
}
