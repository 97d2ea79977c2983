//! Procedural training images and their bicubic degradations.

use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::image::{quantize, resize_tensor, ImageBuffer};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Pattern {
    Checkerboard,
    Grating,
    Polygons,
}

impl Pattern {
    pub const ALL: [Pattern; 3] = [Pattern::Checkerboard, Pattern::Grating, Pattern::Polygons];
}

fn random_color(rng: &mut impl Rng) -> [f64; 3] {
    [rng.random(), rng.random(), rng.random()]
}

/// Smallest per-channel spread between two colors of one patch.
const MIN_CONTRAST: f64 = 0.25;

/// A color differing from `other` by at least [`MIN_CONTRAST`] in some channel.
fn contrasting_color(rng: &mut impl Rng, other: [f64; 3]) -> [f64; 3] {
    loop {
        let c = random_color(rng);
        if c.iter().zip(other).any(|(a, b)| (a - b).abs() >= MIN_CONTRAST) {
            return c;
        }
    }
}

/// Subsamples per pixel side; edges are area-averaged like a camera sensor.
const SUPERSAMPLE: usize = 4;

fn paint(size: usize, mut f: impl FnMut(f64, f64) -> [f64; 3]) -> Tensor {
    let n = size * size;
    let k = SUPERSAMPLE;
    let weight = 1.0 / (k * k) as f64;
    let mut data = vec![0.0; 3 * n];
    for y in 0..size {
        for x in 0..size {
            for sy in 0..k {
                for sx in 0..k {
                    let px = x as f64 + (sx as f64 + 0.5) / k as f64;
                    let py = y as f64 + (sy as f64 + 0.5) / k as f64;
                    for (ch, v) in f(px, py).into_iter().enumerate() {
                        data[ch * n + y * size + x] += weight * v;
                    }
                }
            }
        }
    }
    Tensor::new(&[3, size, size], data).expect("consistent shape")
}

/// Rotated two-color checkerboard.
fn checkerboard(rng: &mut impl Rng, size: usize) -> Tensor {
    let a = random_color(rng);
    let b = contrasting_color(rng, a);
    let cell = rng.random_range(2.0..(size as f64 / 4.0).max(3.0));
    let theta: f64 = rng.random_range(0.0..std::f64::consts::PI);
    let (s, c) = theta.sin_cos();
    let (ox, oy): (f64, f64) = (rng.random_range(0.0..cell), rng.random_range(0.0..cell));
    paint(size, |x, y| {
        let u = ((x * c + y * s + ox) / cell).floor() as i64;
        let v = ((-x * s + y * c + oy) / cell).floor() as i64;
        if (u + v).rem_euclid(2) == 0 {
            a
        } else {
            b
        }
    })
}

/// Oriented sine or square wave blending two colors.
fn grating(rng: &mut impl Rng, size: usize) -> Tensor {
    let a = random_color(rng);
    let b = contrasting_color(rng, a);
    let square = rng.random_bool(0.5);
    // sines longer than this are reproduced by any interpolator
    let longest = if square { size as f64 / 2.0 } else { 8.0 };
    let period = rng.random_range(4.0..longest.max(4.5));
    let theta: f64 = rng.random_range(0.0..std::f64::consts::PI);
    let phase: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let (s, c) = theta.sin_cos();
    paint(size, |x, y| {
        let wave = ((x * c + y * s) * std::f64::consts::TAU / period + phase).sin();
        let t = if square {
            (wave >= 0.0) as u8 as f64
        } else {
            0.5 + 0.5 * wave
        };
        [0, 1, 2].map(|i| a[i] * t + b[i] * (1.0 - t))
    })
}

fn inside_convex(poly: &[(f64, f64)], x: f64, y: f64) -> bool {
    let mut sign = 0.0;
    for i in 0..poly.len() {
        let (x0, y0) = poly[i];
        let (x1, y1) = poly[(i + 1) % poly.len()];
        let cross = (x1 - x0) * (y - y0) - (y1 - y0) * (x - x0);
        if cross != 0.0 {
            if sign == 0.0 {
                sign = cross.signum();
            } else if cross.signum() != sign {
                return false;
            }
        }
    }
    true
}

/// Fill color and vertices in angular order.
type Polygon = ([f64; 3], Vec<(f64, f64)>);

/// Random convex polygons over a flat background.
fn polygons(rng: &mut impl Rng, size: usize) -> Tensor {
    let bg = random_color(rng);
    let count = rng.random_range(2..=5);
    let side = size as f64;
    let shapes: Vec<Polygon> = (0..count)
        .map(|_| {
            let (cx, cy) = (rng.random_range(0.0..side), rng.random_range(0.0..side));
            let r = rng.random_range(side / 8.0..side / 2.0);
            let k = rng.random_range(3..=7);
            let mut angles: Vec<f64> = (0..k).map(|_| rng.random_range(0.0..std::f64::consts::TAU)).collect();
            angles.sort_by(f64::total_cmp);
            let pts = angles.iter().map(|a| (cx + r * a.cos(), cy + r * a.sin())).collect();
            (contrasting_color(rng, bg), pts)
        })
        .collect();
    paint(size, |x, y| {
        shapes
            .iter()
            .rev()
            .find(|(_, p)| inside_convex(p, x, y))
            .map_or(bg, |(c, _)| *c)
    })
}

/// One `[3, size, size]` patch in `[0, 1]`, rounded to 8-bit levels.
pub fn synth_patch(rng: &mut impl Rng, pattern: Pattern, size: usize) -> Tensor {
    let t = match pattern {
        Pattern::Checkerboard => checkerboard(rng, size),
        Pattern::Grating => grating(rng, size),
        Pattern::Polygons => polygons(rng, size),
    };
    quantize(&t)
}

pub fn random_patch(rng: &mut impl Rng, size: usize) -> Tensor {
    let p = Pattern::ALL[rng.random_range(0..Pattern::ALL.len())];
    synth_patch(rng, p, size)
}

/// Bicubic downscale by `scale`, rounded to 8-bit levels.
pub fn degrade(hr: &Tensor, scale: usize) -> Result<Tensor> {
    let (h, w) = (hr.shape()[1], hr.shape()[2]);
    Ok(quantize(&resize_tensor(hr, h / scale, w / scale)?))
}

/// Counter-clockwise quarter turns of a square-or-not `[C, H, W]` tensor.
pub fn rot90(x: &Tensor, turns: usize) -> Tensor {
    let mut out = x.clone();
    for _ in 0..turns % 4 {
        let [c, h, w] = *out.shape() else {
            unreachable!("rank 3")
        };
        let d = out.data();
        // new[y][x] = old[x][w-1-y], new shape [c, w, h]
        out = Tensor::from_fn(&[c, w, h], |i| {
            let (ch, p) = (i / (w * h), i % (w * h));
            let (y, x) = (p / h, p % h);
            d[(ch * h + x) * w + (w - 1 - y)]
        });
    }
    out
}

pub fn hflip(x: &Tensor) -> Tensor {
    let [_, _, w] = *x.shape() else { unreachable!("rank 3") };
    let d = x.data();
    Tensor::from_fn(x.shape(), |i| {
        let col = i % w;
        d[i - col + (w - 1 - col)]
    })
}

/// With probability ½ rotate by 90°, 180° or 270° (uniform); independently
/// with probability ½ flip horizontally.
pub fn augment(rng: &mut impl Rng, x: &Tensor) -> Tensor {
    let mut out = x.clone();
    if rng.random_bool(0.5) {
        out = rot90(&out, rng.random_range(1..=3));
    }
    if rng.random_bool(0.5) {
        out = hflip(&out);
    }
    out
}

/// Where high-resolution training patches come from.
#[derive(Clone, Debug, Default)]
pub enum PatchSource {
    #[default]
    Synthetic,
    /// Random crops of decoded images, each `[3, H, W]`.
    Images(Vec<Tensor>),
}

impl PatchSource {
    /// Every `.png` in `dir`, in file-name order.
    pub fn from_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let mut paths: Vec<_> = std::fs::read_dir(dir.as_ref())?
            .map(|e| e.map(|e| e.path()))
            .collect::<std::io::Result<_>>()?;
        paths.retain(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")));
        paths.sort();
        if paths.is_empty() {
            return Err(Error::Config(format!("no PNG files in {}", dir.as_ref().display())));
        }
        let images = paths
            .iter()
            .map(|p| ImageBuffer::load_png(p).map(|img| img.to_tensor()))
            .collect::<Result<_>>()?;
        Ok(PatchSource::Images(images))
    }

    /// One `[3, size, size]` patch.
    pub fn draw(&self, rng: &mut impl Rng, size: usize) -> Result<Tensor> {
        let PatchSource::Images(images) = self else {
            return Ok(random_patch(rng, size));
        };
        let fits: Vec<&Tensor> = images
            .iter()
            .filter(|t| t.shape()[1] >= size && t.shape()[2] >= size)
            .collect();
        if fits.is_empty() {
            return Err(Error::Config(format!("no training image is at least {size}x{size}")));
        }
        let img = fits[rng.random_range(0..fits.len())];
        let (h, w) = (img.shape()[1], img.shape()[2]);
        let (y0, x0) = (rng.random_range(0..=h - size), rng.random_range(0..=w - size));
        let d = img.data();
        Ok(Tensor::from_fn(&[3, size, size], |i| {
            let (c, p) = (i / (size * size), i % (size * size));
            d[(c * h + y0 + p / size) * w + x0 + p % size]
        }))
    }

    /// HR patch of `lr_size · scale` pixels and its degraded LR counterpart.
    pub fn pair(&self, rng: &mut impl Rng, lr_size: usize, scale: usize, augmented: bool) -> Result<(Tensor, Tensor)> {
        let mut hr = self.draw(rng, lr_size * scale)?;
        if augmented {
            hr = augment(rng, &hr);
        }
        let lr = degrade(&hr, scale)?;
        Ok((lr, hr))
    }
}

/// Synthetic HR patch of `lr_size · scale` pixels and its degraded LR
/// counterpart.
pub fn training_pair(rng: &mut impl Rng, lr_size: usize, scale: usize, augmented: bool) -> Result<(Tensor, Tensor)> {
    PatchSource::Synthetic.pair(rng, lr_size, scale, augmented)
}
