//! 8-bit RGB images, PNG I/O and bicubic resampling.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Row-major interleaved RGB.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ImageBuffer {
    width: usize,
    height: usize,
    rgb: Vec<u8>,
}

impl ImageBuffer {
    pub fn new(width: usize, height: usize, rgb: Vec<u8>) -> Result<Self> {
        if rgb.len() != 3 * width * height {
            return Err(Error::shape(
                "image",
                format!("{} bytes for a {width}x{height} RGB image", rgb.len()),
            ));
        }
        Ok(ImageBuffer { width, height, rgb })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [u8; 3]) -> Self {
        let mut rgb = Vec::with_capacity(3 * width * height);
        for y in 0..height {
            for x in 0..width {
                rgb.extend(f(x, y));
            }
        }
        ImageBuffer { width, height, rgb }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn rgb(&self) -> &[u8] {
        &self.rgb
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = 3 * (y * self.width + x);
        [self.rgb[i], self.rgb[i + 1], self.rgb[i + 2]]
    }

    /// Reads any PNG and converts it to 8-bit RGB.
    pub fn load_png(path: impl AsRef<Path>) -> Result<Self> {
        let img = ::image::open(path)?.into_rgb8();
        let (w, h) = img.dimensions();
        Self::new(w as usize, h as usize, img.into_raw())
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let w = u32::try_from(self.width).map_err(|_| Error::Config("image too wide".into()))?;
        let h = u32::try_from(self.height).map_err(|_| Error::Config("image too tall".into()))?;
        ::image::save_buffer_with_format(
            path,
            &self.rgb,
            w,
            h,
            ::image::ExtendedColorType::Rgb8,
            ::image::ImageFormat::Png,
        )?;
        Ok(())
    }

    /// `[3, H, W]` with values in `[0, 1]`.
    pub fn to_tensor(&self) -> Tensor {
        let (w, h) = (self.width, self.height);
        Tensor::from_fn(&[3, h, w], |i| {
            let (c, p) = (i / (h * w), i % (h * w));
            self.rgb[3 * p + c] as f64 / 255.0
        })
    }

    /// Inverse of [`to_tensor`](Self::to_tensor), rounding and clamping.
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let [3, h, w] = *t.shape() else {
            return Err(Error::shape(
                "image",
                format!("expected [3, H, W], got {:?}", t.shape()),
            ));
        };
        let d = t.data();
        let mut rgb = Vec::with_capacity(3 * h * w);
        for p in 0..h * w {
            for c in 0..3 {
                rgb.push(to_u8(d[c * h * w + p] * 255.0));
            }
        }
        Self::new(w, h, rgb)
    }
}

pub(crate) fn to_u8(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

/// Round every value to the nearest 8-bit level (values in `[0, 1]`).
pub fn quantize(t: &Tensor) -> Tensor {
    t.map(|v| to_u8(v * 255.0) as f64 / 255.0)
}

fn cubic(x: f64) -> f64 {
    const A: f64 = -0.5;
    let t = x.abs();
    if t <= 1.0 {
        ((A + 2.0) * t - (A + 3.0)) * t * t + 1.0
    } else if t < 2.0 {
        ((A * t - 5.0 * A) * t + 8.0 * A) * t - 4.0 * A
    } else {
        0.0
    }
}

/// Normalized `(source, weight)` taps for each output coordinate of one
/// axis. Half-pixel centers, clamped borders; shrinking widens the kernel.
fn axis_taps(in_len: usize, out_len: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = out_len as f64 / in_len as f64;
    let stretch = scale.min(1.0);
    let reach = 2.0 / stretch;
    (0..out_len)
        .map(|o| {
            let center = (o as f64 + 0.5) / scale - 0.5;
            let lo = (center - reach).floor() as isize;
            let hi = (center + reach).ceil() as isize;
            let mut taps: Vec<(usize, f64)> = (lo..=hi)
                .map(|j| {
                    let src = j.clamp(0, in_len as isize - 1) as usize;
                    (src, cubic((center - j as f64) * stretch))
                })
                .filter(|&(_, wt)| wt != 0.0)
                .collect();
            let total: f64 = taps.iter().map(|t| t.1).sum();
            for t in &mut taps {
                t.1 /= total;
            }
            taps
        })
        .collect()
}

/// Dense `[out_len, in_len]` bicubic resampling matrix for one axis.
pub fn resample_matrix(in_len: usize, out_len: usize) -> Tensor {
    let mut m = Tensor::zeros(&[out_len, in_len]);
    for (o, taps) in axis_taps(in_len, out_len).into_iter().enumerate() {
        for (s, wt) in taps {
            m.data_mut()[o * in_len + s] += wt;
        }
    }
    m
}

/// Separable bicubic resize of a stack of planes `[C, H, W]`.
pub fn resize_tensor(x: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let [c, h, w] = *x.shape() else {
        return Err(Error::shape(
            "resize",
            format!("expected [C, H, W], got {:?}", x.shape()),
        ));
    };
    if out_h == 0 || out_w == 0 || h == 0 || w == 0 {
        return Err(Error::Config(format!("cannot resize {h}x{w} to {out_h}x{out_w}")));
    }
    let (ty, tx) = (axis_taps(h, out_h), axis_taps(w, out_w));
    let src = x.data();
    let mut rows = vec![0.0; c * h * out_w];
    for ch in 0..c {
        for y in 0..h {
            let line = &src[(ch * h + y) * w..(ch * h + y + 1) * w];
            for (ox, taps) in tx.iter().enumerate() {
                rows[(ch * h + y) * out_w + ox] = taps.iter().map(|&(s, wt)| wt * line[s]).sum();
            }
        }
    }
    let mut out = vec![0.0; c * out_h * out_w];
    for ch in 0..c {
        for (oy, taps) in ty.iter().enumerate() {
            let dst = &mut out[(ch * out_h + oy) * out_w..(ch * out_h + oy + 1) * out_w];
            for &(s, wt) in taps {
                let row = &rows[(ch * h + s) * out_w..(ch * h + s + 1) * out_w];
                for (d, r) in dst.iter_mut().zip(row) {
                    *d += wt * r;
                }
            }
        }
    }
    Tensor::new(&[c, out_h, out_w], out)
}

/// Resize to exact dimensions, rounding back to 8 bits.
pub fn bicubic_resize_to(img: &ImageBuffer, out_w: usize, out_h: usize) -> Result<ImageBuffer> {
    ImageBuffer::from_tensor(&resize_tensor(&img.to_tensor(), out_h, out_w)?)
}

/// Resize by a positive factor; output sides are `round(side · scale)`.
pub fn bicubic_resize(img: &ImageBuffer, scale: f64) -> Result<ImageBuffer> {
    if !(scale.is_finite() && scale > 0.0) {
        return Err(Error::Config(format!("scale {scale} must be positive")));
    }
    let out_w = (img.width as f64 * scale).round() as usize;
    let out_h = (img.height as f64 * scale).round() as usize;
    bicubic_resize_to(img, out_w, out_h)
}

/// BT.601 studio-range luma in `[16, 235]` as a `[H, W]` plane.
pub fn rgb_to_y(img: &ImageBuffer) -> Tensor {
    Tensor::from_fn(&[img.height, img.width], |p| {
        luma(
            img.rgb[3 * p] as f64 / 255.0,
            img.rgb[3 * p + 1] as f64 / 255.0,
            img.rgb[3 * p + 2] as f64 / 255.0,
        )
    })
}

/// Luma of a `[3, H, W]` tensor with values in `[0, 1]`.
pub fn tensor_to_y(t: &Tensor) -> Result<Tensor> {
    let [3, h, w] = *t.shape() else {
        return Err(Error::shape("luma", format!("expected [3, H, W], got {:?}", t.shape())));
    };
    let d = t.data();
    let n = h * w;
    Ok(Tensor::from_fn(&[h, w], |p| luma(d[p], d[n + p], d[2 * n + p])))
}

fn luma(r: f64, g: f64, b: f64) -> f64 {
    16.0 + 65.481 * r + 128.553 * g + 24.966 * b
}
