//! Reference image metrics and resampling.
//!
//! Planes are `Matrix` values indexed `[row][col]`.

use crate::Matrix;

pub fn naive_rgb_to_y(r: u8, g: u8, b: u8) -> f64 {
    16.0 + (65.481 * r as f64 + 128.553 * g as f64 + 24.966 * b as f64) / 255.0
}

/// PSNR against a peak of 255 after removing `shave` pixels from every border.
pub fn naive_psnr(a: &Matrix, b: &Matrix, shave: usize) -> f64 {
    let h = a.len();
    let w = a[0].len();
    let mut sum = 0.0;
    let mut count = 0usize;
    for y in shave..h - shave {
        for x in shave..w - shave {
            let d = a[y][x] - b[y][x];
            sum += d * d;
            count += 1;
        }
    }
    let mse = sum / count as f64;
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (255.0 * 255.0 / mse).log10()
    }
}

/// Mean SSIM over every fully contained 11×11 Gaussian (σ = 1.5) window.
pub fn naive_ssim(a: &Matrix, b: &Matrix) -> f64 {
    const SIZE: usize = 11;
    let sigma = 1.5f64;
    let c1 = (0.01f64 * 255.0).powi(2);
    let c2 = (0.03f64 * 255.0).powi(2);

    let mut kernel = [[0.0f64; SIZE]; SIZE];
    let mut total = 0.0;
    for (dy, row) in kernel.iter_mut().enumerate() {
        for (dx, k) in row.iter_mut().enumerate() {
            let oy = dy as f64 - 5.0;
            let ox = dx as f64 - 5.0;
            *k = (-(oy * oy + ox * ox) / (2.0 * sigma * sigma)).exp();
            total += *k;
        }
    }

    let h = a.len();
    let w = a[0].len();
    let mut acc = 0.0;
    let mut n = 0usize;
    for y in 0..=h - SIZE {
        for x in 0..=w - SIZE {
            let (mut mu_a, mut mu_b) = (0.0, 0.0);
            for dy in 0..SIZE {
                for dx in 0..SIZE {
                    let k = kernel[dy][dx] / total;
                    mu_a += k * a[y + dy][x + dx];
                    mu_b += k * b[y + dy][x + dx];
                }
            }
            let (mut var_a, mut var_b, mut cov) = (0.0, 0.0, 0.0);
            for dy in 0..SIZE {
                for dx in 0..SIZE {
                    let k = kernel[dy][dx] / total;
                    let da = a[y + dy][x + dx] - mu_a;
                    let db = b[y + dy][x + dx] - mu_b;
                    var_a += k * da * da;
                    var_b += k * db * db;
                    cov += k * da * db;
                }
            }
            acc += ((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2))
                / ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2));
            n += 1;
        }
    }
    acc / n as f64
}

fn cubic(x: f64) -> f64 {
    let a = -0.5;
    let t = x.abs();
    if t <= 1.0 {
        (a + 2.0) * t * t * t - (a + 3.0) * t * t + 1.0
    } else if t < 2.0 {
        a * t * t * t - 5.0 * a * t * t + 8.0 * a * t - 4.0 * a
    } else {
        0.0
    }
}

/// Taps for one output coordinate: `(source index, unnormalized weight)`.
fn taps(out_idx: usize, in_len: usize, out_len: usize) -> Vec<(usize, f64)> {
    let scale = out_len as f64 / in_len as f64;
    let center = (out_idx as f64 + 0.5) / scale - 0.5;
    let (stretch, reach) = if scale < 1.0 { (scale, 2.0 / scale) } else { (1.0, 2.0) };
    let lo = (center - reach).floor() as isize;
    let hi = (center + reach).ceil() as isize;
    (lo..=hi)
        .map(|j| {
            let wgt = cubic((center - j as f64) * stretch);
            (j.clamp(0, in_len as isize - 1) as usize, wgt)
        })
        .collect()
}

/// Bicubic resize evaluated as a direct two-dimensional kernel sum per
/// output pixel with clamped sampling and width-stretched kernels when
/// shrinking.
pub fn naive_bicubic_resize(plane: &Matrix, out_h: usize, out_w: usize) -> Matrix {
    let in_h = plane.len();
    let in_w = plane[0].len();
    let mut out = vec![vec![0.0; out_w]; out_h];
    for (oy, row) in out.iter_mut().enumerate() {
        let ty = taps(oy, in_h, out_h);
        for (ox, px) in row.iter_mut().enumerate() {
            let tx = taps(ox, in_w, out_w);
            let mut num = 0.0;
            let mut den = 0.0;
            for &(sy, wy) in &ty {
                for &(sx, wx) in &tx {
                    num += wy * wx * plane[sy][sx];
                    den += wy * wx;
                }
            }
            *px = num / den;
        }
    }
    out
}
