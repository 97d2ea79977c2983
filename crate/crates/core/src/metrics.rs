//! PSNR and SSIM on luma planes `[H, W]` with values in `[0, 255]`.

use crate::error::{Error, Result};
use crate::image::{rgb_to_y, ImageBuffer};
use crate::tensor::Tensor;

const PEAK: f64 = 255.0;
const SSIM_SIZE: usize = 11;
const SSIM_SIGMA: f64 = 1.5;

fn plane_dims(a: &Tensor, b: &Tensor, op: &'static str) -> Result<(usize, usize)> {
    if a.shape() != b.shape() {
        return Err(Error::mismatch(op, a.shape(), b.shape()));
    }
    match *a.shape() {
        [h, w] => Ok((h, w)),
        _ => Err(Error::shape(op, format!("expected [H, W], got {:?}", a.shape()))),
    }
}

/// Remove `border` pixels from every side.
pub fn shave(plane: &Tensor, border: usize) -> Result<Tensor> {
    let [h, w] = *plane.shape() else {
        return Err(Error::shape(
            "shave",
            format!("expected [H, W], got {:?}", plane.shape()),
        ));
    };
    if 2 * border >= h || 2 * border >= w {
        return Err(Error::shape(
            "shave",
            format!("{h}x{w} plane too small for border {border}"),
        ));
    }
    let (oh, ow) = (h - 2 * border, w - 2 * border);
    let d = plane.data();
    Ok(Tensor::from_fn(&[oh, ow], |i| {
        d[(i / ow + border) * w + i % ow + border]
    }))
}

/// `10·log10(255² / MSE)` after shaving; identical inputs give `+∞`.
pub fn psnr(a: &Tensor, b: &Tensor, border: usize) -> Result<f64> {
    plane_dims(a, b, "psnr")?;
    let (a, b) = (shave(a, border)?, shave(b, border)?);
    let mse = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.len() as f64;
    Ok(if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (PEAK * PEAK / mse).log10()
    })
}

fn gaussian() -> [f64; SSIM_SIZE] {
    let mut g = [0.0; SSIM_SIZE];
    let half = (SSIM_SIZE / 2) as f64;
    for (i, v) in g.iter_mut().enumerate() {
        let d = i as f64 - half;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let total: f64 = g.iter().sum();
    g.map(|v| v / total)
}

/// Valid-region separable filtering with the SSIM window.
fn filter_valid(x: &[f64], h: usize, w: usize, g: &[f64; SSIM_SIZE]) -> Vec<f64> {
    let (oh, ow) = (h + 1 - SSIM_SIZE, w + 1 - SSIM_SIZE);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x0 in 0..ow {
            rows[y * ow + x0] = (0..SSIM_SIZE).map(|k| g[k] * x[y * w + x0 + k]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y0 in 0..oh {
        for x0 in 0..ow {
            out[y0 * ow + x0] = (0..SSIM_SIZE).map(|k| g[k] * rows[(y0 + k) * ow + x0]).sum();
        }
    }
    out
}

/// Mean SSIM over all fully contained 11×11 Gaussian windows (σ = 1.5),
/// `K1 = 0.01`, `K2 = 0.03`, `L = 255`.
pub fn ssim(a: &Tensor, b: &Tensor) -> Result<f64> {
    let (h, w) = plane_dims(a, b, "ssim")?;
    if h < SSIM_SIZE || w < SSIM_SIZE {
        return Err(Error::shape(
            "ssim",
            format!("{h}x{w} plane is smaller than the 11x11 window"),
        ));
    }
    let c1 = (0.01 * PEAK).powi(2);
    let c2 = (0.03 * PEAK).powi(2);
    let g = gaussian();
    let (da, db) = (a.data(), b.data());
    let prod = |f: fn(f64, f64) -> f64| -> Vec<f64> { da.iter().zip(db).map(|(&x, &y)| f(x, y)).collect() };
    let mu_a = filter_valid(da, h, w, &g);
    let mu_b = filter_valid(db, h, w, &g);
    let aa = filter_valid(&prod(|x, _| x * x), h, w, &g);
    let bb = filter_valid(&prod(|_, y| y * y), h, w, &g);
    let ab = filter_valid(&prod(|x, y| x * y), h, w, &g);
    let total: f64 = (0..mu_a.len())
        .map(|i| {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = aa[i] - ma * ma;
            let vb = bb[i] - mb * mb;
            let cov = ab[i] - ma * mb;
            ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2))
        })
        .sum();
    Ok(total / mu_a.len() as f64)
}

/// `(PSNR, SSIM)` of the Y channel with `scale` pixels shaved from each
/// border.
pub fn evaluate(gt: &ImageBuffer, pred: &ImageBuffer, scale: usize) -> Result<(f64, f64)> {
    if (gt.width(), gt.height()) != (pred.width(), pred.height()) {
        return Err(Error::mismatch(
            "evaluate",
            &[gt.height(), gt.width()],
            &[pred.height(), pred.width()],
        ));
    }
    evaluate_planes(&rgb_to_y(gt), &rgb_to_y(pred), scale)
}

pub fn evaluate_planes(gt: &Tensor, pred: &Tensor, scale: usize) -> Result<(f64, f64)> {
    let p = psnr(gt, pred, scale)?;
    let s = ssim(&shave(gt, scale)?, &shave(pred, scale)?)?;
    Ok((p, s))
}

/// PSNR for display: `inf` when the inputs are identical.
pub fn format_db(v: f64) -> String {
    if v.is_infinite() {
        "inf".into()
    } else {
        format!("{v:.4}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(h: usize, w: usize) -> Tensor {
        Tensor::from_fn(&[h, w], |i| ((i * 37) % 251) as f64)
    }

    #[test]
    fn psnr_closed_form() {
        let a = ramp(16, 16);
        let b = a.map(|v| v + 10.0);
        let p = psnr(&a, &b, 2).unwrap();
        assert!((p - 20.0 * (25.5f64).log10()).abs() < 1e-12);
        assert_eq!(psnr(&b, &a, 2).unwrap(), p);
        assert_eq!(psnr(&a, &a, 0).unwrap(), f64::INFINITY);
    }

    #[test]
    fn ssim_identity_and_offset() {
        let a = ramp(20, 24);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        assert!(ssim(&a, &a.map(|v| v + 128.0)).unwrap() < 1.0);
        assert!(ssim(&ramp(8, 8), &ramp(8, 8)).is_err());
    }

    #[test]
    fn shave_bounds() {
        let a = ramp(6, 6);
        assert_eq!(shave(&a, 2).unwrap().shape(), &[2, 2]);
        assert!(shave(&a, 3).is_err());
        assert_eq!(format_db(f64::INFINITY), "inf");
    }
}
