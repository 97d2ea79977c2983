//! Loop-based reference implementations.
//!
//! Everything here is written directly from the defining formulas with
//! explicit loops over plain nested vectors. Nothing is shared with the
//! `hitsr` crate: this crate has no dependencies at all, so the main path and
//! its reference cannot drift together.
//!
//! Matrices are `Vec<Vec<f64>>` in row-major form (`m[row][col]`).

#![allow(clippy::needless_range_loop)]

pub mod correlation;
pub mod dfe;
pub mod finite_diff;
pub mod imaging;

pub use correlation::{
    naive_c_sc, naive_c_sc_counted, naive_s_linear, naive_s_sc, naive_s_sc_counted, naive_windowed_correlation,
    WindowedCorrelation,
};
pub use dfe::{naive_conv2d, naive_dfe, naive_gelu, NaiveConv, NaiveDfe};
pub use finite_diff::{finite_diff, finite_diff_at, relative_error};
pub use imaging::{naive_bicubic_resize, naive_psnr, naive_rgb_to_y, naive_ssim};

pub type Matrix = Vec<Vec<f64>>;

/// Largest absolute elementwise difference between two equally sized matrices.
pub fn max_abs_diff(a: &Matrix, b: &Matrix) -> f64 {
    assert_eq!(a.len(), b.len(), "row count");
    let mut worst = 0.0f64;
    for (ra, rb) in a.iter().zip(b) {
        assert_eq!(ra.len(), rb.len(), "column count");
        for (x, y) in ra.iter().zip(rb) {
            worst = worst.max((x - y).abs());
        }
    }
    worst
}
