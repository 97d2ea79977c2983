//! Dual feature extraction evaluated with explicit loops.

use crate::Matrix;

/// A 2-D convolution with zero "same" padding.
///
/// `weight` is laid out `[c_out][c_in][k][k]` in one flat vector.
#[derive(Clone, Debug)]
pub struct NaiveConv {
    pub c_in: usize,
    pub c_out: usize,
    pub k: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Linear channel branch (`x · W + b`, `W` stored `[c_in][c_out]`) and the
/// three-convolution spatial branch with GELU between convolutions.
#[derive(Clone, Debug)]
pub struct NaiveDfe {
    pub linear_w: Matrix,
    pub linear_b: Vec<f64>,
    pub convs: [NaiveConv; 3],
}

/// Tanh-form GELU.
pub fn naive_gelu(x: f64) -> f64 {
    let inner = (2.0 / std::f64::consts::PI).sqrt() * (x + 0.044715 * x * x * x);
    0.5 * x * (1.0 + inner.tanh())
}

/// Cross-correlation of a `c_in × H × W` stack, output `c_out × H × W`.
pub fn naive_conv2d(input: &[Matrix], conv: &NaiveConv) -> Vec<Matrix> {
    assert_eq!(input.len(), conv.c_in, "input channels");
    assert_eq!(conv.k % 2, 1, "odd kernel");
    let h = input[0].len();
    let w = input[0][0].len();
    let pad = (conv.k / 2) as isize;
    let mut out = vec![vec![vec![0.0; w]; h]; conv.c_out];
    for co in 0..conv.c_out {
        for y in 0..h {
            for x in 0..w {
                let mut acc = conv.bias[co];
                for ci in 0..conv.c_in {
                    for ky in 0..conv.k {
                        for kx in 0..conv.k {
                            let sy = y as isize + ky as isize - pad;
                            let sx = x as isize + kx as isize - pad;
                            if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                                continue;
                            }
                            let wi = ((co * conv.c_in + ci) * conv.k + ky) * conv.k + kx;
                            acc += conv.weight[wi] * input[ci][sy as usize][sx as usize];
                        }
                    }
                }
                out[co][y][x] = acc;
            }
        }
    }
    out
}

/// Returns `(Q, V)`, each `HW × C/2`, from tokens `x` (`HW × C`, raster order).
pub fn naive_dfe(x: &Matrix, p: &NaiveDfe, height: usize, width: usize) -> (Matrix, Matrix) {
    let c = p.linear_b.len();
    assert_eq!(x.len(), height * width);

    let mut x_ch = vec![vec![0.0; c]; x.len()];
    for (t, row) in x.iter().enumerate() {
        for o in 0..c {
            let mut acc = p.linear_b[o];
            for (i, xi) in row.iter().enumerate() {
                acc += xi * p.linear_w[i][o];
            }
            x_ch[t][o] = acc;
        }
    }

    let mut map = vec![vec![vec![0.0; width]; height]; x[0].len()];
    for y in 0..height {
        for xx in 0..width {
            for ch in 0..x[0].len() {
                map[ch][y][xx] = x[y * width + xx][ch];
            }
        }
    }
    let act = |m: Vec<Matrix>| -> Vec<Matrix> {
        m.into_iter()
            .map(|plane| {
                plane
                    .into_iter()
                    .map(|row| row.into_iter().map(naive_gelu).collect())
                    .collect()
            })
            .collect()
    };
    let s1 = act(naive_conv2d(&map, &p.convs[0]));
    let s2 = act(naive_conv2d(&s1, &p.convs[1]));
    let s3 = naive_conv2d(&s2, &p.convs[2]);

    let half = c / 2;
    let mut q = vec![vec![0.0; half]; x.len()];
    let mut v = vec![vec![0.0; half]; x.len()];
    for y in 0..height {
        for xx in 0..width {
            let t = y * width + xx;
            for o in 0..c {
                let prod = x_ch[t][o] * s3[o][y][xx];
                if o < half {
                    q[t][o] = prod;
                } else {
                    v[t][o - half] = prod;
                }
            }
        }
    }
    (q, v)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv_interior_of_constant_field() {
        let input = vec![vec![vec![2.0; 5]; 5]];
        let conv = NaiveConv {
            c_in: 1,
            c_out: 1,
            k: 3,
            weight: vec![1.0; 9],
            bias: vec![0.0],
        };
        let out = naive_conv2d(&input, &conv);
        assert_eq!(out[0][2][2], 18.0);
        assert_eq!(out[0][0][0], 8.0);
    }

    #[test]
    fn gelu_reference_points() {
        assert_eq!(naive_gelu(0.0), 0.0);
        assert!((naive_gelu(10.0) - 10.0).abs() < 1e-12);
        assert!(naive_gelu(-10.0).abs() < 1e-12);
    }
}
