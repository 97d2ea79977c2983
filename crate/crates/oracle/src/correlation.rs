//! Spatial and channel self-correlation written as plain triple loops.

use crate::Matrix;

fn zeros(rows: usize, cols: usize) -> Matrix {
    vec![vec![0.0; cols]; rows]
}

/// `(Q V↓ᵀ / D + B) · V↓` for a single head.
///
/// `q` is `hw × d`, `v_down` is `m × d`, `bias` is `hw × m`.
pub fn naive_s_sc(q: &Matrix, v_down: &Matrix, bias: &Matrix, denom: f64) -> Matrix {
    naive_s_sc_counted(q, v_down, bias, denom).0
}

/// Same as [`naive_s_sc`], also returning the number of scalar
/// multiply-accumulates performed in the two matrix products.
pub fn naive_s_sc_counted(q: &Matrix, v_down: &Matrix, bias: &Matrix, denom: f64) -> (Matrix, u64) {
    let d = q.first().map_or(0, Vec::len);
    let mut out = zeros(q.len(), d);
    let mut macs = 0u64;
    for (i, q_row) in q.iter().enumerate() {
        for (j, v_row) in v_down.iter().enumerate() {
            let mut corr = 0.0;
            for c in 0..d {
                corr += q_row[c] * v_row[c];
                macs += 1;
            }
            let coeff = corr / denom + bias[i][j];
            for c in 0..d {
                out[i][c] += coeff * v_row[c];
                macs += 1;
            }
        }
    }
    (out, macs)
}

/// `((Qᵀ V) / D_i · Vᵀ)ᵀ` with a single head spanning every channel.
///
/// `q` and `v` are `hw × c`; the result is `hw × c`.
pub fn naive_c_sc(q: &Matrix, v: &Matrix, denom: f64) -> Matrix {
    naive_c_sc_counted(q, v, denom).0
}

pub fn naive_c_sc_counted(q: &Matrix, v: &Matrix, denom: f64) -> (Matrix, u64) {
    let tokens = q.len();
    let c = q.first().map_or(0, Vec::len);
    let mut macs = 0u64;

    // channel correlation map, c × c
    let mut corr = zeros(c, c);
    for a in 0..c {
        for b in 0..c {
            let mut acc = 0.0;
            for t in 0..tokens {
                acc += q[t][a] * v[t][b];
                macs += 1;
            }
            corr[a][b] = acc / denom;
        }
    }

    let mut out = zeros(tokens, c);
    for a in 0..c {
        for t in 0..tokens {
            let mut acc = 0.0;
            for b in 0..c {
                acc += corr[a][b] * v[t][b];
                macs += 1;
            }
            out[t][a] = acc;
        }
    }
    (out, macs)
}

/// Spatial linear map: `out[j][c] = Σ_t w[j][t] · v[t][c]`.
pub fn naive_s_linear(v: &Matrix, w: &Matrix) -> Matrix {
    let c = v.first().map_or(0, Vec::len);
    let mut out = zeros(w.len(), c);
    for (j, w_row) in w.iter().enumerate() {
        assert_eq!(w_row.len(), v.len(), "spatial weight width");
        for (t, v_row) in v.iter().enumerate() {
            for ch in 0..c {
                out[j][ch] += w_row[t] * v_row[ch];
            }
        }
    }
    out
}

/// Inputs for [`naive_windowed_correlation`].
pub struct WindowedCorrelation<'a> {
    /// Queries, one row per pixel in raster order over the full map.
    pub q: &'a Matrix,
    /// Values, same layout as `q`.
    pub v: &'a Matrix,
    pub height: usize,
    pub width: usize,
    pub win_h: usize,
    pub win_w: usize,
    /// `m × (win_h·win_w)` spatial summarizer.
    pub s_linear: &'a Matrix,
    /// One `hw × m` bias per spatial head.
    pub bias: &'a [Matrix],
    pub heads: usize,
    pub spatial_denom: f64,
    pub channel_denom: f64,
}

/// Sum of the spatial and channel correlations, evaluated window by window
/// over the whole feature map. Returns one row per pixel in raster order.
pub fn naive_windowed_correlation(inp: &WindowedCorrelation<'_>) -> Matrix {
    let c = inp.q.first().map_or(0, Vec::len);
    assert_eq!(inp.height % inp.win_h, 0);
    assert_eq!(inp.width % inp.win_w, 0);
    assert_eq!(c % inp.heads, 0);
    let head_dim = c / inp.heads;
    let mut out = zeros(inp.height * inp.width, c);

    for wy in 0..inp.height / inp.win_h {
        for wx in 0..inp.width / inp.win_w {
            let mut pixels = Vec::new();
            for y in 0..inp.win_h {
                for x in 0..inp.win_w {
                    pixels.push((wy * inp.win_h + y) * inp.width + wx * inp.win_w + x);
                }
            }
            let qw: Matrix = pixels.iter().map(|&p| inp.q[p].clone()).collect();
            let vw: Matrix = pixels.iter().map(|&p| inp.v[p].clone()).collect();
            let v_down = naive_s_linear(&vw, inp.s_linear);

            for head in 0..inp.heads {
                let cols = head * head_dim..(head + 1) * head_dim;
                let qh: Matrix = qw.iter().map(|r| r[cols.clone()].to_vec()).collect();
                let vh: Matrix = v_down.iter().map(|r| r[cols.clone()].to_vec()).collect();
                let sh = naive_s_sc(&qh, &vh, &inp.bias[head], inp.spatial_denom);
                for (t, &p) in pixels.iter().enumerate() {
                    for (k, ch) in cols.clone().enumerate() {
                        out[p][ch] += sh[t][k];
                    }
                }
            }

            let cw = naive_c_sc(&qw, &vw, inp.channel_denom);
            for (t, &p) in pixels.iter().enumerate() {
                for ch in 0..c {
                    out[p][ch] += cw[t][ch];
                }
            }
        }
    }
    out
}
