//! Analytic mult-add accounting for window self-attention, its permuted
//! variant and the SCC layer. One mult-add counts as one FLOP.

use std::io::Write;
use std::str::FromStr;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::scc::unique_offset_count;

pub const FLOPS_CONVENTION: &str = "1 mult-add = 1 FLOP";

/// Geometry of a single correlation or attention call.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ComplexityInput {
    pub n: u64,
    pub channels: u64,
    pub h: u64,
    pub w: u64,
    pub dh: u64,
    pub dw: u64,
    pub heads: u64,
    pub include_projections: bool,
}

impl ComplexityInput {
    /// One window, no summarization, core only.
    pub fn window(channels: u64, h: u64, w: u64) -> Self {
        ComplexityInput {
            n: 1,
            channels,
            h,
            w,
            dh: h,
            dw: w,
            heads: 1,
            include_projections: false,
        }
    }

    fn hw(&self) -> u64 {
        self.h * self.w
    }
}

/// `2·N·C·(hw)²`, plus `4·N·hw·C²` for the Q/K/V and output projections.
pub fn multadds_wsa(inp: &ComplexityInput) -> u64 {
    let core = 2 * inp.n * inp.channels * inp.hw() * inp.hw();
    if inp.include_projections {
        core + 4 * inp.n * inp.hw() * inp.channels * inp.channels
    } else {
        core
    }
}

/// `2·N·C·h↓w↓·hw`. The layer accountant passes the split width `C/2`.
pub fn multadds_ssc(inp: &ComplexityInput) -> u64 {
    2 * inp.n * inp.channels * inp.dh * inp.dw * inp.hw()
}

/// `2·N·C²·hw`.
pub fn multadds_csc(inp: &ComplexityInput) -> u64 {
    2 * inp.n * inp.channels * inp.channels * inp.hw()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerType {
    Wsa,
    Psa,
    Scc,
}

impl LayerType {
    pub fn name(self) -> &'static str {
        match self {
            LayerType::Wsa => "wsa",
            LayerType::Psa => "psa",
            LayerType::Scc => "scc",
        }
    }
}

impl FromStr for LayerType {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "wsa" => Ok(LayerType::Wsa),
            "psa" => Ok(LayerType::Psa),
            "scc" => Ok(LayerType::Scc),
            other => Err(Error::Config(format!("unknown layer type '{other}'"))),
        }
    }
}

/// Layer hyperparameters the accountant needs.
#[derive(Clone, Debug, PartialEq)]
pub struct CostConfig {
    pub channels: u64,
    pub heads: u64,
    pub base_window: (u64, u64),
    pub dfe_r: u64,
    pub dfe_kernels: [u64; 3],
    pub bias_hidden: u64,
    pub ffn_ratio: u64,
    pub include_ffn: bool,
}

impl Default for CostConfig {
    fn default() -> Self {
        CostConfig {
            channels: 60,
            heads: 6,
            base_window: (8, 8),
            dfe_r: 4,
            dfe_kernels: [1, 3, 1],
            bias_hidden: 32,
            ffn_ratio: 2,
            include_ffn: false,
        }
    }
}

impl CostConfig {
    pub fn validate(&self) -> Result<()> {
        let c = self.channels;
        if c == 0 || !c.is_multiple_of(2) || self.heads == 0 || !(c / 2).is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "channels {c} must be even with C/2 divisible by {} heads",
                self.heads
            )));
        }
        if self.dfe_r == 0 || !c.is_multiple_of(self.dfe_r) {
            return Err(Error::Config(format!("reduction {} does not divide {c}", self.dfe_r)));
        }
        if self.base_window.0 == 0 || self.base_window.1 == 0 {
            return Err(Error::Config("base window must be positive".into()));
        }
        Ok(())
    }
}

/// Itemized mult-adds for one window of one layer.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexityReport {
    pub layer: LayerType,
    pub window: (u64, u64),
    pub terms: Vec<(&'static str, u64)>,
    pub core: u64,
}

impl ComplexityReport {
    pub fn total(&self) -> u64 {
        self.terms.iter().map(|(_, v)| v).sum()
    }

    pub fn term(&self, name: &str) -> Option<u64> {
        self.terms.iter().find(|(n, _)| *n == name).map(|(_, v)| *v)
    }

    pub fn convention(&self) -> &'static str {
        FLOPS_CONVENTION
    }
}

/// Full-layer cost of one `h × w` window.
pub fn layer_report(cfg: &CostConfig, layer: LayerType, window: (u64, u64)) -> Result<ComplexityReport> {
    cfg.validate()?;
    let (h, w) = window;
    if h == 0 || w == 0 {
        return Err(Error::Config("window must be non-empty".into()));
    }
    let c = cfg.channels;
    let t = h * w;
    let mut terms = Vec::new();
    let core;
    match layer {
        LayerType::Wsa => {
            core = multadds_wsa(&ComplexityInput::window(c, h, w));
            terms.push(("attention", core));
            terms.push(("qkv_projection", 3 * t * c * c));
            terms.push(("output_projection", t * c * c));
        }
        LayerType::Psa => {
            // tokens folded 2×2 into channels: a quarter of the keys
            core = 2 * c * t * (t / 4).max(1);
            terms.push(("attention", core));
            terms.push(("qkv_projection", 3 * t * c * c));
            terms.push(("output_projection", t * c * c));
        }
        LayerType::Scc => {
            let half = c / 2;
            let hidden = c / cfg.dfe_r;
            let [k1, k2, k3] = cfg.dfe_kernels;
            let (dh, dw) = (h.min(cfg.base_window.0), w.min(cfg.base_window.1));
            let geom = ComplexityInput {
                n: 1,
                channels: half,
                h,
                w,
                dh,
                dw,
                heads: cfg.heads,
                include_projections: false,
            };
            let ssc = multadds_ssc(&geom);
            let csc = multadds_csc(&geom);
            core = ssc + csc;
            let unique = unique_offset_count((h as usize, w as usize), (dh as usize, dw as usize)) as u64;
            terms.push(("dfe_linear", t * c * c));
            terms.push((
                "dfe_conv",
                t * (k1 * k1 * c * hidden + k2 * k2 * hidden * hidden + k3 * k3 * hidden * c),
            ));
            terms.push(("s_linear", dh * dw * t * half));
            terms.push(("bias", unique * (2 * cfg.bias_hidden + cfg.bias_hidden * cfg.heads)));
            terms.push(("ssc_core", ssc));
            terms.push(("csc_core", csc));
            terms.push(("fusion_projection", t * half * c));
        }
    }
    if cfg.include_ffn {
        terms.push(("ffn", 2 * t * c * c * cfg.ffn_ratio));
    }
    Ok(ComplexityReport {
        layer,
        window,
        terms,
        core,
    })
}

/// One CSV row.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub layer_type: LayerType,
    pub window_h: u64,
    pub window_w: u64,
    pub channels: u64,
    pub heads: u64,
    pub core_multadds: u64,
    pub total_multadds: u64,
    pub flops_convention: &'static str,
}

/// Square-window sweep, grouped by layer type.
pub fn sweep(cfg: &CostConfig, layers: &[LayerType], windows: &[u64]) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::with_capacity(layers.len() * windows.len());
    for &layer in layers {
        for &k in windows {
            let r = layer_report(cfg, layer, (k, k))?;
            rows.push(SweepRow {
                layer_type: layer,
                window_h: k,
                window_w: k,
                channels: cfg.channels,
                heads: cfg.heads,
                core_multadds: r.core,
                total_multadds: r.total(),
                flops_convention: FLOPS_CONVENTION,
            });
        }
    }
    Ok(rows)
}

pub fn write_sweep_csv(rows: &[SweepRow], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Config(format!("csv: {other:?}")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn degenerate_windows() {
        assert_eq!(multadds_wsa(&ComplexityInput::window(60, 1, 1)), 120);
        assert_eq!(multadds_csc(&ComplexityInput::window(1, 8, 8)), 128);
    }

    #[test]
    fn ssc_equals_wsa_without_summarization() {
        let inp = ComplexityInput::window(30, 4, 4);
        assert_eq!(multadds_ssc(&inp), multadds_wsa(&inp));
    }

    #[test]
    fn totals_are_sums() {
        let r = layer_report(&CostConfig::default(), LayerType::Scc, (64, 64)).unwrap();
        assert_eq!(r.total(), r.terms.iter().map(|t| t.1).sum::<u64>());
        assert_eq!(r.core, r.term("ssc_core").unwrap() + r.term("csc_core").unwrap());
    }

    #[test]
    fn csv_header() {
        let rows = sweep(&CostConfig::default(), &[LayerType::Wsa], &[8]).unwrap();
        let mut buf = Vec::new();
        write_sweep_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with(
            "layer_type,window_h,window_w,channels,heads,core_multadds,total_multadds,flops_convention\nwsa,8,8,60,6,"
        ));
    }
}
