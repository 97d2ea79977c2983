//! Mult-add cost of window attention against spatial-channel correlation.

use hitsr::complexity::{layer_report, sweep, write_sweep_csv, CostConfig, LayerType, FLOPS_CONVENTION};

fn main() -> hitsr::Result<()> {
    let cfg = CostConfig::default();
    println!("convention: {FLOPS_CONVENTION}");
    for win in [64, 96, 128] {
        let wsa = layer_report(&cfg, LayerType::Wsa, (win, win))?.total() as f64;
        let scc = layer_report(&cfg, LayerType::Scc, (win, win))?;
        println!(
            "window {win:>3}: W-SA {:>6.2}G  SCC {:>5.3}G  ({:.1}% of W-SA)",
            wsa / 1e9,
            scc.total() as f64 / 1e9,
            100.0 * scc.total() as f64 / wsa
        );
    }

    let report = layer_report(&cfg, LayerType::Scc, (64, 64))?;
    println!("\nSCC terms at window 64:");
    for (name, v) in &report.terms {
        println!("  {name:<18} {v:>12}");
    }

    println!();
    let rows = sweep(
        &cfg,
        &[LayerType::Wsa, LayerType::Psa, LayerType::Scc],
        &[8, 16, 32, 64],
    )?;
    write_sweep_csv(&rows, std::io::stdout().lock())
}
