//! A short training run on procedural patches.
//!
//! Pass an iteration count as the first argument; 200 reproduces the
//! acceptance configuration.

use hitsr::metrics::format_db;
use hitsr::train::{train_toy, TrainConfig};
use hitsr::ModelConfig;

fn main() -> hitsr::Result<()> {
    let iterations = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(40);
    let train = TrainConfig {
        patch_size: 16,
        batch_size: 32,
        iterations,
        lr: 1e-2,
        eval_patches: 48,
        ..TrainConfig::default()
    };
    let model = ModelConfig {
        channels: 24,
        bicubic_skip: true,
        ..ModelConfig::tiny()
    };
    let (_, report) = train_toy(&train, &model)?;
    for (i, loss) in report.losses.iter().enumerate().step_by(10) {
        println!("iter {:>4}  lr {:.2e}  L1 {loss:.5}", i + 1, report.lrs[i]);
    }
    println!(
        "smoothed L1 {:.5} -> {:.5}; held-out PSNR {} dB vs bicubic {} dB",
        report.initial_smoothed,
        report.final_smoothed,
        format_db(report.model_psnr),
        format_db(report.bicubic_psnr)
    );
    Ok(())
}
