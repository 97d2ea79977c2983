use std::fs::{self, File};
use std::io::{self, BufWriter};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use hitsr::checkpoint;
use hitsr::complexity::{sweep, write_sweep_csv, CostConfig, LayerType};
use hitsr::image::ImageBuffer;
use hitsr::metrics::{evaluate, format_db};
use hitsr::train::{train_toy, ToyConfig};
use hitsr::{Error, Result};

#[derive(Parser)]
#[command(name = "hitsr", version, about = "Hierarchical transformer super-resolution")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Upscale one PNG with a trained checkpoint.
    Sr {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, value_parser = clap::value_parser!(u8).range(2..=4))]
        scale: u8,
    },
    /// Train a model on procedural patches.
    TrainToy {
        /// TOML file with optional [model] and [train] tables.
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Mult-add sweep over square windows.
    Complexity {
        #[arg(long, value_delimiter = ',', default_value = "wsa,psa,scc")]
        layers: Vec<String>,
        #[arg(long, value_delimiter = ',', default_value = "8,16,32,64,96,128")]
        windows: Vec<u64>,
        #[arg(long, default_value_t = 60)]
        channels: u64,
        #[arg(long, default_value_t = 6)]
        heads: u64,
        /// Also count the feed-forward network.
        #[arg(long)]
        include_ffn: bool,
        /// Write here instead of standard output.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Y-channel PSNR and SSIM with `scale` border pixels removed.
    Eval {
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        scale: usize,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Sr {
            checkpoint: ckpt,
            input,
            output,
            scale,
        } => {
            let net = checkpoint::load(&ckpt)?;
            if net.upscale() != scale as usize {
                return Err(Error::Config(format!(
                    "checkpoint upscales by {}, requested {scale}",
                    net.upscale()
                )));
            }
            let img = ImageBuffer::load_png(&input)?;
            let out = net.infer(&img.to_tensor())?;
            ImageBuffer::from_tensor(&out)?.save_png(&output)?;
            println!(
                "{}x{} -> {}x{}",
                img.width(),
                img.height(),
                out.shape()[2],
                out.shape()[1]
            );
            Ok(())
        }
        Command::TrainToy { config, out_dir, seed } => {
            let text = fs::read_to_string(&config)?;
            let mut cfg = ToyConfig::from_toml(&text)?;
            if let Some(seed) = seed {
                cfg.train.seed = seed;
            }
            fs::create_dir_all(&out_dir)?;
            let (net, report) = train_toy(&cfg.train, &cfg.model)?;
            checkpoint::save(&net, out_dir.join("model.ckpt"))?;
            report.write_loss_csv(BufWriter::new(File::create(out_dir.join("loss.csv"))?))?;
            println!(
                "loss {:.5} -> {:.5}  PSNR model {} dB, bicubic {} dB",
                report.initial_smoothed,
                report.final_smoothed,
                format_db(report.model_psnr),
                format_db(report.bicubic_psnr)
            );
            Ok(())
        }
        Command::Complexity {
            layers,
            windows,
            channels,
            heads,
            include_ffn,
            csv,
        } => {
            let layers = layers
                .iter()
                .map(|l| l.parse::<LayerType>())
                .collect::<Result<Vec<_>>>()?;
            let cfg = CostConfig {
                channels,
                heads,
                include_ffn,
                ..CostConfig::default()
            };
            let rows = sweep(&cfg, &layers, &windows)?;
            match csv {
                Some(path) => write_csv_file(&rows, &path),
                None => write_sweep_csv(&rows, io::stdout().lock()),
            }
        }
        Command::Eval { gt, pred, scale } => {
            let (p, s) = evaluate(&ImageBuffer::load_png(&gt)?, &ImageBuffer::load_png(&pred)?, scale)?;
            println!("PSNR={} SSIM={s:.6}", format_db(p));
            Ok(())
        }
    }
}

fn write_csv_file(rows: &[hitsr::complexity::SweepRow], path: &Path) -> Result<()> {
    write_sweep_csv(rows, BufWriter::new(File::create(path)?))
}
