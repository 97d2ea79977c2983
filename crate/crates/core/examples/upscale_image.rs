//! Build an untrained network and upscale a procedural image to PNG.

use hitsr::data::{synth_patch, Pattern};
use hitsr::image::ImageBuffer;
use hitsr::{HitNetwork, ModelConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> hitsr::Result<()> {
    let out_dir = std::env::temp_dir().join("hitsr-upscale");
    std::fs::create_dir_all(&out_dir)?;
    let cfg = ModelConfig {
        upscale: 3,
        bicubic_skip: true,
        ..ModelConfig::tiny()
    };
    let net = HitNetwork::build(cfg, 0)?;
    let lr = synth_patch(&mut ChaCha8Rng::seed_from_u64(1), Pattern::Polygons, 20);
    let sr = net.infer(&lr)?;
    let (input, output) = (out_dir.join("input.png"), out_dir.join("output.png"));
    ImageBuffer::from_tensor(&lr)?.save_png(&input)?;
    ImageBuffer::from_tensor(&sr)?.save_png(&output)?;
    println!(
        "{} ({:?}) -> {} ({:?})",
        input.display(),
        lr.shape(),
        output.display(),
        sr.shape()
    );
    Ok(())
}
