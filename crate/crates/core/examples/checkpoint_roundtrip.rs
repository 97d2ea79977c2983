//! Save a network to disk and restore it.

use hitsr::checkpoint;
use hitsr::nn::Module;
use hitsr::{HitNetwork, ModelConfig, Tensor};

fn main() -> hitsr::Result<()> {
    let net = HitNetwork::build(ModelConfig::tiny(), 42)?;
    let path = std::env::temp_dir().join("hitsr-example.ckpt");
    checkpoint::save(&net, &path)?;
    let restored = checkpoint::load(&path)?;

    let img = Tensor::from_fn(&[3, 12, 12], |i| (i % 13) as f64 / 13.0);
    assert_eq!(net.infer(&img)?, restored.infer(&img)?);
    println!(
        "{} parameters in {} tensors, {} bytes at {}",
        restored.param_count(),
        restored.named_params().len(),
        std::fs::metadata(&path)?.len(),
        path.display()
    );
    Ok(())
}
