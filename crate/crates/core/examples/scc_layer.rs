//! One spatial-channel correlation layer on a token map.

use hitsr::nn::Module;
use hitsr::scc::{layer_forward, position_bias, LayerConfig, SccLayerParams, SpatialScale};
use hitsr::{Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> hitsr::Result<()> {
    let cfg = LayerConfig {
        channels: 16,
        heads: 2,
        window: (16, 16),
        downsampled: (8, 8),
        dfe_r: 4,
        dfe_kernels: [1, 3, 1],
        ffn_ratio: 2,
        bias_hidden: 16,
        spatial_scale: SpatialScale::HalfChannels,
    };
    let params = SccLayerParams::init(cfg.clone(), &mut ChaCha8Rng::seed_from_u64(0))?;
    println!("layer parameters: {}", params.param_count());
    println!("S-Linear map: {:?}", params.s_linear.shape());

    let bias = position_bias(cfg.window, cfg.downsampled, &params.bias_mlp)?;
    println!("position bias: {:?}", bias.shape());

    // a 20x24 map does not tile into 16x16 windows and is padded internally
    let (h, w) = (20, 24);
    let x = Var::constant(Tensor::from_fn(&[h * w, 16], |i| ((i * 37) % 101) as f64 / 101.0 - 0.5));
    let y = layer_forward(&x, &params, (h, w))?;
    println!("tokens {:?} -> {:?}", x.shape(), y.shape());
    Ok(())
}
