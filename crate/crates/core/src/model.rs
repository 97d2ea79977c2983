//! Network assembly: shallow convolution, transformer blocks, reconstruction.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::image::resample_matrix;
use crate::nn::{join, Conv, Module};
use crate::scc::{layer_forward, LayerConfig, SccLayerParams, SpatialScale};
use crate::tensor::Tensor;
use crate::windowing::{crop_var, image_to_tokens, pad_var, tokens_to_image, PadRecord, WindowSchedule};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub channels: usize,
    pub blocks: usize,
    pub layers_per_block: usize,
    pub heads: usize,
    pub base_window: (usize, usize),
    pub ratios: Vec<f64>,
    pub upscale: usize,
    pub dfe_r: usize,
    /// Kernel sizes of the three convolutions in the DFE spatial branch.
    pub dfe_kernels: [usize; 3],
    pub ffn_ratio: usize,
    pub bias_hidden: usize,
    pub spatial_scale: SpatialScale,
    /// Add the bicubic upsampling of the input to the output.
    pub bicubic_skip: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            channels: 60,
            blocks: 4,
            layers_per_block: 6,
            heads: 6,
            base_window: (8, 8),
            ratios: vec![0.5, 1.0, 2.0, 4.0, 6.0, 8.0],
            upscale: 2,
            dfe_r: 4,
            dfe_kernels: [1, 3, 1],
            ffn_ratio: 2,
            bias_hidden: 32,
            spatial_scale: SpatialScale::HalfChannels,
            bicubic_skip: false,
        }
    }
}

impl ModelConfig {
    /// 8 channels, one block of two layers with windows 4 and 8.
    pub fn tiny() -> Self {
        ModelConfig {
            channels: 8,
            blocks: 1,
            layers_per_block: 2,
            heads: 2,
            ratios: vec![0.5, 1.0],
            bias_hidden: 8,
            ..Self::default()
        }
    }

    pub fn schedule(&self) -> Result<WindowSchedule> {
        WindowSchedule::from_ratios(self.base_window, &self.ratios)
    }

    pub fn layer_config(&self, schedule: &WindowSchedule, layer: usize) -> LayerConfig {
        LayerConfig {
            channels: self.channels,
            heads: self.heads,
            window: schedule.windows()[layer],
            downsampled: schedule.downsampled(layer),
            dfe_r: self.dfe_r,
            dfe_kernels: self.dfe_kernels,
            ffn_ratio: self.ffn_ratio,
            bias_hidden: self.bias_hidden,
            spatial_scale: self.spatial_scale,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(2..=4).contains(&self.upscale) {
            return Err(Error::Config(format!("upscale {} is not one of 2, 3, 4", self.upscale)));
        }
        if self.blocks == 0 {
            return Err(Error::Config("at least one block is required".into()));
        }
        if self.layers_per_block != self.ratios.len() {
            return Err(Error::Config(format!(
                "{} layers per block but {} window ratios",
                self.layers_per_block,
                self.ratios.len()
            )));
        }
        let schedule = self.schedule()?;
        for i in 0..schedule.len() {
            self.layer_config(&schedule, i).validate()?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct Block {
    pub layers: Vec<SccLayerParams>,
    pub conv: Conv,
}

impl Module for Block {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Var)>) {
        for (i, l) in self.layers.iter().enumerate() {
            l.visit(&join(prefix, &format!("layers.{i}")), out);
        }
        self.conv.visit(&join(prefix, "conv"), out);
    }
    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Var)>) {
        for (i, l) in self.layers.iter_mut().enumerate() {
            l.visit_mut(&join(prefix, &format!("layers.{i}")), out);
        }
        self.conv.visit_mut(&join(prefix, "conv"), out);
    }
}

#[derive(Clone, Debug)]
pub struct HitNetwork {
    cfg: ModelConfig,
    schedule: WindowSchedule,
    pub shallow_conv: Conv,
    pub blocks: Vec<Block>,
    pub recon_conv: Conv,
}

impl HitNetwork {
    /// Deterministic initialization from `seed`.
    pub fn build(cfg: ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let schedule = cfg.schedule()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = cfg.channels;
        let shallow_conv = Conv::init(&mut rng, 3, c, 3);
        let mut blocks = Vec::with_capacity(cfg.blocks);
        for _ in 0..cfg.blocks {
            let layers = (0..schedule.len())
                .map(|i| SccLayerParams::init(cfg.layer_config(&schedule, i), &mut rng))
                .collect::<Result<Vec<_>>>()?;
            blocks.push(Block {
                layers,
                conv: Conv::init(&mut rng, c, c, 3),
            });
        }
        let recon_conv = Conv::init(&mut rng, c, 3 * cfg.upscale * cfg.upscale, 3);
        Ok(HitNetwork {
            cfg,
            schedule,
            shallow_conv,
            blocks,
            recon_conv,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn schedule(&self) -> &WindowSchedule {
        &self.schedule
    }

    pub fn upscale(&self) -> usize {
        self.cfg.upscale
    }

    /// Detach every parameter, switching gradient tracking on or off.
    pub fn set_trainable(&mut self, trainable: bool) {
        for (_, p) in self.named_params_mut() {
            *p = p.detach(trainable);
        }
    }

    /// Zero the output projections of every layer and every block
    /// convolution, leaving only the residual paths.
    pub fn zero_block_outputs(&mut self) {
        for block in &mut self.blocks {
            for layer in &mut block.layers {
                layer.zero_output_projections();
            }
            block.conv.weight = Var::param(Tensor::zeros(block.conv.weight.shape()));
            block.conv.bias = Var::param(Tensor::zeros(block.conv.bias.shape()));
        }
    }

    /// Deep features of a padded shallow feature map `[C, H, W]`.
    pub fn deep_features(&self, shallow: &Var) -> Result<Var> {
        let geom = (shallow.shape()[1], shallow.shape()[2]);
        let mut x = shallow.clone();
        for block in &self.blocks {
            let mut t = image_to_tokens(&x)?;
            for layer in &block.layers {
                t = layer_forward(&t, layer, geom)?;
            }
            x = block.conv.forward(&tokens_to_image(&t, geom)?)?.add(&x)?;
        }
        Ok(x)
    }

    /// `[3, H, W]` → `[3, sH, sW]`. The input is reflect-padded once to a
    /// multiple of the largest window and the output cropped back.
    pub fn forward(&self, img: &Var) -> Result<Var> {
        match *img.shape() {
            [3, h, w] if h > 0 && w > 0 => {}
            _ => {
                return Err(Error::shape(
                    "forward",
                    format!("expected [3, H, W] image, got {:?}", img.shape()),
                ))
            }
        }
        let (mh, mw) = self.schedule.max_window();
        let (padded, rec) = pad_var(img, mh, mw)?;
        let shallow = self.shallow_conv.forward(&padded)?;
        let deep = self.deep_features(&shallow)?;
        let s = self.cfg.upscale;
        let out = self.recon_conv.forward(&shallow.add(&deep)?)?.pixel_shuffle(s)?;
        let out_rec = PadRecord {
            height: rec.height * s,
            width: rec.width * s,
            padded_height: rec.padded_height * s,
            padded_width: rec.padded_width * s,
        };
        let out = crop_var(&out, &out_rec)?;
        if !self.cfg.bicubic_skip {
            return Ok(out);
        }
        let (h, w) = (rec.height, rec.width);
        let ry = Var::constant(resample_matrix(h, h * s));
        let rx = Var::constant(resample_matrix(w, w * s)).transpose()?;
        out.add(&ry.matmul(img)?.matmul(&rx)?)
    }

    /// Forward pass without gradient tracking.
    pub fn infer(&self, img: &Tensor) -> Result<Tensor> {
        let mut frozen = self.clone();
        frozen.set_trainable(false);
        Ok(frozen.forward(&Var::constant(img.clone()))?.value().clone())
    }
}

impl Module for HitNetwork {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Var)>) {
        self.shallow_conv.visit(&join(prefix, "shallow_conv"), out);
        for (i, b) in self.blocks.iter().enumerate() {
            b.visit(&join(prefix, &format!("blocks.{i}")), out);
        }
        self.recon_conv.visit(&join(prefix, "recon_conv"), out);
    }
    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Var)>) {
        self.shallow_conv.visit_mut(&join(prefix, "shallow_conv"), out);
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.visit_mut(&join(prefix, &format!("blocks.{i}")), out);
        }
        self.recon_conv.visit_mut(&join(prefix, "recon_conv"), out);
    }
}
