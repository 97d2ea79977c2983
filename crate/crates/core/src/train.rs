//! Toy training loop: L1 loss, Adam, milestone learning-rate halving.

use std::io::Write;
use std::path::PathBuf;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Tape, Var};
use crate::data::{degrade, PatchSource};
use crate::error::{Error, Result};
use crate::image::{quantize, resize_tensor, tensor_to_y};
use crate::metrics::psnr;
use crate::model::{HitNetwork, ModelConfig};
use crate::nn::Module;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Side of the low-resolution training patch.
    pub patch_size: usize,
    pub batch_size: usize,
    pub iterations: usize,
    pub lr: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Fractions of `iterations` at which the learning rate halves.
    pub lr_milestones: Vec<f64>,
    pub seed: u64,
    pub augment: bool,
    /// Held-out patches scored after training.
    pub eval_patches: usize,
    /// Window used for the smoothed loss.
    pub smoothing: usize,
    /// Directory of PNG images to crop patches from instead of the
    /// procedural generator.
    pub data_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            patch_size: 64,
            batch_size: 8,
            iterations: 200,
            lr: 5e-4,
            adam_beta1: 0.9,
            adam_beta2: 0.99,
            adam_eps: 1e-8,
            lr_milestones: vec![0.5, 0.8, 0.9, 0.95],
            seed: 0,
            augment: true,
            eval_patches: 8,
            smoothing: 10,
            data_dir: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patch_size == 0 || self.batch_size == 0 || self.iterations == 0 {
            return Err(Error::Config(
                "patch size, batch size and iterations must be positive".into(),
            ));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be positive", self.lr)));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return Err(Error::Config("Adam betas must lie in [0, 1)".into()));
        }
        let ms = &self.lr_milestones;
        if ms.iter().any(|m| !(*m > 0.0 && *m < 1.0)) || ms.windows(2).any(|p| p[0] >= p[1]) {
            return Err(Error::Config(format!(
                "milestones {ms:?} must be strictly increasing inside (0, 1)"
            )));
        }
        if self.smoothing == 0 {
            return Err(Error::Config("smoothing window must be positive".into()));
        }
        Ok(())
    }

    /// Learning rate in effect at zero-based iteration `iter`.
    pub fn lr_at(&self, iter: usize) -> f64 {
        let passed = self
            .lr_milestones
            .iter()
            .filter(|&&m| iter as f64 >= m * self.iterations as f64)
            .count();
        self.lr * 0.5f64.powi(passed as i32)
    }
}

/// Model and training settings read together from one TOML file with
/// optional `[model]` and `[train]` tables.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl ToyConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ToyConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.model.validate()?;
        cfg.train.validate()?;
        Ok(cfg)
    }
}

pub struct Adam {
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: i32,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(model: &impl Module, beta1: f64, beta2: f64, eps: f64) -> Self {
        let zeros: Vec<Tensor> = model
            .named_params()
            .iter()
            .map(|(_, p)| Tensor::zeros(p.shape()))
            .collect();
        Adam {
            beta1,
            beta2,
            eps,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// One bias-corrected update of every parameter that received a gradient.
    pub fn step(&mut self, model: &mut impl Module, grads: &crate::Gradients, lr: f64) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        for (i, (_, p)) in model.named_params_mut().into_iter().enumerate() {
            let Some(g) = grads.get(p) else { continue };
            let mut value = p.value().clone();
            let (m, v) = (self.m[i].data_mut(), self.v[i].data_mut());
            for (j, (x, &gj)) in value.data_mut().iter_mut().zip(g.data()).enumerate() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * gj;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * gj * gj;
                *x -= lr * (m[j] / c1) / ((v[j] / c2).sqrt() + self.eps);
            }
            *p = Var::param(value);
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrainReport {
    pub losses: Vec<f64>,
    pub lrs: Vec<f64>,
    pub initial_smoothed: f64,
    pub final_smoothed: f64,
    pub model_psnr: f64,
    pub bicubic_psnr: f64,
}

impl TrainReport {
    pub fn psnr_gain(&self) -> f64 {
        self.model_psnr - self.bicubic_psnr
    }

    pub fn write_loss_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["iteration", "lr", "loss"]).map_err(csv_error)?;
        for (i, (loss, lr)) in self.losses.iter().zip(&self.lrs).enumerate() {
            w.write_record([(i + 1).to_string(), lr.to_string(), loss.to_string()])
                .map_err(csv_error)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Config(format!("csv: {other:?}")),
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Mean Y-channel PSNR of the model and of plain bicubic upsampling on
/// `count` patches drawn from `seed`, shaving `scale` pixels.
pub fn evaluate_held_out(
    net: &HitNetwork,
    source: &PatchSource,
    lr_size: usize,
    count: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    let s = net.upscale();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut frozen = net.clone();
    frozen.set_trainable(false);
    let (mut model_sum, mut bic_sum) = (0.0, 0.0);
    for _ in 0..count {
        let hr = source.draw(&mut rng, lr_size * s)?;
        let lr = degrade(&hr, s)?;
        let sr = quantize(&frozen.forward(&Var::constant(lr.clone()))?.value().clone());
        let bic = quantize(&resize_tensor(&lr, hr.shape()[1], hr.shape()[2])?);
        let y = tensor_to_y(&hr)?;
        model_sum += psnr(&y, &tensor_to_y(&sr)?, s)?;
        bic_sum += psnr(&y, &tensor_to_y(&bic)?, s)?;
    }
    Ok((model_sum / count as f64, bic_sum / count as f64))
}

/// Seed offset separating held-out data from the training stream.
pub const HELD_OUT_SEED: u64 = 0x005e_ed0f_f5e7;

/// Train a freshly initialized network; returns it with the loss curve and
/// the held-out comparison against bicubic upsampling.
pub fn train_toy(cfg: &TrainConfig, model_cfg: &ModelConfig) -> Result<(HitNetwork, TrainReport)> {
    train_network(HitNetwork::build(model_cfg.clone(), cfg.seed)?, cfg)
}

/// Train an existing network in place of a fresh one.
pub fn train_network(mut net: HitNetwork, cfg: &TrainConfig) -> Result<(HitNetwork, TrainReport)> {
    cfg.validate()?;
    let s = net.upscale();
    let source = match &cfg.data_dir {
        Some(dir) => PatchSource::from_dir(dir)?,
        None => PatchSource::Synthetic,
    };
    let mut opt = Adam::new(&net, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut losses = Vec::with_capacity(cfg.iterations);
    let mut lrs = Vec::with_capacity(cfg.iterations);
    for iter in 0..cfg.iterations {
        let mut total: Option<Var> = None;
        for _ in 0..cfg.batch_size {
            let (lr_img, hr) = source.pair(&mut rng, cfg.patch_size, s, cfg.augment)?;
            let pred = net.forward(&Var::constant(lr_img))?;
            let loss = pred.l1_loss(&Var::constant(hr))?;
            total = Some(match total {
                None => loss,
                Some(t) => t.add(&loss)?,
            });
        }
        let loss = total.expect("batch is non-empty").scale(1.0 / cfg.batch_size as f64);
        let value = loss.value().item();
        if !value.is_finite() {
            return Err(Error::Divergence(format!(
                "loss became {value} at iteration {}",
                iter + 1
            )));
        }
        let grads = Tape::record(&loss).backward(&loss)?;
        let rate = cfg.lr_at(iter);
        opt.step(&mut net, &grads, rate);
        losses.push(value);
        lrs.push(rate);
    }
    let k = cfg.smoothing.min(losses.len());
    let (model_psnr, bicubic_psnr) = evaluate_held_out(
        &net,
        &source,
        cfg.patch_size,
        cfg.eval_patches,
        cfg.seed ^ HELD_OUT_SEED,
    )?;
    let report = TrainReport {
        initial_smoothed: mean(&losses[..k]),
        final_smoothed: mean(&losses[losses.len() - k..]),
        losses,
        lrs,
        model_psnr,
        bicubic_psnr,
    };
    Ok((net, report))
}
