//! Parameter containers shared by the layer and network code.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::autograd::Var;
use crate::error::Result;
use crate::tensor::Tensor;

/// Enumerates named parameters in a fixed order.
pub trait Module {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Var)>);
    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Var)>);

    fn named_params(&self) -> Vec<(String, &Var)> {
        let mut out = Vec::new();
        self.visit("", &mut out);
        out
    }

    fn named_params_mut(&mut self) -> Vec<(String, &mut Var)> {
        let mut out = Vec::new();
        self.visit_mut("", &mut out);
        out
    }

    fn param_count(&self) -> usize {
        self.named_params().iter().map(|(_, v)| v.value().len()).sum()
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Affine map on the last axis: `x · W + b` with `W` stored `[in, out]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: Var,
    pub bias: Var,
}

impl Linear {
    pub fn new(weight: Tensor, bias: Tensor) -> Self {
        Linear {
            weight: Var::param(weight),
            bias: Var::param(bias),
        }
    }

    pub fn init(rng: &mut impl Rng, fan_in: usize, fan_out: usize) -> Self {
        Self::new(trunc_normal(rng, &[fan_in, fan_out], 0.02), Tensor::zeros(&[fan_out]))
    }

    pub fn forward(&self, x: &Var) -> Result<Var> {
        x.matmul(&self.weight)?.add(&self.bias)
    }
}

impl Module for Linear {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Var)>) {
        out.push((join(prefix, "weight"), &self.weight));
        out.push((join(prefix, "bias"), &self.bias));
    }
    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Var)>) {
        out.push((join(prefix, "weight"), &mut self.weight));
        out.push((join(prefix, "bias"), &mut self.bias));
    }
}

/// Same-size 2-D convolution, weight `[c_out, c_in, k, k]`.
#[derive(Clone, Debug)]
pub struct Conv {
    pub weight: Var,
    pub bias: Var,
}

impl Conv {
    pub fn new(weight: Tensor, bias: Tensor) -> Self {
        Conv {
            weight: Var::param(weight),
            bias: Var::param(bias),
        }
    }

    /// Uniform in `±1/sqrt(fan_in)`, zero bias.
    pub fn init(rng: &mut impl Rng, c_in: usize, c_out: usize, k: usize) -> Self {
        let bound = 1.0 / ((c_in * k * k) as f64).sqrt();
        let w = Tensor::from_fn(&[c_out, c_in, k, k], |_| rng.random_range(-bound..bound));
        Self::new(w, Tensor::zeros(&[c_out]))
    }

    pub fn forward(&self, x: &Var) -> Result<Var> {
        x.conv2d(&self.weight, Some(&self.bias))
    }

    pub fn kernel(&self) -> usize {
        self.weight.shape()[2]
    }
}

impl Module for Conv {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Var)>) {
        out.push((join(prefix, "weight"), &self.weight));
        out.push((join(prefix, "bias"), &self.bias));
    }
    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Var)>) {
        out.push((join(prefix, "weight"), &mut self.weight));
        out.push((join(prefix, "bias"), &mut self.bias));
    }
}

pub const LN_EPS: f64 = 1e-5;

#[derive(Clone, Debug)]
pub struct Norm {
    pub gamma: Var,
    pub beta: Var,
}

impl Norm {
    pub fn new(channels: usize) -> Self {
        Norm {
            gamma: Var::param(Tensor::full(&[channels], 1.0)),
            beta: Var::param(Tensor::zeros(&[channels])),
        }
    }

    pub fn forward(&self, x: &Var) -> Result<Var> {
        x.layer_norm(&self.gamma, &self.beta, LN_EPS)
    }
}

impl Module for Norm {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Var)>) {
        out.push((join(prefix, "gamma"), &self.gamma));
        out.push((join(prefix, "beta"), &self.beta));
    }
    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Var)>) {
        out.push((join(prefix, "gamma"), &mut self.gamma));
        out.push((join(prefix, "beta"), &mut self.beta));
    }
}

/// Normal samples redrawn until they fall within two standard deviations.
pub fn trunc_normal(rng: &mut impl Rng, shape: &[usize], std: f64) -> Tensor {
    let normal = Normal::new(0.0, std).expect("positive std");
    Tensor::from_fn(shape, |_| loop {
        let v: f64 = normal.sample(rng);
        if v.abs() <= 2.0 * std {
            break v;
        }
    })
}
