#![allow(dead_code)]

use hitsr::nn::Module;
use hitsr::scc::DfeParams;
use hitsr::{Tensor, Var};
use hitsr_oracle::{finite_diff_at, relative_error, Matrix, NaiveConv, NaiveDfe};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-4;
pub const GRAD_TOL: f64 = 1e-5;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut impl Rng, shape: &[usize], scale: f64) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(-scale..scale))
}

/// Rows of a `[R, C]` tensor, or of one `[.., R, C]` slice at `batch`.
pub fn to_matrix(t: &Tensor, batch: usize) -> Matrix {
    let s = t.shape();
    let (r, c) = (s[s.len() - 2], s[s.len() - 1]);
    let d = &t.data()[batch * r * c..(batch + 1) * r * c];
    d.chunks(c).map(<[f64]>::to_vec).collect()
}

pub fn from_matrix(m: &Matrix) -> Tensor {
    let cols = m.first().map_or(0, Vec::len);
    Tensor::new(&[m.len(), cols], m.iter().flatten().copied().collect()).unwrap()
}

fn naive_conv(c: &hitsr::nn::Conv) -> NaiveConv {
    let s = c.weight.shape();
    NaiveConv {
        c_out: s[0],
        c_in: s[1],
        k: s[2],
        weight: c.weight.value().data().to_vec(),
        bias: c.bias.value().data().to_vec(),
    }
}

pub fn naive_dfe_params(p: &DfeParams) -> NaiveDfe {
    NaiveDfe {
        linear_w: to_matrix(p.linear.weight.value(), 0),
        linear_b: p.linear.bias.value().data().to_vec(),
        convs: [
            naive_conv(&p.convs[0]),
            naive_conv(&p.convs[1]),
            naive_conv(&p.convs[2]),
        ],
    }
}

/// Compare reverse-mode gradients of `sum(f(inputs) ⊙ probe)` against
/// central differences for every input, probing at most `max_coords`
/// randomly chosen coordinates per input. Returns the worst relative error.
pub fn grad_check(inputs: &[Tensor], max_coords: usize, seed: u64, f: impl Fn(&[Var]) -> hitsr::Result<Var>) -> f64 {
    let mut r = rng(seed);
    let vars: Vec<Var> = inputs.iter().cloned().map(Var::param).collect();
    let out = f(&vars).unwrap();
    let probe = Var::constant(random_tensor(&mut r, out.shape(), 1.0));
    let loss_of = |vars: &[Var]| -> hitsr::Result<Var> { Ok(f(vars)?.mul(&probe)?.sum()) };
    let loss = loss_of(&vars).unwrap();
    let grads = loss.backward().unwrap();

    let mut worst = 0.0f64;
    for (i, x) in inputs.iter().enumerate() {
        let analytic_full = grads.get(&vars[i]).cloned().unwrap_or_else(|| Tensor::zeros(x.shape()));
        let coords: Vec<usize> = if x.len() <= max_coords {
            (0..x.len()).collect()
        } else {
            sample(&mut r, x.len(), max_coords).into_vec()
        };
        let numeric = finite_diff_at(
            |data| {
                let mut consts: Vec<Var> = inputs.iter().cloned().map(Var::constant).collect();
                consts[i] = Var::constant(Tensor::new(x.shape(), data.to_vec()).unwrap());
                loss_of(&consts).unwrap().value().item()
            },
            x.data(),
            &coords,
            FD_STEP,
        );
        let analytic: Vec<f64> = coords.iter().map(|&c| analytic_full.data()[c]).collect();
        worst = worst.max(relative_error(&analytic, &numeric));
    }
    worst
}

/// Parameters of `proto` followed by `extra`, as plain tensors.
pub fn flatten<M: Module>(proto: &M, extra: &[Tensor]) -> Vec<Tensor> {
    let mut out: Vec<Tensor> = proto.named_params().iter().map(|(_, p)| p.value().clone()).collect();
    out.extend_from_slice(extra);
    out
}

/// A copy of `proto` whose parameters are the leading `vars`; returns the rest.
pub fn rebuild<'a, M: Module + Clone>(proto: &M, vars: &'a [Var]) -> (M, &'a [Var]) {
    let mut m = proto.clone();
    let mut n = 0;
    for (_, p) in m.named_params_mut() {
        *p = vars[n].clone();
        n += 1;
    }
    (m, &vars[n..])
}

/// Replace every parameter with fresh noise so zero-initialized biases and
/// unit gains are exercised away from their special values.
pub fn randomize<M: Module>(m: &mut M, seed: u64, scale: f64) {
    let mut r = rng(seed);
    for (_, p) in m.named_params_mut() {
        *p = Var::param(random_tensor(&mut r, p.shape(), scale));
    }
}
