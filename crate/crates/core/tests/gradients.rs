//! Reverse-mode gradients against central finite differences.

mod common;

use common::{flatten, grad_check, random_tensor, randomize, rebuild, rng, GRAD_TOL};
use hitsr::nn::{Conv, Linear, Norm};
use hitsr::scc::{
    c_sc, dfe_forward, layer_forward, position_bias, s_linear_downsample, s_sc, scc_forward, BiasMlp, DfeParams,
    LayerConfig, SccLayerParams, SpatialScale,
};
use hitsr::windowing::{merge_tokens, pad_tokens, pad_var, partition_tokens};
use hitsr::{HitNetwork, ModelConfig, Var};

fn cfg(window: usize, down: usize) -> LayerConfig {
    LayerConfig {
        channels: 8,
        heads: 2,
        window: (window, window),
        downsampled: (down, down),
        dfe_r: 4,
        dfe_kernels: [1, 3, 1],
        ffn_ratio: 2,
        bias_hidden: 8,
        spatial_scale: SpatialScale::HalfChannels,
    }
}

fn assert_grad(name: &str, err: f64) {
    assert!(err <= GRAD_TOL, "{name}: relative error {err:e}");
}

#[test]
fn elementwise_and_reduction_ops() {
    let mut r = rng(1);
    let a = random_tensor(&mut r, &[3, 4], 1.0);
    let b = random_tensor(&mut r, &[3, 4], 1.0);
    let row = random_tensor(&mut r, &[4], 1.0);
    assert_grad("add", grad_check(&[a.clone(), row.clone()], 64, 2, |v| v[0].add(&v[1])));
    assert_grad("sub", grad_check(&[a.clone(), row], 64, 3, |v| v[0].sub(&v[1])));
    assert_grad("mul", grad_check(&[a.clone(), b.clone()], 64, 4, |v| v[0].mul(&v[1])));
    assert_grad("gelu", grad_check(std::slice::from_ref(&a), 64, 5, |v| Ok(v[0].gelu())));
    assert_grad(
        "mean",
        grad_check(std::slice::from_ref(&a), 64, 6, |v| Ok(v[0].mean().scale(3.0))),
    );
    assert_grad(
        "l1",
        grad_check(&[a.clone(), b.map(|x| 3.0 * x)], 64, 7, |v| v[0].l1_loss(&v[1])),
    );
}

#[test]
fn shape_ops() {
    let mut r = rng(10);
    let x = random_tensor(&mut r, &[2, 3, 4], 1.0);
    assert_grad(
        "transpose",
        grad_check(std::slice::from_ref(&x), 64, 11, |v| v[0].transpose()),
    );
    assert_grad(
        "permute",
        grad_check(std::slice::from_ref(&x), 64, 12, |v| v[0].permute(&[2, 0, 1])),
    );
    assert_grad(
        "reshape",
        grad_check(std::slice::from_ref(&x), 64, 13, |v| v[0].reshape(&[6, 4])),
    );
    assert_grad(
        "slice",
        grad_check(std::slice::from_ref(&x), 64, 14, |v| v[0].slice_last(1, 2)),
    );
    assert_grad(
        "concat",
        grad_check(&[x.clone(), x.clone()], 64, 15, |v| {
            Var::concat_last(&[v[0].clone(), v[1].clone()])
        }),
    );
    let img = random_tensor(&mut r, &[8, 3, 5], 1.0);
    assert_grad(
        "pixel_shuffle",
        grad_check(std::slice::from_ref(&img), 64, 16, |v| v[0].pixel_shuffle(2)),
    );
    let big = random_tensor(&mut r, &[2, 6, 4], 1.0);
    assert_grad(
        "pixel_unshuffle",
        grad_check(&[big], 64, 17, |v| v[0].pixel_unshuffle(2)),
    );
    let odd = random_tensor(&mut r, &[2, 5, 7], 1.0);
    assert_grad(
        "reflect pad",
        grad_check(&[odd], 80, 18, |v| Ok(pad_var(&v[0], 4, 4)?.0)),
    );
}

#[test]
fn matmul_with_broadcast() {
    let mut r = rng(20);
    let a = random_tensor(&mut r, &[2, 3, 4], 1.0);
    let b = random_tensor(&mut r, &[4, 5], 1.0);
    let c = random_tensor(&mut r, &[2, 4, 5], 1.0);
    let w = random_tensor(&mut r, &[6, 3], 1.0);
    assert_grad(
        "matmul 3x2",
        grad_check(&[a.clone(), b], 64, 21, |v| v[0].matmul(&v[1])),
    );
    assert_grad(
        "matmul 3x3",
        grad_check(&[a.clone(), c], 64, 22, |v| v[0].matmul(&v[1])),
    );
    assert_grad("matmul 2x3", grad_check(&[w, a], 64, 23, |v| v[0].matmul(&v[1])));
}

#[test]
fn linear_conv_norm() {
    let mut r = rng(30);
    let mut lin = Linear::init(&mut r, 6, 5);
    randomize(&mut lin, 31, 0.5);
    let x = random_tensor(&mut r, &[7, 6], 1.0);
    let err = grad_check(&flatten(&lin, &[x]), 64, 32, |v| {
        let (m, rest) = rebuild(&lin, v);
        m.forward(&rest[0])
    });
    assert_grad("linear", err);

    for k in [1, 3] {
        let mut conv = Conv::init(&mut r, 3, 4, k);
        randomize(&mut conv, 33, 0.5);
        let img = random_tensor(&mut r, &[3, 5, 6], 1.0);
        let err = grad_check(&flatten(&conv, &[img]), 64, 34, |v| {
            let (m, rest) = rebuild(&conv, v);
            m.forward(&rest[0])
        });
        assert_grad("conv", err);
    }

    let mut norm = Norm::new(6);
    randomize(&mut norm, 35, 1.0);
    let x = random_tensor(&mut r, &[5, 6], 2.0);
    let err = grad_check(&flatten(&norm, &[x]), 64, 36, |v| {
        let (m, rest) = rebuild(&norm, v);
        m.forward(&rest[0])
    });
    assert_grad("layer norm", err);
}

#[test]
fn windowing_ops() {
    let mut r = rng(40);
    let x = random_tensor(&mut r, &[6 * 10, 3], 1.0);
    assert_grad(
        "partition",
        grad_check(std::slice::from_ref(&x), 80, 41, |v| {
            partition_tokens(&v[0], (6, 10), (3, 5))
        }),
    );
    let w = random_tensor(&mut r, &[4, 15, 3], 1.0);
    assert_grad(
        "merge",
        grad_check(&[w], 80, 42, |v| merge_tokens(&v[0], (6, 10), (3, 5))),
    );
    assert_grad(
        "token padding",
        grad_check(&[x], 80, 43, |v| Ok(pad_tokens(&v[0], (6, 10), (4, 4))?.0)),
    );
}

#[test]
fn correlations_and_s_linear() {
    let mut r = rng(50);
    let q = random_tensor(&mut r, &[2, 16, 4], 1.0);
    let v = random_tensor(&mut r, &[2, 16, 4], 1.0);
    let vd = random_tensor(&mut r, &[2, 4, 4], 1.0);
    let bias = random_tensor(&mut r, &[2, 16, 4], 1.0);
    let w = random_tensor(&mut r, &[4, 16], 1.0);
    assert_grad(
        "s_sc",
        grad_check(&[q.clone(), vd, bias], 96, 51, |v| s_sc(&v[0], &v[1], &v[2], 2, 4.0)),
    );
    assert_grad(
        "c_sc",
        grad_check(&[q, v.clone()], 96, 52, |v| c_sc(&v[0], &v[1], 16.0)),
    );
    assert_grad(
        "s_linear",
        grad_check(&[v, w], 96, 53, |v| s_linear_downsample(&v[0], &v[1])),
    );
}

#[test]
fn dfe_gradients() {
    let mut r = rng(60);
    for kernels in [[1, 3, 1], [3, 3, 3]] {
        let mut p = DfeParams::init(&mut r, 8, 4, kernels);
        randomize(&mut p, 61, 0.5);
        let x = random_tensor(&mut r, &[5 * 6, 8], 1.0);
        let err = grad_check(&flatten(&p, &[x]), 24, 62, |v| {
            let (m, rest) = rebuild(&p, v);
            let (q, val) = dfe_forward(&rest[0], &m, (5, 6))?;
            Var::concat_last(&[q, val])
        });
        assert_grad("dfe", err);
    }
}

#[test]
fn position_bias_gradients() {
    let mut r = rng(70);
    let mut mlp = BiasMlp::init(&mut r, 8, 2);
    randomize(&mut mlp, 71, 0.5);
    let err = grad_check(&flatten(&mlp, &[]), 64, 72, |v| {
        let (m, _) = rebuild(&mlp, v);
        position_bias((8, 8), (4, 4), &m)
    });
    assert_grad("position bias", err);
}

#[test]
fn correlation_branch_and_full_layer() {
    // (8, 4) exercises S-Linear downsampling; (4, 4) on a 6×10 map the padding path
    for (window, down, geom) in [(8, 4, (8, 8)), (4, 4, (6, 10))] {
        let mut r = rng(80 + window as u64);
        let mut p = SccLayerParams::init(cfg(window, down), &mut r).unwrap();
        randomize(&mut p, 81, 0.3);
        let x = random_tensor(&mut r, &[geom.0 * geom.1, 8], 1.0);
        let inputs = flatten(&p, &[x]);
        let err = grad_check(&inputs, 12, 82, |v| {
            let (m, rest) = rebuild(&p, v);
            scc_forward(&rest[0], &m, geom)
        });
        assert_grad("scc branch", err);
        let err = grad_check(&inputs, 12, 83, |v| {
            let (m, rest) = rebuild(&p, v);
            layer_forward(&rest[0], &m, geom)
        });
        assert_grad("transformer layer", err);
    }
}

#[test]
fn tiny_network_end_to_end() {
    for bicubic_skip in [false, true] {
        let mcfg = ModelConfig {
            bicubic_skip,
            ..ModelConfig::tiny()
        };
        let mut net = HitNetwork::build(mcfg, 3).unwrap();
        randomize(&mut net, 90, 0.2);
        let mut r = rng(91);
        let img = random_tensor(&mut r, &[3, 16, 16], 1.0).map(|x| 0.5 + 0.5 * x);
        let err = grad_check(&flatten(&net, &[img]), 6, 92, |v| {
            let (m, rest) = rebuild(&net, v);
            m.forward(&rest[0])
        });
        assert_grad("tiny network", err);
    }
}
