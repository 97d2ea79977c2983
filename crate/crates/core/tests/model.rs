mod common;

use common::{random_tensor, rng};
use hitsr::nn::Module;
use hitsr::windowing::{crop_var, pad_var, PadRecord};
use hitsr::{Error, HitNetwork, ModelConfig, Tensor, Var};

fn conv(c_in: usize, c_out: usize, k: usize) -> usize {
    c_in * c_out * k * k + c_out
}

fn linear(i: usize, o: usize) -> usize {
    i * o + o
}

/// Closed-form parameter count summed over layer shapes.
fn formula(cfg: &ModelConfig) -> usize {
    let c = cfg.channels;
    let hid = c / cfg.dfe_r;
    let [k1, k2, k3] = cfg.dfe_kernels;
    let schedule = cfg.schedule().unwrap();
    let per_block: usize = (0..schedule.len())
        .map(|i| {
            let (wh, ww) = schedule.windows()[i];
            let (dh, dw) = schedule.downsampled(i);
            2 * c
                + linear(c, c)
                + conv(c, hid, k1)
                + conv(hid, hid, k2)
                + conv(hid, c, k3)
                + dh * dw * wh * ww
                + linear(2, cfg.bias_hidden)
                + linear(cfg.bias_hidden, cfg.heads)
                + linear(c / 2, c)
                + 2 * c
                + linear(c, cfg.ffn_ratio * c)
                + linear(cfg.ffn_ratio * c, c)
        })
        .sum::<usize>()
        + conv(c, c, 3);
    conv(3, c, 3) + cfg.blocks * per_block + conv(c, 3 * cfg.upscale * cfg.upscale, 3)
}

#[test]
fn parameter_count_matches_formula() {
    for cfg in [
        ModelConfig::tiny(),
        ModelConfig {
            upscale: 3,
            dfe_kernels: [3, 3, 3],
            ..ModelConfig::tiny()
        },
        ModelConfig::default(),
    ] {
        let net = HitNetwork::build(cfg.clone(), 0).unwrap();
        assert_eq!(net.param_count(), formula(&cfg));
    }
}

#[test]
fn doubling_channels_roughly_quadruples_projections() {
    let small = HitNetwork::build(
        ModelConfig {
            channels: 16,
            ..ModelConfig::tiny()
        },
        0,
    )
    .unwrap();
    let large = HitNetwork::build(
        ModelConfig {
            channels: 32,
            ..ModelConfig::tiny()
        },
        0,
    )
    .unwrap();
    let proj = |n: &HitNetwork| -> usize {
        n.named_params()
            .iter()
            .filter(|(name, _)| name.ends_with("weight") && (name.contains("proj") || name.contains("ffn")))
            .map(|(_, v)| v.value().len())
            .sum()
    };
    let ratio = proj(&large) as f64 / proj(&small) as f64;
    assert!((3.9..=4.1).contains(&ratio), "{ratio}");
}

#[test]
fn layer_windows_follow_schedule() {
    let net = HitNetwork::build(ModelConfig::default(), 0).unwrap();
    let expected = [(4, 4), (8, 8), (16, 16), (32, 32), (48, 48), (64, 64)];
    let down = [(4, 4), (8, 8), (8, 8), (8, 8), (8, 8), (8, 8)];
    for block in &net.blocks {
        for (i, layer) in block.layers.iter().enumerate() {
            assert_eq!(layer.cfg.window, expected[i]);
            assert_eq!(layer.cfg.downsampled, down[i]);
            assert_eq!(
                layer.s_linear.shape(),
                &[down[i].0 * down[i].1, expected[i].0 * expected[i].1]
            );
        }
    }
}

#[test]
fn parameter_names_are_stable() {
    let a = HitNetwork::build(ModelConfig::tiny(), 1).unwrap();
    let b = HitNetwork::build(ModelConfig::tiny(), 2).unwrap();
    let names = |n: &HitNetwork| n.named_params().into_iter().map(|(s, _)| s).collect::<Vec<_>>();
    assert_eq!(names(&a), names(&b));
    let first = names(&a);
    assert_eq!(first[0], "shallow_conv.weight");
    assert!(first.contains(&"blocks.0.layers.1.dfe.conv2.weight".to_string()));
    assert_eq!(first.last().unwrap(), "recon_conv.bias");
}

#[test]
fn output_shapes_for_every_scale() {
    for s in [2, 3, 4] {
        let net = HitNetwork::build(
            ModelConfig {
                upscale: s,
                ..ModelConfig::tiny()
            },
            0,
        )
        .unwrap();
        for (h, w) in [(8, 8), (9, 13), (17, 4)] {
            let img = random_tensor(&mut rng(5), &[3, h, w], 1.0);
            assert_eq!(net.infer(&img).unwrap().shape(), &[3, s * h, s * w]);
        }
    }
}

#[test]
fn zeroed_blocks_reduce_to_shallow_and_reconstruction() {
    let mut net = HitNetwork::build(
        ModelConfig {
            upscale: 3,
            ..ModelConfig::tiny()
        },
        4,
    )
    .unwrap();
    net.zero_block_outputs();
    let img = random_tensor(&mut rng(6), &[3, 10, 13], 1.0);
    let got = net.infer(&img).unwrap();

    let (padded, rec) = pad_var(&Var::constant(img), 8, 8).unwrap();
    let shallow = net.shallow_conv.forward(&padded).unwrap();
    let out = net
        .recon_conv
        .forward(&shallow.scale(2.0))
        .unwrap()
        .pixel_shuffle(3)
        .unwrap();
    let rec3 = PadRecord {
        height: rec.height * 3,
        width: rec.width * 3,
        padded_height: rec.padded_height * 3,
        padded_width: rec.padded_width * 3,
    };
    let want = crop_var(&out, &rec3).unwrap();
    let diff = got
        .data()
        .iter()
        .zip(want.value().data())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    assert!(diff < 1e-12, "{diff}");
}

#[test]
fn zeroed_network_with_bicubic_skip_is_bicubic() {
    let mut net = HitNetwork::build(
        ModelConfig {
            bicubic_skip: true,
            ..ModelConfig::tiny()
        },
        0,
    )
    .unwrap();
    for (_, p) in net.named_params_mut() {
        *p = Var::param(Tensor::zeros(p.shape()));
    }
    let img = random_tensor(&mut rng(7), &[3, 9, 6], 1.0);
    let got = net.infer(&img).unwrap();
    let want = hitsr::image::resize_tensor(&img, 18, 12).unwrap();
    let diff = got
        .data()
        .iter()
        .zip(want.data())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    assert!(diff < 1e-12, "{diff}");
}

#[test]
fn invalid_configs_are_rejected() {
    let bad = [
        ModelConfig {
            upscale: 5,
            ..ModelConfig::tiny()
        },
        ModelConfig {
            channels: 9,
            ..ModelConfig::tiny()
        },
        ModelConfig {
            heads: 3,
            ..ModelConfig::tiny()
        },
        ModelConfig {
            blocks: 0,
            ..ModelConfig::tiny()
        },
        ModelConfig {
            layers_per_block: 3,
            ..ModelConfig::tiny()
        },
        ModelConfig {
            ratios: vec![0.3, 1.0],
            ..ModelConfig::tiny()
        },
    ];
    for cfg in bad {
        let err = HitNetwork::build(cfg.clone(), 0).unwrap_err();
        assert!(matches!(err, Error::Config(_)), "{cfg:?}: {err}");
        assert_eq!(err.exit_code(), 2);
    }
}

#[test]
fn malformed_input_is_a_shape_error() {
    let net = HitNetwork::build(ModelConfig::tiny(), 0).unwrap();
    assert!(net.infer(&Tensor::zeros(&[1, 8, 8])).is_err());
    assert!(net.infer(&Tensor::zeros(&[3, 0, 8])).is_err());
}
