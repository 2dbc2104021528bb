mod common;

use common::{model_params, mwcn_block_params, random_vec, rng, unet_params};
use prnet::nn::prnet::EncoderStage;
use prnet::nn::{Ablation, MwcnBlock};
use prnet::{Error, Module, PRNet, PRNetConfig, Tensor};

fn small(size: usize) -> PRNetConfig {
    PRNetConfig::default().with_base_width(8).with_input(size, size)
}

fn input(n: usize, size: usize, seed: u64) -> Tensor {
    Tensor::new(&[n, 3, size, size], random_vec(&mut rng(seed), n * 3 * size * size)).unwrap()
}

fn max_rel(a: &[f32], b: &[f32]) -> f64 {
    let scale = b.iter().fold(0.0f32, |m, v| m.max(v.abs())).max(1e-30) as f64;
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs() as f64)) / scale
}

#[test]
fn block_parameter_count_matches_formula_at_full_size() {
    let cfg = PRNetConfig::default();
    let block = MwcnBlock::<f32>::new(&mut rng(0), &cfg, 64, 256, 256).unwrap();
    assert_eq!(
        block.num_parameters(),
        mwcn_block_params(64, 256, 256, &[3, 5], 2, true)
    );
    // GFWM maps dominate at this extent: 2 pairs of 256×256 maps.
    assert!(block.num_parameters() > 4 * 256 * 256);
}

#[test]
fn every_ablation_matches_the_parameter_oracle() {
    let base = PRNetConfig::default().with_base_width(16).with_input(64, 64);
    for ab in Ablation::ALL {
        let cfg = ab.apply(&base);
        let model = PRNet::<f32>::new(&cfg).unwrap();
        assert_eq!(model.num_parameters(), model_params(&cfg), "{}", ab.label());
    }
}

#[test]
fn plain_unet_equals_independent_unet_count() {
    let cfg = Ablation::Unet.apply(&PRNetConfig::default());
    let model = PRNet::<f32>::new(&cfg).unwrap();
    assert!(model.cfa.is_empty());
    assert!(model.stages.iter().all(|s| matches!(s, EncoderStage::Plain(_))));
    assert_eq!(model.num_parameters(), unet_params(3, 10, [64, 128, 256, 512], 64));
}

#[test]
fn shapes_follow_the_stage_law() {
    let model = PRNet::<f32>::new(&small(32)).unwrap();
    let x = input(2, 32, 1);
    let feats = model.encode(&x).unwrap();
    assert_eq!(feats.x0.shape(), [2, 8, 32, 32]);
    for (i, f) in feats.f.iter().enumerate() {
        assert_eq!(f.shape(), [2, 8 << i, 32 >> i, 32 >> i], "F_{}", i + 1);
    }
    assert_eq!(model.forward(&x).unwrap().shape(), [2, 10, 32, 32]);
}

#[test]
fn cfa_attention_is_strictly_inside_unit_interval() {
    let model = PRNet::<f32>::new(&small(32)).unwrap();
    let feats = model.encode(&input(2, 32, 2)).unwrap();
    let raw = [&feats.x0, &feats.f[0], &feats.f[1], &feats.f[2]];
    for (block, f) in model.cfa.iter().zip(raw) {
        let a = block.attention(f).unwrap();
        assert_eq!(a.shape(), [2, f.shape()[1], 1, 1]);
        assert!(a.data().iter().all(|&v| v > 0.0 && v < 1.0));
    }
}

#[test]
fn zeroed_cfa_conv_halves_the_features() {
    let model = PRNet::<f32>::new(&small(32)).unwrap();
    let block = &model.cfa[1];
    block.conv.weight.fill(0.0).unwrap();
    block.conv.bias.as_ref().unwrap().fill(0.0).unwrap();
    let f = Tensor::new(&[1, 8, 8, 8], random_vec(&mut rng(3), 512)).unwrap();
    let y = block.forward(&f).unwrap();
    for (a, b) in y.data().iter().zip(f.data()) {
        assert_eq!(*a, 0.5 * b);
    }
}

#[test]
fn saturated_attention_reduces_to_plain_unet_decoder() {
    let model = PRNet::<f32>::new(&small(32)).unwrap();
    for b in &model.cfa {
        b.conv.weight.fill(0.0).unwrap();
        b.conv.bias.as_ref().unwrap().fill(60.0).unwrap();
    }
    let x = input(1, 32, 4);
    let logits = model.forward(&x).unwrap();
    let feats = model.encode(&x).unwrap();
    let raw = [
        feats.x0.clone(),
        feats.f[0].clone(),
        feats.f[1].clone(),
        feats.f[2].clone(),
    ];
    let plain = model
        .head
        .forward(&model.decoder_forward(&feats.f[3], &raw).unwrap())
        .unwrap();
    assert!(max_rel(logits.data(), plain.data()) < 1e-4);
}

/// β ≡ 0 gates the wavelet branch out: its parameters stop mattering.
#[test]
fn zero_beta_makes_wtconv_parameters_irrelevant() {
    let model = PRNet::<f32>::new(&small(32)).unwrap();
    model.visit_params("", &mut |name, p| {
        if name.ends_with(".beta") && name.contains(".level") {
            p.fill(0.0).unwrap();
        }
    });
    let x = input(1, 32, 5);
    let before = model.forward(&x).unwrap();
    let mut r = rng(6);
    let mut touched = 0;
    model.visit_params("", &mut |name, p| {
        if name.contains(".wtconv.") {
            p.set(random_vec(&mut r, p.numel())).unwrap();
            touched += 1;
        }
    });
    assert!(touched > 0);
    assert_eq!(model.forward(&x).unwrap().data(), before.data());

    // Perturbing a plain conv still changes the output.
    model.with_param("encoder.stage0.block0.level0.conv.weight", &mut |p| {
        p.set(random_vec(&mut r, p.numel())).unwrap()
    });
    assert_ne!(model.forward(&x).unwrap().data(), before.data());
}

#[test]
fn zero_alpha_makes_plain_conv_parameters_irrelevant() {
    let model = PRNet::<f32>::new(&small(32)).unwrap();
    model.visit_params("", &mut |name, p| {
        if name.ends_with(".alpha") {
            p.fill(0.0).unwrap();
        }
    });
    let x = input(1, 32, 7);
    let before = model.forward(&x).unwrap();
    let mut r = rng(8);
    model.visit_params("", &mut |name, p| {
        if name.contains(".level") && name.contains(".conv.") {
            p.set(random_vec(&mut r, p.numel())).unwrap();
        }
    });
    assert_eq!(model.forward(&x).unwrap().data(), before.data());
}

#[test]
fn batch_order_permutes_outputs() {
    let model = PRNet::<f32>::new(&small(32)).unwrap();
    let x = input(3, 32, 9);
    let per = 3 * 32 * 32;
    let order = [2usize, 0, 1];
    let permuted: Vec<f32> = order
        .iter()
        .flat_map(|&i| x.data()[i * per..(i + 1) * per].to_vec())
        .collect();
    let y = model.forward(&x).unwrap();
    let yp = model.forward(&Tensor::new(&[3, 3, 32, 32], permuted).unwrap()).unwrap();
    let out = 10 * 32 * 32;
    for (j, &i) in order.iter().enumerate() {
        assert!(max_rel(&yp.data()[j * out..(j + 1) * out], &y.data()[i * out..(i + 1) * out]) < 1e-6);
    }
}

#[test]
fn same_seed_gives_bitwise_identical_logits() {
    let x = input(1, 32, 10);
    let a = PRNet::<f32>::new(&small(32)).unwrap().forward(&x).unwrap();
    let b = PRNet::<f32>::new(&small(32)).unwrap().forward(&x).unwrap();
    assert_eq!(a.data(), b.data());
    let mut other = small(32);
    other.seed = 1;
    assert_ne!(PRNet::<f32>::new(&other).unwrap().forward(&x).unwrap().data(), a.data());
}

#[test]
fn inadmissible_extents_are_named() {
    let cfg = small(40);
    let err = PRNet::<f32>::new(&cfg).unwrap_err();
    assert!(matches!(err, Error::Divisibility { .. }), "{err}");
    assert!(err.to_string().contains("16"), "{err}");

    let mut no_cfa = cfg.clone();
    no_cfa.use_cfa = false;
    let model = PRNet::<f32>::new(&no_cfa).unwrap();
    assert_eq!(model.forward(&input(1, 40, 11)).unwrap().shape(), [1, 10, 40, 40]);
    let wrong = model.forward(&input(1, 48, 11)).unwrap_err();
    assert!(matches!(wrong, Error::Shape { .. }));
}

#[test]
fn zero_parameters_give_zero_logits() {
    let model = PRNet::<f32>::new(&small(32)).unwrap();
    model.visit_params("", &mut |_, p| p.fill(0.0).unwrap());
    let y = model.forward(&input(1, 32, 12)).unwrap();
    assert!(y.data().iter().all(|&v| v == 0.0));
}
