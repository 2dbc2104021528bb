//! Oracles shared by the integration tests and the acceptance suite.
#![allow(dead_code)]

use prnet::PRNetConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f32> {
    (0..n).map(|_| rng.random_range(-1.0f32..1.0)).collect()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Direct seven-loop cross-correlation in f64.
#[allow(clippy::too_many_arguments)]
pub fn naive_conv2d(
    x: &[f32],
    (n, cin, h, w): (usize, usize, usize, usize),
    wt: &[f32],
    (cout, k): (usize, usize),
    bias: Option<&[f32]>,
    stride: usize,
    pad: usize,
    groups: usize,
) -> (Vec<f64>, usize, usize) {
    let ho = (h + 2 * pad - k) / stride + 1;
    let wo = (w + 2 * pad - k) / stride + 1;
    let cin_g = cin / groups;
    let cout_g = cout / groups;
    let mut out = vec![0.0f64; n * cout * ho * wo];
    for b in 0..n {
        for co in 0..cout {
            let g = co / cout_g;
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = bias.map_or(0.0, |bs| bs[co] as f64);
                    for ci in 0..cin_g {
                        let c = g * cin_g + ci;
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                let xv = x[((b * cin + c) * h + iy as usize) * w + ix as usize] as f64;
                                let wv = wt[((co * cin_g + ci) * k + ky) * k + kx] as f64;
                                acc += xv * wv;
                            }
                        }
                    }
                    out[((b * cout + co) * ho + oy) * wo + ox] = acc;
                }
            }
        }
    }
    (out, ho, wo)
}

/// Scatter form of the stride-2 2×2 transposed convolution, `wt [Cin,Cout,2,2]`.
pub fn naive_transposed2x2(
    x: &[f32],
    (n, cin, h, w): (usize, usize, usize, usize),
    wt: &[f32],
    cout: usize,
    bias: Option<&[f32]>,
) -> Vec<f64> {
    let (ho, wo) = (2 * h, 2 * w);
    let mut out = vec![0.0f64; n * cout * ho * wo];
    for b in 0..n {
        for co in 0..cout {
            let bv = bias.map_or(0.0, |bs| bs[co] as f64);
            for p in 0..ho * wo {
                out[(b * cout + co) * ho * wo + p] = bv;
            }
        }
        for ci in 0..cin {
            for i in 0..h {
                for j in 0..w {
                    let xv = x[((b * cin + ci) * h + i) * w + j] as f64;
                    for co in 0..cout {
                        for a in 0..2 {
                            for c in 0..2 {
                                let wv = wt[((ci * cout + co) * 2 + a) * 2 + c] as f64;
                                out[((b * cout + co) * ho + 2 * i + a) * wo + 2 * j + c] += xv * wv;
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// `max |a − b| / max |b|`.
pub fn rel_err(a: &[f32], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-30);
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((*x as f64 - y).abs())) / scale
}

/// One conv case: `(n, cin, h, w, cout, k, stride, pad, groups, bias)`.
pub type ConvCase = (usize, usize, usize, usize, usize, usize, usize, usize, usize, bool);

/// Grid of shape/kernel/stride/padding/group combinations (more than 50).
pub fn conv_grid() -> Vec<ConvCase> {
    let mut cases = Vec::new();
    for &(cin, cout, groups) in &[(1, 1, 1), (3, 4, 1), (4, 6, 2), (6, 6, 6), (8, 4, 4), (2, 8, 1)] {
        for &k in &[1usize, 3, 5] {
            for &(stride, pad) in &[(1, k / 2), (2, 0), (1, 0)] {
                let (h, w) = if k == 5 { (9, 7) } else { (7, 10) };
                let n = if cin % 2 == 0 { 2 } else { 1 };
                cases.push((n, cin, h, w, cout, k, stride, pad, groups, (cin + k) % 2 == 0));
            }
        }
    }
    cases
}

fn conv(cin: usize, cout: usize, k: usize) -> usize {
    cout * cin * k * k + cout
}

fn double_conv(cin: usize, cout: usize) -> usize {
    conv(cin, cout, 3) + conv(cout, cout, 3)
}

/// WTConv: a depthwise base kernel plus, per level, four depthwise subband
/// kernels and four per-channel gains.
pub fn wtconv_params(c: usize, k: usize, levels: usize) -> usize {
    c * k * k * (1 + 4 * levels) + 4 * levels * c
}

/// One wavelet block: layer norm, per kernel a conv and a WTConv (plus an
/// α,β map pair of the stage extent when gated), then a two-layer pointwise FFN.
pub fn mwcn_block_params(c: usize, h: usize, w: usize, kernels: &[usize], levels: usize, gfwm: bool) -> usize {
    let per_kernel: usize = kernels
        .iter()
        .map(|&k| conv(c, c, k) + wtconv_params(c, k, levels) + if gfwm { 2 * h * w } else { 0 })
        .sum();
    2 * c + per_kernel + 2 * conv(c, c, 1)
}

/// Whole-model count derived from the architecture description alone.
pub fn model_params(cfg: &PRNetConfig) -> usize {
    let cs = cfg.stem_channels;
    let sc = &cfg.stage_channels;
    let mut total = conv(cfg.in_channels, cs, 3) + 2 * cs;
    let mut cin = cs;
    for (i, &c) in sc.iter().enumerate() {
        total += if cfg.use_mwcn {
            let (h, w) = (cfg.input_height >> i, cfg.input_width >> i);
            conv(cin, c, 1)
                + cfg.blocks_per_stage[i] * mwcn_block_params(c, h, w, &cfg.kernel_set, cfg.wtconv_levels, cfg.use_gfwm)
        } else {
            double_conv(cin, c)
        };
        cin = c;
    }
    for (xin, skip, out) in [(sc[3], sc[2], sc[2]), (sc[2], sc[1], sc[1]), (sc[1], sc[0], sc[0])] {
        total += xin * out * 4 + out + double_conv(out + skip, out);
    }
    total += double_conv(sc[0] + cs, sc[0]);
    if cfg.use_cfa {
        total += [cs, sc[0], sc[1], sc[2]].iter().map(|&c| conv(c, c, 1)).sum::<usize>();
    }
    total + conv(sc[0], cfg.num_classes, 1)
}

/// Vanilla UNet with the same stem, written out layer by layer.
pub fn unet_params(in_ch: usize, classes: usize, widths: [usize; 4], stem: usize) -> usize {
    let [a, b, c, d] = widths;
    let stem_p = 3 * 3 * in_ch * stem + stem + 2 * stem;
    let enc = double_conv(stem, a) + double_conv(a, b) + double_conv(b, c) + double_conv(c, d);
    let ups = (4 * d * c + c) + (4 * c * b + b) + (4 * b * a + a);
    let dec = double_conv(2 * c, c) + double_conv(2 * b, b) + double_conv(2 * a, a) + double_conv(a + stem, a);
    stem_p + enc + ups + dec + (a * classes + classes)
}
