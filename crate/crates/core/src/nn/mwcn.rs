//! Multi-scale wavelet convolution block.
//!
//! ```text
//! I'  = LayerNorm(I)
//! I_1 = α_1 ⊙ Conv_3(I')  + β_1 ⊙ WTConv_3(I')
//! I_2 = α_2 ⊙ Conv_5(I_1) + β_2 ⊙ WTConv_5(I_1)
//! F   = PW(LeakyReLU(PW(I_2))) + I
//! ```
//!
//! α and β are per-pixel `[1,1,H,W]` maps, one pair per level. A singleton
//! kernel set gives a single level.

use rand_chacha::ChaCha8Rng;

use super::config::PRNetConfig;
use super::layers::{Conv2d, LayerNorm2d};
use super::param::{constant, join, Module, Param, LINEAR};
use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};
use crate::wtconv::WTConvLayer;

/// Global-local feature weighting pair.
#[derive(Debug)]
pub struct Gfwm<T: Element> {
    pub alpha: Param<T>,
    pub beta: Param<T>,
}

#[derive(Debug)]
pub struct MwcnLevel<T: Element> {
    pub kernel: usize,
    pub conv: Conv2d<T>,
    pub wtconv: WTConvLayer<T>,
    pub gfwm: Option<Gfwm<T>>,
}

#[derive(Debug)]
pub struct MwcnBlock<T: Element> {
    pub norm: LayerNorm2d<T>,
    pub levels: Vec<MwcnLevel<T>>,
    pub ffn_in: Conv2d<T>,
    pub ffn_out: Conv2d<T>,
    pub slope: f64,
    pub residual: bool,
    pub height: usize,
    pub width: usize,
}

impl<T: Element> MwcnBlock<T> {
    pub fn new(rng: &mut ChaCha8Rng, cfg: &PRNetConfig, channels: usize, height: usize, width: usize) -> Result<Self> {
        let slope = cfg.leaky_slope;
        let mut levels = Vec::with_capacity(cfg.kernel_set.len());
        for &k in &cfg.kernel_set {
            let conv = Conv2d::new(rng, channels, channels, k, true, LINEAR)?;
            let wtconv = WTConvLayer::new(rng, channels, k, cfg.wtconv_levels, LINEAR)?;
            let gfwm = if cfg.use_gfwm {
                Some(Gfwm {
                    alpha: constant(&[1, 1, height, width], 0.5)?,
                    beta: constant(&[1, 1, height, width], 0.5)?,
                })
            } else {
                None
            };
            levels.push(MwcnLevel {
                kernel: k,
                conv,
                wtconv,
                gfwm,
            });
        }
        Ok(Self {
            norm: LayerNorm2d::new(channels, cfg.layernorm_eps)?,
            levels,
            ffn_in: Conv2d::new(rng, channels, channels, 1, true, slope)?,
            ffn_out: Conv2d::new(rng, channels, channels, 1, true, LINEAR)?,
            slope,
            residual: cfg.mwcn_residual,
            height,
            width,
        })
    }

    pub fn forward(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let [_, _, h, w] = input.dims4("mwcn_block")?;
        if (h, w) != (self.height, self.width) {
            return Err(Error::shape(
                "mwcn_block",
                format!(
                    "input {h}x{w} does not match GFWM extent {}x{}",
                    self.height, self.width
                ),
            ));
        }
        let mut cur = self.norm.forward(input)?;
        let half = T::from_f64_lossy(0.5);
        for lv in &self.levels {
            let local = lv.conv.forward(&cur)?;
            let global = lv.wtconv.forward_padded(&cur)?;
            cur = match &lv.gfwm {
                Some(g) => local.mul(&g.alpha.get())?.add(&global.mul(&g.beta.get())?)?,
                None => local.add(&global)?.scale(half)?,
            };
        }
        let hidden = self.ffn_in.forward(&cur)?.leaky_relu(T::from_f64_lossy(self.slope))?;
        let out = self.ffn_out.forward(&hidden)?;
        if self.residual {
            out.add(input)
        } else {
            Ok(out)
        }
    }
}

impl<T: Element> Module<T> for MwcnBlock<T> {
    fn visit_params<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(&str, &'a Param<T>)) {
        self.norm.visit_params(&join(prefix, "norm"), f);
        for (i, lv) in self.levels.iter().enumerate() {
            let lp = join(prefix, &format!("level{i}"));
            lv.conv.visit_params(&join(&lp, "conv"), f);
            lv.wtconv.visit_params(&join(&lp, "wtconv"), f);
            if let Some(g) = &lv.gfwm {
                f(&join(&lp, "alpha"), &g.alpha);
                f(&join(&lp, "beta"), &g.beta);
            }
        }
        self.ffn_in.visit_params(&join(prefix, "ffn_in"), f);
        self.ffn_out.visit_params(&join(prefix, "ffn_out"), f);
    }
}
