//! Full network: conv stem, four encoder stages, CFA-weighted skips, UNet
//! decoder and a pointwise segmentation head producing raw logits.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::cfa::CfaBlock;
use super::config::PRNetConfig;
use super::layers::{Conv2d, DoubleConv, LayerNorm2d, UpConv2x2};
use super::mwcn::MwcnBlock;
use super::param::{join, Module, Param, LINEAR};
use crate::error::{Error, Result};
use crate::tensor::ops;
use crate::tensor::{Element, Tensor};

#[derive(Debug)]
pub struct Stem<T: Element> {
    pub conv: Conv2d<T>,
    pub norm: LayerNorm2d<T>,
    pub slope: f64,
}

impl<T: Element> Stem<T> {
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let y = self.norm.forward(&self.conv.forward(x)?)?;
        y.leaky_relu(T::from_f64_lossy(self.slope))
    }
}

#[derive(Debug)]
pub enum EncoderStage<T: Element> {
    Mwcn { proj: Conv2d<T>, blocks: Vec<MwcnBlock<T>> },
    Plain(DoubleConv<T>),
}

impl<T: Element> EncoderStage<T> {
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        match self {
            EncoderStage::Mwcn { proj, blocks } => {
                let mut h = proj.forward(x)?;
                for b in blocks {
                    h = b.forward(&h)?;
                }
                Ok(h)
            }
            EncoderStage::Plain(dc) => dc.forward(x),
        }
    }
}

impl<T: Element> Module<T> for EncoderStage<T> {
    fn visit_params<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(&str, &'a Param<T>)) {
        match self {
            EncoderStage::Mwcn { proj, blocks } => {
                proj.visit_params(&join(prefix, "proj"), f);
                for (i, b) in blocks.iter().enumerate() {
                    b.visit_params(&join(prefix, &format!("block{i}")), f);
                }
            }
            EncoderStage::Plain(dc) => dc.visit_params(&join(prefix, "double_conv"), f),
        }
    }
}

/// Upsample (optional), concatenate the skip, two 3×3 conv + leaky ReLU.
#[derive(Debug)]
pub struct DecoderBlock<T: Element> {
    pub up: Option<UpConv2x2<T>>,
    pub convs: DoubleConv<T>,
}

impl<T: Element> DecoderBlock<T> {
    pub fn forward(&self, x: &Tensor<T>, skip: &Tensor<T>) -> Result<Tensor<T>> {
        let x = match &self.up {
            Some(up) => up.forward(x)?,
            None => x.clone(),
        };
        self.convs.forward(&ops::concat_channels(&[&x, skip])?)
    }
}

impl<T: Element> Module<T> for DecoderBlock<T> {
    fn visit_params<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(&str, &'a Param<T>)) {
        if let Some(up) = &self.up {
            up.visit_params(&join(prefix, "up"), f);
        }
        self.convs.visit_params(&join(prefix, "convs"), f);
    }
}

/// Encoder outputs: the stem map `X_0` and the four hierarchical features.
#[derive(Debug, Clone)]
pub struct EncoderFeatures<T: Element> {
    pub x0: Tensor<T>,
    pub f: [Tensor<T>; 4],
}

#[derive(Debug)]
pub struct PRNet<T: Element = f32> {
    config: PRNetConfig,
    pub stem: Stem<T>,
    pub stages: Vec<EncoderStage<T>>,
    /// Skip attention for `X_0, F_1, F_2, F_3`; empty when CFA is off.
    pub cfa: Vec<CfaBlock<T>>,
    /// Three upsampling blocks then the full-resolution fusion block.
    pub decoder: Vec<DecoderBlock<T>>,
    pub head: Conv2d<T>,
}

impl<T: Element> PRNet<T> {
    pub fn new(config: &PRNetConfig) -> Result<Self> {
        config.validate()?;
        let cfg = config.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let slope = cfg.leaky_slope;
        let sc = &cfg.stage_channels;

        let stem = Stem {
            conv: Conv2d::new(&mut rng, cfg.in_channels, cfg.stem_channels, 3, true, slope)?,
            norm: LayerNorm2d::new(cfg.stem_channels, cfg.layernorm_eps)?,
            slope,
        };

        let mut stages = Vec::with_capacity(4);
        let mut cin = cfg.stem_channels;
        for (i, &width) in sc.iter().enumerate() {
            let (h, w) = (cfg.input_height >> i, cfg.input_width >> i);
            let stage = if cfg.use_mwcn {
                let proj = Conv2d::new(&mut rng, cin, width, 1, true, LINEAR)?;
                let blocks = (0..cfg.blocks_per_stage[i])
                    .map(|_| MwcnBlock::new(&mut rng, &cfg, width, h, w))
                    .collect::<Result<Vec<_>>>()?;
                EncoderStage::Mwcn { proj, blocks }
            } else {
                EncoderStage::Plain(DoubleConv::new(&mut rng, cin, width, slope)?)
            };
            stages.push(stage);
            cin = width;
        }

        let mut decoder = Vec::with_capacity(4);
        // (input width, skip width, output width) for the three up-blocks.
        for (xin, skip, out) in [(sc[3], sc[2], sc[2]), (sc[2], sc[1], sc[1]), (sc[1], sc[0], sc[0])] {
            decoder.push(DecoderBlock {
                up: Some(UpConv2x2::new(&mut rng, xin, out, LINEAR)?),
                convs: DoubleConv::new(&mut rng, out + skip, out, slope)?,
            });
        }
        decoder.push(DecoderBlock {
            up: None,
            convs: DoubleConv::new(&mut rng, sc[0] + cfg.stem_channels, sc[0], slope)?,
        });

        let cfa = if cfg.use_cfa {
            [cfg.stem_channels, sc[0], sc[1], sc[2]]
                .iter()
                .map(|&c| CfaBlock::new(&mut rng, c, cfg.cfa_patch))
                .collect::<Result<Vec<_>>>()?
        } else {
            Vec::new()
        };

        let head = Conv2d::new(&mut rng, sc[0], cfg.num_classes, 1, true, LINEAR)?;
        Ok(Self {
            config: cfg,
            stem,
            stages,
            cfa,
            decoder,
            head,
        })
    }

    pub fn config(&self) -> &PRNetConfig {
        &self.config
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        let [_, c, h, w] = x.dims4("model_forward")?;
        if c != self.config.in_channels {
            return Err(Error::shape(
                "model_forward",
                format!("{c} input channels, model expects {}", self.config.in_channels),
            ));
        }
        self.config.check_input(h, w)?;
        if (h, w) != (self.config.input_height, self.config.input_width) {
            return Err(Error::shape(
                "model_forward",
                format!(
                    "input {h}x{w} does not match the {}x{} extent the model was built for",
                    self.config.input_height, self.config.input_width
                ),
            ));
        }
        Ok(())
    }

    pub fn conv_stem(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.stem.forward(x)
    }

    /// `F_i` is captured before pooling; stage 4's pooled output is unused.
    pub fn encoder_forward(&self, x0: &Tensor<T>) -> Result<[Tensor<T>; 4]> {
        let [_, _, h, w] = x0.dims4("encoder")?;
        if h % 8 != 0 || w % 8 != 0 {
            return Err(Error::divisibility(
                "encoder",
                format!("feature extent {h}x{w} must be divisible by 8"),
            ));
        }
        let mut feats = Vec::with_capacity(4);
        let mut cur = x0.clone();
        for (i, stage) in self.stages.iter().enumerate() {
            let f = stage.forward(&cur)?;
            if i < 3 {
                cur = ops::maxpool2x2(&f)?;
            }
            feats.push(f);
        }
        Ok(feats.try_into().expect("four stages"))
    }

    pub fn encode(&self, x: &Tensor<T>) -> Result<EncoderFeatures<T>> {
        self.check_input(x)?;
        let x0 = self.conv_stem(x)?;
        let f = self.encoder_forward(&x0)?;
        Ok(EncoderFeatures { x0, f })
    }

    /// Applies CFA (when enabled) to `[X_0, F_1, F_2, F_3]`.
    pub fn skips(&self, feats: &EncoderFeatures<T>) -> Result<[Tensor<T>; 4]> {
        let raw = [&feats.x0, &feats.f[0], &feats.f[1], &feats.f[2]];
        let mut out = Vec::with_capacity(4);
        for (i, t) in raw.into_iter().enumerate() {
            out.push(match self.cfa.get(i) {
                Some(block) => block.forward(t)?,
                None => t.clone(),
            });
        }
        Ok(out.try_into().expect("four skips"))
    }

    /// `skips` ordered `[X_0, F_1, F_2, F_3]` (already attention-weighted).
    pub fn decoder_forward(&self, f4: &Tensor<T>, skips: &[Tensor<T>; 4]) -> Result<Tensor<T>> {
        let mut h = f4.clone();
        for (block, skip) in self.decoder.iter().zip([&skips[3], &skips[2], &skips[1], &skips[0]]) {
            h = block.forward(&h, skip)?;
        }
        Ok(h)
    }

    /// Raw logits `[N, num_classes, H, W]`.
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let feats = self.encode(x)?;
        let skips = self.skips(&feats)?;
        let dec = self.decoder_forward(&feats.f[3], &skips)?;
        self.head.forward(&dec)
    }

    /// CFA grouping permutations keyed by block name.
    pub fn cfa_permutations(&self) -> Vec<(String, Vec<usize>, Vec<usize>)> {
        self.cfa
            .iter()
            .enumerate()
            .map(|(i, b)| (format!("cfa{i}"), b.perm_s.clone(), b.perm_2s.clone()))
            .collect()
    }

    pub fn set_cfa_permutations(&mut self, perms: &[(String, Vec<usize>, Vec<usize>)]) -> Result<()> {
        if perms.len() != self.cfa.len() {
            return Err(Error::Checkpoint(format!(
                "{} CFA permutation sets for {} blocks",
                perms.len(),
                self.cfa.len()
            )));
        }
        for (block, (_, ps, p2s)) in self.cfa.iter_mut().zip(perms) {
            block.set_permutations(ps.clone(), p2s.clone())?;
        }
        Ok(())
    }

    /// Same parameters in another precision.
    pub fn cast<U: Element>(&self) -> Result<PRNet<U>> {
        let mut other = PRNet::<U>::new(&self.config)?;
        other.set_cfa_permutations(&self.cfa_permutations())?;
        let src = self.named_parameters();
        let mut i = 0;
        let mut result = Ok(());
        other.visit_params("", &mut |name, p| {
            let (sname, t) = &src[i];
            debug_assert_eq!(sname, name);
            if result.is_ok() {
                result = p.set(t.data().iter().map(|v| U::from_f64_lossy(v.as_f64())).collect());
            }
            i += 1;
        });
        result.map(|_| other)
    }
}

impl<T: Element> Module<T> for PRNet<T> {
    fn visit_params<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(&str, &'a Param<T>)) {
        self.stem.conv.visit_params(&join(prefix, "stem.conv"), f);
        self.stem.norm.visit_params(&join(prefix, "stem.norm"), f);
        for (i, s) in self.stages.iter().enumerate() {
            s.visit_params(&join(prefix, &format!("encoder.stage{i}")), f);
        }
        for (i, c) in self.cfa.iter().enumerate() {
            c.visit_params(&join(prefix, &format!("cfa{i}")), f);
        }
        for (i, d) in self.decoder.iter().enumerate() {
            d.visit_params(&join(prefix, &format!("decoder.block{i}")), f);
        }
        self.head.visit_params(&join(prefix, "head"), f);
    }
}
