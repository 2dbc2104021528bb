//! Wavelet-domain depthwise convolution with a large effective receptive field.
//!
//! At each level the running low-pass band is split into four Haar subbands,
//! each subband is depthwise-convolved and scaled by a per-channel gain, and
//! the next level recurses on the convolved LL. Coming back up, the deeper
//! level's synthesis is added to the convolved LL before this level's
//! synthesis. A depthwise convolution of the raw input is added at the end.

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::param::{constant, join, kaiming_uniform, Module, Param};
use crate::tensor::ops;
use crate::tensor::{Element, Tensor};
use crate::wavelet::{haar_dwt2, haar_idwt2, Band, Subbands};

/// Parameters for one decomposition level, indexed by [`Band`] order.
#[derive(Debug)]
pub struct WaveletLevel<T: Element> {
    pub kernels: [Param<T>; 4],
    pub gains: [Param<T>; 4],
}

#[derive(Debug)]
pub struct WTConvLayer<T: Element> {
    pub channels: usize,
    pub kernel_size: usize,
    pub base_weight: Param<T>,
    pub levels: Vec<WaveletLevel<T>>,
}

/// Effective receptive field along each axis: `2^levels·(k−1) + 1`.
pub fn wtconv_receptive_field(levels: u32, k: usize) -> usize {
    (1usize << levels) * (k - 1) + 1
}

impl<T: Element> WTConvLayer<T> {
    pub fn new(rng: &mut ChaCha8Rng, channels: usize, kernel_size: usize, levels: usize, slope: f64) -> Result<Self> {
        if kernel_size.is_multiple_of(2) {
            return Err(Error::Config(format!("wtconv kernel {kernel_size} must be odd")));
        }
        let shape = [channels, 1, kernel_size, kernel_size];
        let fan_in = kernel_size * kernel_size;
        let base_weight = kaiming_uniform(rng, &shape, fan_in, slope)?;
        let mut lv = Vec::with_capacity(levels);
        for _ in 0..levels {
            let kernels = [
                kaiming_uniform(rng, &shape, fan_in, slope)?,
                kaiming_uniform(rng, &shape, fan_in, slope)?,
                kaiming_uniform(rng, &shape, fan_in, slope)?,
                kaiming_uniform(rng, &shape, fan_in, slope)?,
            ];
            let gains = [
                constant(&[channels], 1.0)?,
                constant(&[channels], 1.0)?,
                constant(&[channels], 1.0)?,
                constant(&[channels], 1.0)?,
            ];
            lv.push(WaveletLevel { kernels, gains });
        }
        Ok(Self {
            channels,
            kernel_size,
            base_weight,
            levels: lv,
        })
    }

    pub fn num_levels(&self) -> usize {
        self.levels.len()
    }

    /// Spatial extents must be multiples of this.
    pub fn required_multiple(&self) -> usize {
        1 << self.levels.len()
    }

    pub fn receptive_field(&self) -> usize {
        wtconv_receptive_field(self.levels.len() as u32, self.kernel_size)
    }

    fn pad(&self) -> usize {
        (self.kernel_size - 1) / 2
    }

    fn band_conv(&self, x: &Tensor<T>, level: usize, band: usize) -> Result<Tensor<T>> {
        let lv = &self.levels[level];
        let y = ops::depthwise_conv2d(x, &lv.kernels[band].get(), self.pad())?;
        let gain = lv.gains[band].get().reshape(&[1, self.channels, 1, 1])?;
        y.mul(&gain)
    }

    fn level_forward(&self, x: &Tensor<T>, level: usize) -> Result<Tensor<T>> {
        let s = haar_dwt2(x)?;
        let ll = self.band_conv(&s.ll, level, 0)?;
        let lh = self.band_conv(&s.lh, level, 1)?;
        let hl = self.band_conv(&s.hl, level, 2)?;
        let hh = self.band_conv(&s.hh, level, 3)?;
        let ll = if level + 1 < self.levels.len() {
            ll.add(&self.level_forward(&ll, level + 1)?)?
        } else {
            ll
        };
        haar_idwt2(&Subbands { ll, lh, hl, hh })
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let [_, c, h, w] = x.dims4("wtconv")?;
        if c != self.channels {
            return Err(Error::shape(
                "wtconv",
                format!("{c} channels, layer has {}", self.channels),
            ));
        }
        let m = self.required_multiple();
        if h % m != 0 || w % m != 0 {
            return Err(Error::divisibility(
                "wtconv",
                format!(
                    "spatial extent {h}x{w} must be divisible by 2^{} = {m}",
                    self.levels.len()
                ),
            ));
        }
        let base = ops::depthwise_conv2d(x, &self.base_weight.get(), self.pad())?;
        if self.levels.is_empty() {
            return Ok(base);
        }
        base.add(&self.level_forward(x, 0)?)
    }

    /// Zero-pads to the next admissible extent, applies the layer, crops back.
    pub fn forward_padded(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let [_, _, h, w] = x.dims4("wtconv")?;
        let m = self.required_multiple();
        let (hp, wp) = (h.div_ceil(m) * m, w.div_ceil(m) * m);
        if (hp, wp) == (h, w) {
            return self.forward(x);
        }
        let y = self.forward(&ops::pad_bottom_right(x, hp, wp)?)?;
        ops::crop_top_left(&y, h, w)
    }
}

impl<T: Element> Module<T> for WTConvLayer<T> {
    fn visit_params<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(&str, &'a Param<T>)) {
        f(&join(prefix, "base_weight"), &self.base_weight);
        for (l, lv) in self.levels.iter().enumerate() {
            let lp = join(prefix, &format!("level{l}"));
            for (b, band) in Band::ALL.iter().enumerate() {
                f(&format!("{lp}.{}_weight", band.name()), &lv.kernels[b]);
                f(&format!("{lp}.{}_gain", band.name()), &lv.gains[b]);
            }
        }
    }
}
