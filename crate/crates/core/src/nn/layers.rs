use rand_chacha::ChaCha8Rng;

use super::param::{constant, join, kaiming_uniform, Module, Param};
use crate::error::Result;
use crate::tensor::ops::{self, Conv2dOptions};
use crate::tensor::{Element, Tensor};

/// Square "same" convolution with optional bias.
#[derive(Debug)]
pub struct Conv2d<T: Element> {
    pub weight: Param<T>,
    pub bias: Option<Param<T>>,
    pub kernel: usize,
}

impl<T: Element> Conv2d<T> {
    pub fn new(rng: &mut ChaCha8Rng, cin: usize, cout: usize, kernel: usize, bias: bool, slope: f64) -> Result<Self> {
        Ok(Self {
            weight: kaiming_uniform(rng, &[cout, cin, kernel, kernel], cin * kernel * kernel, slope)?,
            bias: if bias { Some(constant(&[cout], 0.0)?) } else { None },
            kernel,
        })
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let b = self.bias.as_ref().map(|b| b.get());
        ops::conv2d(x, &self.weight.get(), b.as_ref(), Conv2dOptions::same(self.kernel))
    }
}

impl<T: Element> Module<T> for Conv2d<T> {
    fn visit_params<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(&str, &'a Param<T>)) {
        f(&join(prefix, "weight"), &self.weight);
        if let Some(b) = &self.bias {
            f(&join(prefix, "bias"), b);
        }
    }
}

/// Channel-wise layer norm over NCHW features.
#[derive(Debug)]
pub struct LayerNorm2d<T: Element> {
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub eps: f64,
}

impl<T: Element> LayerNorm2d<T> {
    pub fn new(channels: usize, eps: f64) -> Result<Self> {
        Ok(Self {
            gamma: constant(&[channels], 1.0)?,
            beta: constant(&[channels], 0.0)?,
            eps,
        })
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        ops::layernorm(x, &self.gamma.get(), &self.beta.get(), T::from_f64_lossy(self.eps))
    }
}

impl<T: Element> Module<T> for LayerNorm2d<T> {
    fn visit_params<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(&str, &'a Param<T>)) {
        f(&join(prefix, "gamma"), &self.gamma);
        f(&join(prefix, "beta"), &self.beta);
    }
}

/// Learned 2× upsampling.
#[derive(Debug)]
pub struct UpConv2x2<T: Element> {
    pub weight: Param<T>,
    pub bias: Param<T>,
}

impl<T: Element> UpConv2x2<T> {
    pub fn new(rng: &mut ChaCha8Rng, cin: usize, cout: usize, slope: f64) -> Result<Self> {
        Ok(Self {
            weight: kaiming_uniform(rng, &[cin, cout, 2, 2], cin, slope)?,
            bias: constant(&[cout], 0.0)?,
        })
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        ops::transposed_conv2x2(x, &self.weight.get(), Some(&self.bias.get()))
    }
}

impl<T: Element> Module<T> for UpConv2x2<T> {
    fn visit_params<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(&str, &'a Param<T>)) {
        f(&join(prefix, "weight"), &self.weight);
        f(&join(prefix, "bias"), &self.bias);
    }
}

/// Two 3×3 conv + leaky ReLU layers (the classic UNet block).
#[derive(Debug)]
pub struct DoubleConv<T: Element> {
    pub conv1: Conv2d<T>,
    pub conv2: Conv2d<T>,
    pub slope: f64,
}

impl<T: Element> DoubleConv<T> {
    pub fn new(rng: &mut ChaCha8Rng, cin: usize, cout: usize, slope: f64) -> Result<Self> {
        Ok(Self {
            conv1: Conv2d::new(rng, cin, cout, 3, true, slope)?,
            conv2: Conv2d::new(rng, cout, cout, 3, true, slope)?,
            slope,
        })
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let s = T::from_f64_lossy(self.slope);
        let h = self.conv1.forward(x)?.leaky_relu(s)?;
        self.conv2.forward(&h)?.leaky_relu(s)
    }
}

impl<T: Element> Module<T> for DoubleConv<T> {
    fn visit_params<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(&str, &'a Param<T>)) {
        self.conv1.visit_params(&join(prefix, "conv1"), f);
        self.conv2.visit_params(&join(prefix, "conv2"), f);
    }
}
