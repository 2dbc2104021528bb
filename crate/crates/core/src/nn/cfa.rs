//! Channel fusion attention for skip connections.
//!
//! Channel statistics are pooled at three scales: the raw map, `s×s` patches
//! and `2s×2s` patches folded into channels. The folded statistics are
//! reduced back to `C` entries by summing fixed random groups of `s²` (resp.
//! `4s²`) channels. The three length-`C` vectors are interleaved and averaged
//! over the scale axis, then a pointwise conv and a sigmoid give one weight
//! per channel.

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use super::layers::Conv2d;
use super::param::{join, Module, Param, LINEAR};
use crate::error::{Error, Result};
use crate::tensor::ops;
use crate::tensor::{Element, Tensor};

#[derive(Debug)]
pub struct CfaBlock<T: Element> {
    pub channels: usize,
    pub patch: usize,
    pub conv: Conv2d<T>,
    /// Grouping of the `s²·C` folded channels: group `c` is
    /// `perm_s[c·s² .. (c+1)·s²]`.
    pub perm_s: Vec<usize>,
    /// Same for the `4s²·C` channels of the `2s` fold.
    pub perm_2s: Vec<usize>,
}

fn random_permutation(rng: &mut ChaCha8Rng, n: usize) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    p.shuffle(rng);
    p
}

/// Channel order that interleaves `[x_0 … x_{C-1}, y_0 …, z_0 …]` into
/// `[x_0, y_0, z_0, x_1, …]`.
pub fn interleave_order(channels: usize, scales: usize) -> Vec<usize> {
    (0..channels)
        .flat_map(|c| (0..scales).map(move |j| j * channels + c))
        .collect()
}

impl<T: Element> CfaBlock<T> {
    pub fn new(rng: &mut ChaCha8Rng, channels: usize, patch: usize) -> Result<Self> {
        let conv = Conv2d::new(rng, channels, channels, 1, true, LINEAR)?;
        let perm_s = random_permutation(rng, patch * patch * channels);
        let perm_2s = random_permutation(rng, 4 * patch * patch * channels);
        Ok(Self {
            channels,
            patch,
            conv,
            perm_s,
            perm_2s,
        })
    }

    pub fn set_permutations(&mut self, perm_s: Vec<usize>, perm_2s: Vec<usize>) -> Result<()> {
        let ok = |p: &[usize], n: usize| {
            let mut seen = vec![false; n];
            p.len() == n && p.iter().all(|&i| i < n && !std::mem::replace(&mut seen[i], true))
        };
        let s2 = self.patch * self.patch * self.channels;
        if !ok(&perm_s, s2) || !ok(&perm_2s, 4 * s2) {
            return Err(Error::Checkpoint("invalid CFA permutation".into()));
        }
        self.perm_s = perm_s;
        self.perm_2s = perm_2s;
        Ok(())
    }

    /// Pooled statistics of the `p×p` fold, group-summed back to `[N,C,1,1]`.
    fn folded_stat(&self, f: &Tensor<T>, p: usize, perm: &[usize]) -> Result<Tensor<T>> {
        let n = f.shape()[0];
        let c = self.channels;
        let pooled = ops::avgpool_global(&ops::patch_partition(f, p)?)?;
        let grouped = ops::index_select_channels(&pooled, perm)?;
        grouped
            .reshape(&[n, c, p * p, 1])?
            .sum_axes(&[2])?
            .reshape(&[n, c, 1, 1])
    }

    /// Attention weights `A` of shape `[N,C,1,1]`, each in (0, 1).
    pub fn attention(&self, f: &Tensor<T>) -> Result<Tensor<T>> {
        let [n, c, h, w] = f.dims4("cfa")?;
        if c != self.channels {
            return Err(Error::shape(
                "cfa",
                format!("{c} channels, block has {}", self.channels),
            ));
        }
        let s = self.patch;
        if h % (2 * s) != 0 || w % (2 * s) != 0 {
            return Err(Error::divisibility(
                "cfa",
                format!("feature extent {h}x{w} must be divisible by 2s = {}", 2 * s),
            ));
        }
        let raw = ops::avgpool_global(f)?;
        let fs = self.folded_stat(f, s, &self.perm_s)?;
        let f2s = self.folded_stat(f, 2 * s, &self.perm_2s)?;
        let cat = ops::concat_channels(&[&raw, &fs, &f2s])?;
        let shuffled = ops::index_select_channels(&cat, &interleave_order(c, 3))?;
        let mixed = shuffled
            .reshape(&[n, c, 3, 1])?
            .mean_axes(&[2])?
            .reshape(&[n, c, 1, 1])?;
        self.conv.forward(&mixed)?.sigmoid()
    }

    pub fn forward(&self, f: &Tensor<T>) -> Result<Tensor<T>> {
        f.mul(&self.attention(f)?)
    }
}

impl<T: Element> Module<T> for CfaBlock<T> {
    fn visit_params<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(&str, &'a Param<T>)) {
        self.conv.visit_params(&join(prefix, "conv"), f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn interleave_layout() {
        assert_eq!(interleave_order(2, 3), vec![0, 2, 4, 1, 3, 5]);
    }

    #[test]
    fn zero_conv_gives_half() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let b = CfaBlock::<f32>::new(&mut rng, 3, 2).unwrap();
        b.conv.weight.fill(0.0).unwrap();
        let f = Tensor::new(&[1, 3, 4, 4], (0..48).map(|v| v as f32 * 0.1).collect()).unwrap();
        let a = b.attention(&f).unwrap();
        assert!(a.data().iter().all(|&v| v == 0.5));
        let y = b.forward(&f).unwrap();
        for (o, i) in y.data().iter().zip(f.data()) {
            assert_eq!(*o, 0.5 * i);
        }
    }

    #[test]
    fn permutations_are_validated() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut b = CfaBlock::<f32>::new(&mut rng, 2, 2).unwrap();
        assert!(b.set_permutations(vec![0; 8], (0..32).collect()).is_err());
        b.set_permutations((0..8).rev().collect(), (0..32).collect()).unwrap();
    }
}
