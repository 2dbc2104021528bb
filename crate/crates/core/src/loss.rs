//! Cross-entropy and soft Dice losses over NCHW logits and integer masks.

use crate::error::{Error, Result};
use crate::tensor::ops;
use crate::tensor::{Element, Tensor};

/// Smoothing term of the soft Dice ratio.
pub const DICE_EPS: f64 = 1e-5;

fn check_target<T: Element>(logits: &Tensor<T>, target: &[u8], op: &'static str) -> Result<[usize; 4]> {
    let dims = logits.dims4(op)?;
    let [n, k, h, w] = dims;
    if target.len() != n * h * w {
        return Err(Error::shape(
            op,
            format!("target has {} labels for logits {:?}", target.len(), logits.shape()),
        ));
    }
    if let Some(&bad) = target.iter().find(|&&t| t as usize >= k) {
        return Err(Error::LabelOutOfRange {
            label: bad as usize,
            classes: k,
        });
    }
    Ok(dims)
}

/// One-hot encoding `[N,K,H,W]` of an `[N,H,W]` mask (constant tensor).
pub fn one_hot<T: Element>(target: &[u8], n: usize, k: usize, h: usize, w: usize) -> Tensor<T> {
    let hw = h * w;
    let mut data = vec![T::zero(); n * k * hw];
    for b in 0..n {
        for p in 0..hw {
            let c = target[b * hw + p] as usize;
            data[(b * k + c) * hw + p] = T::one();
        }
    }
    Tensor::new(&[n, k, h, w], data).expect("one-hot shape")
}

/// Mean over pixels of `-log softmax(logits)[target]`.
pub fn ce_loss<T: Element>(logits: &Tensor<T>, target: &[u8]) -> Result<Tensor<T>> {
    let [n, k, h, w] = check_target(logits, target, "ce_loss")?;
    let ls = ops::log_softmax_channel(logits)?;
    let picked = ls.mul(&one_hot(target, n, k, h, w))?.sum()?;
    picked.scale(-T::one() / T::from_usize(n * h * w).expect("pixel count"))
}

/// Per-class soft Dice `(2·Σpg + eps)/(Σp + Σg + eps)` as `[1,K,1,1]`, sums
/// running over batch and pixels.
pub fn dice_per_class<T: Element>(logits: &Tensor<T>, target: &[u8], eps: f64) -> Result<Tensor<T>> {
    let [n, k, h, w] = check_target(logits, target, "dice_loss")?;
    if eps <= 0.0 {
        return Err(Error::InvalidArgument("dice eps must be positive".into()));
    }
    let eps = T::from_f64_lossy(eps);
    let p = ops::softmax_channel(logits)?;
    let g = one_hot::<T>(target, n, k, h, w);
    let inter = p.mul(&g)?.sum_axes(&[0, 2, 3])?;
    let psum = p.sum_axes(&[0, 2, 3])?;
    let gsum = g.sum_axes(&[0, 2, 3])?;
    let num = inter.scale(T::from_f64_lossy(2.0))?.add_scalar(eps)?;
    let den = psum.add(&gsum)?.add_scalar(eps)?;
    num.div(&den)
}

/// `1 − mean_k dice_k`, background included.
pub fn dice_loss<T: Element>(logits: &Tensor<T>, target: &[u8], eps: f64) -> Result<Tensor<T>> {
    affine_one_minus(&dice_per_class(logits, target, eps)?.mean()?)
}

fn affine_one_minus<T: Element>(x: &Tensor<T>) -> Result<Tensor<T>> {
    ops::affine_scalar(x, -T::one(), T::one())
}

/// Unit-weighted `ce_loss + dice_loss`.
pub fn combined_loss<T: Element>(logits: &Tensor<T>, target: &[u8]) -> Result<Tensor<T>> {
    ce_loss(logits, target)?.add(&dice_loss(logits, target, DICE_EPS)?)
}
