//! Reshaping, channel concatenation/selection, patch folding, pad and crop.

use crate::error::{Error, Result};
use crate::tensor::{numel_of, Element, Tensor};

pub fn reshape<T: Element>(x: &Tensor<T>, shape: &[usize]) -> Result<Tensor<T>> {
    if numel_of(shape) != x.numel() {
        return Err(Error::shape(
            "reshape",
            format!("{:?} -> {shape:?} changes element count", x.shape()),
        ));
    }
    Tensor::from_op("reshape", shape.to_vec(), x.to_vec(), vec![x.clone()], |g, _, _| {
        vec![Some(g.to_vec())]
    })
}

/// Concatenates NCHW tensors along the channel axis.
pub fn concat_channels<T: Element>(xs: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let first = xs
        .first()
        .ok_or_else(|| Error::shape("concat_channels", "no inputs"))?
        .dims4("concat_channels")?;
    let [n, _, h, w] = first;
    let mut chans = Vec::with_capacity(xs.len());
    for x in xs {
        let [xn, xc, xh, xw] = x.dims4("concat_channels")?;
        if (xn, xh, xw) != (n, h, w) {
            return Err(Error::shape(
                "concat_channels",
                format!("{:?} vs {:?}", x.shape(), xs[0].shape()),
            ));
        }
        chans.push(xc);
    }
    let hw = h * w;
    let total: usize = chans.iter().sum();
    let mut out = Vec::with_capacity(n * total * hw);
    for b in 0..n {
        for (x, &c) in xs.iter().zip(&chans) {
            out.extend_from_slice(&x.data()[b * c * hw..(b + 1) * c * hw]);
        }
    }
    let inputs: Vec<Tensor<T>> = xs.iter().map(|&t| t.clone()).collect();
    Tensor::from_op(
        "concat_channels",
        vec![n, total, h, w],
        out,
        inputs,
        move |g, _, needs| {
            let mut grads: Vec<Option<Vec<T>>> = chans
                .iter()
                .zip(needs)
                .map(|(&c, &need)| need.then(|| Vec::with_capacity(n * c * hw)))
                .collect();
            for b in 0..n {
                let mut off = b * total * hw;
                for (gi, &c) in grads.iter_mut().zip(&chans) {
                    if let Some(v) = gi {
                        v.extend_from_slice(&g[off..off + c * hw]);
                    }
                    off += c * hw;
                }
            }
            grads
        },
    )
}

/// Gathers channels `indices` of an NCHW tensor (repeats allowed).
pub fn index_select_channels<T: Element>(x: &Tensor<T>, indices: &[usize]) -> Result<Tensor<T>> {
    let [n, c, h, w] = x.dims4("index_select_channels")?;
    if let Some(&bad) = indices.iter().find(|&&i| i >= c) {
        return Err(Error::shape("index_select_channels", format!("index {bad} >= {c}")));
    }
    let hw = h * w;
    let k = indices.len();
    let xd = x.data();
    let mut out = Vec::with_capacity(n * k * hw);
    for b in 0..n {
        for &i in indices {
            let o = (b * c + i) * hw;
            out.extend_from_slice(&xd[o..o + hw]);
        }
    }
    let idx = indices.to_vec();
    Tensor::from_op(
        "index_select_channels",
        vec![n, k, h, w],
        out,
        vec![x.clone()],
        move |g, _, _| {
            let mut gx = vec![T::zero(); n * c * hw];
            for b in 0..n {
                for (j, &i) in idx.iter().enumerate() {
                    let src = (b * k + j) * hw;
                    let dst = (b * c + i) * hw;
                    for p in 0..hw {
                        gx[dst + p] += g[src + p];
                    }
                }
            }
            vec![Some(gx)]
        },
    )
}

/// Folds each `p×p` spatial block into channels:
/// `[N,C,H,W] -> [N,p²·C,H/p,W/p]`, where output channel `(py·p + px)·C + c`
/// holds input channel `c` at offset `(py, px)` inside the block.
pub fn patch_partition<T: Element>(x: &Tensor<T>, p: usize) -> Result<Tensor<T>> {
    let [n, c, h, w] = x.dims4("patch_partition")?;
    if p == 0 || h % p != 0 || w % p != 0 {
        return Err(Error::divisibility(
            "patch_partition",
            format!("patch size {p} must divide {h}x{w}"),
        ));
    }
    let (ho, wo) = (h / p, w / p);
    let co = p * p * c;
    let mut out = vec![T::zero(); x.numel()];
    let xd = x.data();
    // Precomputed source index per output element; reused by backward.
    let mut src = vec![0usize; out.len()];
    let mut o = 0;
    for b in 0..n {
        for py in 0..p {
            for px in 0..p {
                for ch in 0..c {
                    for i in 0..ho {
                        for j in 0..wo {
                            let s = ((b * c + ch) * h + i * p + py) * w + j * p + px;
                            src[o] = s;
                            out[o] = xd[s];
                            o += 1;
                        }
                    }
                }
            }
        }
    }
    Tensor::from_op(
        "patch_partition",
        vec![n, co, ho, wo],
        out,
        vec![x.clone()],
        move |g, _, _| {
            let mut gx = vec![T::zero(); g.len()];
            for (o, &s) in src.iter().enumerate() {
                gx[s] = g[o];
            }
            vec![Some(gx)]
        },
    )
}

/// Zero-pads the bottom and right edges up to `h_to × w_to`.
pub fn pad_bottom_right<T: Element>(x: &Tensor<T>, h_to: usize, w_to: usize) -> Result<Tensor<T>> {
    let [n, c, h, w] = x.dims4("pad")?;
    if h_to < h || w_to < w {
        return Err(Error::shape("pad", format!("{h}x{w} -> {h_to}x{w_to} shrinks")));
    }
    if (h_to, w_to) == (h, w) {
        return Ok(x.clone());
    }
    let xd = x.data();
    let mut out = vec![T::zero(); n * c * h_to * w_to];
    for pl in 0..n * c {
        for i in 0..h {
            let s = (pl * h + i) * w;
            let d = (pl * h_to + i) * w_to;
            out[d..d + w].copy_from_slice(&xd[s..s + w]);
        }
    }
    Tensor::from_op("pad", vec![n, c, h_to, w_to], out, vec![x.clone()], move |g, _, _| {
        let mut gx = vec![T::zero(); n * c * h * w];
        for pl in 0..n * c {
            for i in 0..h {
                let s = (pl * h_to + i) * w_to;
                let d = (pl * h + i) * w;
                gx[d..d + w].copy_from_slice(&g[s..s + w]);
            }
        }
        vec![Some(gx)]
    })
}

/// Keeps the top-left `h_to × w_to` region.
pub fn crop_top_left<T: Element>(x: &Tensor<T>, h_to: usize, w_to: usize) -> Result<Tensor<T>> {
    let [n, c, h, w] = x.dims4("crop")?;
    if h_to > h || w_to > w || h_to == 0 || w_to == 0 {
        return Err(Error::shape("crop", format!("{h}x{w} -> {h_to}x{w_to}")));
    }
    if (h_to, w_to) == (h, w) {
        return Ok(x.clone());
    }
    let xd = x.data();
    let mut out = vec![T::zero(); n * c * h_to * w_to];
    for pl in 0..n * c {
        for i in 0..h_to {
            let s = (pl * h + i) * w;
            let d = (pl * h_to + i) * w_to;
            out[d..d + w_to].copy_from_slice(&xd[s..s + w_to]);
        }
    }
    Tensor::from_op("crop", vec![n, c, h_to, w_to], out, vec![x.clone()], move |g, _, _| {
        let mut gx = vec![T::zero(); n * c * h * w];
        for pl in 0..n * c {
            for i in 0..h_to {
                let s = (pl * h_to + i) * w_to;
                let d = (pl * h + i) * w;
                gx[d..d + w_to].copy_from_slice(&g[s..s + w_to]);
            }
        }
        vec![Some(gx)]
    })
}

impl<T: Element> Tensor<T> {
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor<T>> {
        reshape(self, shape)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn patch_partition_fold_order() {
        let x = Tensor::<f32>::new(&[1, 1, 2, 2], vec![1., 2., 3., 4.]).unwrap();
        let y = patch_partition(&x, 2).unwrap();
        assert_eq!(y.shape(), &[1, 4, 1, 1]);
        assert_eq!(y.to_vec(), vec![1., 2., 3., 4.]);
    }

    #[test]
    fn patch_partition_channel_fastest() {
        // two channels: c0 = [a b; c d], c1 = [e f; g h]
        let x = Tensor::<f32>::new(&[1, 2, 2, 2], vec![1., 2., 3., 4., 5., 6., 7., 8.]).unwrap();
        let y = patch_partition(&x, 2).unwrap();
        assert_eq!(y.to_vec(), vec![1., 5., 2., 6., 3., 7., 4., 8.]);
    }

    #[test]
    fn patch_partition_requires_divisibility() {
        let x = Tensor::<f32>::zeros(&[1, 1, 6, 6]);
        assert!(matches!(patch_partition(&x, 4), Err(Error::Divisibility { .. })));
    }

    #[test]
    fn concat_then_select_roundtrip() {
        let a = Tensor::<f32>::new(&[2, 1, 1, 2], vec![1., 2., 3., 4.]).unwrap();
        let b = Tensor::<f32>::new(&[2, 2, 1, 2], vec![5., 6., 7., 8., 9., 10., 11., 12.]).unwrap();
        let c = concat_channels(&[&a, &b]).unwrap();
        assert_eq!(c.shape(), &[2, 3, 1, 2]);
        assert_eq!(c.to_vec(), vec![1., 2., 5., 6., 7., 8., 3., 4., 9., 10., 11., 12.]);
        let s = index_select_channels(&c, &[2, 0]).unwrap();
        assert_eq!(s.to_vec(), vec![7., 8., 1., 2., 11., 12., 3., 4.]);
    }

    #[test]
    fn pad_crop_inverse() {
        let x = Tensor::<f32>::new(&[1, 1, 2, 3], vec![1., 2., 3., 4., 5., 6.]).unwrap();
        let p = pad_bottom_right(&x, 4, 4).unwrap();
        assert_eq!(p.data()[4..8], [4., 5., 6., 0.]);
        let c = crop_top_left(&p, 2, 3).unwrap();
        assert_eq!(c.to_vec(), x.to_vec());
    }
}
