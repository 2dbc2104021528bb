//! Orthonormal 2-D Haar analysis and synthesis as differentiable ops.
//!
//! For every 2×2 block `[a b; c d]`:
//!
//! ```text
//! LL = (a + b + c + d) / 2      LH = (a + b - c - d) / 2
//! HL = (a - b + c - d) / 2      HH = (a - b - c + d) / 2
//! ```
//!
//! LH differences along height, HL along width. The transform matrix is
//! orthogonal and symmetric, so synthesis applies the same signs.

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Band {
    LL,
    LH,
    HL,
    HH,
}

impl Band {
    pub const ALL: [Band; 4] = [Band::LL, Band::LH, Band::HL, Band::HH];

    /// Signs applied to `(a, b, c, d)`.
    fn signs(self) -> [f64; 4] {
        match self {
            Band::LL => [1., 1., 1., 1.],
            Band::LH => [1., 1., -1., -1.],
            Band::HL => [1., -1., 1., -1.],
            Band::HH => [1., -1., -1., 1.],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Band::LL => "ll",
            Band::LH => "lh",
            Band::HL => "hl",
            Band::HH => "hh",
        }
    }
}

/// One analysis level.
#[derive(Debug, Clone)]
pub struct Subbands<T: Element> {
    pub ll: Tensor<T>,
    pub lh: Tensor<T>,
    pub hl: Tensor<T>,
    pub hh: Tensor<T>,
}

impl<T: Element> Subbands<T> {
    pub fn get(&self, band: Band) -> &Tensor<T> {
        match band {
            Band::LL => &self.ll,
            Band::LH => &self.lh,
            Band::HL => &self.hl,
            Band::HH => &self.hh,
        }
    }

    pub fn energy(&self) -> f64 {
        Band::ALL.iter().map(|&b| energy(self.get(b))).sum()
    }
}

pub(crate) fn energy<T: Element>(t: &Tensor<T>) -> f64 {
    t.data().iter().map(|v| v.as_f64() * v.as_f64()).sum()
}

fn signs_t<T: Element>(band: Band) -> [T; 4] {
    let half = T::from_f64_lossy(0.5);
    band.signs().map(|s| T::from_f64_lossy(s) * half)
}

/// Raw analysis of one band: `src` is `[planes, h, w]`, result `[planes, h/2, w/2]`.
fn analyze<T: Element>(src: &[T], planes: usize, h: usize, w: usize, band: Band) -> Vec<T> {
    let [sa, sb, sc, sd] = signs_t::<T>(band);
    let (ho, wo) = (h / 2, w / 2);
    let mut out = vec![T::zero(); planes * ho * wo];
    for p in 0..planes {
        let plane = &src[p * h * w..(p + 1) * h * w];
        let dst = &mut out[p * ho * wo..(p + 1) * ho * wo];
        for i in 0..ho {
            let top = &plane[2 * i * w..(2 * i + 1) * w];
            let bot = &plane[(2 * i + 1) * w..(2 * i + 2) * w];
            for j in 0..wo {
                dst[i * wo + j] = sa * top[2 * j] + sb * top[2 * j + 1] + sc * bot[2 * j] + sd * bot[2 * j + 1];
            }
        }
    }
    out
}

/// Raw synthesis contribution of one band, accumulated into `dst [planes, 2h, 2w]`.
fn synthesize_into<T: Element>(coef: &[T], planes: usize, h: usize, w: usize, band: Band, dst: &mut [T]) {
    let [sa, sb, sc, sd] = signs_t::<T>(band);
    let (ho, wo) = (2 * h, 2 * w);
    for p in 0..planes {
        let src = &coef[p * h * w..(p + 1) * h * w];
        let plane = &mut dst[p * ho * wo..(p + 1) * ho * wo];
        for i in 0..h {
            for j in 0..w {
                let v = src[i * w + j];
                plane[2 * i * wo + 2 * j] += sa * v;
                plane[2 * i * wo + 2 * j + 1] += sb * v;
                plane[(2 * i + 1) * wo + 2 * j] += sc * v;
                plane[(2 * i + 1) * wo + 2 * j + 1] += sd * v;
            }
        }
    }
}

fn band_op<T: Element>(x: &Tensor<T>, band: Band) -> Result<Tensor<T>> {
    let [n, c, h, w] = x.dims4("haar_dwt2")?;
    let data = analyze(x.data(), n * c, h, w, band);
    Tensor::from_op(
        "haar_dwt2",
        vec![n, c, h / 2, w / 2],
        data,
        vec![x.clone()],
        move |g, _, _| {
            let mut gx = vec![T::zero(); n * c * h * w];
            synthesize_into(g, n * c, h / 2, w / 2, band, &mut gx);
            vec![Some(gx)]
        },
    )
}

/// Single-level analysis of an NCHW tensor with even spatial extents.
pub fn haar_dwt2<T: Element>(x: &Tensor<T>) -> Result<Subbands<T>> {
    let [_, _, h, w] = x.dims4("haar_dwt2")?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::divisibility(
            "haar_dwt2",
            format!("spatial extent {h}x{w} must be even"),
        ));
    }
    Ok(Subbands {
        ll: band_op(x, Band::LL)?,
        lh: band_op(x, Band::LH)?,
        hl: band_op(x, Band::HL)?,
        hh: band_op(x, Band::HH)?,
    })
}

/// Exact inverse of [`haar_dwt2`].
pub fn haar_idwt2<T: Element>(bands: &Subbands<T>) -> Result<Tensor<T>> {
    let shape = bands.ll.shape().to_vec();
    let [n, c, h, w] = bands.ll.dims4("haar_idwt2")?;
    for b in Band::ALL {
        if bands.get(b).shape() != shape.as_slice() {
            return Err(Error::shape(
                "haar_idwt2",
                format!(
                    "subband {} has shape {:?}, LL has {shape:?}",
                    b.name(),
                    bands.get(b).shape()
                ),
            ));
        }
    }
    let mut out = vec![T::zero(); n * c * 4 * h * w];
    for b in Band::ALL {
        synthesize_into(bands.get(b).data(), n * c, h, w, b, &mut out);
    }
    let inputs = Band::ALL.iter().map(|&b| bands.get(b).clone()).collect();
    Tensor::from_op(
        "haar_idwt2",
        vec![n, c, 2 * h, 2 * w],
        out,
        inputs,
        move |g, _, needs| {
            Band::ALL
                .iter()
                .zip(needs)
                .map(|(&b, &need)| need.then(|| analyze(g, n * c, 2 * h, 2 * w, b)))
                .collect()
        },
    )
}

/// Multi-level decomposition; level `l` re-analyzes level `l-1`'s LL.
#[derive(Debug, Clone)]
pub struct WaveletPyramid<T: Element> {
    pub levels: Vec<Subbands<T>>,
}

impl<T: Element> WaveletPyramid<T> {
    /// Energy of the deepest LL plus every retained detail band.
    pub fn energy(&self) -> f64 {
        let details: f64 = self
            .levels
            .iter()
            .map(|s| energy(&s.lh) + energy(&s.hl) + energy(&s.hh))
            .sum();
        details + self.levels.last().map_or(0.0, |s| energy(&s.ll))
    }
}

pub fn dwt_pyramid<T: Element>(x: &Tensor<T>, levels: usize) -> Result<WaveletPyramid<T>> {
    let [_, _, h, w] = x.dims4("dwt_pyramid")?;
    let m = 1usize << levels;
    if h % m != 0 || w % m != 0 {
        return Err(Error::divisibility(
            "dwt_pyramid",
            format!("spatial extent {h}x{w} must be divisible by 2^{levels} = {m}"),
        ));
    }
    let mut out = Vec::with_capacity(levels);
    let mut cur = x.clone();
    for _ in 0..levels {
        let s = haar_dwt2(&cur)?;
        cur = s.ll.clone();
        out.push(s);
    }
    Ok(WaveletPyramid { levels: out })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_image() {
        let x = Tensor::<f32>::ones(&[1, 1, 4, 4]);
        let s = haar_dwt2(&x).unwrap();
        assert!(s.ll.data().iter().all(|&v| v == 2.0));
        for b in [&s.lh, &s.hl, &s.hh] {
            assert!(b.data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn single_corner_block() {
        let x = Tensor::<f32>::new(&[1, 1, 2, 2], vec![1., 0., 0., 0.]).unwrap();
        let s = haar_dwt2(&x).unwrap();
        for b in Band::ALL {
            assert_eq!(s.get(b).to_vec(), vec![0.5]);
        }
    }

    #[test]
    fn sign_convention() {
        // top row bright: difference along height shows up in LH only
        let x = Tensor::<f32>::new(&[1, 1, 2, 2], vec![1., 1., 0., 0.]).unwrap();
        let s = haar_dwt2(&x).unwrap();
        assert_eq!(s.lh.to_vec(), vec![1.0]);
        assert_eq!(s.hl.to_vec(), vec![0.0]);
        // left column bright: HL only
        let x = Tensor::<f32>::new(&[1, 1, 2, 2], vec![1., 0., 1., 0.]).unwrap();
        let s = haar_dwt2(&x).unwrap();
        assert_eq!(s.hl.to_vec(), vec![1.0]);
        assert_eq!(s.lh.to_vec(), vec![0.0]);
    }

    #[test]
    fn inverse_of_constant_ll() {
        let z = Tensor::<f32>::zeros(&[1, 2, 3, 3]);
        let bands = Subbands {
            ll: Tensor::full(&[1, 2, 3, 3], 2.0),
            lh: z.clone(),
            hl: z.clone(),
            hh: z.clone(),
        };
        let x = haar_idwt2(&bands).unwrap();
        assert_eq!(x.shape(), &[1, 2, 6, 6]);
        assert!(x.data().iter().all(|&v| v == 1.0));
        let zero = haar_idwt2(&Subbands {
            ll: z.clone(),
            lh: z.clone(),
            hl: z.clone(),
            hh: z,
        })
        .unwrap();
        assert!(zero.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn odd_extent_and_mismatch_rejected() {
        let x = Tensor::<f32>::zeros(&[1, 1, 3, 4]);
        assert!(matches!(haar_dwt2(&x), Err(Error::Divisibility { .. })));
        let a = Tensor::<f32>::zeros(&[1, 1, 2, 2]);
        let b = Tensor::<f32>::zeros(&[1, 1, 2, 3]);
        let bands = Subbands {
            ll: a.clone(),
            lh: a.clone(),
            hl: b,
            hh: a,
        };
        assert!(matches!(haar_idwt2(&bands), Err(Error::Shape { .. })));
        assert!(matches!(
            dwt_pyramid(&Tensor::<f32>::zeros(&[1, 1, 6, 6]), 2),
            Err(Error::Divisibility { .. })
        ));
    }

    #[test]
    fn pyramid_of_constant() {
        let x = Tensor::<f32>::ones(&[1, 1, 8, 8]);
        let p = dwt_pyramid(&x, 2).unwrap();
        assert_eq!(p.levels.len(), 2);
        assert_eq!(p.levels[1].ll.shape(), &[1, 1, 2, 2]);
        assert!(p.levels[1].ll.data().iter().all(|&v| v == 4.0));
    }
}
