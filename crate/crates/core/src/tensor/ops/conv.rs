//! Convolutions: grouped `conv2d` (im2col + GEMM, with a direct kernel for
//! the depthwise case) and the 2×2 stride-2 transposed convolution used for
//! decoder upsampling. All kernels are cross-correlations (no flip).
//!
//! Work is split across batch samples; per-sample weight gradients are summed
//! in sample order so results do not depend on the thread count.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2dOptions {
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
}

impl Default for Conv2dOptions {
    fn default() -> Self {
        Self {
            stride: 1,
            padding: 0,
            groups: 1,
        }
    }
}

impl Conv2dOptions {
    /// Stride 1 with `(k-1)/2` padding: output keeps the input extent for odd `k`.
    pub fn same(k: usize) -> Self {
        Self {
            stride: 1,
            padding: (k - 1) / 2,
            groups: 1,
        }
    }

    pub fn with_groups(mut self, groups: usize) -> Self {
        self.groups = groups;
        self
    }
}

#[derive(Clone, Copy)]
struct Geom {
    cin: usize,
    cout: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    groups: usize,
    ho: usize,
    wo: usize,
}

impl Geom {
    fn cig(&self) -> usize {
        self.cin / self.groups
    }
    fn cog(&self) -> usize {
        self.cout / self.groups
    }
    fn depthwise(&self) -> bool {
        self.cig() == 1 && self.cog() == 1
    }
    fn pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }
}

fn im2col<T: Element>(x: &[T], c: usize, g: &Geom, col: &mut [T]) {
    let (h, w, k, s, p, ho, wo) = (g.h, g.w, g.k, g.stride, g.pad, g.ho, g.wo);
    let mut row = 0;
    for ch in 0..c {
        let plane = &x[ch * h * w..(ch + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let dst = &mut col[row * ho * wo..(row + 1) * ho * wo];
                for oy in 0..ho {
                    let iy = (oy * s + ky) as isize - p as isize;
                    let line = &mut dst[oy * wo..(oy + 1) * wo];
                    if iy < 0 || iy >= h as isize {
                        line.iter_mut().for_each(|v| *v = T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * s + kx) as isize - p as isize;
                        *v = if ix < 0 || ix >= w as isize {
                            T::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
                row += 1;
            }
        }
    }
}

fn col2im<T: Element>(col: &[T], c: usize, g: &Geom, dx: &mut [T]) {
    let (h, w, k, s, p, ho, wo) = (g.h, g.w, g.k, g.stride, g.pad, g.ho, g.wo);
    let mut row = 0;
    for ch in 0..c {
        let plane = &mut dx[ch * h * w..(ch + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let src = &col[row * ho * wo..(row + 1) * ho * wo];
                for oy in 0..ho {
                    let iy = (oy * s + ky) as isize - p as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let line = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    for ox in 0..wo {
                        let ix = (ox * s + kx) as isize - p as isize;
                        if ix >= 0 && ix < w as isize {
                            line[ix as usize] += src[oy * wo + ox];
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

/// Valid output range `[lo, hi)` for kernel offset `kk` along one axis.
fn valid_range(kk: usize, s: usize, p: usize, n_in: usize, n_out: usize) -> (usize, usize) {
    // need 0 <= o*s + kk - p < n_in
    let lo = if kk >= p { 0 } else { (p - kk).div_ceil(s) };
    let hi = if n_in + p > kk {
        ((n_in + p - kk - 1) / s + 1).min(n_out)
    } else {
        0
    };
    (lo, hi.max(lo))
}

fn depthwise_forward_plane<T: Element>(x: &[T], wk: &[T], g: &Geom, out: &mut [T]) {
    let (w, k, s, p, ho, wo) = (g.w, g.k, g.stride, g.pad, g.ho, g.wo);
    for ky in 0..k {
        let (y0, y1) = valid_range(ky, s, p, g.h, ho);
        for kx in 0..k {
            let (x0, x1) = valid_range(kx, s, p, w, wo);
            let wv = wk[ky * k + kx];
            for oy in y0..y1 {
                let iy = oy * s + ky - p;
                let orow = &mut out[oy * wo..(oy + 1) * wo];
                let irow = &x[iy * w..(iy + 1) * w];
                for ox in x0..x1 {
                    orow[ox] += wv * irow[ox * s + kx - p];
                }
            }
        }
    }
}

fn depthwise_backward_plane<T: Element>(x: &[T], wk: &[T], gout: &[T], g: &Geom, dx: Option<&mut [T]>, dw: &mut [T]) {
    let (w, k, s, p, ho, wo) = (g.w, g.k, g.stride, g.pad, g.ho, g.wo);
    let mut dx = dx;
    for ky in 0..k {
        let (y0, y1) = valid_range(ky, s, p, g.h, ho);
        for kx in 0..k {
            let (x0, x1) = valid_range(kx, s, p, w, wo);
            let wv = wk[ky * k + kx];
            let mut acc = T::zero();
            for oy in y0..y1 {
                let iy = oy * s + ky - p;
                let grow = &gout[oy * wo..(oy + 1) * wo];
                let irow = &x[iy * w..(iy + 1) * w];
                for ox in x0..x1 {
                    acc += grow[ox] * irow[ox * s + kx - p];
                }
                if let Some(dx) = dx.as_deref_mut() {
                    let drow = &mut dx[iy * w..(iy + 1) * w];
                    for ox in x0..x1 {
                        drow[ox * s + kx - p] += wv * grow[ox];
                    }
                }
            }
            dw[ky * k + kx] += acc;
        }
    }
}

fn conv_sample_forward<T: Element>(x: &[T], wt: &[T], g: &Geom) -> Vec<T> {
    let (cig, cog, kk, howo) = (g.cig(), g.cog(), g.k * g.k, g.ho * g.wo);
    let hw = g.h * g.w;
    let mut out = vec![T::zero(); g.cout * howo];
    if g.depthwise() {
        for ch in 0..g.cin {
            depthwise_forward_plane(
                &x[ch * hw..(ch + 1) * hw],
                &wt[ch * kk..(ch + 1) * kk],
                g,
                &mut out[ch * howo..(ch + 1) * howo],
            );
        }
        return out;
    }
    let mut col = if g.pointwise() {
        Vec::new()
    } else {
        vec![T::zero(); cig * kk * howo]
    };
    for grp in 0..g.groups {
        let xs = &x[grp * cig * hw..(grp + 1) * cig * hw];
        let colv: &[T] = if g.pointwise() {
            xs
        } else {
            im2col(xs, cig, g, &mut col);
            &col
        };
        let wg = &wt[grp * cog * cig * kk..(grp + 1) * cog * cig * kk];
        T::gemm(
            cog,
            cig * kk,
            howo,
            wg,
            false,
            colv,
            false,
            &mut out[grp * cog * howo..(grp + 1) * cog * howo],
            false,
        );
    }
    out
}

/// Returns `(dx, dw)` for one sample.
fn conv_sample_backward<T: Element>(
    x: &[T],
    wt: &[T],
    gout: &[T],
    g: &Geom,
    need_dx: bool,
) -> (Option<Vec<T>>, Vec<T>) {
    let (cig, cog, kk, howo) = (g.cig(), g.cog(), g.k * g.k, g.ho * g.wo);
    let hw = g.h * g.w;
    let mut dw = vec![T::zero(); wt.len()];
    let mut dx = need_dx.then(|| vec![T::zero(); g.cin * hw]);
    if g.depthwise() {
        for ch in 0..g.cin {
            depthwise_backward_plane(
                &x[ch * hw..(ch + 1) * hw],
                &wt[ch * kk..(ch + 1) * kk],
                &gout[ch * howo..(ch + 1) * howo],
                g,
                dx.as_mut().map(|d| &mut d[ch * hw..(ch + 1) * hw]),
                &mut dw[ch * kk..(ch + 1) * kk],
            );
        }
        return (dx, dw);
    }
    let mut col = vec![T::zero(); cig * kk * howo];
    let mut dcol = vec![T::zero(); cig * kk * howo];
    for grp in 0..g.groups {
        let xs = &x[grp * cig * hw..(grp + 1) * cig * hw];
        let colv: &[T] = if g.pointwise() {
            xs
        } else {
            im2col(xs, cig, g, &mut col);
            &col
        };
        let go = &gout[grp * cog * howo..(grp + 1) * cog * howo];
        let wrange = grp * cog * cig * kk..(grp + 1) * cog * cig * kk;
        T::gemm(
            cog,
            howo,
            cig * kk,
            go,
            false,
            colv,
            true,
            &mut dw[wrange.clone()],
            false,
        );
        if let Some(dx) = dx.as_mut() {
            let dxs = &mut dx[grp * cig * hw..(grp + 1) * cig * hw];
            if g.pointwise() {
                T::gemm(cig, cog, howo, &wt[wrange], true, go, false, dxs, false);
            } else {
                T::gemm(cig * kk, cog, howo, &wt[wrange], true, go, false, &mut dcol, false);
                col2im(&dcol, cig, g, dxs);
            }
        }
    }
    (dx, dw)
}

/// 2-D cross-correlation of `input [N,Cin,H,W]` with `weight [Cout,Cin/groups,k,k]`.
pub fn conv2d<T: Element>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    opts: Conv2dOptions,
) -> Result<Tensor<T>> {
    let [n, cin, h, w] = input.dims4("conv2d")?;
    let [cout, wcin, kh, kw] = weight.dims4("conv2d")?;
    let Conv2dOptions {
        stride,
        padding,
        groups,
    } = opts;
    if groups == 0 || cin % groups != 0 || cout % groups != 0 {
        return Err(Error::shape(
            "conv2d",
            format!("groups {groups} must divide Cin {cin} and Cout {cout}"),
        ));
    }
    if wcin != cin / groups || kh != kw {
        return Err(Error::shape(
            "conv2d",
            format!(
                "weight {:?} for input {:?} with {groups} groups",
                weight.shape(),
                input.shape()
            ),
        ));
    }
    if stride == 0 {
        return Err(Error::InvalidArgument("conv2d stride must be positive".into()));
    }
    if let Some(b) = bias {
        if b.shape() != [cout] {
            return Err(Error::shape("conv2d", format!("bias {:?} for Cout {cout}", b.shape())));
        }
    }
    let k = kh;
    if h + 2 * padding < k || w + 2 * padding < k {
        return Err(Error::shape("conv2d", format!("kernel {k} larger than padded {h}x{w}")));
    }
    let g = Geom {
        cin,
        cout,
        h,
        w,
        k,
        stride,
        pad: padding,
        groups,
        ho: (h + 2 * padding - k) / stride + 1,
        wo: (w + 2 * padding - k) / stride + 1,
    };
    let in_sz = cin * h * w;
    let out_sz = cout * g.ho * g.wo;
    let xd = input.data();
    let wd = weight.data();
    let per_sample: Vec<Vec<T>> = (0..n)
        .into_par_iter()
        .map(|b| conv_sample_forward(&xd[b * in_sz..(b + 1) * in_sz], wd, &g))
        .collect();
    let mut out = Vec::with_capacity(n * out_sz);
    for mut s in per_sample {
        if let Some(bias) = bias {
            let howo = g.ho * g.wo;
            for (co, &bv) in bias.data().iter().enumerate() {
                s[co * howo..(co + 1) * howo].iter_mut().for_each(|v| *v += bv);
            }
        }
        out.extend_from_slice(&s);
    }

    let mut inputs = vec![input.clone(), weight.clone()];
    if let Some(b) = bias {
        inputs.push(b.clone());
    }
    let (xin, win) = (input.clone(), weight.clone());
    let has_bias = bias.is_some();
    Tensor::from_op(
        "conv2d",
        vec![n, cout, g.ho, g.wo],
        out,
        inputs,
        move |gout, _, needs| {
            let xd = xin.data();
            let wd = win.data();
            let need_dx = needs[0];
            let parts: Vec<(Option<Vec<T>>, Vec<T>)> = (0..n)
                .into_par_iter()
                .map(|b| {
                    conv_sample_backward(
                        &xd[b * in_sz..(b + 1) * in_sz],
                        wd,
                        &gout[b * out_sz..(b + 1) * out_sz],
                        &g,
                        need_dx,
                    )
                })
                .collect();
            let mut dw = vec![T::zero(); wd.len()];
            let mut dx = need_dx.then(|| Vec::with_capacity(n * in_sz));
            for (pdx, pdw) in parts {
                dw.iter_mut().zip(&pdw).for_each(|(a, &v)| *a += v);
                if let (Some(dx), Some(p)) = (dx.as_mut(), pdx) {
                    dx.extend_from_slice(&p);
                }
            }
            let mut res = vec![dx, needs[1].then_some(dw)];
            if has_bias {
                let howo = g.ho * g.wo;
                let db = needs[2].then(|| {
                    let mut db = vec![T::zero(); cout];
                    for b in 0..n {
                        for (co, d) in db.iter_mut().enumerate() {
                            let o = b * out_sz + co * howo;
                            *d += gout[o..o + howo].iter().copied().sum::<T>();
                        }
                    }
                    db
                });
                res.push(db);
            }
            res
        },
    )
}

/// Depthwise convolution with `weight [C,1,k,k]` and "same" padding.
pub fn depthwise_conv2d<T: Element>(input: &Tensor<T>, weight: &Tensor<T>, padding: usize) -> Result<Tensor<T>> {
    let [_, c, _, _] = input.dims4("depthwise_conv2d")?;
    conv2d(
        input,
        weight,
        None,
        Conv2dOptions {
            stride: 1,
            padding,
            groups: c,
        },
    )
}

/// Stride-2 transposed convolution with a 2×2 kernel, `weight [Cin,Cout,2,2]`:
/// `out[n,co,2i+a,2j+b] = Σ_ci x[n,ci,i,j]·w[ci,co,a,b] + bias[co]`.
pub fn transposed_conv2x2<T: Element>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
) -> Result<Tensor<T>> {
    let [n, cin, h, w] = input.dims4("transposed_conv2x2")?;
    let [wcin, cout, kh, kw] = weight.dims4("transposed_conv2x2")?;
    if wcin != cin || kh != 2 || kw != 2 {
        return Err(Error::shape(
            "transposed_conv2x2",
            format!("weight {:?} for input {:?}", weight.shape(), input.shape()),
        ));
    }
    if let Some(b) = bias {
        if b.shape() != [cout] {
            return Err(Error::shape(
                "transposed_conv2x2",
                format!("bias {:?} for Cout {cout}", b.shape()),
            ));
        }
    }
    let hw = h * w;
    let (ho, wo) = (2 * h, 2 * w);
    let in_sz = cin * hw;
    let out_sz = cout * ho * wo;
    let xd = input.data();
    let wd = weight.data();
    let per_sample: Vec<Vec<T>> = (0..n)
        .into_par_iter()
        .map(|b| {
            // cols[(co*4 + a*2 + bb), i*w + j]
            let mut cols = vec![T::zero(); cout * 4 * hw];
            T::gemm(
                cout * 4,
                cin,
                hw,
                wd,
                true,
                &xd[b * in_sz..(b + 1) * in_sz],
                false,
                &mut cols,
                false,
            );
            let mut out = vec![T::zero(); out_sz];
            for co in 0..cout {
                let bv = bias.map_or(T::zero(), |bb| bb.data()[co]);
                for a in 0..2 {
                    for bb in 0..2 {
                        let row = &cols[(co * 4 + a * 2 + bb) * hw..(co * 4 + a * 2 + bb + 1) * hw];
                        for i in 0..h {
                            let orow = &mut out[(co * ho + 2 * i + a) * wo..(co * ho + 2 * i + a + 1) * wo];
                            for j in 0..w {
                                orow[2 * j + bb] = row[i * w + j] + bv;
                            }
                        }
                    }
                }
            }
            out
        })
        .collect();
    let out = per_sample.concat();

    let mut inputs = vec![input.clone(), weight.clone()];
    if let Some(b) = bias {
        inputs.push(b.clone());
    }
    let (xin, win) = (input.clone(), weight.clone());
    let has_bias = bias.is_some();
    Tensor::from_op(
        "transposed_conv2x2",
        vec![n, cout, ho, wo],
        out,
        inputs,
        move |gout, _, needs| {
            let xd = xin.data();
            let wd = win.data();
            let parts: Vec<(Option<Vec<T>>, Vec<T>)> = (0..n)
                .into_par_iter()
                .map(|b| {
                    let go = &gout[b * out_sz..(b + 1) * out_sz];
                    let mut gcols = vec![T::zero(); cout * 4 * hw];
                    for co in 0..cout {
                        for a in 0..2 {
                            for bb in 0..2 {
                                let row = &mut gcols[(co * 4 + a * 2 + bb) * hw..(co * 4 + a * 2 + bb + 1) * hw];
                                for i in 0..h {
                                    let grow = &go[(co * ho + 2 * i + a) * wo..(co * ho + 2 * i + a + 1) * wo];
                                    for j in 0..w {
                                        row[i * w + j] = grow[2 * j + bb];
                                    }
                                }
                            }
                        }
                    }
                    let xs = &xd[b * in_sz..(b + 1) * in_sz];
                    let dx = needs[0].then(|| {
                        let mut dx = vec![T::zero(); in_sz];
                        T::gemm(cin, cout * 4, hw, wd, false, &gcols, false, &mut dx, false);
                        dx
                    });
                    let mut dw = vec![T::zero(); wd.len()];
                    T::gemm(cin, hw, cout * 4, xs, false, &gcols, true, &mut dw, false);
                    (dx, dw)
                })
                .collect();
            let mut dw = vec![T::zero(); wd.len()];
            let mut dx = needs[0].then(|| Vec::with_capacity(n * in_sz));
            for (pdx, pdw) in parts {
                dw.iter_mut().zip(&pdw).for_each(|(a, &v)| *a += v);
                if let (Some(dx), Some(p)) = (dx.as_mut(), pdx) {
                    dx.extend_from_slice(&p);
                }
            }
            let mut res = vec![dx, needs[1].then_some(dw)];
            if has_bias {
                res.push(needs[2].then(|| {
                    let mut db = vec![T::zero(); cout];
                    for b in 0..n {
                        for (co, d) in db.iter_mut().enumerate() {
                            let o = b * out_sz + co * ho * wo;
                            *d += gout[o..o + ho * wo].iter().copied().sum::<T>();
                        }
                    }
                    db
                }));
            }
            res
        },
    )
}
