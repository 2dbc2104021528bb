//! Broadcasting binary ops, unary maps and reductions.
//!
//! Broadcasting follows the usual rule on shapes of equal rank after
//! left-padding with ones: each extent must match or be 1. Ranks above 4 are
//! rejected.

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

pub(crate) fn pad4(shape: &[usize]) -> Option<[usize; 4]> {
    if shape.len() > 4 {
        return None;
    }
    let mut out = [1usize; 4];
    out[4 - shape.len()..].copy_from_slice(shape);
    Some(out)
}

fn contiguous_strides(s: [usize; 4]) -> [usize; 4] {
    [s[1] * s[2] * s[3], s[2] * s[3], s[3], 1]
}

/// Strides of `s` read at the indices of `out` (0 along broadcast axes).
fn broadcast_strides(s: [usize; 4], out: [usize; 4]) -> [usize; 4] {
    let base = contiguous_strides(s);
    let mut st = [0; 4];
    for d in 0..4 {
        st[d] = if s[d] == out[d] { base[d] } else { 0 };
    }
    st
}

fn broadcast_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let (Some(a4), Some(b4)) = (pad4(a), pad4(b)) else {
        return Err(Error::shape(op, "rank above 4"));
    };
    let mut out = Vec::with_capacity(rank);
    for d in 4 - rank..4 {
        let (x, y) = (a4[d], b4[d]);
        if x == y || y == 1 {
            out.push(x);
        } else if x == 1 {
            out.push(y);
        } else {
            return Err(Error::shape(op, format!("cannot broadcast {a:?} with {b:?}")));
        }
    }
    Ok(out)
}

/// Calls `f(out_index, offset_in_x)` for every element of `out` in row-major
/// order, where `x` has shape `xs` broadcast to `out`.
fn for_each_broadcast(out: [usize; 4], xs: [usize; 4], mut f: impl FnMut(usize, usize)) {
    let st = broadcast_strides(xs, out);
    let mut i = 0;
    for i0 in 0..out[0] {
        for i1 in 0..out[1] {
            for i2 in 0..out[2] {
                let base = i0 * st[0] + i1 * st[1] + i2 * st[2];
                if st[3] == 1 {
                    for i3 in 0..out[3] {
                        f(i, base + i3);
                        i += 1;
                    }
                } else {
                    for _ in 0..out[3] {
                        f(i, base);
                        i += 1;
                    }
                }
            }
        }
    }
}

/// `f(x[i], y[bcast(i)])` over `out`-shaped `x`.
fn zip_broadcast<T: Element>(out: &[usize], x: &[T], y: &[T], ys: &[usize], f: impl Fn(T, T) -> T) -> Vec<T> {
    let out4 = pad4(out).expect("rank checked");
    let ys4 = pad4(ys).expect("rank checked");
    if out4 == ys4 {
        return x.iter().zip(y).map(|(&a, &b)| f(a, b)).collect();
    }
    let mut res = vec![T::zero(); x.len()];
    for_each_broadcast(out4, ys4, |i, j| res[i] = f(x[i], y[j]));
    res
}

/// Sums an `out`-shaped gradient down to `target` (the pre-broadcast shape).
pub(crate) fn sum_to<T: Element>(g: &[T], out: &[usize], target: &[usize]) -> Vec<T> {
    let out4 = pad4(out).expect("rank checked");
    let t4 = pad4(target).expect("rank checked");
    if out4 == t4 {
        return g.to_vec();
    }
    let mut res = vec![T::zero(); t4.iter().product()];
    for_each_broadcast(out4, t4, |i, j| res[j] += g[i]);
    res
}

/// Expands `x` of shape `xs` to `out` by repetition.
fn expand<T: Element>(x: &[T], xs: &[usize], out: &[usize]) -> Vec<T> {
    let out4 = pad4(out).expect("rank checked");
    let xs4 = pad4(xs).expect("rank checked");
    if out4 == xs4 {
        return x.to_vec();
    }
    let mut res = vec![T::zero(); out4.iter().product()];
    for_each_broadcast(out4, xs4, |i, j| res[i] = x[j]);
    res
}

#[derive(Clone, Copy)]
enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

fn binary<T: Element>(op: BinOp, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let name = match op {
        BinOp::Add => "add",
        BinOp::Sub => "sub",
        BinOp::Mul => "mul",
        BinOp::Div => "div",
    };
    let out_shape = broadcast_shape(name, a.shape(), b.shape())?;
    let ea = expand(a.data(), a.shape(), &out_shape);
    let f = move |x: T, y: T| match op {
        BinOp::Add => x + y,
        BinOp::Sub => x - y,
        BinOp::Mul => x * y,
        BinOp::Div => x / y,
    };
    let data = zip_broadcast(&out_shape, &ea, b.data(), b.shape(), f);
    let (ta, tb) = (a.clone(), b.clone());
    let os = out_shape.clone();
    Tensor::from_op(name, out_shape, data, vec![a.clone(), b.clone()], move |g, _, needs| {
        let (sa, sb) = (ta.shape(), tb.shape());
        let ga = needs[0].then(|| match op {
            BinOp::Add | BinOp::Sub => sum_to(g, &os, sa),
            BinOp::Mul => sum_to(&zip_broadcast(&os, g, tb.data(), sb, |x, y| x * y), &os, sa),
            BinOp::Div => sum_to(&zip_broadcast(&os, g, tb.data(), sb, |x, y| x / y), &os, sa),
        });
        let gb = needs[1].then(|| match op {
            BinOp::Add => sum_to(g, &os, sb),
            BinOp::Sub => sum_to(&g.iter().map(|&v| -v).collect::<Vec<_>>(), &os, sb),
            BinOp::Mul => sum_to(&zip_broadcast(&os, g, ta.data(), sa, |x, y| x * y), &os, sb),
            BinOp::Div => {
                // d(a/b)/db = -a/b²
                let gb_ = zip_broadcast(&os, g, tb.data(), sb, |x, y| x / y);
                let gab = zip_broadcast(&os, &gb_, ta.data(), sa, |x, y| x * y);
                let t = zip_broadcast(&os, &gab, tb.data(), sb, |x, y| -x / y);
                sum_to(&t, &os, sb)
            }
        });
        vec![ga, gb]
    })
}

pub fn add<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    binary(BinOp::Add, a, b)
}

pub fn sub<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    binary(BinOp::Sub, a, b)
}

pub fn mul<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    binary(BinOp::Mul, a, b)
}

pub fn div<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    binary(BinOp::Div, a, b)
}

/// `s·x + c`.
pub fn affine_scalar<T: Element>(x: &Tensor<T>, s: T, c: T) -> Result<Tensor<T>> {
    let data = x.data().iter().map(|&v| s * v + c).collect();
    Tensor::from_op(
        "affine_scalar",
        x.shape().to_vec(),
        data,
        vec![x.clone()],
        move |g, _, _| vec![Some(g.iter().map(|&v| v * s).collect())],
    )
}

/// Sum of all elements, as a rank-0 tensor.
pub fn sum_all<T: Element>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let total = x.data().iter().copied().sum::<T>();
    let n = x.numel();
    Tensor::from_op("sum", vec![], vec![total], vec![x.clone()], move |g, _, _| {
        vec![Some(vec![g[0]; n])]
    })
}

pub fn mean_all<T: Element>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let n = T::from_usize(x.numel()).expect("count fits");
    affine_scalar(&sum_all(x)?, T::one() / n, T::zero())
}

/// Sums over `axes`, keeping them as extent-1 dims.
pub fn sum_axes<T: Element>(x: &Tensor<T>, axes: &[usize]) -> Result<Tensor<T>> {
    let rank = x.rank();
    if rank > 4 || axes.iter().any(|&a| a >= rank) {
        return Err(Error::shape("sum_axes", format!("axes {axes:?} on {:?}", x.shape())));
    }
    let mut out_shape = x.shape().to_vec();
    for &a in axes {
        out_shape[a] = 1;
    }
    let in4 = pad4(x.shape()).expect("rank checked");
    let out4 = pad4(&out_shape).expect("rank checked");
    let mut data = vec![T::zero(); out4.iter().product()];
    let xd = x.data();
    for_each_broadcast(in4, out4, |i, j| data[j] += xd[i]);
    let in_shape = x.shape().to_vec();
    let os = out_shape.clone();
    Tensor::from_op("sum_axes", out_shape, data, vec![x.clone()], move |g, _, _| {
        vec![Some(expand(g, &os, &in_shape))]
    })
}

pub fn mean_axes<T: Element>(x: &Tensor<T>, axes: &[usize]) -> Result<Tensor<T>> {
    let count: usize = axes.iter().map(|&a| x.shape().get(a).copied().unwrap_or(1)).product();
    let s = sum_axes(x, axes)?;
    affine_scalar(&s, T::one() / T::from_usize(count).expect("count fits"), T::zero())
}

/// Applies `f` elementwise; `df(x, y)` gives dy/dx from input and output.
pub(crate) fn unary<T: Element>(
    name: &'static str,
    x: &Tensor<T>,
    f: impl Fn(T) -> T,
    df: impl Fn(T, T) -> T + Send + Sync + 'static,
) -> Result<Tensor<T>> {
    let data = x.data().iter().map(|&v| f(v)).collect();
    let xin = x.clone();
    Tensor::from_op(name, x.shape().to_vec(), data, vec![x.clone()], move |g, out, _| {
        let gx = g
            .iter()
            .zip(xin.data())
            .zip(out)
            .map(|((&gv, &xv), &yv)| gv * df(xv, yv))
            .collect();
        vec![Some(gx)]
    })
}

impl<T: Element> Tensor<T> {
    pub fn add(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        add(self, other)
    }

    pub fn sub(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        sub(self, other)
    }

    pub fn mul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        mul(self, other)
    }

    pub fn div(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        div(self, other)
    }

    pub fn scale(&self, s: T) -> Result<Tensor<T>> {
        affine_scalar(self, s, T::zero())
    }

    pub fn add_scalar(&self, c: T) -> Result<Tensor<T>> {
        affine_scalar(self, T::one(), c)
    }

    pub fn sum(&self) -> Result<Tensor<T>> {
        sum_all(self)
    }

    pub fn mean(&self) -> Result<Tensor<T>> {
        mean_all(self)
    }

    pub fn sum_axes(&self, axes: &[usize]) -> Result<Tensor<T>> {
        sum_axes(self, axes)
    }

    pub fn mean_axes(&self, axes: &[usize]) -> Result<Tensor<T>> {
        mean_axes(self, axes)
    }
}
