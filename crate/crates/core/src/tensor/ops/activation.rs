use super::elementwise::unary;
use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// `x` for `x ≥ 0`, `slope·x` otherwise.
pub fn leaky_relu<T: Element>(x: &Tensor<T>, slope: T) -> Result<Tensor<T>> {
    crate::tensor::record_branches(|emit| {
        for chunk in x.data().chunks(64) {
            emit(chunk.iter().fold(0u64, |m, &v| (m << 1) | (v >= T::zero()) as u64));
        }
    });
    unary(
        "leaky_relu",
        x,
        move |v| if v >= T::zero() { v } else { slope * v },
        move |v, _| if v >= T::zero() { T::one() } else { slope },
    )
}

pub fn sigmoid<T: Element>(x: &Tensor<T>) -> Result<Tensor<T>> {
    unary(
        "sigmoid",
        x,
        |v| {
            if v >= T::zero() {
                T::one() / (T::one() + (-v).exp())
            } else {
                let e = v.exp();
                e / (T::one() + e)
            }
        },
        |_, y| y * (T::one() - y),
    )
}

/// Iterates `(n, hw)` planes of a 4-D tensor whose channel axis is reduced.
fn channel_dims<T: Element>(x: &Tensor<T>, op: &'static str) -> Result<(usize, usize, usize)> {
    let [n, c, h, w] = x.dims4(op)?;
    if c == 0 {
        return Err(Error::shape(op, "empty channel axis"));
    }
    Ok((n, c, h * w))
}

fn log_softmax_data<T: Element>(x: &[T], n: usize, c: usize, hw: usize) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for b in 0..n {
        let base = b * c * hw;
        for p in 0..hw {
            let mut m = T::neg_infinity();
            for k in 0..c {
                m = m.max(x[base + k * hw + p]);
            }
            let mut s = T::zero();
            for k in 0..c {
                s += (x[base + k * hw + p] - m).exp();
            }
            let lse = m + s.ln();
            for k in 0..c {
                out[base + k * hw + p] = x[base + k * hw + p] - lse;
            }
        }
    }
    out
}

/// Softmax across the channel axis of an NCHW tensor.
pub fn softmax_channel<T: Element>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c, hw) = channel_dims(x, "softmax_channel")?;
    let data: Vec<T> = log_softmax_data(x.data(), n, c, hw)
        .into_iter()
        .map(|v| v.exp())
        .collect();
    Tensor::from_op(
        "softmax_channel",
        x.shape().to_vec(),
        data,
        vec![x.clone()],
        move |g, y, _| {
            // dx = y ⊙ (g − Σ_k g_k y_k)
            let mut gx = vec![T::zero(); g.len()];
            for b in 0..n {
                let base = b * c * hw;
                for p in 0..hw {
                    let mut dot = T::zero();
                    for k in 0..c {
                        let i = base + k * hw + p;
                        dot += g[i] * y[i];
                    }
                    for k in 0..c {
                        let i = base + k * hw + p;
                        gx[i] = y[i] * (g[i] - dot);
                    }
                }
            }
            vec![Some(gx)]
        },
    )
}

/// Log-softmax across the channel axis of an NCHW tensor.
pub fn log_softmax_channel<T: Element>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c, hw) = channel_dims(x, "log_softmax_channel")?;
    let data = log_softmax_data(x.data(), n, c, hw);
    Tensor::from_op(
        "log_softmax_channel",
        x.shape().to_vec(),
        data,
        vec![x.clone()],
        move |g, y, _| {
            // dx = g − softmax ⊙ Σ_k g_k
            let mut gx = vec![T::zero(); g.len()];
            for b in 0..n {
                let base = b * c * hw;
                for p in 0..hw {
                    let mut total = T::zero();
                    for k in 0..c {
                        total += g[base + k * hw + p];
                    }
                    for k in 0..c {
                        let i = base + k * hw + p;
                        gx[i] = g[i] - y[i].exp() * total;
                    }
                }
            }
            vec![Some(gx)]
        },
    )
}

impl<T: Element> Tensor<T> {
    pub fn leaky_relu(&self, slope: T) -> Result<Tensor<T>> {
        leaky_relu(self, slope)
    }

    pub fn sigmoid(&self) -> Result<Tensor<T>> {
        sigmoid(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn leaky_relu_values_and_slopes() {
        let x = Tensor::<f32>::param(&[3], vec![2.0, -2.0, 0.0]).unwrap();
        let y = x.leaky_relu(0.01).unwrap();
        assert_eq!(y.to_vec(), vec![2.0, -0.02, 0.0]);
        y.sum().unwrap().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![1.0, 0.01, 1.0]);
    }

    #[test]
    fn sigmoid_at_zero_and_extremes() {
        let x = Tensor::<f32>::new(&[3], vec![0.0, 200.0, -200.0]).unwrap();
        let y = x.sigmoid().unwrap();
        assert_eq!(y.data()[0], 0.5);
        assert_eq!(y.data()[1], 1.0);
        assert!(y.data()[2] >= 0.0 && y.data()[2] < 1e-30);
    }

    #[test]
    fn softmax_uniform_pair() {
        let x = Tensor::<f32>::zeros(&[1, 2, 1, 1]);
        assert_eq!(softmax_channel(&x).unwrap().to_vec(), vec![0.5, 0.5]);
    }

    #[test]
    fn softmax_is_stable_for_large_logits() {
        let x = Tensor::<f32>::new(&[1, 2, 1, 1], vec![1000.0, 0.0]).unwrap();
        let y = softmax_channel(&x).unwrap();
        assert_eq!(y.data()[0], 1.0);
        let ls = log_softmax_channel(&x).unwrap();
        assert_eq!(ls.data()[0], 0.0);
        assert_eq!(ls.data()[1], -1000.0);
    }
}
