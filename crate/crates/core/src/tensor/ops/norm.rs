use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// Layer normalization across channels at every spatial position of an
/// NCHW tensor, followed by a per-channel affine `gamma·x̂ + beta`.
pub fn layernorm<T: Element>(x: &Tensor<T>, gamma: &Tensor<T>, beta: &Tensor<T>, eps: T) -> Result<Tensor<T>> {
    let [n, c, h, w] = x.dims4("layernorm")?;
    if gamma.shape() != [c] || beta.shape() != [c] {
        return Err(Error::shape(
            "layernorm",
            format!("affine params {:?}/{:?} for {c} channels", gamma.shape(), beta.shape()),
        ));
    }
    if eps <= T::zero() {
        return Err(Error::InvalidArgument("layernorm eps must be positive".into()));
    }
    let hw = h * w;
    let cf = T::from_usize(c).expect("channel count");
    let xd = x.data();
    let (gd, bd) = (gamma.data(), beta.data());
    let mut xhat = vec![T::zero(); xd.len()];
    let mut inv_std = vec![T::zero(); n * hw];
    let mut out = vec![T::zero(); xd.len()];
    for b in 0..n {
        let base = b * c * hw;
        let mut mean = vec![T::zero(); hw];
        for k in 0..c {
            let plane = &xd[base + k * hw..base + (k + 1) * hw];
            mean.iter_mut().zip(plane).for_each(|(m, &v)| *m += v);
        }
        mean.iter_mut().for_each(|m| *m = *m / cf);
        let mut var = vec![T::zero(); hw];
        for k in 0..c {
            let plane = &xd[base + k * hw..base + (k + 1) * hw];
            for p in 0..hw {
                let d = plane[p] - mean[p];
                var[p] += d * d;
            }
        }
        let is = &mut inv_std[b * hw..(b + 1) * hw];
        for p in 0..hw {
            is[p] = T::one() / (var[p] / cf + eps).sqrt();
        }
        for k in 0..c {
            let o = base + k * hw;
            for p in 0..hw {
                let xh = (xd[o + p] - mean[p]) * is[p];
                xhat[o + p] = xh;
                out[o + p] = gd[k] * xh + bd[k];
            }
        }
    }
    let gamma_c = gamma.clone();
    Tensor::from_op(
        "layernorm",
        x.shape().to_vec(),
        out,
        vec![x.clone(), gamma.clone(), beta.clone()],
        move |g, _, needs| {
            let gd = gamma_c.data();
            let mut dgamma = vec![T::zero(); c];
            let mut dbeta = vec![T::zero(); c];
            for b in 0..n {
                for k in 0..c {
                    let o = b * c * hw + k * hw;
                    for p in 0..hw {
                        dgamma[k] += g[o + p] * xhat[o + p];
                        dbeta[k] += g[o + p];
                    }
                }
            }
            let dx = needs[0].then(|| {
                let mut dx = vec![T::zero(); g.len()];
                for b in 0..n {
                    let base = b * c * hw;
                    let mut m1 = vec![T::zero(); hw];
                    let mut m2 = vec![T::zero(); hw];
                    for (k, &gk) in gd.iter().enumerate() {
                        let o = base + k * hw;
                        for p in 0..hw {
                            let dxh = g[o + p] * gk;
                            m1[p] += dxh;
                            m2[p] += dxh * xhat[o + p];
                        }
                    }
                    for (k, &gk) in gd.iter().enumerate() {
                        let o = base + k * hw;
                        for p in 0..hw {
                            let dxh = g[o + p] * gk;
                            dx[o + p] = inv_std[b * hw + p] * (dxh - m1[p] / cf - xhat[o + p] * m2[p] / cf);
                        }
                    }
                }
                dx
            });
            vec![dx, needs[1].then_some(dgamma), needs[2].then_some(dbeta)]
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_point_symmetry() {
        let eps = 1e-5f64;
        let x = Tensor::<f64>::new(&[1, 2, 1, 1], vec![1.0, -1.0]).unwrap();
        let y = layernorm(&x, &Tensor::ones(&[2]), &Tensor::zeros(&[2]), eps).unwrap();
        let s = 1.0 / (1.0 + eps).sqrt();
        assert!((y.data()[0] - s).abs() < 1e-12);
        assert!((y.data()[1] + s).abs() < 1e-12);
        assert_eq!(y.data()[0] + y.data()[1], 0.0);
    }

    #[test]
    fn constant_input_gives_beta() {
        let x = Tensor::<f32>::full(&[1, 4, 2, 2], 1.5);
        let beta = Tensor::new(&[4], vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let gamma = Tensor::new(&[4], vec![2.0; 4]).unwrap();
        let y = layernorm(&x, &gamma, &beta, 1e-5).unwrap();
        for k in 0..4 {
            for p in 0..4 {
                assert!((y.data()[k * 4 + p] - beta.data()[k]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn rejects_bad_affine_shape() {
        let x = Tensor::<f32>::zeros(&[1, 3, 2, 2]);
        let r = layernorm(&x, &Tensor::ones(&[2]), &Tensor::zeros(&[2]), 1e-5);
        assert!(matches!(r, Err(Error::Shape { .. })));
    }
}
