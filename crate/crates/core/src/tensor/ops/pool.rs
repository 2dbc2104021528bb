use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// 2×2 max pooling with stride 2. Ties go to the first element of the window
/// in row-major order, which also receives the whole gradient.
pub fn maxpool2x2<T: Element>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let [n, c, h, w] = x.dims4("maxpool2x2")?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::divisibility(
            "maxpool2x2",
            format!("spatial extent {h}x{w} must be even"),
        ));
    }
    let (ho, wo) = (h / 2, w / 2);
    let planes = n * c;
    let xd = x.data();
    let mut out = vec![T::zero(); planes * ho * wo];
    let mut arg = vec![0u32; out.len()];
    for p in 0..planes {
        let src = &xd[p * h * w..(p + 1) * h * w];
        for i in 0..ho {
            for j in 0..wo {
                let cands = [
                    (2 * i) * w + 2 * j,
                    (2 * i) * w + 2 * j + 1,
                    (2 * i + 1) * w + 2 * j,
                    (2 * i + 1) * w + 2 * j + 1,
                ];
                let mut best = cands[0];
                for &q in &cands[1..] {
                    if src[q] > src[best] {
                        best = q;
                    }
                }
                let o = p * ho * wo + i * wo + j;
                out[o] = src[best];
                arg[o] = best as u32;
            }
        }
    }
    crate::tensor::record_branches(|emit| arg.iter().for_each(|&a| emit(a as u64)));
    let in_len = x.numel();
    Tensor::from_op(
        "maxpool2x2",
        vec![n, c, ho, wo],
        out,
        vec![x.clone()],
        move |g, _, _| {
            let mut gx = vec![T::zero(); in_len];
            for (o, &gv) in g.iter().enumerate() {
                let p = o / (ho * wo);
                gx[p * h * w + arg[o] as usize] += gv;
            }
            vec![Some(gx)]
        },
    )
}

/// Mean over the spatial extent: `[N,C,H,W] -> [N,C,1,1]`.
pub fn avgpool_global<T: Element>(x: &Tensor<T>) -> Result<Tensor<T>> {
    x.dims4("avgpool_global")?;
    x.mean_axes(&[2, 3])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_max() {
        let x = Tensor::<f32>::new(&[1, 1, 2, 2], vec![1., 2., 3., 4.]).unwrap();
        assert_eq!(maxpool2x2(&x).unwrap().to_vec(), vec![4.0]);
    }

    #[test]
    fn ties_route_gradient_to_top_left() {
        let x = Tensor::<f32>::param(&[1, 1, 4, 4], vec![3.0; 16]).unwrap();
        let y = maxpool2x2(&x).unwrap();
        assert_eq!(y.to_vec(), vec![3.0; 4]);
        y.sum().unwrap().backward().unwrap();
        let g = x.grad().unwrap();
        for r in 0..4 {
            for c in 0..4 {
                let expect = if r % 2 == 0 && c % 2 == 0 { 1.0 } else { 0.0 };
                assert_eq!(g[r * 4 + c], expect);
            }
        }
    }

    #[test]
    fn odd_extent_rejected() {
        let x = Tensor::<f32>::zeros(&[1, 1, 3, 4]);
        assert!(matches!(maxpool2x2(&x), Err(Error::Divisibility { .. })));
    }

    #[test]
    fn global_average() {
        let x = Tensor::<f32>::new(&[1, 2, 1, 2], vec![1., 3., 10., 20.]).unwrap();
        let y = avgpool_global(&x).unwrap();
        assert_eq!(y.shape(), &[1, 2, 1, 1]);
        assert_eq!(y.to_vec(), vec![2.0, 15.0]);
    }
}
