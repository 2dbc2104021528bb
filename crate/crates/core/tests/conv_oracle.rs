mod common;

use common::{conv_grid, naive_conv2d, naive_transposed2x2, random_vec, rel_err, rng};
use prnet::tensor::ops::{conv2d, depthwise_conv2d, transposed_conv2x2, Conv2dOptions};
use prnet::{Error, Tensor};

#[test]
fn conv2d_matches_naive_loops_over_the_grid() {
    let grid = conv_grid();
    assert!(grid.len() >= 50);
    let mut r = rng(1);
    for (i, &(n, cin, h, w, cout, k, stride, pad, groups, with_bias)) in grid.iter().enumerate() {
        let x = random_vec(&mut r, n * cin * h * w);
        let wt = random_vec(&mut r, cout * (cin / groups) * k * k);
        let b = random_vec(&mut r, cout);
        let xt = Tensor::new(&[n, cin, h, w], x.clone()).unwrap();
        let wtt = Tensor::new(&[cout, cin / groups, k, k], wt.clone()).unwrap();
        let bt = Tensor::new(&[cout], b.clone()).unwrap();
        let opts = Conv2dOptions {
            stride,
            padding: pad,
            groups,
        };
        let y = conv2d(&xt, &wtt, with_bias.then_some(&bt), opts).unwrap();
        let (want, ho, wo) = naive_conv2d(
            &x,
            (n, cin, h, w),
            &wt,
            (cout, k),
            with_bias.then_some(&b[..]),
            stride,
            pad,
            groups,
        );
        assert_eq!(y.shape(), [n, cout, ho, wo], "case {i}");
        let e = rel_err(y.data(), &want);
        assert!(e < 1e-5, "case {i} {:?}: rel err {e:e}", grid[i]);
    }
}

/// `<conv(x), y> = <x, conv^T(y)>` where the adjoint comes from backward.
#[test]
fn backward_is_the_adjoint_of_forward() {
    let mut r = rng(2);
    for &(n, cin, h, w, cout, k, stride, pad, groups, _) in conv_grid().iter().step_by(3) {
        let x = Tensor::leaf(&[n, cin, h, w], random_vec(&mut r, n * cin * h * w), true).unwrap();
        let wt = Tensor::leaf(
            &[cout, cin / groups, k, k],
            random_vec(&mut r, cout * (cin / groups) * k * k),
            true,
        )
        .unwrap();
        let y = conv2d(
            &x,
            &wt,
            None,
            Conv2dOptions {
                stride,
                padding: pad,
                groups,
            },
        )
        .unwrap();
        let probe = Tensor::new(y.shape(), random_vec(&mut r, y.numel())).unwrap();
        let lhs: f64 = y
            .data()
            .iter()
            .zip(probe.data())
            .map(|(a, b)| *a as f64 * *b as f64)
            .sum();
        y.mul(&probe).unwrap().sum().unwrap().backward().unwrap();
        let gx = x.grad().unwrap();
        let rhs: f64 = x.data().iter().zip(&gx).map(|(a, b)| *a as f64 * *b as f64).sum();
        assert!(
            (lhs - rhs).abs() <= 1e-4 * lhs.abs().max(1.0),
            "input adjoint {lhs} vs {rhs}"
        );
        // Linear in the weight as well.
        let gw = wt.grad().unwrap();
        let rhs_w: f64 = wt.data().iter().zip(&gw).map(|(a, b)| *a as f64 * *b as f64).sum();
        assert!(
            (lhs - rhs_w).abs() <= 1e-4 * lhs.abs().max(1.0),
            "weight adjoint {lhs} vs {rhs_w}"
        );
    }
}

#[test]
fn depthwise_equals_grouped_conv_oracle() {
    let mut r = rng(3);
    for &(c, h, w, k) in &[(4, 8, 8, 3), (3, 6, 10, 5), (1, 5, 5, 3)] {
        let x = random_vec(&mut r, 2 * c * h * w);
        let wt = random_vec(&mut r, c * k * k);
        let y = depthwise_conv2d(
            &Tensor::new(&[2, c, h, w], x.clone()).unwrap(),
            &Tensor::new(&[c, 1, k, k], wt.clone()).unwrap(),
            k / 2,
        )
        .unwrap();
        let (want, _, _) = naive_conv2d(&x, (2, c, h, w), &wt, (c, k), None, 1, k / 2, c);
        assert_eq!(y.shape(), [2, c, h, w]);
        assert!(rel_err(y.data(), &want) < 1e-5);
    }
}

#[test]
fn transposed_conv_matches_scatter_oracle() {
    let mut r = rng(4);
    for &(n, cin, cout, h, w) in &[(1, 1, 1, 1, 1), (2, 3, 5, 4, 3), (1, 8, 4, 5, 5)] {
        let x = random_vec(&mut r, n * cin * h * w);
        let wt = random_vec(&mut r, cin * cout * 4);
        let b = random_vec(&mut r, cout);
        let y = transposed_conv2x2(
            &Tensor::new(&[n, cin, h, w], x.clone()).unwrap(),
            &Tensor::new(&[cin, cout, 2, 2], wt.clone()).unwrap(),
            Some(&Tensor::new(&[cout], b.clone()).unwrap()),
        )
        .unwrap();
        assert_eq!(y.shape(), [n, cout, 2 * h, 2 * w]);
        let want = naive_transposed2x2(&x, (n, cin, h, w), &wt, cout, Some(&b));
        assert!(rel_err(y.data(), &want) < 1e-5);
    }
}

#[test]
fn shape_errors_name_the_op() {
    let x = Tensor::<f32>::zeros(&[1, 4, 5, 5]);
    let bad_groups = conv2d(
        &x,
        &Tensor::zeros(&[6, 2, 3, 3]),
        None,
        Conv2dOptions::same(3).with_groups(3),
    );
    assert!(bad_groups.is_err());
    let too_big = conv2d(&x, &Tensor::zeros(&[1, 4, 7, 7]), None, Conv2dOptions::default());
    assert!(matches!(too_big, Err(Error::Shape { op: "conv2d", .. })), "{too_big:?}");
}
