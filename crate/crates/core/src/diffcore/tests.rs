use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::tensor::Tensor;
use crate::Error;

fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
    Tensor::from_f64(shape, data).unwrap()
}

fn conv_out(x: Tensor<f64>, k: Tensor<f64>, stride: usize) -> Tensor<f64> {
    let store = ParamStore::new();
    let mut g = Graph::new(&store);
    let xi = g.input(x);
    let ki = g.input(k);
    let y = g.conv2d(xi, ki, None, stride, 1).unwrap();
    g.value(y).clone()
}

#[test]
fn conv_identity_kernel_returns_input() {
    let mut k = vec![0.0; 9];
    k[4] = 1.0;
    let y = conv_out(t(&[1, 3, 3, 1], &[1.0; 9]), t(&[3, 3, 1, 1], &k), 1);
    assert_eq!(y.shape(), &[1, 3, 3, 1]);
    assert_eq!(y.to_f64_vec(), vec![1.0; 9]);
}

#[test]
fn conv_same_padding_sums_in_bounds_cells() {
    let y = conv_out(
        t(&[1, 2, 2, 1], &[1.0, 2.0, 3.0, 4.0]),
        t(&[3, 3, 1, 1], &[1.0; 9]),
        1,
    );
    assert_eq!(y.to_f64_vec(), vec![10.0; 4]);
}

#[test]
fn conv_stride_two_halves_spatial_dims() {
    let y = conv_out(t(&[1, 4, 4, 1], &[0.5; 16]), t(&[3, 3, 1, 1], &[0.1; 9]), 2);
    assert_eq!(y.shape(), &[1, 2, 2, 1]);
}

#[test]
fn conv_rejects_channel_mismatch_and_bad_stride() {
    let store = ParamStore::new();
    let mut g = Graph::<f64>::new(&store);
    let x = g.input(Tensor::zeros(&[1, 4, 4, 2]));
    let k = g.input(Tensor::zeros(&[3, 3, 3, 1]));
    assert!(matches!(g.conv2d(x, k, None, 1, 1), Err(Error::Shape(_))));
    let k2 = g.input(Tensor::zeros(&[3, 3, 2, 1]));
    assert!(matches!(g.conv2d(x, k2, None, 3, 1), Err(Error::Config(_))));
}

fn pool_out(x: Tensor<f64>, kind: PoolKind, stride: usize) -> Tensor<f64> {
    let store = ParamStore::new();
    let mut g = Graph::new(&store);
    let xi = g.input(x);
    let y = g.pool2d(xi, kind, stride).unwrap();
    g.value(y).clone()
}

#[test]
fn pooling_constant_input_is_constant() {
    for kind in [PoolKind::Max, PoolKind::Avg] {
        let y = pool_out(Tensor::full(&[2, 5, 5, 3], 1.75), kind, 1);
        assert!(y.data().iter().all(|&v| (v - 1.75).abs() < 1e-12));
    }
}

#[test]
fn max_pool_window_enumeration() {
    let y = pool_out(t(&[1, 2, 2, 1], &[1.0, 2.0, 3.0, 4.0]), PoolKind::Max, 1);
    assert_eq!(y.to_f64_vec(), vec![4.0; 4]);
    let y = pool_out(t(&[1, 4, 4, 1], &[0.0; 16]), PoolKind::Avg, 2);
    assert_eq!(y.shape(), &[1, 2, 2, 1]);
}

#[test]
fn avg_pool_divides_by_in_bounds_count() {
    // corner window of a 3x3 image covers 4 cells
    let y = pool_out(
        t(
            &[1, 3, 3, 1],
            &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0],
        ),
        PoolKind::Avg,
        1,
    );
    assert!((y.data()[0] - (1.0 + 2.0 + 4.0 + 5.0) / 4.0).abs() < 1e-12);
    assert!((y.data()[4] - 5.0).abs() < 1e-12);
}

#[test]
fn activations_pointwise() {
    let store = ParamStore::new();
    let mut g = Graph::new(&store);
    let x = g.input(t(&[3], &[-1.0, 0.0, 2.5]));
    let r = g.activation(x, ActKind::Relu);
    let th = g.activation(x, ActKind::Tanh);
    let id = g.activation(x, ActKind::Identity);
    assert_eq!(g.value(r).to_f64_vec(), vec![0.0, 0.0, 2.5]);
    assert_eq!(g.value(th).data()[1], 0.0);
    assert_eq!(g.value(id).to_f64_vec(), vec![-1.0, 0.0, 2.5]);
}

#[test]
fn affine_examples() {
    let store = ParamStore::new();
    let mut g = Graph::new(&store);
    let x = g.input(t(&[1, 2], &[1.0, 2.0]));
    let w = g.input(t(&[2, 1], &[1.0, 1.0]));
    let b = g.input(t(&[1], &[0.5]));
    let y = g.affine(x, w, b).unwrap();
    assert_eq!(g.value(y).to_f64_vec(), vec![3.5]);

    let eye = g.input(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
    let zb = g.input(t(&[2], &[0.0, 0.0]));
    let y = g.affine(x, eye, zb).unwrap();
    assert_eq!(g.value(y).to_f64_vec(), vec![1.0, 2.0]);

    let zx = g.input(Tensor::zeros(&[3, 2]));
    let b2 = g.input(t(&[2], &[0.25, -1.0]));
    let y = g.affine(zx, eye, b2).unwrap();
    assert_eq!(
        g.value(y).to_f64_vec(),
        vec![0.25, -1.0, 0.25, -1.0, 0.25, -1.0]
    );

    let bad = g.input(t(&[3, 1], &[1.0; 3]));
    assert!(g.affine(x, bad, b).is_err());
}

#[test]
fn softmax_examples() {
    let p = softmax_vec(&[0.0f64, 0.0, 0.0], 0.37).unwrap();
    for v in &p {
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
    }
    let p = softmax_vec(&[3.0f64, 0.0, 0.0], 1.0).unwrap();
    let e3 = 3f64.exp();
    assert!((p[0] - e3 / (e3 + 2.0)).abs() < 1e-15);
    assert!((p[0] - 0.9094).abs() < 1e-4);
    assert!((p[1] - 0.0453).abs() < 1e-4);
    assert!(matches!(softmax_vec(&[1.0f64], 0.0), Err(Error::Config(_))));
    assert!(matches!(
        softmax_vec(&[1.0f64], -2.0),
        Err(Error::Config(_))
    ));
}

#[test]
fn softmax_argmax_and_shift_invariance() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..200 {
        let z: Vec<f64> = (0..6).map(|_| rng.random_range(-5.0..5.0)).collect();
        let tau = rng.random_range(0.05..5.0);
        let c = rng.random_range(-50.0..50.0);
        let p = softmax_vec(&z, tau).unwrap();
        let q = softmax_vec(&z.iter().map(|v| v + c).collect::<Vec<_>>(), tau).unwrap();
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for (a, b) in p.iter().zip(&q) {
            assert!((a - b).abs() < 1e-12);
        }
        let am = |v: &[f64]| {
            v.iter()
                .enumerate()
                .fold(0, |best, (i, x)| if *x > v[best] { i } else { best })
        };
        assert_eq!(am(&p), am(&z));
    }
}

#[test]
fn backward_sum_and_relu_gate() {
    let mut store = ParamStore::new();
    let x = store.add("x", t(&[2], &[-1.0, 2.0]), ParamKind::Weight);
    let unused = store.add("unused", t(&[3], &[1.0; 3]), ParamKind::Weight);
    let mut g = Graph::new(&store);
    let xn = g.param(x);
    let s = g.sum(xn);
    let grads = g.backward(s).unwrap();
    assert_eq!(grads.param(x).to_f64_vec(), vec![1.0, 1.0]);
    assert_eq!(grads.param(unused).to_f64_vec(), vec![0.0; 3]);

    let mut g = Graph::new(&store);
    let xn = g.param(x);
    let r = g.relu(xn);
    let s = g.sum(r);
    let grads = g.backward(s).unwrap();
    assert_eq!(grads.param(x).to_f64_vec(), vec![0.0, 1.0]);
}

#[test]
fn relu_derivative_at_zero_is_zero() {
    let mut store = ParamStore::new();
    let x = store.add("x", t(&[1], &[0.0]), ParamKind::Weight);
    let mut g = Graph::new(&store);
    let xn = g.param(x);
    let r = g.relu(xn);
    let s = g.sum(r);
    assert_eq!(g.backward(s).unwrap().param(x).data()[0], 0.0);
}

#[test]
fn backward_rejects_non_scalar_loss() {
    let mut store = ParamStore::new();
    let x = store.add("x", t(&[2], &[1.0, 2.0]), ParamKind::Weight);
    let mut g = Graph::new(&store);
    let xn = g.param(x);
    assert!(matches!(g.backward(xn), Err(Error::Usage(_))));
}

#[test]
fn linear_graph_gradient_is_exact() {
    let mut store = ParamStore::new();
    let x = store.add(
        "x",
        t(&[2, 3], &[0.3, -0.2, 0.5, 1.0, 0.1, -0.7]),
        ParamKind::Weight,
    );
    let w = store.add(
        "w",
        t(&[3, 2], &[0.2, 0.4, -0.1, 0.3, 0.9, -0.5]),
        ParamKind::Weight,
    );
    let b = store.add("b", t(&[2], &[0.1, -0.2]), ParamKind::Weight);
    let err = grad_check_all(&mut store, 1e-5, |g| {
        let (xn, wn, bn) = (g.param(x), g.param(w), g.param(b));
        let y = g.affine(xn, wn, bn)?;
        Ok(g.sum(y))
    })
    .unwrap();
    assert!(err < 1e-10, "linear grad check error {err}");
}

#[test]
fn conv_tanh_composite_passes_grad_check() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut store = ParamStore::new();
    let mut rand_t = |shape: &[usize]| {
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    };
    let x = store.add("x", rand_t(&[2, 5, 5, 2]), ParamKind::Weight);
    let k = store.add("k", rand_t(&[3, 3, 2, 3]), ParamKind::Weight);
    let b = store.add("b", rand_t(&[3]), ParamKind::Weight);
    let proj = rand_t(&[2, 3, 3, 3]);
    let err = grad_check_all(&mut store, 1e-5, |g| {
        let (xn, kn, bn) = (g.param(x), g.param(k), g.param(b));
        let y = g.conv2d(xn, kn, Some(bn), 2, 1)?;
        let y = g.activation(y, ActKind::Tanh);
        g.dot_const(y, proj.clone())
    })
    .unwrap();
    assert!(err < 1e-4, "conv+tanh grad check error {err}");
}

#[test]
fn frozen_params_are_skipped_by_adam() {
    let mut store = ParamStore::new();
    let w = store.add("w", t(&[2], &[1.0, 1.0]), ParamKind::Weight);
    let a = store.add("a", t(&[2], &[0.0, 0.0]), ParamKind::Arch);
    store.set_frozen(ParamKind::Arch, true);
    let mut opt = Adam::new(&store, 0.1);
    let grads = vec![t(&[2], &[1.0, -1.0]), t(&[2], &[1.0, 1.0])];
    opt.step(&mut store, &grads);
    assert_eq!(store.value(a).to_f64_vec(), vec![0.0, 0.0]);
    let wv = store.value(w).to_f64_vec();
    assert!((wv[0] - 0.9).abs() < 1e-6 && (wv[1] - 1.1).abs() < 1e-6);
}

#[test]
fn global_norm_clipping() {
    let mut g = vec![t(&[2], &[3.0, 4.0])];
    let n = clip_global_norm(&mut g, 1.0);
    assert!((n - 5.0).abs() < 1e-12);
    assert!((g[0].data()[0] - 0.6).abs() < 1e-12);
}

#[test]
fn forward_is_bitwise_deterministic_in_f32() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let data: Vec<f32> = (0..2 * 8 * 8 * 4)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        let kd: Vec<f32> = (0..9 * 4 * 4)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let x = g.input(Tensor::from_vec(&[2, 8, 8, 4], data).unwrap());
        let k = g.input(Tensor::from_vec(&[3, 3, 4, 4], kd).unwrap());
        let y = g.conv2d(x, k, None, 1, 2).unwrap();
        let y = g.pool2d(y, PoolKind::Max, 2).unwrap();
        g.value(y)
            .data()
            .iter()
            .map(|v| v.to_bits())
            .collect::<Vec<_>>()
    };
    assert_eq!(run(), run());
}
