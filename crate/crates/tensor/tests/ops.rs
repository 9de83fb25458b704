use fragroup_tensor::gradcheck::{check_gradients, GradCheckOptions};
use fragroup_tensor::{Graph, Result, Tensor, TensorError, Var};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
    Tensor::new(shape, data.to_vec()).unwrap()
}

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Reduces any output to a scalar through fixed random weights so every
/// output coordinate contributes a distinct sensitivity.
fn project(g: &Graph<f64>, out: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = random(&g.shape(out), &mut rng);
    let w = g.constant(w);
    let prod = g.mul(out, w)?;
    g.sum(prod)
}

fn assert_gradients(inputs: Vec<Tensor<f64>>, f: impl Fn(&Graph<f64>, &[Var]) -> Result<Var>) {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let report = check_gradients(&inputs, GradCheckOptions::default(), &mut rng, f).unwrap();
    assert!(report.checked > 0);
    assert!(report.max_rel_error < 1e-5, "{report:?}");
}

#[test]
fn matmul_examples() {
    let g = Graph::<f64>::new();
    let a = g.constant(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
    let b = g.constant(t(&[2, 2], &[5.0, 6.0, 7.0, 8.0]));
    let c = g.matmul(a, b).unwrap();
    assert_eq!(g.value(c).data(), &[19.0, 22.0, 43.0, 50.0]);

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = g.constant(random(&[3, 4], &mut rng));
    let eye = g.constant(t(&[4, 4], &[1., 0., 0., 0., 0., 1., 0., 0., 0., 0., 1., 0., 0., 0., 0., 1.]));
    let xi = g.matmul(x, eye).unwrap();
    assert_eq!(g.value(xi), g.value(x));

    let bad = g.constant(Tensor::zeros(&[2, 3]));
    assert!(matches!(g.matmul(bad, b), Err(TensorError::Shape { .. })));
}

#[test]
fn softmax_examples() {
    let g = Graph::<f64>::new();
    let u = g.constant(t(&[1, 3], &[0.7, 0.7, 0.7]));
    let p = g.value(g.softmax(u).unwrap());
    for &v in p.data() {
        assert!((v - 1.0 / 3.0).abs() < 1e-12);
    }
    let x = g.constant(t(&[1, 3], &[10.0, 0.0, 0.0]));
    let p = g.value(g.softmax(x).unwrap());
    let closed = 10f64.exp() / (10f64.exp() + 2.0);
    assert!((p.data()[0] - closed).abs() < 1e-12);
    assert!(p.data()[0] > 0.99);
}

#[test]
fn layer_norm_examples() {
    let g = Graph::<f64>::new();
    let ones = g.constant(Tensor::full(&[2], 1.0));
    let zeros = g.constant(Tensor::zeros(&[2]));
    let x = g.constant(t(&[2, 2], &[1.0, 3.0, 5.0, 5.0]));
    let y = g.value(g.layer_norm(x, ones, zeros, 1e-5).unwrap());
    // Row [1,3]: mean 2, population std 1; row [5,5]: zero variance.
    let expected = [-1.0 / (1.0f64 + 1e-5).sqrt(), 1.0 / (1.0f64 + 1e-5).sqrt(), 0.0, 0.0];
    for (a, b) in y.data().iter().zip(expected) {
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }
    let gamma0 = g.constant(Tensor::zeros(&[2]));
    let beta = g.constant(t(&[2], &[0.25, -3.0]));
    let y = g.value(g.layer_norm(x, gamma0, beta, 1e-5).unwrap());
    assert_eq!(y.data(), &[0.25, -3.0, 0.25, -3.0]);
}

#[test]
fn relu_conv_pool_examples() {
    let g = Graph::<f64>::new();
    let x = g.constant(t(&[3], &[-1.0, 0.0, 2.0]));
    assert_eq!(g.value(g.relu(x).unwrap()).data(), &[0.0, 0.0, 2.0]);

    let img = g.constant(t(&[1, 2, 2], &[1.0, 2.0, 3.0, 4.0]));
    let k = g.constant(Tensor::full(&[1, 1, 2, 2], 1.0));
    let b = g.constant(Tensor::zeros(&[1]));
    let out = g.value(g.conv2d(img, k, b, 1).unwrap());
    assert_eq!(out.shape(), &[1, 1, 1]);
    assert_eq!(out.data(), &[10.0]);

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = random(&[2, 5, 5], &mut rng);
    let xv = g.constant(x.clone());
    let mut eye = Tensor::zeros(&[2, 2, 1, 1]);
    eye.data_mut()[0] = 1.0;
    eye.data_mut()[3] = 1.0;
    let k = g.constant(eye);
    let b = g.constant(Tensor::zeros(&[2]));
    assert_eq!(g.value(g.conv2d(xv, k, b, 1).unwrap()), x);

    let pooled = g.value(g.global_avg_pool(img).unwrap());
    assert_eq!(pooled.data(), &[2.5]);
}

#[test]
fn embedding_bounds_and_padding() {
    let g = Graph::<f64>::new();
    let table = g.param(t(&[3, 2], &[9.0, 9.0, 1.0, 2.0, 3.0, 4.0]));
    assert!(matches!(
        g.embedding(table, &[0, 3], Some(0)),
        Err(TensorError::IndexOutOfBounds { index: 3, bound: 3, .. })
    ));
    let rows = g.embedding(table, &[0, 2, 0, 1], Some(0)).unwrap();
    assert_eq!(g.value(rows).data(), &[0.0, 0.0, 3.0, 4.0, 0.0, 0.0, 1.0, 2.0]);
    let loss = g.sum(rows).unwrap();
    let grads = g.backward(loss).unwrap();
    assert_eq!(grads.get(table).unwrap().data(), &[0.0, 0.0, 1.0, 1.0, 1.0, 1.0]);
}

#[test]
fn cross_entropy_examples() {
    let g = Graph::<f64>::new();
    let uniform = g.constant(Tensor::zeros(&[4, 3]));
    let loss = g.cross_entropy(uniform, &[0, 1, 2, 1], &[1.0, 1.0, 1.0]).unwrap();
    assert!((g.value(loss).item() - 3f64.ln()).abs() < 1e-12);

    let confident = g.constant(t(&[2, 3], &[40.0, 0.0, 0.0, 0.0, 0.0, 40.0]));
    let loss = g.cross_entropy(confident, &[0, 2], &[1.0, 1.0, 1.0]).unwrap();
    assert!(g.value(loss).item() < 1e-15);

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let logits = g.constant(random(&[6, 3], &mut rng));
    let targets = [0, 2, 1, 1, 0, 2];
    let a = g.value(g.cross_entropy(logits, &targets, &[0.5, 2.0, 1.5]).unwrap()).item();
    let b = g.value(g.cross_entropy(logits, &targets, &[1.0, 4.0, 3.0]).unwrap()).item();
    assert!((a - b).abs() < 1e-12);

    assert!(matches!(
        g.cross_entropy(logits, &[0, 0, 0, 0, 0, 3], &[1.0; 3]),
        Err(TensorError::IndexOutOfBounds { index: 3, .. })
    ));
}

#[test]
fn backward_product_rule_and_contracts() {
    let g = Graph::<f64>::new();
    let x = g.param(Tensor::scalar(2.0));
    let y = g.param(Tensor::scalar(3.0));
    let c = g.constant(Tensor::scalar(5.0));
    let xy = g.mul(x, y).unwrap();
    let d = g.detach(xy);
    let cd = g.mul(c, d).unwrap();
    let total = g.add(xy, cd).unwrap();
    let grads = g.backward(total).unwrap();
    assert_eq!(grads.get(x).unwrap().item(), 3.0);
    assert_eq!(grads.get(y).unwrap().item(), 2.0);
    assert!(grads.get(c).is_none());
    assert!(grads.get(d).is_none());
    assert_eq!(g.backward(total).unwrap_err(), TensorError::BackwardTwice);

    let g = Graph::<f64>::new();
    let v = g.param(Tensor::zeros(&[2]));
    assert!(matches!(g.backward(v), Err(TensorError::NotScalar(_))));
}

#[test]
fn non_finite_results_are_errors() {
    let g = Graph::<f64>::new();
    let big = g.constant(Tensor::scalar(f64::MAX));
    assert_eq!(g.scale(big, 10.0).unwrap_err(), TensorError::NonFinite { op: "scale" });
}

#[test]
fn dropout_eval_identity_and_train_expectation() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let g = Graph::<f64>::new();
    let x = g.constant(Tensor::full(&[20_000], 1.5));
    assert_eq!(g.dropout(x, 0.2, false, &mut rng).unwrap(), x);
    let y = g.value(g.dropout(x, 0.2, true, &mut rng).unwrap());
    let mean = y.data().iter().sum::<f64>() / y.numel() as f64;
    assert!((mean - 1.5).abs() / 1.5 < 0.02, "mean {mean}");
    let zeros = y.data().iter().filter(|&&v| v == 0.0).count() as f64 / y.numel() as f64;
    assert!((zeros - 0.2).abs() < 0.02);
    for &v in y.data() {
        assert!(v == 0.0 || (v - 1.5 / 0.8).abs() < 1e-12);
    }

    // Same seed, same mask.
    let run = |seed| {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let g = Graph::<f32>::new();
        let x = g.constant(Tensor::full(&[64], 1.0f32));
        g.value(g.dropout(x, 0.5, true, &mut r).unwrap())
    };
    assert_eq!(run(4), run(4));
}

#[test]
fn finite_differences_elementwise_and_linear() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let (a, b, row) = (random(&[3, 4], &mut rng), random(&[3, 4], &mut rng), random(&[4], &mut rng));
    assert_gradients(vec![a.clone(), b.clone()], |g, v| {
        let s = g.add(v[0], v[1])?;
        let m = g.mul(s, v[1])?;
        let sc = g.scale(m, -1.7)?;
        project(g, sc, 1)
    });
    assert_gradients(vec![a.clone(), row], |g, v| {
        let y = g.add_row(v[0], v[1])?;
        project(g, y, 2)
    });
    let c = random(&[4, 5], &mut rng);
    assert_gradients(vec![a.clone(), c], |g, v| {
        let y = g.matmul(v[0], v[1])?;
        let yt = g.transpose(y)?;
        project(g, yt, 3)
    });
    assert_gradients(vec![a, b], |g, v| {
        let left = g.slice_cols(v[0], 1, 2)?;
        let joined = g.concat_cols(&[left, v[1]])?;
        let stacked = g.concat_rows(&[joined, joined])?;
        let r = g.reshape(stacked, &[6, 3, 2])?;
        project(g, r, 4)
    });
}

#[test]
fn finite_differences_nonlinear() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    // Keep ReLU inputs away from the kink.
    let x = Tensor::new(&[2, 5], (0..10).map(|i| if i % 2 == 0 { 0.3 + i as f64 * 0.1 } else { -0.4 - i as f64 * 0.05 }).collect()).unwrap();
    assert_gradients(vec![x], |g, v| {
        let y = g.relu(v[0])?;
        project(g, y, 5)
    });
    let logits = random(&[4, 3], &mut rng).map(|v| v * 3.0);
    assert_gradients(vec![logits.clone()], |g, v| {
        let p = g.softmax(v[0])?;
        project(g, p, 6)
    });
    assert_gradients(vec![logits], |g, v| g.cross_entropy(v[0], &[2, 0, 1, 1], &[7.1, 4.6, 0.38]));
    let (x, gamma, beta) = (random(&[3, 6], &mut rng), random(&[6], &mut rng), random(&[6], &mut rng));
    assert_gradients(vec![x, gamma, beta], |g, v| {
        let y = g.layer_norm(v[0], v[1], v[2], 1e-5)?;
        project(g, y, 7)
    });
}

#[test]
fn finite_differences_conv_pool_embedding() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let x = random(&[2, 2, 7, 7], &mut rng);
    let w = random(&[3, 2, 3, 3], &mut rng);
    let b = random(&[3], &mut rng);
    assert_gradients(vec![x, w, b], |g, v| {
        let y = g.conv2d(v[0], v[1], v[2], 2)?;
        let p = g.global_avg_pool(y)?;
        project(g, p, 8)
    });
    let table = random(&[5, 3], &mut rng);
    assert_gradients(vec![table.clone()], |g, v| {
        let rows = g.embedding(v[0], &[1, 0, 4, 4, 2, 0], None)?;
        let s = g.segment_sum(rows, 3)?;
        project(g, s, 9)
    });
    assert_gradients(vec![table], |g, v| {
        let rows = g.embedding(v[0], &[1, 0, 4, 4, 2, 0], Some(4))?;
        let s = g.segment_sum(rows, 3)?;
        project(g, s, 9)
    });
}

#[test]
fn finite_differences_through_dropout_mask() {
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    let x = random(&[4, 4], &mut rng);
    assert_gradients(vec![x], |g, v| {
        // Fixed seed inside the closure: every evaluation sees the same mask.
        let mut r = ChaCha8Rng::seed_from_u64(7);
        let y = g.dropout(v[0], 0.3, true, &mut r)?;
        project(g, y, 10)
    });
}

#[test]
fn identical_seeds_give_bit_identical_results() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let g = Graph::<f32>::new();
        let a = g.param(random(&[5, 8], &mut rng).cast());
        let b = g.param(random(&[8, 3], &mut rng).cast());
        let y = g.matmul(a, b).unwrap();
        let y = g.dropout(y, 0.2, true, &mut rng).unwrap();
        let loss = g.cross_entropy(y, &[0, 1, 2, 0, 1], &[1.0, 2.0, 0.5]).unwrap();
        let grads = g.backward(loss).unwrap();
        (g.value(loss), grads.get(a).unwrap().clone())
    };
    assert_eq!(run(), run());
}

proptest! {
    #[test]
    fn softmax_rows_sum_to_one_and_shift_invariant(
        rows in prop::collection::vec(prop::collection::vec(-30.0f64..30.0, 4), 1..6),
        shift in -50.0f64..50.0,
    ) {
        let g = Graph::<f64>::new();
        let x = Tensor::from_rows(&rows).unwrap();
        let shifted = x.map(|v| v + shift);
        let p = g.value(g.softmax(g.constant(x)).unwrap());
        let q = g.value(g.softmax(g.constant(shifted)).unwrap());
        for r in 0..rows.len() {
            let s: f64 = p.row(r).iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-6);
            prop_assert!(p.row(r).iter().all(|&v| v > 0.0 && v <= 1.0));
        }
        prop_assert!(p.max_abs_diff(&q) < 1e-6);
    }

    #[test]
    fn layer_norm_rows_are_standardized(
        rows in prop::collection::vec(prop::collection::vec(-10.0f64..10.0, 8), 1..5),
    ) {
        let spread = rows.iter().all(|r| {
            let (lo, hi) = r.iter().fold((f64::MAX, f64::MIN), |(l, h), &v| (l.min(v), h.max(v)));
            hi - lo > 0.5
        });
        prop_assume!(spread);
        let g = Graph::<f64>::new();
        let x = g.constant(Tensor::from_rows(&rows).unwrap());
        let y = g.value(g.layer_norm(x, g.constant(Tensor::full(&[8], 1.0)), g.constant(Tensor::zeros(&[8])), 1e-5).unwrap());
        for r in 0..rows.len() {
            let mean = y.row(r).iter().sum::<f64>() / 8.0;
            let var = y.row(r).iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 8.0;
            prop_assert!(mean.abs() < 1e-6);
            prop_assert!((var - 1.0).abs() < 1e-4);
        }
    }
}
