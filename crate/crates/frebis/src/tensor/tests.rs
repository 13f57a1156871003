use super::gradcheck::{check_gradient, DEFAULT_EPS};
use super::*;

fn randn_buf(rows: usize, cols: usize, rng: &mut Rng) -> Buf<f64> {
    Buf::from_fn(rows, cols, |_, _| normal_f64(rng))
}

#[test]
fn matmul_identity() {
    let mut g = Graph::<f64>::new();
    let a = g.constant(Buf::from_f64_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]));
    let eye = g.constant(Buf::from_f64_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]));
    let c = g.matmul(a, eye);
    assert_eq!(g.value(c).data(), g.value(a).data());
}

#[test]
fn matmul_hand_arithmetic() {
    let mut g = Graph::<f64>::new();
    let a = g.constant(Buf::from_f64_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]));
    let b = g.constant(Buf::from_f64_slice(2, 1, &[1.0, 1.0]));
    let c = g.matmul(a, b);
    assert_eq!(g.value(c).data(), &[3.0, 7.0]);
}

#[test]
fn matmul_gradient_is_ones_times_b_transpose() {
    let mut rng = seeded(1);
    let a0 = randn_buf(3, 4, &mut rng);
    let b0 = randn_buf(4, 2, &mut rng);

    let mut g = Graph::<f64>::new();
    let a = g.leaf(a0.clone());
    let b = g.constant(b0.clone());
    let c = g.matmul(a, b);
    let loss = g.sum_all(c);
    let grads = g.backward(loss);
    let da = grads.get(a, (3, 4));

    // dA = ones · Bᵀ: every row equals the row-sums of B.
    for r in 0..3 {
        for c in 0..4 {
            let expect: f64 = (0..2).map(|j| b0.get(c, j)).sum();
            assert!((da.get(r, c) - expect).abs() < 1e-12);
        }
    }

    // And against central finite differences at 64-bit.
    let rel = check_gradient(&a0, DEFAULT_EPS, |g, a| {
        let b = g.constant(b0.clone());
        let c = g.matmul(a, b);
        g.sum_all(c)
    });
    assert!(rel < 1e-6, "matmul finite-difference rel err {rel}");
}

#[test]
fn softplus_sharp_at_zero() {
    let mut g = Graph::<f64>::new();
    let x = g.constant(Buf::scalar(0.0));
    let y = g.softplus(x, 100.0);
    let expect = 2.0f64.ln() / 100.0; // ≈ 0.00693
    assert!((g.value(y).item() - expect).abs() < 1e-12);
}

#[test]
fn sigmoid_and_relu_basics() {
    let mut g = Graph::<f64>::new();
    let x = g.constant(Buf::from_f64_slice(1, 3, &[0.0, -1.0, 2.0]));
    let s = g.sigmoid(x);
    assert_eq!(g.value(s).get(0, 0), 0.5);
    let r = g.relu(x);
    assert_eq!(g.value(r).data(), &[0.0, 0.0, 2.0]);
}

#[test]
fn softmax_uniform_and_direct_value() {
    let mut g = Graph::<f64>::new();
    let c = g.constant(Buf::from_f64_slice(1, 3, &[7.3, 7.3, 7.3]));
    let y = g.softmax_rows(c);
    for &v in g.value(y).data() {
        assert!((v - 1.0 / 3.0).abs() < 1e-12);
    }

    // softmax([4,2,2]) — direct evaluation: e²/(e²+2) etc.
    let x = g.constant(Buf::from_f64_slice(1, 3, &[4.0, 2.0, 2.0]));
    let y = g.softmax_rows(x);
    let v = g.value(y);
    assert!((v.get(0, 0) - 0.7870).abs() < 1e-4);
    assert!((v.get(0, 1) - 0.1065).abs() < 1e-4);
    assert!((v.get(0, 2) - 0.1065).abs() < 1e-4);
    let sum: f64 = v.data().iter().sum();
    assert!((sum - 1.0).abs() < 1e-6);
}

#[test]
fn softmax_large_input_no_overflow() {
    let mut g = Graph::<f64>::new();
    let x = g.constant(Buf::from_f64_slice(1, 3, &[1000.0, 0.0, 0.0]));
    let y = g.softmax_rows(x);
    let v = g.value(y);
    assert!(v.all_finite());
    assert!((v.get(0, 0) - 1.0).abs() < 1e-12);
    assert!(v.get(0, 1).abs() < 1e-12);
}

#[test]
fn softmax_shift_invariance() {
    let mut rng = seeded(3);
    for _ in 0..20 {
        let x = randn_buf(2, 5, &mut rng);
        let shift = normal_f64(&mut rng) * 10.0;
        let xs = x.map(|v| v + shift);
        let mut g = Graph::<f64>::new();
        let a = g.constant(x);
        let b = g.constant(xs);
        let ya = g.softmax_rows(a);
        let yb = g.softmax_rows(b);
        for (u, w) in g.value(ya).data().iter().zip(g.value(yb).data()) {
            assert!((u - w).abs() < 1e-9);
        }
    }
}

#[test]
fn backward_sum_of_squares() {
    let mut g = Graph::<f64>::new();
    let x0 = Buf::from_f64_slice(1, 4, &[1.0, -2.0, 0.5, 3.0]);
    let x = g.leaf(x0.clone());
    let sq = g.square(x);
    let loss = g.sum_all(sq);
    let grads = g.backward(loss);
    let dx = grads.get(x, (1, 4));
    for i in 0..4 {
        assert!((dx.data()[i] - 2.0 * x0.data()[i]).abs() < 1e-12);
    }
}

#[test]
fn backward_composite_matches_finite_differences() {
    let mut rng = seeded(5);
    let w0 = randn_buf(1, 6, &mut rng);
    let x0 = randn_buf(6, 1, &mut rng);
    let rel = check_gradient(&w0, DEFAULT_EPS, |g, w| {
        let x = g.constant(x0.clone());
        let wx = g.matmul(w, x);
        let y = g.sigmoid(wx);
        g.sum_all(y)
    });
    assert!(rel < 1e-4, "composite rel err {rel}");
}

#[test]
fn backward_on_non_scalar_panics() {
    let result = std::panic::catch_unwind(|| {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(Buf::zeros(2, 2));
        let y = g.square(x);
        g.backward(y);
    });
    assert!(result.is_err());
}

#[test]
fn unused_parameter_receives_zero_grad() {
    let mut g = Graph::<f64>::new();
    let used = g.leaf(Buf::from_f64_slice(1, 1, &[2.0]));
    let unused = g.leaf(Buf::from_f64_slice(1, 1, &[5.0]));
    let loss = g.square(used);
    let grads = g.backward(loss);
    assert_eq!(grads.get(unused, (1, 1)).item(), 0.0);
    assert_eq!(grads.get(used, (1, 1)).item(), 4.0);
}

#[test]
fn backward_is_deterministic() {
    let run = || {
        let mut rng = seeded(11);
        let mut g = Graph::<f64>::new();
        let a = g.leaf(randn_buf(4, 4, &mut rng));
        let b = g.leaf(randn_buf(4, 4, &mut rng));
        let c = g.matmul(a, b);
        let d = g.sigmoid(c);
        let loss = g.mean_all(d);
        let grads = g.backward(loss);
        (grads.get(a, (4, 4)), grads.get(b, (4, 4)))
    };
    let (a1, b1) = run();
    let (a2, b2) = run();
    assert_eq!(a1.data(), a2.data());
    assert_eq!(b1.data(), b2.data());
}

/// Every differentiable op against central finite differences on random
/// inputs (the module-level invariant; the acceptance suite re-runs this
/// with more instances).
#[test]
fn per_op_gradients_match_finite_differences() {
    let mut rng = seeded(7);
    type OpCase = (&'static str, fn(&mut Graph<f64>, Var) -> Var);
    let cases: Vec<OpCase> = vec![
        ("neg", |g, x| {
            let y = g.neg(x);
            g.sum_all(y)
        }),
        ("exp", |g, x| {
            let y = g.exp(x);
            g.sum_all(y)
        }),
        ("square", |g, x| {
            let y = g.square(x);
            g.sum_all(y)
        }),
        ("sigmoid", |g, x| {
            let y = g.sigmoid(x);
            g.sum_all(y)
        }),
        ("softplus", |g, x| {
            let y = g.softplus(x, 100.0);
            g.sum_all(y)
        }),
        ("softmax", |g, x| {
            let y = g.softmax_rows(x);
            let z = g.square(y);
            g.sum_all(z)
        }),
        ("cumsum", |g, x| {
            let y = g.exclusive_cumsum_rows(x);
            let z = g.square(y);
            g.sum_all(z)
        }),
        ("sum_rows", |g, x| {
            let y = g.sum_rows(x);
            let z = g.square(y);
            g.sum_all(z)
        }),
        ("mean", |g, x| {
            let y = g.square(x);
            g.mean_all(y)
        }),
        ("slice", |g, x| {
            let y = g.slice_cols(x, 1, 3);
            let z = g.square(y);
            g.sum_all(z)
        }),
        ("reshape", |g, x| {
            let y = g.reshape(x, 6, 2);
            let z = g.sigmoid(y);
            g.sum_all(z)
        }),
    ];
    for (name, f) in cases {
        for _ in 0..5 {
            let x = randn_buf(3, 4, &mut rng);
            let rel = check_gradient(&x, DEFAULT_EPS, f);
            assert!(rel < 1e-4, "{name}: rel err {rel}");
        }
    }

    // Binary ops with broadcasting.
    for _ in 0..5 {
        let b0 = randn_buf(1, 4, &mut rng).map(|v| v + 3.0); // keep away from 0 for div
        let rel = check_gradient(&randn_buf(3, 4, &mut rng), DEFAULT_EPS, |g, x| {
            let b = g.constant(b0.clone());
            let s = g.add(x, b);
            let m = g.mul(s, b);
            let d = g.div(m, b);
            let z = g.square(d);
            g.sum_all(z)
        });
        assert!(rel < 1e-4, "binary broadcast rel err {rel}");
    }
}

#[test]
fn adam_first_step_moves_by_lr() {
    let hp = AdamParams::default();
    let mut p = Buf::<f64>::zeros(2, 2);
    let g = Buf::full(2, 2, 1.0);
    let mut state = AdamState::new(&[(2, 2)]);
    state.step(&mut [&mut p], &[g], &hp);
    for &x in p.data() {
        // mhat = 1, vhat = 1 → update = -lr / (1 + eps) ≈ -0.005.
        assert!((x + 0.005).abs() < 1e-7);
    }
}

#[test]
fn adam_zero_gradient_leaves_params_unchanged() {
    let hp = AdamParams::default();
    let mut p = Buf::<f64>::from_f64_slice(1, 3, &[1.0, -2.0, 0.25]);
    let before = p.clone();
    let mut state = AdamState::new(&[(1, 3)]);
    state.step(&mut [&mut p], &[Buf::zeros(1, 3)], &hp);
    assert_eq!(p.data(), before.data());
}

#[test]
fn adam_matches_scalar_reference_trace() {
    // Independent scalar recurrence, evaluated by hand in f64.
    let (lr, b1, b2, eps) = (0.005f64, 0.9, 0.999, 1e-8);
    let grads = [0.3f64, -0.7];
    let mut theta = 1.0f64;
    let (mut m, mut v) = (0.0f64, 0.0f64);
    for (t, &g) in grads.iter().enumerate() {
        let t = (t + 1) as i32;
        m = b1 * m + (1.0 - b1) * g;
        v = b2 * v + (1.0 - b2) * g * g;
        let mhat = m / (1.0 - b1.powi(t));
        let vhat = v / (1.0 - b2.powi(t));
        theta -= lr * mhat / (vhat.sqrt() + eps);
    }

    let hp = AdamParams::default();
    let mut p = Buf::<f64>::scalar(1.0);
    let mut state = AdamState::new(&[(1, 1)]);
    state.step(&mut [&mut p], &[Buf::scalar(grads[0])], &hp);
    state.step(&mut [&mut p], &[Buf::scalar(grads[1])], &hp);
    assert!((p.item() - theta).abs() < 1e-15);
}

#[test]
fn max_and_clamp_grad_routing() {
    let mut g = Graph::<f64>::new();
    let a = g.leaf(Buf::from_f64_slice(1, 2, &[2.0, -1.0]));
    let b = g.constant(Buf::from_f64_slice(1, 2, &[1.0, 1.0]));
    let m = g.max(a, b);
    assert_eq!(g.value(m).data(), &[2.0, 1.0]);
    let s = g.sum_all(m);
    let grads = g.backward(s);
    assert_eq!(grads.get(a, (1, 2)).data(), &[1.0, 0.0]);

    let mut g = Graph::<f64>::new();
    let a = g.leaf(Buf::from_f64_slice(1, 2, &[2.0, -1.0]));
    let c = g.clamp_min(a, 0.0);
    assert_eq!(g.value(c).data(), &[2.0, 0.0]);
}

#[test]
fn concat_cols_roundtrip_grad() {
    let mut g = Graph::<f64>::new();
    let a = g.leaf(Buf::from_f64_slice(2, 1, &[1.0, 2.0]));
    let b = g.leaf(Buf::from_f64_slice(2, 2, &[3.0, 4.0, 5.0, 6.0]));
    let cat = g.concat_cols(&[a, b]);
    assert_eq!(g.value(cat).data(), &[1.0, 3.0, 4.0, 2.0, 5.0, 6.0]);
    let right = g.slice_cols(cat, 1, 3);
    let s = g.sum_all(right);
    let grads = g.backward(s);
    assert_eq!(grads.get(a, (2, 1)).data(), &[0.0, 0.0]);
    assert_eq!(grads.get(b, (2, 2)).data(), &[1.0, 1.0, 1.0, 1.0]);
}

#[test]
fn checkpoint_roundtrip_with_adam_and_rng() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ckpt.bin");

    let mut rng = seeded(42);
    let mut store = ParamStore::<f32>::new();
    let a = store.register("layer.weight", Buf::from_fn(3, 2, |_, _| normal_f64(&mut rng) as f32));
    let b = store.register("layer.bias", Buf::from_fn(1, 2, |_, _| normal_f64(&mut rng) as f32));
    let shapes: Vec<_> = store.iter().map(|(_, p)| p.value.shape()).collect();
    let mut adam = AdamState::new(&shapes);
    adam.step = 17;
    adam.m[0] = Buf::full(3, 2, 0.25);

    // Advance the rng so the snapshot is mid-stream.
    for _ in 0..13 {
        uniform_f64(&mut rng);
    }
    let snap = RngSnapshot::capture(&rng);
    let next_draw = uniform_f64(&mut rng);

    save_checkpoint(&path, &store, Some(&adam), 99, serde_json::json!({"k": 1}), Some(snap))
        .unwrap();

    let ck = load_checkpoint::<f32>(&path).unwrap();
    assert_eq!(ck.meta.iteration, 99);
    assert_eq!(ck.meta.params[0].name, "layer.weight");
    assert_eq!(ck.values[0].data(), store.value(a).data());
    assert_eq!(ck.values[1].data(), store.value(b).data());
    let adam2 = ck.adam.unwrap();
    assert_eq!(adam2.step, 17);
    assert_eq!(adam2.m[0].data(), adam.m[0].data());

    let mut restored = ck.meta.rng.unwrap().restore().unwrap();
    assert_eq!(uniform_f64(&mut restored), next_draw);

    // Wrong precision is an explicit error.
    assert!(load_checkpoint::<f64>(&path).is_err());
}

#[test]
fn checkpoint_rejects_garbage() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.bin");
    std::fs::write(&path, b"not a checkpoint at all").unwrap();
    assert!(load_checkpoint::<f32>(&path).is_err());
}
