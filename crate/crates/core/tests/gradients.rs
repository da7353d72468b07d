use approx::assert_abs_diff_eq;
use metsc_core::autodiff::{adam_step, op_suite, AdamConfig, AdamState, Tape, Tensor};
use proptest::prelude::*;

#[test]
fn every_op_matches_finite_differences() {
    let report = op_suite(20, 11).unwrap();
    assert!(report.len() >= 25);
    for r in &report {
        assert_eq!(r.configs, 20);
        assert!(r.worst.passed(1e-4), "{}: {:?}", r.op, r.worst);
    }
}

#[test]
fn matmul_examples() {
    let mut t = Tape::<f64>::new();
    let i = t.constant(Tensor::eye(2));
    let c = t.constant(Tensor::column(vec![3.0, 4.0]));
    let p = t.matmul(i, c).unwrap();
    assert_eq!(t.value(p).data(), &[3.0, 4.0]);
    let a = t.constant(Tensor::row(vec![1.0, 2.0]));
    let q = t.matmul(a, c).unwrap();
    assert_eq!(t.value(q).data(), &[11.0]);
    let bad = t.constant(Tensor::row(vec![1.0, 2.0, 3.0]));
    assert!(t.matmul(bad, c).is_err());
}

#[test]
fn matmul_matches_triple_loop() {
    let a: Vec<f64> = (0..20).map(|i| ((i * 7) % 11) as f64 - 5.0).collect();
    let b: Vec<f64> = (0..10).map(|i| ((i * 3) % 7) as f64 * 0.5).collect();
    let mut t = Tape::<f64>::new();
    let va = t.constant(Tensor::matrix(4, 5, a.clone()).unwrap());
    let vb = t.constant(Tensor::matrix(5, 2, b.clone()).unwrap());
    let p = t.matmul(va, vb).unwrap();
    for i in 0..4 {
        for j in 0..2 {
            let s: f64 = (0..5).map(|k| a[i * 5 + k] * b[k * 2 + j]).sum();
            assert_eq!(t.value(p).at(i, j), s);
        }
    }
}

#[test]
fn layer_norm_examples() {
    let mut t = Tape::<f64>::new();
    let g = t.constant(Tensor::row(vec![1.0; 3]));
    let b = t.constant(Tensor::row(vec![0.0; 3]));
    let x = t.constant(Tensor::row(vec![5.0; 3]));
    let y = t.layer_norm(x, g, b, 1e-5).unwrap();
    assert_eq!(t.value(y).data(), &[0.0; 3]);

    let g = t.constant(Tensor::row(vec![1.0; 2]));
    let b = t.constant(Tensor::row(vec![0.0; 2]));
    let x = t.constant(Tensor::row(vec![1.0, 3.0]));
    let y = t.layer_norm(x, g, b, 1e-14).unwrap();
    assert_abs_diff_eq!(t.value(y).data()[0], -1.0, epsilon = 1e-12);
    assert_abs_diff_eq!(t.value(y).data()[1], 1.0, epsilon = 1e-12);
    assert!(t.layer_norm(x, g, b, 0.0).is_err());
}

#[test]
fn softmax_examples() {
    let mut t = Tape::<f64>::new();
    let x = t.constant(Tensor::matrix(3, 2, vec![0.0, 0.0, 1000.0, 1000.0, 0.0, 3f64.ln()]).unwrap());
    let s = t.softmax_rows(x);
    let v = t.value(s).data();
    assert_eq!(&v[..4], &[0.5; 4]);
    assert_abs_diff_eq!(v[4], 0.25, epsilon = 1e-15);
    assert_abs_diff_eq!(v[5], 0.75, epsilon = 1e-15);
}

#[test]
fn gelu_examples() {
    let mut t = Tape::<f64>::new();
    let x = t.constant(Tensor::row(vec![0.0, 10.0]));
    let y = t.gelu(x);
    let v = t.value(y).data();
    assert_eq!(v[0], 0.0);
    assert!(v[1] > 9.999 && v[1] < 10.0 + 1e-12);
}

#[test]
fn hard_threshold_examples() {
    let mut t = Tape::<f64>::new();
    let x = t.constant(Tensor::row(vec![0.4, 0.05, -0.2]));
    let a = t.hard_threshold(x, 0.1, true).unwrap();
    let b = t.hard_threshold(x, 0.1, false).unwrap();
    assert_eq!(t.value(a).data(), &[0.4, 0.0, 0.0]);
    assert_eq!(t.value(b).data(), &[0.4, 0.0, -0.2]);
    let edge = t.constant(Tensor::row(vec![0.1]));
    for nonneg in [true, false] {
        let h = t.hard_threshold(edge, 0.1, nonneg).unwrap();
        assert_eq!(t.value(h).data(), &[0.1]);
    }
    assert!(t.hard_threshold(x, 0.0, true).is_err());
}

#[test]
fn backward_examples() {
    let mut t = Tape::<f64>::new();
    let x = t.param(Tensor::row(vec![1.0, -2.0, 0.5]));
    let unused = t.param(Tensor::row(vec![7.0]));
    let s = t.sum(x);
    let g = t.backward(s).unwrap();
    assert_eq!(g.get(x).data(), &[1.0; 3]);
    assert_eq!(g.get(unused).data(), &[0.0]);

    let sq = t.mul(x, x).unwrap();
    let half = t.scale(sq, 0.5);
    let l = t.sum(half);
    let g = t.backward(l).unwrap();
    assert_eq!(g.get(x).data(), &[1.0, -2.0, 0.5]);
    assert!(t.backward(x).is_err());
}

#[test]
fn adam_examples() {
    let cfg = AdamConfig::default();
    let mut p = vec![Tensor::row(vec![1.0, 2.0])];
    let mut st = AdamState::new(&p);
    adam_step(&mut p, &[Tensor::row(vec![0.0, 0.0])], &mut st, 0.1, &cfg).unwrap();
    assert_eq!(p[0].data(), &[1.0, 2.0]);

    let mut p = vec![Tensor::<f64>::scalar(0.0)];
    let mut st = AdamState::new(&p);
    adam_step(&mut p, &[Tensor::scalar(1.0)], &mut st, 0.1, &cfg).unwrap();
    assert_abs_diff_eq!(p[0].data()[0], -0.1 / (1.0 + 1e-8), epsilon = 1e-15);

    let mut p = vec![Tensor::<f64>::scalar(0.0)];
    let mut st = AdamState::new(&p);
    for _ in 0..100 {
        let g = 2.0 * (p[0].data()[0] - 3.0);
        adam_step(&mut p, &[Tensor::scalar(g)], &mut st, 0.1, &cfg).unwrap();
    }
    assert!((p[0].data()[0] - 3.0).abs() < 0.5);
}

fn matrix() -> impl Strategy<Value = (usize, usize, Vec<f64>)> {
    (1usize..5, 1usize..6).prop_flat_map(|(r, c)| (Just(r), Just(c), prop::collection::vec(-2.0f64..2.0, r * c)))
}

proptest! {
    #[test]
    fn softmax_rows_sum_to_one_and_ignore_shifts((r, c, x) in matrix(), shift in prop::collection::vec(-50.0f64..50.0, 5)) {
        let mut t = Tape::<f64>::new();
        let a = t.constant(Tensor::matrix(r, c, x.clone()).unwrap());
        let shifted: Vec<f64> = x.iter().enumerate().map(|(i, v)| v + shift[i / c]).collect();
        let b = t.constant(Tensor::matrix(r, c, shifted).unwrap());
        let sa = t.softmax_rows(a);
        let sb = t.softmax_rows(b);
        for i in 0..r {
            let row = t.value(sa).row_slice(i);
            prop_assert!(row.iter().all(|&v| v >= 0.0));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let round = |v: f64| (v * 1e12).round();
            for (u, w) in row.iter().zip(t.value(sb).row_slice(i)) {
                prop_assert!((round(*u) - round(*w)).abs() <= 1.0);
            }
        }
    }

    #[test]
    fn hard_threshold_is_idempotent((r, c, x) in matrix(), lambda in 0.01f64..1.5, nonneg in any::<bool>()) {
        let mut t = Tape::<f64>::new();
        let a = t.constant(Tensor::matrix(r, c, x).unwrap());
        let h = t.hard_threshold(a, lambda, nonneg).unwrap();
        let hh = t.hard_threshold(h, lambda, nonneg).unwrap();
        prop_assert_eq!(t.value(h), t.value(hh));
    }

    #[test]
    fn shared_leaf_gradients_add((r, c, x) in matrix(), k in -2.0f64..2.0) {
        // loss = Σ gelu(x) + Σ k·x²
        let total = {
            let mut t = Tape::<f64>::new();
            let v = t.param(Tensor::matrix(r, c, x.clone()).unwrap());
            let a = t.gelu(v);
            let sq = t.mul(v, v).unwrap();
            let b = t.scale(sq, k);
            let s = t.add(a, b).unwrap();
            let l = t.sum(s);
            t.backward(l).unwrap().get(v)
        };
        let branch = |second: bool| {
            let mut t = Tape::<f64>::new();
            let v = t.param(Tensor::matrix(r, c, x.clone()).unwrap());
            let out = if second {
                let sq = t.mul(v, v).unwrap();
                t.scale(sq, k)
            } else {
                t.gelu(v)
            };
            let l = t.sum(out);
            t.backward(l).unwrap().get(v)
        };
        let (g1, g2) = (branch(false), branch(true));
        for i in 0..r * c {
            prop_assert!((total.data()[i] - g1.data()[i] - g2.data()[i]).abs() < 1e-12);
        }
    }
}
