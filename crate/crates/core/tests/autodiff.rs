mod common;

use proptest::prelude::*;
use vidcap::autodiff::gradcheck::{check_gradients, random_tensor, FD_EPS};
use vidcap::autodiff::{BatchNormMode, Tape};
use vidcap::tensor::Tensor;
use vidcap::Tensor64;

fn t(shape: &[usize], v: &[f64]) -> Tensor64 {
    Tensor::from_f64(shape, v).unwrap()
}

#[test]
fn matmul_examples() {
    let mut tape = Tape::<f64>::new();
    let i = tape.leaf(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
    let b = tape.leaf(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
    let c = tape.matmul(i, b).unwrap();
    assert_eq!(tape.values(c), &[1.0, 2.0, 3.0, 4.0]);

    let a = tape.leaf(t(&[1, 2], &[1.0, 2.0]));
    let b = tape.leaf(t(&[2, 1], &[3.0, 4.0]));
    let c = tape.matmul(a, b).unwrap();
    assert_eq!(tape.values(c), &[11.0]);

    let err = tape.matmul(a, a).unwrap_err().to_string();
    assert!(err.contains("[1, 2]"), "{err}");
}

#[test]
fn matmul_sum_gradient() {
    let inputs = [random_tensor(&[3, 4], -1.0, 1.0, 1), random_tensor(&[4, 2], -1.0, 1.0, 2)];
    let report = check_gradients(&inputs, FD_EPS, |tape, v| {
        let c = tape.matmul(v[0], v[1])?;
        tape.sum(c)
    })
    .unwrap();
    assert_eq!(report.checked, 20);
    assert!(report.max_rel_error < 1e-6, "{report:?}");
}

#[test]
fn conv_examples() {
    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(Tensor::ones(&[1, 1, 3, 3]));
    let k = tape.leaf(Tensor::ones(&[1, 1, 3, 3]));
    let y = tape.conv2d(x, k, 1, 0).unwrap();
    assert_eq!(tape.values(y), &[9.0]);

    let x = tape.leaf(Tensor::ones(&[1, 1, 4, 4]));
    let k = tape.leaf(Tensor::ones(&[1, 1, 2, 2]));
    let y = tape.conv2d(x, k, 2, 0).unwrap();
    assert_eq!(tape.shape(y), &[1, 1, 2, 2]);

    let big = tape.leaf(Tensor::ones(&[1, 1, 5, 5]));
    assert!(tape.conv2d(x, big, 1, 0).is_err());
}

#[test]
fn conv_kernel_gradient() {
    let inputs = [random_tensor(&[1, 2, 5, 5], -1.0, 1.0, 3), random_tensor(&[3, 2, 3, 3], -1.0, 1.0, 4)];
    let report = check_gradients(&inputs, FD_EPS, |tape, v| {
        let y = tape.conv2d(v[0], v[1], 1, 1)?;
        vidcap::autodiff::gradcheck::random_projection(tape, y, 5)
    })
    .unwrap();
    assert!(report.max_rel_error < 1e-5, "{report:?}");
}

#[test]
fn elementwise_examples() {
    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(t(&[3], &[-1.0, 0.0, 2.0]));
    let r = tape.relu(x).unwrap();
    assert_eq!(tape.values(r), &[0.0, 0.0, 2.0]);

    let z = tape.leaf(Tensor::zeros(&[3]));
    let s = tape.softmax(z, 0).unwrap();
    for &p in tape.values(s) {
        assert!((p - 1.0 / 3.0).abs() < 1e-15);
    }
    assert!(tape.softmax(z, 2).is_err());

    let x = tape.leaf(t(&[1, 2, 2, 2], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]));
    let p = tape.global_avg_pool_2d(x).unwrap();
    assert_eq!(tape.shape(p), &[1, 2]);
    assert_eq!(tape.values(p), &[2.5, 6.5]);
}

#[test]
fn batch_norm_eval_with_initial_statistics_is_affine() {
    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(t(&[1, 2, 1, 2], &[1.0, -2.0, 3.0, 0.5]));
    let gamma = tape.leaf(t(&[2], &[2.0, 1.0]));
    let beta = tape.leaf(t(&[2], &[0.0, 1.0]));
    let mode = BatchNormMode::Eval {
        running_mean: &[0.0, 0.0],
        running_var: &[1.0, 1.0],
    };
    let (y, stats) = tape.batch_norm_2d(x, gamma, beta, mode).unwrap();
    assert!(stats.is_none());
    let s = 1.0 / (1.0f64 + 1e-5).sqrt();
    let expected = [2.0 * s, -4.0 * s, 3.0 * s + 1.0, 0.5 * s + 1.0];
    for (a, b) in tape.values(y).iter().zip(expected) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn cross_entropy_examples() {
    let mut tape = Tape::<f64>::new();
    let l = tape.leaf(t(&[1, 2], &[10.0, -10.0]));
    let loss = tape.cross_entropy(l, &[0], 99).unwrap();
    assert!(tape.values(loss)[0] < 1e-4);

    let l = tape.leaf(Tensor::zeros(&[1, 2]));
    let loss = tape.cross_entropy(l, &[1], 99).unwrap();
    assert!((tape.values(loss)[0] - std::f64::consts::LN_2).abs() < 1e-12);

    assert!(tape.cross_entropy(l, &[2], 99).is_err());
    assert!(tape.cross_entropy(l, &[99], 99).is_err());
}

#[test]
fn cross_entropy_matches_log_sum_exp() {
    let logits = random_tensor(&[4, 7], -3.0, 3.0, 9);
    let targets = [3usize, 0, 6, 2];
    let mut tape = Tape::<f64>::new();
    let l = tape.leaf(logits.clone());
    let loss = tape.cross_entropy(l, &targets, 100).unwrap();
    let mut expected = 0.0;
    for (i, &c) in targets.iter().enumerate() {
        let row = logits.row(i);
        let lse = row.iter().map(|v| v.exp()).sum::<f64>().ln();
        expected += lse - row[c];
    }
    expected /= 4.0;
    assert!((tape.values(loss)[0] - expected).abs() < 1e-6);

    let mut tape = Tape::<f64>::new();
    let l = tape.leaf(logits);
    let partial = tape.cross_entropy(l, &[3, 100, 100, 2], 100).unwrap();
    let row0 = random_tensor(&[4, 7], -3.0, 3.0, 9);
    let lse = |r: &[f64]| r.iter().map(|v| v.exp()).sum::<f64>().ln();
    let want = (lse(row0.row(0)) - row0.row(0)[3] + lse(row0.row(3)) - row0.row(3)[2]) / 2.0;
    assert!((tape.values(partial)[0] - want).abs() < 1e-12);
}

#[test]
fn backward_examples() {
    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(t(&[3], &[1.0, 2.0, 3.0]).with_requires_grad(true));
    let s = tape.sum(x).unwrap();
    tape.backward(s).unwrap();
    assert_eq!(tape.grad(x).unwrap(), &[1.0, 1.0, 1.0]);

    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(t(&[3], &[1.0, 2.0, 3.0]).with_requires_grad(true));
    let sq = tape.mul(x, x).unwrap();
    let s = tape.sum(sq).unwrap();
    tape.backward(s).unwrap();
    assert_eq!(tape.grad(x).unwrap(), &[2.0, 4.0, 6.0]);

    // A second pass accumulates until reset.
    tape.backward(s).unwrap();
    assert_eq!(tape.grad(x).unwrap(), &[4.0, 8.0, 12.0]);
    tape.reset_grads();
    tape.backward(s).unwrap();
    assert_eq!(tape.grad(x).unwrap(), &[2.0, 4.0, 6.0]);

    assert!(tape.backward(sq).is_err());
}

#[test]
fn constants_receive_no_gradient() {
    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(t(&[2], &[1.0, 2.0]).with_requires_grad(true));
    let c = tape.constant(t(&[2], &[3.0, 4.0]));
    let y = tape.mul(x, c).unwrap();
    let s = tape.sum(y).unwrap();
    tape.backward(s).unwrap();
    assert_eq!(tape.grad(x).unwrap(), &[3.0, 4.0]);
    assert!(tape.grad(c).is_none());
}

#[test]
fn identical_runs_are_bit_identical() {
    let run = || {
        let inputs = [random_tensor(&[2, 3, 6, 6], -1.0, 1.0, 4), random_tensor(&[4, 3, 3, 3], -1.0, 1.0, 5)];
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(inputs[0].clone().with_requires_grad(true));
        let k = tape.leaf(inputs[1].clone().with_requires_grad(true));
        let y = tape.conv2d(x, k, 1, 1).unwrap();
        let p = tape.global_avg_pool_2d(y).unwrap();
        let s = tape.softmax(p, 1).unwrap();
        let l = tape.cross_entropy(s, &[1, 3], 9).unwrap();
        tape.backward(l).unwrap();
        (tape.values(l).to_vec(), tape.grad(k).unwrap().to_vec(), tape.grad(x).unwrap().to_vec())
    };
    assert_eq!(run(), run());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn softmax_rows_sum_to_one(rows in 1usize..5, cols in 1usize..9, seed in any::<u64>(), spread in 0.1f64..30.0) {
        let x = random_tensor(&[rows, cols], -spread, spread, seed);
        let mut tape = Tape::<f64>::new();
        let v = tape.leaf(x);
        let s = tape.softmax(v, 1).unwrap();
        for r in 0..rows {
            let total: f64 = tape.values(s)[r * cols..(r + 1) * cols].iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn cross_entropy_is_non_negative(rows in 1usize..5, cols in 2usize..9, seed in any::<u64>()) {
        let x = random_tensor(&[rows, cols], -20.0, 20.0, seed);
        let targets: Vec<usize> = (0..rows).map(|i| (seed as usize + i) % cols).collect();
        let mut tape = Tape::<f64>::new();
        let v = tape.leaf(x);
        let l = tape.cross_entropy(v, &targets, cols).unwrap();
        prop_assert!(tape.values(l)[0] >= 0.0);
    }

    #[test]
    fn random_ops_pass_gradient_checks(seed in 0u64..1000) {
        for (name, inputs, f) in common::op_cases() {
            let shifted: Vec<Tensor64> = inputs
                .iter()
                .enumerate()
                .map(|(i, x)| {
                    if name == "relu" || name.starts_with("batch_norm") || name == "layer_norm" {
                        x.clone()
                    } else {
                        random_tensor(x.shape(), -1.0, 1.0, seed * 31 + i as u64)
                    }
                })
                .collect();
            let report = check_gradients(&shifted, FD_EPS, f).unwrap();
            prop_assert!(report.max_rel_error < 1e-6, "{}: {:?}", name, report);
        }
    }
}
