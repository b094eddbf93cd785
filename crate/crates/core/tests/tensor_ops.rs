mod common;

use common::*;
use dadlnet::tensor::{sigmoid, BatchNormMode, Tape, Tensor, Var};
use proptest::prelude::*;

fn t(shape: &[usize], data: &[f64]) -> Tensor {
    Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
}

#[test]
fn conv3d_sum_of_ones() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::full([1, 1, 2, 2, 2], 1.0), false);
    let w = tape.leaf(Tensor::full([1, 1, 2, 2, 2], 1.0), false);
    let b = tape.leaf(Tensor::zeros([1]), false);
    let y = tape.conv3d(x, w, b, (1, 1, 1)).unwrap();
    assert_eq!(tape.value(y).shape(), &[1, 1, 1, 1, 1]);
    assert_eq!(tape.value(y).data(), &[8.0]);
}

#[test]
fn conv3d_delta_kernel_is_identity() {
    let mut r = rng(1);
    let input = rand_tensor(&[2, 1, 4, 3, 5], &mut r);
    let mut tape = Tape::new();
    let x = tape.leaf(input.clone(), false);
    let w = tape.leaf(Tensor::full([1, 1, 1, 1, 1], 1.0), false);
    let b = tape.leaf(Tensor::zeros([1]), false);
    let y = tape.conv3d(x, w, b, (1, 1, 1)).unwrap();
    assert_eq!(tape.value(y), &input);
}

#[test]
fn conv3d_matches_loop_oracle_forward_and_backward() {
    let mut r = rng(2);
    let x0 = rand_tensor(&[1, 2, 5, 4, 4], &mut r);
    let w0 = rand_tensor(&[3, 2, 2, 2, 2], &mut r);
    let b0 = rand_tensor(&[3], &mut r);
    let stride = (1, 2, 2);

    let mut tape = Tape::new();
    let x = tape.leaf(x0.clone(), true);
    let w = tape.leaf(w0.clone(), true);
    let b = tape.leaf(b0.clone(), true);
    let y = tape.conv3d(x, w, b, stride).unwrap();
    let expected = conv3d_oracle(&x0, &w0, &b0, stride);
    assert_eq!(tape.value(y).shape(), expected.shape());
    for (a, e) in tape.value(y).data().iter().zip(expected.data()) {
        assert!(rel_err(*a, *e) < 1e-10);
    }

    // gradients of sum(y * r) by direct loops
    let rw = rand_tensor(expected.shape(), &mut rng(3));
    let rv = tape.leaf(rw.clone(), false);
    let m = tape.mul(y, rv).unwrap();
    let loss = tape.sum(m);
    tape.backward(loss).unwrap();

    let (n, c, tt, h, wd) = (1, 2, 5, 4, 4);
    let (f, kt, kh, kw) = (3, 2, 2, 2);
    let os = expected.shape();
    let (ot, oh, ow) = (os[2], os[3], os[4]);
    let mut gx = vec![0.0; x0.numel()];
    let mut gw = vec![0.0; w0.numel()];
    let mut gb = vec![0.0; 3];
    for ni in 0..n {
        for fi in 0..f {
            for ti in 0..ot {
                for hi in 0..oh {
                    for wi in 0..ow {
                        let g = rw.data()[(((ni * f + fi) * ot + ti) * oh + hi) * ow + wi];
                        gb[fi] += g;
                        for ci in 0..c {
                            for dt in 0..kt {
                                for dh in 0..kh {
                                    for dw in 0..kw {
                                        let xi = (((ni * c + ci) * tt + ti + dt) * h + hi * 2 + dh) * wd + wi * 2 + dw;
                                        let wj = (((fi * c + ci) * kt + dt) * kh + dh) * kw + dw;
                                        gx[xi] += g * w0.data()[wj];
                                        gw[wj] += g * x0.data()[xi];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    for (got, want) in [(x, &gx), (w, &gw), (b, &gb)] {
        for (a, e) in tape.grad(got).unwrap().data().iter().zip(want.iter()) {
            assert!(rel_err(*a, *e) < 1e-10, "{a} vs {e}");
        }
    }
}

#[test]
fn conv3d_rejects_oversized_kernel() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::zeros([1, 1, 3, 3, 1]), false);
    let w = tape.leaf(Tensor::zeros([1, 1, 1, 2, 2]), false);
    let b = tape.leaf(Tensor::zeros([1]), false);
    let err = tape.conv3d(x, w, b, (1, 1, 1)).unwrap_err();
    assert!(err.to_string().contains("axis W"), "{err}");
}

#[test]
fn batch_norm_constant_input_is_zero() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::full([4, 2, 3], 7.5), false);
    let g = tape.leaf(Tensor::full([2], 1.0), false);
    let b = tape.leaf(Tensor::zeros([2]), false);
    let (y, stats) = tape.batch_norm(x, g, b, BatchNormMode::Train, 1e-5).unwrap();
    assert!(tape.value(y).data().iter().all(|v| v.abs() < 1e-9));
    assert_eq!(stats.unwrap().mean, vec![7.5, 7.5]);
}

#[test]
fn batch_norm_affine_contract() {
    let mut r = rng(4);
    let input = rand_tensor(&[5, 3, 4], &mut r);
    let mut tape = Tape::new();
    let x = tape.leaf(input, false);
    let one = tape.leaf(Tensor::full([3], 1.0), false);
    let zero = tape.leaf(Tensor::zeros([3]), false);
    let two = tape.leaf(Tensor::full([3], 2.0), false);
    let three = tape.leaf(Tensor::full([3], 3.0), false);
    let (xhat, _) = tape.batch_norm(x, one, zero, BatchNormMode::Train, 1e-5).unwrap();
    let (y, _) = tape.batch_norm(x, two, three, BatchNormMode::Train, 1e-5).unwrap();
    for (a, b) in tape.value(xhat).data().iter().zip(tape.value(y).data()) {
        assert!((2.0 * a + 3.0 - b).abs() < 1e-12);
    }
    // per-feature standardization
    let d = tape.value(xhat).data();
    for f in 0..3 {
        let vals: Vec<f64> = (0..5)
            .flat_map(|n| (0..4).map(move |i| (n, i)))
            .map(|(n, i)| d[(n * 3 + f) * 4 + i])
            .collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-3);
    }
}

#[test]
fn batch_norm_requires_two_samples_in_training() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::zeros([1, 2, 3]), false);
    let g = tape.leaf(Tensor::full([2], 1.0), false);
    let b = tape.leaf(Tensor::zeros([2]), false);
    assert!(tape.batch_norm(x, g, b, BatchNormMode::Train, 1e-5).is_err());
    let (y, stats) = tape
        .batch_norm(
            x,
            g,
            b,
            BatchNormMode::Eval {
                mean: &[0.0, 0.0],
                var: &[1.0, 1.0],
            },
            1e-5,
        )
        .unwrap();
    assert!(stats.is_none());
    assert_eq!(tape.value(y).shape(), &[1, 2, 3]);
}

#[test]
fn batch_stats_blend_uses_momentum() {
    let stats = dadlnet::tensor::BatchStats {
        mean: vec![1.0],
        var: vec![4.0],
    };
    let (mut m, mut v) = (vec![0.0], vec![1.0]);
    stats.blend_into(&mut m, &mut v, 0.9);
    assert!((m[0] - 0.1).abs() < 1e-15);
    assert!((v[0] - 1.3).abs() < 1e-15);
}

#[test]
fn activation_closed_forms() {
    let mut tape = Tape::new();
    let x = tape.leaf(t(&[3], &[-1.0, 0.0, 2.0]), false);
    let e = tape.elu(x);
    let s = tape.sigmoid(x);
    let r = tape.relu(x);
    assert!((tape.value(e).data()[0] - (-0.632_120_558_828_557_7)).abs() < 1e-12);
    assert_eq!(tape.value(e).data()[2], 2.0);
    assert_eq!(tape.value(s).data()[1], 0.5);
    assert_eq!(tape.value(r).data(), &[0.0, 0.0, 2.0]);
    for v in [-700.0, -40.0, 40.0, 700.0] {
        let p = sigmoid(v);
        assert!(p.is_finite() && (0.0..=1.0).contains(&p));
    }
    assert!(sigmoid(-700.0) > 0.0);
}

#[test]
fn avg_pool_examples() {
    let mut tape = Tape::new();
    let x = tape.leaf(t(&[1, 1, 4, 1, 1], &[1.0, 2.0, 3.0, 4.0]), false);
    let y = tape.avg_pool3d(x, (2, 1, 1)).unwrap();
    assert_eq!(tape.value(y).data(), &[1.5, 3.5]);

    // remainder truncation: loop oracle over the first 4 of 5 samples
    let vals = [0.3, -1.2, 4.0, 2.5, 9.0];
    let x = tape.leaf(t(&[1, 1, 5, 1, 1], &vals), false);
    let y = tape.avg_pool3d(x, (2, 1, 1)).unwrap();
    let oracle: Vec<f64> = vals[..4].chunks(2).map(|c| (c[0] + c[1]) / 2.0).collect();
    assert_eq!(tape.value(y).data(), oracle.as_slice());

    assert!(tape.avg_pool3d(x, (0, 1, 1)).is_err());

    let c = tape.leaf(Tensor::full([2, 3, 4, 2, 2], 1.25), false);
    let g = tape.global_avg_pool(c).unwrap();
    assert_eq!(tape.value(g).shape(), &[2, 3]);
    assert!(tape.value(g).data().iter().all(|&v| (v - 1.25).abs() < 1e-15));
}

#[test]
fn dropout_contract() {
    let mut r = rng(5);
    let mut tape = Tape::new();
    let x = tape.leaf(rand_tensor(&[10, 10], &mut r), false);
    assert_eq!(tape.dropout(x, 0.0, true, &mut r).unwrap(), x);
    assert_eq!(tape.dropout(x, 0.9, false, &mut r).unwrap(), x);
    assert!(tape.dropout(x, 1.0, true, &mut r).is_err());
    assert!(tape.dropout(x, -0.1, true, &mut r).is_err());
}

#[test]
fn dropout_monte_carlo() {
    let n = 1_000_000;
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::full([n], 1.0), false);
    let y = tape.dropout(x, 0.5, true, &mut rng(6)).unwrap();
    let d = tape.value(y).data();
    let zeros = d.iter().filter(|&&v| v == 0.0).count() as f64 / n as f64;
    let mean = d.iter().sum::<f64>() / n as f64;
    assert!((zeros - 0.5).abs() <= 0.003, "zero fraction {zeros}");
    assert!((mean - 1.0).abs() <= 0.01, "mean {mean}");
}

#[test]
fn fully_connected_examples() {
    let mut tape = Tape::new();
    let x = tape.leaf(t(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]), false);
    let mut eye = Tensor::zeros([3, 3]);
    for i in 0..3 {
        eye.data_mut()[i * 4] = 1.0;
    }
    let w = tape.leaf(eye, false);
    let b = tape.leaf(Tensor::zeros([3]), false);
    let y = tape.linear(x, w, b).unwrap();
    assert_eq!(tape.value(y), tape.value(x));

    let x = tape.leaf(t(&[1, 2], &[1.0, 2.0]), false);
    let w = tape.leaf(t(&[2, 1], &[3.0, 4.0]), false);
    let b = tape.leaf(t(&[1], &[5.0]), false);
    let y = tape.linear(x, w, b).unwrap();
    assert_eq!(tape.value(y).data(), &[16.0]);

    let bad = tape.leaf(Tensor::zeros([3, 1]), false);
    assert!(tape.linear(x, bad, b).is_err());
}

#[test]
fn add_mul_identities_and_broadcast() {
    let mut r = rng(7);
    let mut tape = Tape::new();
    let x = tape.leaf(rand_tensor(&[2, 3, 4, 2, 2], &mut r), false);
    let zero = tape.leaf(Tensor::zeros([2, 3, 4, 2, 2]), false);
    let one = tape.leaf(Tensor::full([2, 3, 4, 2, 2], 1.0), false);
    let a = tape.add(x, zero).unwrap();
    let m = tape.mul(x, one).unwrap();
    assert_eq!(tape.value(a), tape.value(x));
    assert_eq!(tape.value(m), tape.value(x));

    let wts = tape.leaf(rand_tensor(&[2, 3, 1, 1, 1], &mut r), false);
    let y = tape.mul(x, wts).unwrap();
    assert_eq!(tape.value(y).shape(), &[2, 3, 4, 2, 2]);
    let bad = tape.leaf(Tensor::zeros([2, 2, 1, 1, 1]), false);
    assert!(tape.mul(x, bad).is_err());
    assert!(tape.add(x, bad).is_err());
}

#[test]
fn broadcast_gradients_match_loop_oracle() {
    let mut r = rng(8);
    let x0 = rand_tensor(&[2, 3, 4, 2, 2], &mut r);
    let w0 = rand_tensor(&[2, 3, 1, 1, 1], &mut r);
    let s0 = rand_tensor(&[2, 1, 1, 2, 2], &mut r);
    let probe_w = rand_tensor(&[2, 3, 4, 2, 2], &mut rng(9));

    let mut tape = Tape::new();
    let x = tape.leaf(x0.clone(), true);
    let w = tape.leaf(w0.clone(), true);
    let s = tape.leaf(s0.clone(), true);
    let m = tape.mul(x, w).unwrap();
    let a = tape.add(m, s).unwrap();
    let pv = tape.leaf(probe_w.clone(), false);
    let p = tape.mul(a, pv).unwrap();
    let loss = tape.sum(p);
    tape.backward(loss).unwrap();

    let mut gx = vec![0.0; x0.numel()];
    let mut gw = vec![0.0; w0.numel()];
    let mut gs = vec![0.0; s0.numel()];
    for n in 0..2 {
        for f in 0..3 {
            for ti in 0..4 {
                for h in 0..2 {
                    for wi in 0..2 {
                        let i = (((n * 3 + f) * 4 + ti) * 2 + h) * 2 + wi;
                        let g = probe_w.data()[i];
                        gx[i] += g * w0.data()[n * 3 + f];
                        gw[n * 3 + f] += g * x0.data()[i];
                        gs[(n * 2 + h) * 2 + wi] += g;
                    }
                }
            }
        }
    }
    for (v, want) in [(x, &gx), (w, &gw), (s, &gs)] {
        for (a, e) in tape.grad(v).unwrap().data().iter().zip(want.iter()) {
            assert!((a - e).abs() <= 1e-12, "{a} vs {e}");
        }
    }
}

#[test]
fn backward_simple_sums() {
    let mut r = rng(10);
    let x0 = rand_tensor(&[3, 4], &mut r);
    let mut tape = Tape::new();
    let x = tape.leaf(x0.clone(), true);
    let s = tape.sum(x);
    tape.backward(s).unwrap();
    assert!(tape.grad(x).unwrap().data().iter().all(|&g| g == 1.0));

    let mut tape = Tape::new();
    let x = tape.leaf(x0.clone(), true);
    let xx = tape.mul(x, x).unwrap();
    let s = tape.sum(xx);
    tape.backward(s).unwrap();
    for (g, v) in tape.grad(x).unwrap().data().iter().zip(x0.data()) {
        assert!((g - 2.0 * v).abs() < 1e-15);
    }
}

#[test]
fn backward_rejects_non_scalar() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::zeros([2]), true);
    assert!(tape.backward(x).is_err());
}

#[test]
fn frozen_leaves_get_no_gradient() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::full([2], 3.0), false);
    let y = tape.leaf(Tensor::full([2], 2.0), true);
    let m = tape.mul(x, y).unwrap();
    let s = tape.sum(m);
    tape.backward(s).unwrap();
    assert!(tape.grad(x).is_none());
    assert_eq!(tape.grad(y).unwrap().data(), &[3.0, 3.0]);
}

// Finite-difference checks, one per differentiable operator.

const H: f64 = 1e-5;

fn check(inputs: &[Tensor], f: impl Fn(&mut Tape, &[Var]) -> Var) {
    let diff = vec![true; inputs.len()];
    fd_check(inputs, &diff, 40, H, 1e-4, f).assert_within(1e-4, 1e-3);
}

#[test]
fn fd_conv3d() {
    let mut r = rng(11);
    let inputs = [
        rand_tensor(&[2, 2, 6, 4, 5], &mut r),
        rand_tensor(&[3, 2, 3, 2, 2], &mut r),
        rand_tensor(&[3], &mut r),
    ];
    check(&inputs, |t, v| {
        let y = t.conv3d(v[0], v[1], v[2], (1, 2, 1)).unwrap();
        probe(t, y, 1)
    });
}

#[test]
fn fd_batch_norm_train_and_eval() {
    let mut r = rng(12);
    let inputs = [
        rand_tensor(&[4, 3, 5], &mut r),
        rand_tensor(&[3], &mut r),
        rand_tensor(&[3], &mut r),
    ];
    check(&inputs, |t, v| {
        let (y, _) = t.batch_norm(v[0], v[1], v[2], BatchNormMode::Train, 1e-5).unwrap();
        probe(t, y, 2)
    });
    check(&inputs, |t, v| {
        let mode = BatchNormMode::Eval {
            mean: &[0.1, -0.2, 0.3],
            var: &[0.5, 1.5, 2.0],
        };
        let (y, _) = t.batch_norm(v[0], v[1], v[2], mode, 1e-5).unwrap();
        probe(t, y, 3)
    });
}

#[test]
fn fd_activations() {
    let mut r = rng(13);
    // keep away from the relu kink
    let mut x = rand_tensor(&[50], &mut r);
    for v in x.data_mut() {
        if v.abs() < 0.05 {
            *v += 0.1;
        }
    }
    let inputs = [x];
    let f_elu = |t: &mut Tape, v: &[Var]| {
        let y = t.elu(v[0]);
        probe(t, y, 4)
    };
    let f_sig = |t: &mut Tape, v: &[Var]| {
        let y = t.sigmoid(v[0]);
        probe(t, y, 5)
    };
    let f_relu = |t: &mut Tape, v: &[Var]| {
        let y = t.relu(v[0]);
        probe(t, y, 6)
    };
    for report in [
        fd_check(&inputs, &[true], 50, H, 1e-6, f_elu),
        fd_check(&inputs, &[true], 50, H, 1e-6, f_sig),
        fd_check(&inputs, &[true], 50, H, 1e-6, f_relu),
    ] {
        report.assert_within(1e-6, 1e-5);
    }
}

#[test]
fn fd_pools_and_reductions() {
    let mut r = rng(14);
    let inputs = [rand_tensor(&[2, 3, 7, 3, 4], &mut r)];
    check(&inputs, |t, v| {
        let y = t.avg_pool3d(v[0], (3, 1, 2)).unwrap();
        probe(t, y, 7)
    });
    check(&inputs, |t, v| {
        let y = t.global_avg_pool(v[0]).unwrap();
        probe(t, y, 8)
    });
    check(&inputs, |t, v| {
        let y = t.mean_axes(v[0], &[1, 2]).unwrap();
        let y = t.reshape(y, &[2, 12]).unwrap();
        probe(t, y, 9)
    });
}

#[test]
fn fd_dropout_fixed_mask() {
    let mut r = rng(15);
    let inputs = [rand_tensor(&[6, 5], &mut r)];
    check(&inputs, |t, v| {
        let y = t.dropout(v[0], 0.5, true, &mut rng(99)).unwrap();
        probe(t, y, 10)
    });
}

#[test]
fn fd_fully_connected() {
    let mut r = rng(16);
    let inputs = [
        rand_tensor(&[4, 5], &mut r),
        rand_tensor(&[5, 3], &mut r),
        rand_tensor(&[3], &mut r),
    ];
    let report = fd_check(&inputs, &[true, true, true], 40, H, 1e-6, |t, v| {
        let y = t.linear(v[0], v[1], v[2]).unwrap();
        probe(t, y, 11)
    });
    report.assert_within(1e-6, 1e-5);
}

#[test]
fn fd_broadcast_add_mul_scale() {
    let mut r = rng(17);
    let inputs = [
        rand_tensor(&[2, 3, 4, 2, 2], &mut r),
        rand_tensor(&[2, 3, 1, 1, 1], &mut r),
        rand_tensor(&[2, 1, 1, 2, 2], &mut r),
    ];
    check(&inputs, |t, v| {
        let m = t.mul(v[0], v[1]).unwrap();
        let a = t.add(m, v[2]).unwrap();
        let s = t.scale(a, -0.7);
        probe(t, s, 12)
    });
}

#[test]
fn fd_bce_and_mmd() {
    let mut r = rng(18);
    let logits = rand_tensor(&[8], &mut r);
    let y: Vec<f64> = (0..8).map(|i| (i % 2) as f64).collect();
    check(&[logits], |t, v| {
        let p = t.sigmoid(v[0]);
        t.bce(p, &y).unwrap()
    });
    let inputs = [rand_tensor(&[5, 3], &mut r), rand_tensor(&[4, 3], &mut r)];
    check(&inputs, |t, v| t.mmd2(v[0], v[1], &[0.25, 0.5, 1.0, 2.0, 4.0]).unwrap());
}

#[test]
fn multi_use_tensors_accumulate() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::from_vec(vec![1.0, 2.0]), true);
    let a = tape.scale(x, 3.0);
    let b = tape.mul(x, x).unwrap();
    let c = tape.add(a, b).unwrap();
    let s = tape.sum(c);
    tape.backward(s).unwrap();
    assert_eq!(tape.grad(x).unwrap().data(), &[5.0, 7.0]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn forward_ops_are_deterministic_and_finite(seed in 0u64..1000) {
        let run = || {
            let mut r = rng(seed);
            let mut tape = Tape::new();
            let x = tape.leaf(rand_tensor(&[2, 2, 6, 3, 3], &mut r), false);
            let w = tape.leaf(rand_tensor(&[2, 2, 2, 2, 2], &mut r), false);
            let b = tape.leaf(rand_tensor(&[2], &mut r), false);
            let g = tape.leaf(Tensor::full([2], 1.0), false);
            let be = tape.leaf(Tensor::zeros([2]), false);
            let y = tape.conv3d(x, w, b, (1, 1, 1)).unwrap();
            let (y, _) = tape.batch_norm(y, g, be, BatchNormMode::Train, 1e-5).unwrap();
            let y = tape.elu(y);
            let y = tape.avg_pool3d(y, (2, 1, 1)).unwrap();
            let y = tape.dropout(y, 0.5, true, &mut r).unwrap();
            tape.value(y).clone()
        };
        let a = run();
        let b = run();
        prop_assert!(a.is_finite());
        prop_assert_eq!(a, b);
    }

    #[test]
    fn broadcast_add_shape_contract(n in 1usize..3, f in 1usize..4, tt in 1usize..4) {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::full([n, f, tt, 2, 2], 1.0), false);
        let wts = tape.leaf(Tensor::full([n, f, 1, 1, 1], 2.0), false);
        let y = tape.add(x, wts).unwrap();
        prop_assert_eq!(tape.value(y).shape(), &[n, f, tt, 2, 2]);
        prop_assert!(tape.value(y).data().iter().all(|&v| v == 3.0));
    }
}
