//! Autodiff gradients against central finite differences.

mod common;

use cntlab::Tensor;
use common::{central_difference, max_rel_err, uniform, FD_STEP};

/// Builds leaves for `inputs`, runs `f`, and compares every input gradient
/// with finite differences of the same function evaluated on constants.
fn check(inputs: &[(&[usize], Vec<f64>)], tol: f64, f: impl Fn(&[Tensor]) -> Tensor) {
    let leaves: Vec<Tensor> = inputs.iter().map(|(s, d)| Tensor::leaf(s, d.clone()).unwrap()).collect();
    f(&leaves).backward().unwrap();
    for (k, (shape, data)) in inputs.iter().enumerate() {
        let eval = |probe: &[f64]| {
            let consts: Vec<Tensor> = inputs
                .iter()
                .enumerate()
                .map(|(j, (s, d))| Tensor::new(s, if j == k { probe.to_vec() } else { d.clone() }).unwrap())
                .collect();
            f(&consts).item()
        };
        let numeric = central_difference(eval, data, FD_STEP);
        let analytic = leaves[k].grad().unwrap();
        let err = max_rel_err(&analytic, &numeric);
        assert!(err < tol, "input {k} {shape:?}: rel err {err:e}");
    }
}

/// Contracts an arbitrary output with fixed random weights so that no
/// gradient vanishes by symmetry.
fn contract(out: &Tensor, seed: u64) -> Tensor {
    let w = Tensor::new(out.shape(), uniform(out.numel(), -1.0, 1.0, seed)).unwrap();
    out.mul(&w).unwrap().sum()
}

#[test]
fn matmul_5x4_by_4x3() {
    let a = uniform(20, -2.0, 2.0, 1);
    let b = uniform(12, -2.0, 2.0, 2);
    check(&[(&[5, 4], a), (&[4, 3], b)], 1e-6, |t| contract(&t[0].matmul(&t[1]).unwrap(), 3));
}

#[test]
fn conv2d_random_case() {
    let x = uniform(2 * 2 * 6 * 6, -2.0, 2.0, 4);
    let w = uniform(3 * 2 * 4 * 4, -2.0, 2.0, 5);
    check(&[(&[2, 2, 6, 6], x.clone()), (&[3, 2, 4, 4], w.clone())], 1e-6, |t| {
        contract(&t[0].conv2d(&t[1], 2, 1).unwrap(), 6)
    });
    let w3 = uniform(2 * 2 * 3 * 3, -2.0, 2.0, 7);
    check(&[(&[2, 2, 6, 6], x), (&[2, 2, 3, 3], w3)], 1e-6, |t| {
        contract(&t[0].conv2d(&t[1], 1, 1).unwrap(), 8)
    });
}

#[test]
fn mish_at_reference_points() {
    check(&[(&[3], vec![-2.0, 0.5, 3.0])], 1e-6, |t| t[0].mish().sum());
}

#[test]
fn elementwise_activations() {
    // keep relu away from its kink
    let mut x = uniform(30, -2.0, 2.0, 9);
    x.iter_mut().filter(|v| v.abs() < 1e-3).for_each(|v| *v = 0.5);
    check(&[(&[30], x.clone())], 1e-4, |t| contract(&t[0].relu(), 10));
    check(&[(&[30], x.clone())], 1e-4, |t| contract(&t[0].mish(), 11));
    check(&[(&[30], x.clone())], 1e-4, |t| contract(&t[0].sigmoid(), 12));
    check(&[(&[30], x)], 1e-4, |t| contract(&t[0].tanh(), 13));
}

#[test]
fn arithmetic_and_shape_ops() {
    let a = uniform(12, -2.0, 2.0, 14);
    let b = uniform(12, -2.0, 2.0, 15);
    check(&[(&[3, 4], a.clone()), (&[3, 4], b.clone())], 1e-4, |t| {
        let s = t[0].add(&t[1]).unwrap();
        let d = t[0].sub(&t[1]).unwrap();
        contract(&s.mul(&d).unwrap().scale(0.7), 16)
    });
    check(&[(&[3, 4], a.clone()), (&[3, 4], b.clone())], 1e-4, |t| {
        contract(&t[0].concat_cols(&t[1]).unwrap().reshape(&[6, 4]).unwrap(), 17)
    });
    check(&[(&[3, 4], a.clone())], 1e-4, |t| t[0].mul(&t[0]).unwrap().mean());
    let mask = uniform(12, 0.0, 2.0, 18);
    check(&[(&[3, 4], a)], 1e-4, |t| contract(&t[0].mul_const(&mask).unwrap(), 19));
}

#[test]
fn channel_ops() {
    let x = uniform(2 * 3 * 4, -2.0, 2.0, 20);
    let c = uniform(3, -2.0, 2.0, 21);
    let d = uniform(3, -2.0, 2.0, 22);
    check(&[(&[2, 3, 2, 2], x.clone()), (&[3], c.clone())], 1e-4, |t| {
        contract(&t[0].add_channel_bias(&t[1]).unwrap(), 23)
    });
    check(&[(&[2, 3, 2, 2], x.clone()), (&[3], c), (&[3], d)], 1e-4, |t| {
        contract(&t[0].channel_affine(&t[1], &t[2]).unwrap(), 24)
    });
    let sa = uniform(6, -2.0, 2.0, 25);
    let sb = uniform(6, -2.0, 2.0, 26);
    check(&[(&[2, 3, 2, 2], x.clone()), (&[2, 3], sa), (&[2, 3], sb)], 1e-4, |t| {
        contract(&t[0].sample_affine(&t[1], &t[2]).unwrap(), 27)
    });
    check(&[(&[2, 3, 2, 2], x)], 1e-4, |t| contract(&t[0].global_avg_pool().unwrap(), 28));
}

#[test]
fn normalization_ops() {
    let x = uniform(3 * 4 * 5, -2.0, 2.0, 29);
    check(&[(&[3, 4, 5], x.clone())], 1e-4, |t| contract(&t[0].group_norm(2, 1e-5).unwrap(), 30));
    check(&[(&[3, 4, 5], x.clone())], 1e-4, |t| contract(&t[0].group_norm(1, 1e-5).unwrap(), 31));
    check(&[(&[3, 4, 5], x.clone())], 1e-4, |t| contract(&t[0].batch_norm(1e-5).unwrap().0, 32));
    let mean = uniform(4, -1.0, 1.0, 33);
    let var = uniform(4, 0.5, 2.0, 34);
    check(&[(&[3, 4, 5], x)], 1e-4, |t| contract(&t[0].normalize_with(&mean, &var, 1e-5).unwrap(), 35));
}

#[test]
fn losses() {
    let z = uniform(12, -2.0, 2.0, 36);
    let mut y = uniform(12, 0.0, 1.0, 37);
    for row in y.chunks_mut(4) {
        let s: f64 = row.iter().sum();
        row.iter_mut().for_each(|v| *v /= s);
    }
    let target = Tensor::new(&[3, 4], y.clone()).unwrap();
    check(&[(&[3, 4], z.clone())], 1e-4, |t| t[0].softmax_cross_entropy(&target).unwrap());
    let target = Tensor::new(&[3, 4], y).unwrap();
    check(&[(&[3, 4], z)], 1e-4, |t| t[0].bce_with_logits(&target).unwrap());
}

#[test]
fn cross_entropy_shift_invariance() {
    let z = uniform(20, -2.0, 2.0, 38);
    let mut y = vec![0.0; 20];
    for i in 0..4 {
        y[i * 5 + i] = 1.0;
    }
    let target = Tensor::new(&[4, 5], y).unwrap();
    let base = Tensor::new(&[4, 5], z.clone()).unwrap().softmax_cross_entropy(&target).unwrap().item();
    let shifts = [3.0, -7.5, 100.0, 0.25];
    let shifted: Vec<f64> = z.iter().enumerate().map(|(i, v)| v + shifts[i / 5]).collect();
    let moved = Tensor::new(&[4, 5], shifted).unwrap().softmax_cross_entropy(&target).unwrap().item();
    assert!((base - moved).abs() < 1e-9);
}

#[test]
fn forward_is_deterministic() {
    let x = uniform(2 * 2 * 6 * 6, -2.0, 2.0, 39);
    let w = uniform(3 * 2 * 4 * 4, -2.0, 2.0, 40);
    let run = || {
        Tensor::new(&[2, 2, 6, 6], x.clone())
            .unwrap()
            .conv2d(&Tensor::new(&[3, 2, 4, 4], w.clone()).unwrap(), 2, 1)
            .unwrap()
            .group_norm(3, 1e-5)
            .unwrap()
            .mish()
            .to_vec()
    };
    assert_eq!(run(), run());
}
