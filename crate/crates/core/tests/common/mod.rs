#![allow(dead_code)]

use capsad::capsnet::{CapsNetModel, PARAM_NAMES};
use capsad::gradcheck::check_op;
use capsad::tensor::Tensor;
use capsad::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Values bounded away from zero, so kinks at zero are never straddled.
pub fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = rng.random_range(0.1..1.5);
            if rng.random_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Worst finite-difference relative error of every tape op, by name.
pub fn op_gradient_errors(seed: u64) -> Vec<(&'static str, Result<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();

    let a = uniform(&mut rng, &[3, 4], -1.0, 1.0);
    let b = uniform(&mut rng, &[4, 2], -1.0, 1.0);
    out.push(("matmul", check_op(&[a, b], 1, |t, v| t.matmul(v[0], v[1]))));

    let x = uniform(&mut rng, &[2, 7, 6], -1.0, 1.0);
    let k = uniform(&mut rng, &[3, 2, 3, 2], -1.0, 1.0);
    out.push(("conv2d", check_op(&[x, k], 2, |t, v| t.conv2d(v[0], v[1], 2))));

    let x = uniform(&mut rng, &[3, 5], -1.0, 1.0);
    let bias = uniform(&mut rng, &[3], -1.0, 1.0);
    out.push((
        "add_row_bias",
        check_op(&[x, bias], 3, |t, v| t.add_row_bias(v[0], v[1])),
    ));

    let x = away_from_zero(&mut rng, &[10]);
    out.push(("relu", check_op(&[x], 4, |t, v| Ok(t.relu(v[0])))));

    let x = uniform(&mut rng, &[10], -4.0, 4.0);
    out.push(("sigmoid", check_op(&[x], 5, |t, v| Ok(t.sigmoid(v[0])))));

    let x = uniform(&mut rng, &[6], -2.0, 2.0);
    out.push(("softmax", check_op(&[x], 6, |t, v| t.softmax(v[0]))));

    let x = uniform(&mut rng, &[4, 3], -2.0, 2.0);
    out.push(("softmax_rows", check_op(&[x], 7, |t, v| t.softmax_rows(v[0]))));

    let x = uniform(&mut rng, &[5, 4], -1.5, 1.5);
    out.push(("squash_rows", check_op(&[x], 8, |t, v| t.squash_rows(v[0]))));

    let x = uniform(&mut rng, &[5, 4], -1.0, 1.0);
    out.push(("row_norms", check_op(&[x], 9, |t, v| t.row_norms(v[0]))));

    let x = uniform(&mut rng, &[7], -1.0, 1.0);
    out.push(("l2_norm", check_op(&[x], 10, |t, v| Ok(t.l2_norm(v[0])))));

    let x = uniform(&mut rng, &[7], -1.0, 1.0);
    out.push(("sum", check_op(&[x], 11, |t, v| Ok(t.sum(v[0])))));

    let a = uniform(&mut rng, &[2, 3], -1.0, 1.0);
    let b = uniform(&mut rng, &[2, 3], -1.0, 1.0);
    out.push(("add", check_op(&[a.clone(), b.clone()], 12, |t, v| t.add(v[0], v[1]))));
    out.push(("mul", check_op(&[a.clone(), b], 13, |t, v| t.mul(v[0], v[1]))));
    out.push((
        "scale",
        check_op(std::slice::from_ref(&a), 14, |t, v| Ok(t.scale(v[0], -1.7))),
    ));
    out.push((
        "gather",
        check_op(std::slice::from_ref(&a), 15, |t, v| {
            t.gather(v[0], vec![5, 0, 0, 3, 2], vec![5])
        }),
    ));
    out.push(("reshape", check_op(&[a], 16, |t, v| t.reshape(v[0], vec![3, 2]))));

    let poses = uniform(&mut rng, &[3, 4], -1.0, 1.0);
    let weights = uniform(&mut rng, &[3, 2, 5, 4], -1.0, 1.0);
    out.push((
        "pose_transform",
        check_op(&[poses, weights], 17, |t, v| t.pose_transform(v[0], v[1])),
    ));

    let c = uniform(&mut rng, &[4, 3], 0.0, 1.0);
    let p = uniform(&mut rng, &[4, 3, 5], -1.0, 1.0);
    out.push((
        "weighted_sum",
        check_op(&[c, p.clone()], 18, |t, v| t.weighted_sum(v[0], v[1])),
    ));
    let h = uniform(&mut rng, &[3, 5], -1.0, 1.0);
    out.push(("agreement", check_op(&[h, p], 19, |t, v| t.agreement(v[0], v[1]))));

    // norms chosen clear of the 0.1 / 0.9 hinge points
    let norms = Tensor::from_vec(vec![0.3, 0.05, 0.6, 0.95, 0.5]);
    out.push((
        "margin_loss",
        check_op(&[norms], 20, |t, v| t.margin_loss(v[0], 2, 0.9, 0.1, 0.5)),
    ));

    let x = uniform(&mut rng, &[6], 0.0, 1.0);
    let target: Vec<f64> = (0..6).map(|i| i as f64 / 6.0).collect();
    out.push((
        "squared_error",
        check_op(&[x], 21, move |t, v| t.squared_error(v[0], &target)),
    ));

    let x = uniform(&mut rng, &[3, 4], -1.0, 1.0);
    out.push(("mask_rows", check_op(&[x], 22, |t, v| t.mask_rows(v[0], 1))));

    out
}

/// Moves every bias off its zero initialisation so no ReLU input sits on the
/// kink, where finite differences and the analytic gradient disagree.
pub fn offset_biases(model: &mut CapsNetModel, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (p, name) in model.params_mut().iter_mut().zip(PARAM_NAMES) {
        if name.ends_with(".bias") {
            *p = away_from_zero(&mut rng, p.shape()).reshape(p.shape().to_vec()).unwrap();
            p.data_mut().iter_mut().for_each(|b| *b *= 0.2);
        }
    }
}
