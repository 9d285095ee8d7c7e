mod common;

use capsad::capsnet::{CapsNetConfig, CapsNetModel};
use capsad::gradcheck::check_model;
use capsad::tensor::{Tape, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn every_op_matches_finite_differences() {
    for seed in [1, 2, 3] {
        for (name, err) in common::op_gradient_errors(seed) {
            let err = err.unwrap_or_else(|e| panic!("{name}: {e}"));
            assert!(err < 1e-4, "{name} (seed {seed}): relative error {err:e}");
        }
    }
}

#[test]
fn sum_and_squared_norm_gradients() {
    let t = Tensor::from_vec(vec![3.0, 4.0]);
    let mut tape = Tape::new();
    let x = tape.param(&t, capsad::tensor::ParamId(0));
    let s = tape.sum(x);
    assert_eq!(
        tape.backward(s).unwrap().get(capsad::tensor::ParamId(0)).unwrap(),
        &[1.0, 1.0]
    );

    let mut tape = Tape::new();
    let x = tape.param(&t, capsad::tensor::ParamId(0));
    let n = tape.l2_norm(x);
    let sq = tape.mul(n, n).unwrap();
    let g = tape.backward(sq).unwrap();
    let g = g.get(capsad::tensor::ParamId(0)).unwrap();
    assert!((g[0] - 6.0).abs() < 1e-12 && (g[1] - 8.0).abs() < 1e-12);
}

#[test]
fn backward_twice_accumulates_into_params() {
    let cfg = CapsNetConfig::tiny(2);
    let mut model = CapsNetModel::new(cfg.clone(), 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let image = common::uniform(&mut rng, &cfg.input_shape(), 0.0, 1.0);
    model.accumulate_gradients(&image, 1, 1.0).unwrap();
    let once: Vec<Vec<f64>> = model.params().iter().map(|p| p.grad().unwrap().to_vec()).collect();
    model.accumulate_gradients(&image, 1, 1.0).unwrap();
    for (p, g1) in model.params().iter().zip(&once) {
        for (a, b) in p.grad().unwrap().iter().zip(g1) {
            assert!((a - 2.0 * b).abs() <= 1e-12 * b.abs().max(1.0));
        }
    }
}

#[test]
fn non_scalar_backward_is_rejected() {
    let t = Tensor::from_vec(vec![1.0, 2.0]);
    let mut tape = Tape::new();
    let x = tape.param(&t, capsad::tensor::ParamId(0));
    let y = tape.relu(x);
    assert!(matches!(tape.backward(y), Err(capsad::Error::Contract(_))));
}

#[test]
fn end_to_end_total_loss_matches_finite_differences() {
    for (seed, label) in [(1, 0), (2, 1)] {
        let cfg = CapsNetConfig::tiny(2);
        let mut model = CapsNetModel::new(cfg.clone(), seed).unwrap();
        common::offset_biases(&mut model, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 10);
        let image = common::uniform(&mut rng, &cfg.input_shape(), 0.0, 1.0);
        let err = check_model(&model, &image, label, 12, seed).unwrap();
        assert!(err < 1e-3, "seed {seed}: relative error {err:e}");
    }
}
