//! Central finite-difference checks of the analytic gradients.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::capsnet::CapsNetModel;
use crate::error::{Error, Result};
use crate::tensor::{ParamId, Tape, Tensor, Var};

/// Finite-difference step.
pub const FD_STEP: f64 = 1e-5;

/// Gradients smaller than this are compared in absolute terms.
pub const RELATIVE_FLOOR: f64 = 1e-4;

/// `|a - n| / max(|a|, |n|, RELATIVE_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR)
}

/// `(f(x + h) - f(x - h)) / 2h` for every coordinate of `x`.
pub fn numeric_gradient(x: &[f64], mut f: impl FnMut(&[f64]) -> Result<f64>) -> Result<Vec<f64>> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + FD_STEP;
            let up = f(&probe)?;
            probe[i] = x[i] - FD_STEP;
            let down = f(&probe)?;
            probe[i] = x[i];
            Ok((up - down) / (2.0 * FD_STEP))
        })
        .collect()
}

/// Worst relative error of the tape gradient of `<w, op(inputs)>`, where `w`
/// is a fixed random projection, over every input coordinate.
pub fn check_op<F>(inputs: &[Tensor], seed: u64, op: F) -> Result<f64>
where
    F: for<'p> Fn(&mut Tape<'p>, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Tensor], projection: Option<&[f64]>| -> Result<(Vec<f64>, f64)> {
        let mut tape = Tape::inference();
        let vars: Vec<Var> = values.iter().map(|t| tape.constant(t.clone())).collect();
        let out = op(&mut tape, &vars)?;
        let y = tape.value(out).to_vec();
        let dot = projection.map_or(0.0, |w| y.iter().zip(w).map(|(a, b)| a * b).sum());
        Ok((y, dot))
    };
    let (y, _) = eval(inputs, None)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w: Vec<f64> = (0..y.len()).map(|_| rng.random_range(-1.0..1.0)).collect();

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs
        .iter()
        .enumerate()
        .map(|(i, t)| tape.param(t, ParamId(i)))
        .collect();
    let out = op(&mut tape, &vars)?;
    let shape = tape.shape(out).to_vec();
    let proj = tape.constant(Tensor::new(shape, w.clone())?);
    let prod = tape.mul(out, proj)?;
    let loss = tape.sum(prod);
    let grads = tape.backward(loss)?;

    let mut worst: f64 = 0.0;
    for (i, input) in inputs.iter().enumerate() {
        let numeric = numeric_gradient(input.data(), |x| {
            let mut perturbed = inputs.to_vec();
            perturbed[i] = Tensor::new(input.shape().to_vec(), x.to_vec())?;
            Ok(eval(&perturbed, Some(&w))?.1)
        })?;
        let zeros = vec![0.0; input.len()];
        let analytic = grads.get(ParamId(i)).unwrap_or(&zeros);
        for (a, n) in analytic.iter().zip(&numeric) {
            worst = worst.max(relative_error(*a, *n));
        }
    }
    Ok(worst)
}

/// Worst relative error of `d total_loss / d param` over `per_param` randomly
/// chosen coordinates of every parameter tensor.
pub fn check_model(model: &CapsNetModel, image: &Tensor, label: usize, per_param: usize, seed: u64) -> Result<f64> {
    let (_, grads) = model.loss_and_gradients(image, label, 1.0)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut probe = model.clone();
    let mut worst: f64 = 0.0;
    for p in 0..model.params().len() {
        let len = model.params()[p].len();
        let analytic = grads
            .get(ParamId(p))
            .ok_or_else(|| Error::Contract(format!("no gradient for parameter {p}")))?;
        for j in index::sample(&mut rng, len, per_param.min(len)) {
            let original = model.params()[p].data()[j];
            let mut at = |v: f64| -> Result<f64> {
                probe.params_mut()[p].data_mut()[j] = v;
                probe.total_loss(image, label)
            };
            let numeric = (at(original + FD_STEP)? - at(original - FD_STEP)?) / (2.0 * FD_STEP);
            probe.params_mut()[p].data_mut()[j] = original;
            worst = worst.max(relative_error(analytic[j], numeric));
        }
    }
    Ok(worst)
}
