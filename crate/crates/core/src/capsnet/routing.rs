//! Capsule non-linearity, pose predictions and routing-by-agreement.

use crate::error::{Error, Result};
use crate::tensor::{kernels, Tape, Tensor, Var};

/// Top-level capsules, one `d`-dimensional vector per class.
#[derive(Debug, Clone, PartialEq)]
pub struct DigitCaps {
    vectors: Tensor,
}

impl DigitCaps {
    /// Wraps a `[C x d]` tensor.
    pub fn new(vectors: Tensor) -> Result<Self> {
        if vectors.rank() != 2 {
            return Err(Error::Shape(format!(
                "digit capsules must be [C, d], got {:?}",
                vectors.shape()
            )));
        }
        Ok(Self { vectors })
    }

    pub fn vectors(&self) -> &Tensor {
        &self.vectors
    }

    pub fn num_classes(&self) -> usize {
        self.vectors.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.vectors.shape()[1]
    }

    pub fn capsule(&self, class: usize) -> &[f64] {
        let d = self.dim();
        &self.vectors.data()[class * d..(class + 1) * d]
    }

    /// Capsule lengths, read as class activation probabilities.
    pub fn lengths(&self) -> Vec<f64> {
        self.vectors.data().chunks(self.dim()).map(kernels::norm).collect()
    }

    /// Class of the longest capsule (lowest index on ties).
    pub fn argmax(&self) -> usize {
        let lengths = self.lengths();
        let mut best = 0;
        for (c, &l) in lengths.iter().enumerate() {
            if l > lengths[best] {
                best = c;
            }
        }
        best
    }
}

/// Routing logits, couplings and pose predictions of one forward pass.
#[derive(Debug, Clone)]
pub struct RoutingState {
    /// `b`, `[K x C]`, as left after the last update.
    pub logits: Tensor,
    /// Couplings used in the final iteration, `[K x C]`.
    pub couplings: Tensor,
    /// Couplings of every iteration, in order.
    pub coupling_history: Vec<Tensor>,
    /// `[K x C x d]` predictions of each child for each parent.
    pub pose_predictions: Tensor,
}

/// `|s|^2 / (1 + |s|^2) * s / |s|`, with the unit-vector division guarded so
/// the zero vector maps to zero.
pub fn squash(s: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; s.len()];
    kernels::squash_into(s, &mut out);
    out
}

/// Prediction of a parent pose from a child capsule: `weights . pose`.
pub fn pose_transform(pose: &Tensor, weights: &Tensor) -> Result<Tensor> {
    match (pose.shape(), weights.shape()) {
        (&[d_in], &[d_out, w_in]) if d_in == w_in => {
            let out = weights
                .data()
                .chunks(d_in)
                .map(|row| kernels::dot(row, pose.data()))
                .collect();
            Tensor::new(vec![d_out], out)
        }
        (p, w) => Err(Error::Shape(format!("pose_transform of pose {p:?} by weights {w:?}"))),
    }
}

/// Handles to the routing nodes recorded on a tape.
pub(crate) struct RoutedVars {
    pub outputs: Var,
    pub logits: Var,
    pub couplings: Vec<Var>,
}

/// Records `iterations` rounds of routing-by-agreement over `predictions`
/// (`[K x C x d]`). Logits start at zero; the logit update after the final
/// round is skipped because nothing would read it.
pub(crate) fn route_on_tape(tape: &mut Tape<'_>, predictions: Var, iterations: usize) -> Result<RoutedVars> {
    if iterations == 0 {
        return Err(Error::Contract("routing needs at least one iteration".into()));
    }
    let [children, parents, _] = *tape.shape(predictions) else {
        return Err(Error::Shape(format!(
            "pose predictions must be [K, C, d], got {:?}",
            tape.shape(predictions)
        )));
    };
    let mut logits = tape.constant(Tensor::zeros(vec![children, parents]));
    let mut couplings = Vec::with_capacity(iterations);
    let mut outputs = None;
    for round in 0..iterations {
        let c = tape.softmax_rows(logits)?;
        couplings.push(c);
        let s = tape.weighted_sum(c, predictions)?;
        let v = tape.squash_rows(s)?;
        if round + 1 < iterations {
            let agreement = tape.agreement(v, predictions)?;
            logits = tape.add(logits, agreement)?;
        }
        outputs = Some(v);
    }
    Ok(RoutedVars {
        outputs: outputs.expect("at least one iteration"),
        logits,
        couplings,
    })
}

pub(crate) fn routing_state(tape: &Tape<'_>, routed: &RoutedVars, predictions: Var) -> RoutingState {
    let coupling_history: Vec<Tensor> = routed.couplings.iter().map(|&c| tape.to_tensor(c)).collect();
    RoutingState {
        logits: tape.to_tensor(routed.logits),
        couplings: coupling_history.last().cloned().expect("at least one iteration"),
        coupling_history,
        pose_predictions: tape.to_tensor(predictions),
    }
}

/// Routes `[K x C x d]` pose predictions to `C` parent capsules.
pub fn dynamic_routing(pose_predictions: &Tensor, iterations: usize) -> Result<(DigitCaps, RoutingState)> {
    let mut tape = Tape::inference();
    let predictions = tape.constant(pose_predictions.clone());
    let routed = route_on_tape(&mut tape, predictions, iterations)?;
    let caps = DigitCaps::new(tape.to_tensor(routed.outputs))?;
    let state = routing_state(&tape, &routed, predictions);
    Ok((caps, state))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn norm(v: &[f64]) -> f64 {
        v.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    #[test]
    fn squash_examples() {
        assert_eq!(squash(&[0.0, 0.0, 0.0]), vec![0.0, 0.0, 0.0]);
        let half = squash(&[1.0, 0.0]);
        assert!((half[0] - 0.5).abs() < 1e-12 && half[1] == 0.0);
        let v = squash(&[3.0, 0.0]);
        assert!((v[0] - 0.9).abs() < 1e-12 && v[1] == 0.0);
    }

    #[test]
    fn pose_transform_examples() {
        let h = Tensor::from_vec((1..=8).map(f64::from).collect());
        let zero = Tensor::zeros(vec![16, 8]);
        assert!(pose_transform(&h, &zero).unwrap().data().iter().all(|&x| x == 0.0));

        let mut embed = vec![0.0; 16 * 8];
        for i in 0..8 {
            embed[i * 8 + i] = 1.0;
        }
        let embed = Tensor::new(vec![16, 8], embed).unwrap();
        let out = pose_transform(&h, &embed).unwrap();
        assert_eq!(&out.data()[..8], h.data());
        assert!(out.data()[8..].iter().all(|&x| x == 0.0));

        assert!(pose_transform(&h, &Tensor::zeros(vec![16, 7])).is_err());
    }

    #[test]
    fn uniform_couplings_before_any_agreement() {
        let preds = Tensor::new(vec![1, 2, 3], vec![0.1, 0.2, 0.3, -0.3, 0.0, 0.5]).unwrap();
        let (_, state) = dynamic_routing(&preds, 1).unwrap();
        assert_eq!(state.couplings.data(), &[0.5, 0.5]);
        assert!(state.logits.data().iter().all(|&b| b == 0.0));
    }

    #[test]
    fn single_parent_is_squash_of_sum() {
        let preds = Tensor::new(vec![3, 1, 2], vec![0.1, 0.4, -0.2, 0.3, 0.5, 0.5]).unwrap();
        let (caps, state) = dynamic_routing(&preds, 3).unwrap();
        assert!(state.couplings.data().iter().all(|&c| c == 1.0));
        let expected = squash(&[0.4, 1.2]);
        for (a, b) in caps.capsule(0).iter().zip(&expected) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    #[allow(clippy::needless_range_loop)]
    fn agreeing_children_pull_couplings_to_their_parent() {
        // Both children predict the same pose for parent 0; their predictions
        // for parent 1 are small and orthogonal to each other.
        let preds = Tensor::new(
            vec![2, 2, 2],
            vec![
                0.8, 0.6, 0.05, 0.0, //
                0.8, 0.6, 0.0, 0.05,
            ],
        )
        .unwrap();
        let (_, state) = dynamic_routing(&preds, 3).unwrap();
        let c = state.couplings.data();
        assert!(c[0] > c[1] && c[2] > c[3]);

        // Direct simulation of the update rule.
        let p = |i: usize, j: usize| &preds.data()[(i * 2 + j) * 2..(i * 2 + j) * 2 + 2];
        let mut b = [[0.0f64; 2]; 2];
        let mut coupling = [[0.0f64; 2]; 2];
        for round in 0..3 {
            for i in 0..2 {
                let e: Vec<f64> = b[i].iter().map(|x| x.exp()).collect();
                let z = e[0] + e[1];
                coupling[i] = [e[0] / z, e[1] / z];
            }
            let mut v = [[0.0f64; 2]; 2];
            for j in 0..2 {
                let mut s = [0.0; 2];
                for i in 0..2 {
                    for d in 0..2 {
                        s[d] += coupling[i][j] * p(i, j)[d];
                    }
                }
                let n2 = s[0] * s[0] + s[1] * s[1];
                let f = n2 / (1.0 + n2) / n2.sqrt();
                v[j] = [f * s[0], f * s[1]];
            }
            if round < 2 {
                for i in 0..2 {
                    for j in 0..2 {
                        b[i][j] += v[j][0] * p(i, j)[0] + v[j][1] * p(i, j)[1];
                    }
                }
            }
        }
        for i in 0..2 {
            for j in 0..2 {
                assert!((c[i * 2 + j] - coupling[i][j]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn routing_rejects_zero_iterations() {
        assert!(dynamic_routing(&Tensor::zeros(vec![2, 2, 2]), 0).is_err());
    }

    proptest! {
        #[test]
        fn squash_norm_below_one_and_monotone(
            dir in prop::collection::vec(-1.0f64..1.0, 1..12),
            a in 0.0f64..50.0,
            b in 0.0f64..50.0,
        ) {
            let n = norm(&dir);
            prop_assume!(n > 1e-6);
            let unit: Vec<f64> = dir.iter().map(|x| x / n).collect();
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            prop_assume!(hi - lo > 1e-9);
            let short = norm(&squash(&unit.iter().map(|x| x * lo).collect::<Vec<_>>()));
            let long = norm(&squash(&unit.iter().map(|x| x * hi).collect::<Vec<_>>()));
            prop_assert!(long < 1.0);
            prop_assert!(short <= long);
        }

        #[test]
        fn couplings_rows_sum_to_one(
            values in prop::collection::vec(-2.0f64..2.0, 4 * 3 * 5),
            iterations in 1usize..5,
        ) {
            let preds = Tensor::new(vec![4, 3, 5], values).unwrap();
            let (caps, state) = dynamic_routing(&preds, iterations).unwrap();
            prop_assert_eq!(state.coupling_history.len(), iterations);
            for c in &state.coupling_history {
                for row in c.data().chunks(3) {
                    prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
                }
            }
            prop_assert!(caps.lengths().iter().all(|&l| (0.0..1.0).contains(&l)));
        }
    }
}
