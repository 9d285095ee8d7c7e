use super::config::CapsNetConfig;
use super::routing::DigitCaps;
use crate::error::{Error, Result};

/// Margins and down-weighting of the capsule margin loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarginParams {
    pub m_plus: f64,
    pub m_minus: f64,
    pub lambda: f64,
}

impl Default for MarginParams {
    fn default() -> Self {
        Self {
            m_plus: 0.9,
            m_minus: 0.1,
            lambda: 0.5,
        }
    }
}

impl From<&CapsNetConfig> for MarginParams {
    fn from(cfg: &CapsNetConfig) -> Self {
        Self {
            m_plus: cfg.m_plus,
            m_minus: cfg.m_minus,
            lambda: cfg.lambda_down,
        }
    }
}

/// Margin loss on capsule lengths:
/// `sum_c [c == y] max(0, m+ - |h_c|)^2 + lambda [c != y] max(0, |h_c| - m-)^2`.
pub fn margin_loss(caps: &DigitCaps, label: usize, params: MarginParams) -> Result<f64> {
    margin_loss_from_lengths(&caps.lengths(), label, params)
}

pub fn margin_loss_from_lengths(lengths: &[f64], label: usize, params: MarginParams) -> Result<f64> {
    if label >= lengths.len() {
        return Err(Error::Contract(format!(
            "label {label} out of range for {} classes",
            lengths.len()
        )));
    }
    Ok(lengths
        .iter()
        .enumerate()
        .map(|(c, &n)| {
            if c == label {
                (params.m_plus - n).max(0.0).powi(2)
            } else {
                params.lambda * (n - params.m_minus).max(0.0).powi(2)
            }
        })
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const P: MarginParams = MarginParams {
        m_plus: 0.9,
        m_minus: 0.1,
        lambda: 0.5,
    };

    #[test]
    fn hand_cases() {
        let l = margin_loss_from_lengths(&[0.05, 0.95, 0.05], 1, P).unwrap();
        assert!(l.abs() < 1e-12);
        let l = margin_loss_from_lengths(&[0.0; 4], 2, P).unwrap();
        assert!((l - 0.81).abs() < 1e-12);
        let l = margin_loss_from_lengths(&[0.0, 1.0, 0.0], 0, P).unwrap();
        assert!((l - 1.215).abs() < 1e-12);
    }

    #[test]
    fn label_out_of_range() {
        assert!(matches!(
            margin_loss_from_lengths(&[0.1, 0.2], 2, P),
            Err(Error::Contract(_))
        ));
    }

    proptest! {
        #[test]
        fn non_negative_and_zero_only_inside_margins(
            lengths in prop::collection::vec(0.0f64..1.0, 1..10),
            pick in 0usize..10,
        ) {
            let label = pick % lengths.len();
            let l = margin_loss_from_lengths(&lengths, label, P).unwrap();
            prop_assert!(l >= 0.0);
            let satisfied = lengths.iter().enumerate().all(|(c, &n)| {
                if c == label { n >= P.m_plus } else { n <= P.m_minus }
            });
            prop_assert_eq!(l == 0.0, satisfied);
        }
    }
}
