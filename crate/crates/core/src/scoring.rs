//! Normality scores computed from a trained network's outputs. Higher means
//! more likely to belong to the training distribution.

use std::fmt;

use crate::capsnet::{CapsNetModel, DigitCaps};
use crate::error::{Error, Result};
use crate::tensor::{kernels, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ScoreKind {
    /// Prediction probability: the longest digit capsule.
    Pp,
    /// Negative normalised reconstruction error.
    Re,
}

impl fmt::Display for ScoreKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScoreKind::Pp => "PP",
            ScoreKind::Re => "RE",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalityScore {
    pub value: f64,
    pub kind: ScoreKind,
}

/// Denominator of the normalised reconstruction error.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ReNormalization {
    /// `|x|_2`
    #[default]
    L2,
    /// `|x|_2^2`
    L2Squared,
}

/// `max_c |h_c|`.
pub fn pp_score(caps: &DigitCaps) -> NormalityScore {
    let value = caps.lengths().into_iter().fold(0.0, f64::max);
    NormalityScore {
        value,
        kind: ScoreKind::Pp,
    }
}

/// `-|x - x'|^2 / |x|`.
pub fn re_score(x: &Tensor, x_recon: &Tensor) -> Result<NormalityScore> {
    re_score_with(x, x_recon, ReNormalization::L2)
}

pub fn re_score_with(x: &Tensor, x_recon: &Tensor, norm: ReNormalization) -> Result<NormalityScore> {
    if x.len() != x_recon.len() {
        return Err(Error::Shape(format!(
            "image {:?} and reconstruction {:?} differ in size",
            x.shape(),
            x_recon.shape()
        )));
    }
    let x_norm = kernels::norm(x.data());
    if x_norm == 0.0 {
        return Err(Error::Domain("RE score of an all-zero image is undefined".into()));
    }
    let sq_err: f64 = x
        .data()
        .iter()
        .zip(x_recon.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    let denom = match norm {
        ReNormalization::L2 => x_norm,
        ReNormalization::L2Squared => x_norm * x_norm,
    };
    Ok(NormalityScore {
        value: -sq_err / denom,
        kind: ScoreKind::Re,
    })
}

/// A named score function over one forward pass.
pub trait NormalityScorer: Send + Sync {
    fn id(&self) -> &'static str;
    fn kind(&self) -> ScoreKind;
    /// Whether [`NormalityScorer::score`] reads the reconstruction.
    fn needs_reconstruction(&self) -> bool;
    fn score(&self, caps: &DigitCaps, image: &Tensor, reconstruction: &Tensor) -> Result<NormalityScore>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct PpScorer;

impl NormalityScorer for PpScorer {
    fn id(&self) -> &'static str {
        "pp"
    }
    fn kind(&self) -> ScoreKind {
        ScoreKind::Pp
    }
    fn needs_reconstruction(&self) -> bool {
        false
    }
    fn score(&self, caps: &DigitCaps, _image: &Tensor, _reconstruction: &Tensor) -> Result<NormalityScore> {
        Ok(pp_score(caps))
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ReScorer {
    pub normalization: ReNormalization,
}

impl NormalityScorer for ReScorer {
    fn id(&self) -> &'static str {
        match self.normalization {
            ReNormalization::L2 => "re",
            ReNormalization::L2Squared => "re-sq",
        }
    }
    fn kind(&self) -> ScoreKind {
        ScoreKind::Re
    }
    fn needs_reconstruction(&self) -> bool {
        true
    }
    fn score(&self, _caps: &DigitCaps, image: &Tensor, reconstruction: &Tensor) -> Result<NormalityScore> {
        re_score_with(image, reconstruction, self.normalization)
    }
}

static SCORERS: [&dyn NormalityScorer; 3] = [
    &PpScorer,
    &ReScorer {
        normalization: ReNormalization::L2,
    },
    &ReScorer {
        normalization: ReNormalization::L2Squared,
    },
];

pub fn scorer_ids() -> Vec<&'static str> {
    SCORERS.iter().map(|s| s.id()).collect()
}

pub fn find_scorer(id: &str) -> Result<&'static dyn NormalityScorer> {
    SCORERS
        .iter()
        .copied()
        .find(|s| s.id() == id)
        .ok_or_else(|| Error::Config(format!("unknown score `{id}` (known: {})", scorer_ids().join(", "))))
}

/// Scores every image with every scorer from a single forward pass per image.
/// Result `[s][i]` is scorer `s` on image `i`. RE uses the reconstruction
/// from the longest capsule.
pub fn score_images(
    model: &CapsNetModel,
    images: &[Tensor],
    scorers: &[&dyn NormalityScorer],
) -> Result<Vec<Vec<NormalityScore>>> {
    if images.is_empty() {
        return Err(Error::Contract("nothing to score".into()));
    }
    let mut out = vec![Vec::with_capacity(images.len()); scorers.len()];
    for (i, image) in images.iter().enumerate() {
        let (caps, recon) = model.infer(image).map_err(|e| at_sample(i, e))?;
        for (s, scorer) in scorers.iter().enumerate() {
            out[s].push(scorer.score(&caps, image, &recon).map_err(|e| at_sample(i, e))?);
        }
    }
    Ok(out)
}

pub fn score_batch(
    model: &CapsNetModel,
    images: &[Tensor],
    scorer: &dyn NormalityScorer,
) -> Result<Vec<NormalityScore>> {
    Ok(score_images(model, images, &[scorer])?.remove(0))
}

fn at_sample(i: usize, e: Error) -> Error {
    match e {
        Error::Domain(m) => Error::Domain(format!("sample {i}: {m}")),
        Error::Shape(m) => Error::Shape(format!("sample {i}: {m}")),
        other => other,
    }
}
