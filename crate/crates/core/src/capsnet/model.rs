use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::config::CapsNetConfig;
use super::loss::MarginParams;
use super::routing::{route_on_tape, routing_state, DigitCaps, RoutedVars, RoutingState};
use crate::error::{Error, Result};
use crate::tensor::{Gradients, ParamId, Tape, Tensor, Var};

/// Standard deviation of the zero-mean normal used for every weight tensor.
pub const INIT_STD: f64 = 0.05;

/// Parameter tensors, in checkpoint order.
pub const PARAM_NAMES: [&str; 11] = [
    "conv1.weight",
    "conv1.bias",
    "primary.weight",
    "primary.bias",
    "routing.weight",
    "decoder1.weight",
    "decoder1.bias",
    "decoder2.weight",
    "decoder2.bias",
    "decoder3.weight",
    "decoder3.bias",
];

const CONV1_W: usize = 0;
const CONV1_B: usize = 1;
const PRIMARY_W: usize = 2;
const PRIMARY_B: usize = 3;
const ROUTING_W: usize = 4;
const DECODER: [(usize, usize); 3] = [(5, 6), (7, 8), (9, 10)];

/// Which digit capsule the decoder reconstructs from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mask {
    /// The true class, as during training.
    Label(usize),
    /// The longest capsule, as at inference.
    Argmax,
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub digit_caps: DigitCaps,
    /// Decoder output with the input image's shape, values in (0, 1).
    pub reconstruction: Tensor,
    pub routing: RoutingState,
    pub mask_index: usize,
}

/// Loss components of one sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossTerms {
    pub margin: f64,
    /// Sum of squared pixel errors of the reconstruction.
    pub reconstruction: f64,
    /// `margin + recon_loss_weight * reconstruction`.
    pub total: f64,
}

struct Recorded {
    digit: Var,
    norms: Var,
    recon: Var,
    predictions: Var,
    routed: RoutedVars,
    mask_index: usize,
}

/// A vector CapsNet: conv stem, primary capsules, routed digit capsules and
/// the reconstruction decoder.
#[derive(Debug, Clone, PartialEq)]
pub struct CapsNetModel {
    config: CapsNetConfig,
    params: Vec<Tensor>,
}

impl CapsNetModel {
    /// A freshly initialised model; weights are drawn from `N(0, INIT_STD^2)`
    /// with a generator seeded by `seed`, biases start at zero.
    pub fn new(config: CapsNetConfig, seed: u64) -> Result<Self> {
        let shapes = Self::param_shapes(&config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, INIT_STD).expect("valid std");
        let params = shapes
            .into_iter()
            .zip(PARAM_NAMES)
            .map(|(shape, name)| {
                let mut t = Tensor::zeros(shape);
                if name.ends_with(".weight") {
                    t.data_mut().iter_mut().for_each(|w| *w = normal.sample(&mut rng));
                }
                t
            })
            .collect();
        Ok(Self { config, params })
    }

    /// Rebuilds a model from explicit parameters, checking every shape.
    pub fn from_params(config: CapsNetConfig, params: Vec<Tensor>) -> Result<Self> {
        let shapes = Self::param_shapes(&config)?;
        if params.len() != shapes.len() {
            return Err(Error::Shape(format!(
                "expected {} parameter tensors, got {}",
                shapes.len(),
                params.len()
            )));
        }
        for ((p, shape), name) in params.iter().zip(&shapes).zip(PARAM_NAMES) {
            if p.shape() != shape.as_slice() {
                return Err(Error::Shape(format!(
                    "{name} has shape {:?}, expected {shape:?}",
                    p.shape()
                )));
            }
        }
        Ok(Self { config, params })
    }

    pub fn param_shapes(config: &CapsNetConfig) -> Result<Vec<Vec<usize>>> {
        config.validate()?;
        let primary_out = config.primary_caps * config.primary_dim;
        let digit_flat = config.num_classes * config.digit_dim;
        let [h1, h2] = config.decoder_hidden;
        Ok(vec![
            vec![
                config.conv1_channels,
                config.input_channels,
                config.conv1_kernel,
                config.conv1_kernel,
            ],
            vec![config.conv1_channels],
            vec![
                primary_out,
                config.conv1_channels,
                config.primary_kernel,
                config.primary_kernel,
            ],
            vec![primary_out],
            vec![
                config.num_primary_capsules()?,
                config.num_classes,
                config.digit_dim,
                config.primary_dim,
            ],
            vec![h1, digit_flat],
            vec![h1],
            vec![h2, h1],
            vec![h2],
            vec![config.input_len(), h2],
            vec![config.input_len()],
        ])
    }

    pub fn config(&self) -> &CapsNetConfig {
        &self.config
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn num_parameters(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    pub fn zero_grads(&mut self) {
        self.params.iter_mut().for_each(Tensor::zero_grad);
    }

    fn check_image(&self, image: &Tensor) -> Result<()> {
        let expected = self.config.input_shape();
        if image.shape() != expected {
            return Err(Error::Shape(format!(
                "image has shape {:?}, model expects {expected:?}",
                image.shape()
            )));
        }
        Ok(())
    }

    /// Primary-capsule layout: capsule `i = cap * G + pos` takes component
    /// `d` from conv channel `cap * dim + d` at grid position `pos`.
    fn primary_capsule_index(&self) -> Result<Vec<usize>> {
        let (gh, gw) = self.config.primary_grid()?;
        let grid = gh * gw;
        let dim = self.config.primary_dim;
        let mut index = Vec::with_capacity(self.config.primary_caps * grid * dim);
        for cap in 0..self.config.primary_caps {
            for pos in 0..grid {
                for d in 0..dim {
                    index.push((cap * dim + d) * grid + pos);
                }
            }
        }
        Ok(index)
    }

    fn param<'p>(&'p self, tape: &mut Tape<'p>, idx: usize) -> Var {
        tape.param(&self.params[idx], ParamId(idx))
    }

    fn record_decoder<'p>(&'p self, tape: &mut Tape<'p>, digit: Var, mask_index: usize) -> Result<Var> {
        let masked = tape.mask_rows(digit, mask_index)?;
        let flat_len = tape.shape(masked)[0];
        let mut x = tape.reshape(masked, vec![flat_len, 1])?;
        for (layer, &(w, b)) in DECODER.iter().enumerate() {
            let wv = self.param(tape, w);
            let bv = self.param(tape, b);
            let z = tape.matmul(wv, x)?;
            let z = tape.add_row_bias(z, bv)?;
            x = if layer + 1 < DECODER.len() {
                tape.relu(z)
            } else {
                tape.sigmoid(z)
            };
        }
        tape.reshape(x, self.config.input_shape().to_vec())
    }

    fn record<'p>(&'p self, tape: &mut Tape<'p>, image: &Tensor, mask: Mask) -> Result<Recorded> {
        self.check_image(image)?;
        let cfg = &self.config;
        let x = tape.constant(image.clone());

        let w = self.param(tape, CONV1_W);
        let b = self.param(tape, CONV1_B);
        let h = tape.conv2d(x, w, cfg.conv1_stride)?;
        let h = tape.add_row_bias(h, b)?;
        let h = tape.relu(h);

        let w = self.param(tape, PRIMARY_W);
        let b = self.param(tape, PRIMARY_B);
        let p = tape.conv2d(h, w, cfg.primary_stride)?;
        let p = tape.add_row_bias(p, b)?;
        let k = cfg.num_primary_capsules()?;
        let u = tape.gather(p, self.primary_capsule_index()?, vec![k, cfg.primary_dim])?;
        let u = tape.squash_rows(u)?;

        let w = self.param(tape, ROUTING_W);
        let predictions = tape.pose_transform(u, w)?;
        let routed = route_on_tape(tape, predictions, cfg.routing_iterations)?;
        let digit = routed.outputs;
        let norms = tape.row_norms(digit)?;

        let mask_index = match mask {
            Mask::Label(label) if label < cfg.num_classes => label,
            Mask::Label(label) => {
                return Err(Error::Contract(format!(
                    "label {label} out of range for {} classes",
                    cfg.num_classes
                )))
            }
            Mask::Argmax => DigitCaps::new(tape.to_tensor(digit))?.argmax(),
        };
        let recon = self.record_decoder(tape, digit, mask_index)?;
        Ok(Recorded {
            digit,
            norms,
            recon,
            predictions,
            routed,
            mask_index,
        })
    }

    /// Inference pass; the decoder reconstructs from the longest capsule.
    pub fn forward(&self, image: &Tensor) -> Result<ForwardOutput> {
        self.forward_masked(image, Mask::Argmax)
    }

    pub fn forward_masked(&self, image: &Tensor, mask: Mask) -> Result<ForwardOutput> {
        let mut tape = Tape::inference();
        let rec = self.record(&mut tape, image, mask)?;
        Ok(ForwardOutput {
            digit_caps: DigitCaps::new(tape.to_tensor(rec.digit))?,
            reconstruction: tape.to_tensor(rec.recon),
            routing: routing_state(&tape, &rec.routed, rec.predictions),
            mask_index: rec.mask_index,
        })
    }

    /// Digit capsules and reconstruction only, skipping the routing-state copy.
    pub fn infer(&self, image: &Tensor) -> Result<(DigitCaps, Tensor)> {
        let mut tape = Tape::inference();
        let rec = self.record(&mut tape, image, Mask::Argmax)?;
        Ok((DigitCaps::new(tape.to_tensor(rec.digit))?, tape.to_tensor(rec.recon)))
    }

    /// Runs the decoder on `caps` with every capsule but `mask_index` zeroed.
    pub fn decode(&self, caps: &DigitCaps, mask_index: usize) -> Result<Tensor> {
        let expected = [self.config.num_classes, self.config.digit_dim];
        if caps.vectors().shape() != expected {
            return Err(Error::Shape(format!(
                "digit capsules {:?}, decoder expects {expected:?}",
                caps.vectors().shape()
            )));
        }
        let mut tape = Tape::inference();
        let digit = tape.constant(caps.vectors().clone());
        let out = self.record_decoder(&mut tape, digit, mask_index)?;
        Ok(tape.to_tensor(out))
    }

    fn record_loss<'p>(&'p self, tape: &mut Tape<'p>, image: &Tensor, label: usize) -> Result<(Var, Var, Var)> {
        let rec = self.record(tape, image, Mask::Label(label))?;
        let params = MarginParams::from(&self.config);
        let margin = tape.margin_loss(rec.norms, label, params.m_plus, params.m_minus, params.lambda)?;
        let sse = tape.squared_error(rec.recon, image.data())?;
        let weighted = tape.scale(sse, self.config.recon_loss_weight);
        let total = tape.add(margin, weighted)?;
        Ok((margin, sse, total))
    }

    /// Margin loss plus the weighted reconstruction error for one labelled image.
    pub fn loss_terms(&self, image: &Tensor, label: usize) -> Result<LossTerms> {
        let mut tape = Tape::inference();
        let (margin, sse, total) = self.record_loss(&mut tape, image, label)?;
        Ok(LossTerms {
            margin: tape.scalar(margin)?,
            reconstruction: tape.scalar(sse)?,
            total: tape.scalar(total)?,
        })
    }

    pub fn total_loss(&self, image: &Tensor, label: usize) -> Result<f64> {
        Ok(self.loss_terms(image, label)?.total)
    }

    /// Loss terms and the gradient of `scale * total` with respect to every
    /// parameter. Gradients are returned, not accumulated.
    pub fn loss_and_gradients(&self, image: &Tensor, label: usize, scale: f64) -> Result<(LossTerms, Gradients)> {
        let mut tape = Tape::new();
        let (margin, sse, total) = self.record_loss(&mut tape, image, label)?;
        let scaled = tape.scale(total, scale);
        let grads = tape.backward(scaled)?;
        Ok((Self::terms(&tape, margin, sse, total)?, grads))
    }

    /// Zeroed buffers shaped like the parameters, for [`Self::accumulate_into`].
    pub fn gradient_buffers(&self) -> Vec<Vec<f64>> {
        self.params.iter().map(|p| vec![0.0; p.len()]).collect()
    }

    /// Like [`Self::loss_and_gradients`], but adds `scale * d(total)/d(param)`
    /// into caller-owned buffers (one per parameter, in [`PARAM_NAMES`] order).
    pub fn accumulate_into(
        &self,
        image: &Tensor,
        label: usize,
        scale: f64,
        buffers: &mut [Vec<f64>],
    ) -> Result<LossTerms> {
        let mut tape = Tape::new();
        let (margin, sse, total) = self.record_loss(&mut tape, image, label)?;
        let scaled = tape.scale(total, scale);
        tape.backward_into(scaled, buffers)?;
        Self::terms(&tape, margin, sse, total)
    }

    fn terms(tape: &Tape<'_>, margin: Var, sse: Var, total: Var) -> Result<LossTerms> {
        Ok(LossTerms {
            margin: tape.scalar(margin)?,
            reconstruction: tape.scalar(sse)?,
            total: tape.scalar(total)?,
        })
    }

    /// Forward and backward for one sample, adding `scale * d(total)/d(param)`
    /// into each parameter's gradient buffer.
    pub fn accumulate_gradients(&mut self, image: &Tensor, label: usize, scale: f64) -> Result<LossTerms> {
        let (terms, grads) = self.loss_and_gradients(image, label, scale)?;
        grads.accumulate_into(&mut self.params)?;
        Ok(terms)
    }
}
