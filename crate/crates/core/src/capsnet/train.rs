use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::model::CapsNetModel;
use crate::data::LabeledImageSet;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainOptions {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl TrainOptions {
    pub fn new(epochs: usize, batch_size: usize, seed: u64) -> Self {
        Self {
            epochs,
            batch_size,
            seed,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Mean per-sample total loss of each completed epoch.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub epoch_losses: Vec<f64>,
}

/// Progress notification emitted after every mini-batch.
#[derive(Debug, Clone, Copy)]
pub struct BatchProgress {
    pub epoch: usize,
    pub batch: usize,
    pub batches: usize,
    pub mean_loss: f64,
}

struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: i32,
}

impl Adam {
    fn new(params: &[Tensor]) -> Self {
        Self {
            m: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            step: 0,
        }
    }

    fn update(&mut self, params: &mut [Tensor], grads: &[Vec<f64>], opts: &TrainOptions) {
        self.step += 1;
        let c1 = 1.0 - opts.beta1.powi(self.step);
        let c2 = 1.0 - opts.beta2.powi(self.step);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for (((w, g), m), v) in p.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = opts.beta1 * *m + (1.0 - opts.beta1) * g;
                *v = opts.beta2 * *v + (1.0 - opts.beta2) * g * g;
                *w -= opts.learning_rate * (*m / c1) / ((*v / c2).sqrt() + opts.epsilon);
            }
        }
    }
}

/// Mini-batch Adam on the total loss, shuffling with a generator seeded by
/// `(seed, epoch)`. The batch gradient is the mean of the per-sample gradients.
pub fn train(model: &mut CapsNetModel, data: &LabeledImageSet, opts: &TrainOptions) -> Result<TrainLog> {
    train_with_progress(model, data, opts, |_| {})
}

pub fn train_with_progress(
    model: &mut CapsNetModel,
    data: &LabeledImageSet,
    opts: &TrainOptions,
    mut progress: impl FnMut(BatchProgress),
) -> Result<TrainLog> {
    if data.is_empty() {
        return Err(Error::Contract("cannot train on an empty dataset".into()));
    }
    if opts.batch_size == 0 {
        return Err(Error::Config("batch size must be at least 1".into()));
    }
    let classes = model.config().num_classes;
    if let Some((i, l)) = data.labels.iter().enumerate().find(|(_, &l)| l >= classes) {
        return Err(Error::Contract(format!(
            "label {l} of sample {i} outside the model's 0..{classes}"
        )));
    }
    let expected = model.config().input_shape();
    if let Some(shape) = data.sample_shape().filter(|s| s.as_slice() != expected) {
        return Err(Error::Shape(format!(
            "training samples are {shape:?}, model expects {expected:?}"
        )));
    }

    let mut adam = Adam::new(model.params());
    let mut grads = model.gradient_buffers();
    let mut log = TrainLog::default();
    let mut order: Vec<usize> = (0..data.len()).collect();
    let batches = data.len().div_ceil(opts.batch_size);
    for epoch in 0..opts.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        rng.set_stream(epoch as u64);
        order.sort_unstable();
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (b, batch) in order.chunks(opts.batch_size).enumerate() {
            grads.iter_mut().for_each(|g| g.fill(0.0));
            let scale = 1.0 / batch.len() as f64;
            let mut batch_loss = 0.0;
            for &i in batch {
                let image = data.sample(i, epoch)?;
                batch_loss += model.accumulate_into(&image, data.labels[i], scale, &mut grads)?.total;
            }
            if !batch_loss.is_finite() {
                return Err(Error::Domain(format!("non-finite loss in epoch {epoch}, batch {b}")));
            }
            adam.update(model.params_mut(), &grads, opts);
            epoch_loss += batch_loss;
            progress(BatchProgress {
                epoch,
                batch: b,
                batches,
                mean_loss: batch_loss * scale,
            });
        }
        log.epoch_losses.push(epoch_loss / data.len() as f64);
    }
    Ok(log)
}
