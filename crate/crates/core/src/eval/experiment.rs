use std::path::Path;
use std::time::Instant;

use super::roc::{auroc, roc_curve, RocPoint};
use super::splits::{build_splits, ExperimentSpec, Splits};
use crate::capsnet::{train_with_progress, BatchProgress, CapsNetModel, TrainOptions};
use crate::data::{find_dataset, LabeledImageSet, Split};
use crate::error::{Error, Result};
use crate::scoring::{find_scorer, score_images, NormalityScorer, ScoreKind};

/// Scores of one score function over the test set, with its ROC analysis.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreSeries {
    pub scorer: String,
    pub kind: ScoreKind,
    /// One score per test sample, in test-set order.
    pub scores: Vec<f64>,
    pub roc: Vec<RocPoint>,
    pub auroc: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreReport {
    pub spec: ExperimentSpec,
    pub normal_classes: Vec<usize>,
    pub train_size: usize,
    /// Index of each test sample in the source test split.
    pub test_ids: Vec<usize>,
    pub is_anomaly: Vec<bool>,
    pub series: Vec<ScoreSeries>,
    pub epoch_losses: Vec<f64>,
    pub wall_seconds: f64,
}

impl ScoreReport {
    pub fn series(&self, scorer: &str) -> Option<&ScoreSeries> {
        self.series.iter().find(|s| s.scorer == scorer)
    }

    pub fn auroc(&self, scorer: &str) -> Option<f64> {
        self.series(scorer).map(|s| s.auroc)
    }
}

/// Everything an experiment produced.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub report: ScoreReport,
    pub model: CapsNetModel,
    pub splits: Splits,
}

/// Loads the experiment's dataset from `data_root` and runs [`run_experiment_on`].
pub fn run_experiment(
    spec: &ExperimentSpec,
    data_root: &Path,
    progress: impl FnMut(BatchProgress),
) -> Result<Experiment> {
    let source = find_dataset(&spec.dataset)?;
    spec.validate(source.num_classes())?;
    let train = source.load(data_root, Split::Train, spec.seed)?;
    let test = source.load(data_root, Split::Test, spec.seed)?;
    run_experiment_on(spec, &train, &test, progress)
}

/// Splits the data, trains a fresh model on the normal classes and scores the
/// balanced test set with every requested score function.
pub fn run_experiment_on(
    spec: &ExperimentSpec,
    train: &LabeledImageSet,
    test: &LabeledImageSet,
    progress: impl FnMut(BatchProgress),
) -> Result<Experiment> {
    let started = Instant::now();
    let scorers = spec
        .scorers
        .iter()
        .map(|id| find_scorer(id))
        .collect::<Result<Vec<&dyn NormalityScorer>>>()?;
    let splits = build_splits(train, test, spec)?;
    let input_shape = splits
        .train
        .sample_shape()
        .ok_or_else(|| Error::Contract("no normal training samples".into()))?;
    let input_shape: [usize; 3] = input_shape
        .try_into()
        .map_err(|s| Error::Shape(format!("images must be [C, H, W], got {s:?}")))?;
    let config = spec.arch.config(input_shape, splits.train.num_classes);
    config.validate()?;
    let mut model = CapsNetModel::new(config, spec.seed)?;
    let log = train_with_progress(
        &mut model,
        &splits.train,
        &TrainOptions::new(spec.epochs, spec.batch_size, spec.seed),
        progress,
    )?;

    let scores = score_images(&model, &splits.test.images, &scorers)?;
    let series = scorers
        .iter()
        .zip(scores)
        .map(|(scorer, s)| {
            let values: Vec<f64> = s.iter().map(|n| n.value).collect();
            Ok(ScoreSeries {
                scorer: scorer.id().to_string(),
                kind: scorer.kind(),
                roc: roc_curve(&values, &splits.is_anomaly)?,
                auroc: auroc(&values, &splits.is_anomaly)?,
                scores: values,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let report = ScoreReport {
        spec: spec.clone(),
        normal_classes: spec.normal_classes(train.num_classes),
        train_size: splits.train.len(),
        test_ids: splits.test_ids.clone(),
        is_anomaly: splits.is_anomaly.clone(),
        series,
        epoch_losses: log.epoch_losses,
        wall_seconds: started.elapsed().as_secs_f64(),
    };
    Ok(Experiment { report, model, splits })
}
