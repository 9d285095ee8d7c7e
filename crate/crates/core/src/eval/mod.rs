//! ROC analysis and the leave-classes-out experiment protocol.

mod experiment;
mod export;
mod roc;
mod splits;

pub use experiment::{run_experiment, run_experiment_on, Experiment, ScoreReport, ScoreSeries};
pub use export::{reconstruction_grid, report_text, roc_csv, scores_csv};
pub use roc::{auroc, roc_curve, trapezoid_area, RocPoint};
pub use splits::{build_splits, normal_training_set, ExperimentSpec, Splits};
