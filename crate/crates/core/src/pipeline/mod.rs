//! Training configuration, patient-level folds, the training loop, ensembling and the
//! hyperparameter search.

mod config;
mod data;
mod folds;
mod train;
mod tune;

pub use config::{ModelConfig, HYPERPARAMETERS};
pub use data::{load_slides, Slide};
pub use folds::{make_folds, make_folds_from, patient_labels, FoldSplit};
pub use train::{
    average_probabilities, balanced_cross_entropy, cross_validate, mean_best_val_ce, slide_graphs,
    train_fold, train_model, write_epoch_log, BalancedSampler, EpochLog, Ensemble, FoldResult,
    PlateauSchedule, TrainOutcome, Verdict,
};
pub use tune::{tune, Trial, TuneOutcome, TunePlan, TuneStep, MIN_TUNE_BUDGET};
