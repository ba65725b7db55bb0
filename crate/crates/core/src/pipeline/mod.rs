//! Run configuration, cohort loading, cross-validated training and
//! evaluation reports.

mod cohort;
mod config;
mod folds;
mod report;
mod train;

pub use cohort::{build_graph, Cohort, PatientData};
pub use config::RunConfig;
pub use folds::{make_folds, CohortSplit};
pub use report::{
    mean_and_sample_std, read_predictions, run_gradcheck_suite, write_predictions, FoldMetric,
    GradcheckSuite, Metrics, MODEL_TOLERANCE, PRIMITIVE_TOLERANCE,
};
pub use train::{
    evaluate_cross_validation, evaluate_fold, fold_seed, predict_patients, run_cross_validation,
    train_cross_validation, train_fold, CvTraining, FoldEvaluation, FoldPrediction, TrainedFold,
};
