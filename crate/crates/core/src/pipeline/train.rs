use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::PatchGcn;
use crate::nn::AdamState;
use crate::pipeline::{make_folds, Cohort, CohortSplit, PatientData, RunConfig};
use crate::survival::{assign_bins, concordance_index, BinBoundaries, RiskPrediction};

/// A fitted fold model and how its training went.
#[derive(Debug, Clone)]
pub struct TrainedFold {
    pub fold: usize,
    pub model: PatchGcn,
    pub boundaries: BinBoundaries,
    /// Mean per-patient loss for each epoch.
    pub epoch_losses: Vec<f64>,
    pub optimizer_steps: u64,
}

/// Seed of the parameter initialization for `fold`.
pub fn fold_seed(run_seed: u64, fold: usize) -> u64 {
    run_seed
        .wrapping_mul(0xA076_1D64_78BD_642F)
        .wrapping_add(fold as u64 + 1)
}

/// Trains one model on `train` patients. Patients are visited one at a
/// time in a freshly shuffled order each epoch; gradients are summed over
/// `accumulation_steps` patients per optimizer step, and a partial window
/// is flushed at the end of each epoch.
pub fn train_fold(config: &RunConfig, fold: usize, train: &[&PatientData]) -> Result<TrainedFold> {
    config.validate()?;
    let first = train
        .first()
        .ok_or_else(|| Error::Config(format!("fold {fold}: empty training set")))?;
    let mut labels: Vec<_> = train.iter().map(|p| p.label.clone()).collect();
    let boundaries = BinBoundaries::from_training(&labels, config.n_bins)
        .map_err(|e| Error::Config(format!("fold {fold}: {e}")))?;
    assign_bins(&mut labels, &boundaries);

    let model_config = config.model_config(first.graph.feature_dim());
    let mut model = PatchGcn::new(model_config, fold_seed(config.seed, fold))?;
    let mut adam = AdamState::new(config.adam_config(), model.params());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(fold as u64 + 1);

    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut pending = 0;
        for &i in &order {
            let label = &labels[i];
            let bin = label.bin.expect("bins assigned above");
            let loss = model.accumulate_gradients(&train[i].graph, bin, label.censored)?;
            if !loss.is_finite() {
                return Err(Error::Training(format!(
                    "fold {fold}, epoch {}, patient {:?}: loss is {loss}",
                    epoch + 1,
                    label.patient_id
                )));
            }
            total += loss;
            pending += 1;
            if pending == config.accumulation_steps {
                adam.step(model.params_mut(), pending)?;
                pending = 0;
            }
        }
        if pending > 0 {
            adam.step(model.params_mut(), pending)?;
        }
        let mean = total / train.len() as f64;
        log::debug!("fold {fold} epoch {}: mean loss {mean:.6}", epoch + 1);
        epoch_losses.push(mean);
    }
    Ok(TrainedFold {
        fold,
        model,
        boundaries,
        epoch_losses,
        optimizer_steps: adam.step_count(),
    })
}

/// Out-of-fold risk for one validation patient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldPrediction {
    pub fold: usize,
    #[serde(flatten)]
    pub prediction: RiskPrediction,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldEvaluation {
    pub fold: usize,
    pub c_index: f64,
    pub predictions: Vec<FoldPrediction>,
}

pub fn predict_patients(model: &PatchGcn, patients: &[&PatientData]) -> Result<Vec<RiskPrediction>> {
    patients
        .iter()
        .map(|p| {
            Ok(RiskPrediction {
                patient_id: p.label.patient_id.clone(),
                risk: model.risk(&p.graph)?,
                time: p.label.time,
                censored: p.label.censored,
            })
        })
        .collect()
}

pub fn evaluate_fold(model: &PatchGcn, fold: usize, validation: &[&PatientData]) -> Result<FoldEvaluation> {
    let preds = predict_patients(model, validation)?;
    let c_index = concordance_index(&preds).map_err(|e| match e {
        Error::UndefinedMetric(msg) => Error::UndefinedMetric(format!("fold {fold}: {msg}")),
        other => other,
    })?;
    Ok(FoldEvaluation {
        fold,
        c_index,
        predictions: preds
            .into_iter()
            .map(|prediction| FoldPrediction { fold, prediction })
            .collect(),
    })
}

/// Folds and their trained models.
#[derive(Debug, Clone)]
pub struct CvTraining {
    pub split: CohortSplit,
    pub folds: Vec<TrainedFold>,
}

/// Splits the cohort and trains every fold. Folds run in parallel; each
/// is deterministic on its own, so the result does not depend on the
/// schedule.
pub fn train_cross_validation(config: &RunConfig, cohort: &Cohort) -> Result<CvTraining> {
    config.validate()?;
    let split = make_folds(&cohort.patient_ids(), config.folds, config.seed)?;
    let folds = (0..config.folds)
        .into_par_iter()
        .map(|fold| {
            let train: Vec<&PatientData> = split
                .training(fold)
                .into_iter()
                .map(|i| &cohort.patients[i])
                .collect();
            train_fold(config, fold, &train)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CvTraining { split, folds })
}

/// Evaluates each fold model on its own validation patients.
pub fn evaluate_cross_validation(
    split: &CohortSplit,
    models: &[PatchGcn],
    cohort: &Cohort,
) -> Result<Vec<FoldEvaluation>> {
    if models.len() != split.n_folds {
        return Err(Error::Validation(format!(
            "{} models for {} folds",
            models.len(),
            split.n_folds
        )));
    }
    let by_id: std::collections::HashMap<&str, &PatientData> = cohort
        .patients
        .iter()
        .map(|p| (p.label.patient_id.as_str(), p))
        .collect();
    models
        .par_iter()
        .enumerate()
        .map(|(fold, model)| {
            let validation = split
                .validation(fold)
                .into_iter()
                .map(|i| {
                    let id = &split.patient_ids[i];
                    by_id.get(id.as_str()).copied().ok_or_else(|| {
                        Error::Validation(format!("patient {id:?} from the split is not in the cohort"))
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            evaluate_fold(model, fold, &validation)
        })
        .collect()
}

/// Trains and evaluates in one go.
pub fn run_cross_validation(config: &RunConfig, cohort: &Cohort) -> Result<(CvTraining, Vec<FoldEvaluation>)> {
    let training = train_cross_validation(config, cohort)?;
    let models: Vec<PatchGcn> = training.folds.iter().map(|f| f.model.clone()).collect();
    let evaluations = evaluate_cross_validation(&training.split, &models, cohort)?;
    Ok((training, evaluations))
}
