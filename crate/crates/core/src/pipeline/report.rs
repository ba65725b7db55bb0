use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsutil::atomic_write;
use crate::model::{layer_gradcheck, model_gradcheck};
use crate::nn::gradcheck::{primitive_gradchecks, GradcheckReport};
use crate::pipeline::{FoldEvaluation, FoldPrediction, RunConfig};
use crate::survival::RiskPrediction;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldMetric {
    pub fold: usize,
    pub c_index: f64,
    pub n_val: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub per_fold: Vec<FoldMetric>,
    pub mean_c_index: f64,
    /// Sample standard deviation across folds.
    pub std_c_index: f64,
    pub config_echo: RunConfig,
    pub seed: u64,
}

impl Metrics {
    pub fn from_evaluations(config: &RunConfig, evaluations: &[FoldEvaluation]) -> Result<Self> {
        if evaluations.is_empty() {
            return Err(Error::Validation("no folds were evaluated".into()));
        }
        let per_fold: Vec<FoldMetric> = evaluations
            .iter()
            .map(|e| FoldMetric {
                fold: e.fold,
                c_index: e.c_index,
                n_val: e.predictions.len(),
            })
            .collect();
        let (mean, std) = mean_and_sample_std(per_fold.iter().map(|f| f.c_index));
        Ok(Self {
            per_fold,
            mean_c_index: mean,
            std_c_index: std,
            config_echo: config.clone(),
            seed: config.seed,
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(self)?;
        bytes.push(b'\n');
        atomic_write(path, &bytes)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_slice(&text)?)
    }
}

/// Mean and `n - 1` standard deviation; the deviation is 0 for one value.
pub fn mean_and_sample_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    if n < 2.0 {
        return (mean, 0.0);
    }
    let ss: f64 = values.map(|v| (v - mean).powi(2)).sum();
    (mean, (ss / (n - 1.0)).sqrt())
}

#[derive(Serialize, Deserialize)]
struct PredictionRow {
    patient_id: String,
    fold: usize,
    risk: f64,
    time: f64,
    censored: u8,
}

/// `patient_id,fold,risk,time,censored`
pub fn write_predictions(preds: &[FoldPrediction], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    if preds.is_empty() {
        w.write_record(["patient_id", "fold", "risk", "time", "censored"])?;
    }
    for p in preds {
        w.serialize(PredictionRow {
            patient_id: p.prediction.patient_id.clone(),
            fold: p.fold,
            risk: p.prediction.risk,
            time: p.prediction.time,
            censored: u8::from(p.prediction.censored),
        })?;
    }
    let bytes = w.into_inner().map_err(|e| csv::Error::from(e.into_error()))?;
    atomic_write(path, &bytes)
}

pub fn read_predictions(path: impl AsRef<Path>) -> Result<Vec<FoldPrediction>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::Reader::from_reader(file);
    crate::ingest::check_csv_header(
        reader.headers()?,
        &["patient_id", "fold", "risk", "time", "censored"],
        path,
    )?;
    reader
        .deserialize::<PredictionRow>()
        .map(|row| {
            let row = row?;
            if row.censored > 1 {
                return Err(Error::Validation(format!(
                    "patient {:?}: censored must be 0 or 1",
                    row.patient_id
                )));
            }
            if !row.risk.is_finite() {
                return Err(Error::Validation(format!(
                    "patient {:?}: risk must be finite",
                    row.patient_id
                )));
            }
            Ok(FoldPrediction {
                fold: row.fold,
                prediction: RiskPrediction {
                    patient_id: row.patient_id,
                    risk: row.risk,
                    time: row.time,
                    censored: row.censored == 1,
                },
            })
        })
        .collect()
}

pub const PRIMITIVE_TOLERANCE: f64 = 1e-6;
pub const MODEL_TOLERANCE: f64 = 1e-4;

/// All finite-difference checks over a range of seeds, merged per check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckSuite {
    pub seeds: u64,
    pub primitives: Vec<GradcheckReport>,
    pub model: Vec<GradcheckReport>,
    pub max_primitive_error: f64,
    pub max_model_error: f64,
    pub passed: bool,
}

pub fn run_gradcheck_suite(seeds: u64) -> Result<GradcheckSuite> {
    if seeds == 0 {
        return Err(Error::Config("gradcheck needs at least one seed".into()));
    }
    let per_seed = (0..seeds)
        .into_par_iter()
        .map(|seed| {
            let primitives = primitive_gradchecks(seed)?;
            let model = vec![
                model_gradcheck(seed, false)?,
                model_gradcheck(seed, true)?,
                layer_gradcheck(seed)?,
            ];
            Ok((primitives, model))
        })
        .collect::<Result<Vec<_>>>()?;

    let merge = |lists: Vec<Vec<GradcheckReport>>| {
        let mut merged: Vec<GradcheckReport> = Vec::new();
        for list in lists {
            for r in list {
                match merged.iter_mut().find(|m| m.name == r.name) {
                    Some(m) => m.merge(&r),
                    None => merged.push(r),
                }
            }
        }
        merged
    };
    let (prim, model): (Vec<_>, Vec<_>) = per_seed.into_iter().unzip();
    let primitives = merge(prim);
    let model = merge(model);
    let max = |v: &[GradcheckReport]| v.iter().map(|r| r.max_rel_error).fold(0.0, f64::max);
    let passed = primitives.iter().all(|r| r.passes(PRIMITIVE_TOLERANCE))
        && model.iter().all(|r| r.passes(MODEL_TOLERANCE));
    Ok(GradcheckSuite {
        seeds,
        max_primitive_error: max(&primitives),
        max_model_error: max(&model),
        primitives,
        model,
        passed,
    })
}
