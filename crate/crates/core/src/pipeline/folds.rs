use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsutil::atomic_write;

/// Fold index per patient, aligned with the patient order it was built
/// from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CohortSplit {
    pub n_folds: usize,
    pub patient_ids: Vec<String>,
    pub assignment: Vec<usize>,
}

impl CohortSplit {
    pub fn fold_of(&self, patient_id: &str) -> Option<usize> {
        self.patient_ids
            .iter()
            .position(|p| p == patient_id)
            .map(|i| self.assignment[i])
    }

    /// Positions (into `patient_ids`) of the validation patients of `fold`.
    pub fn validation(&self, fold: usize) -> Vec<usize> {
        (0..self.assignment.len())
            .filter(|&i| self.assignment[i] == fold)
            .collect()
    }

    /// Positions of everyone outside `fold`.
    pub fn training(&self, fold: usize) -> Vec<usize> {
        (0..self.assignment.len())
            .filter(|&i| self.assignment[i] != fold)
            .collect()
    }

    pub fn as_map(&self) -> BTreeMap<&str, usize> {
        self.patient_ids
            .iter()
            .map(String::as_str)
            .zip(self.assignment.iter().copied())
            .collect()
    }

    /// `patient_id,fold`
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["patient_id", "fold"])?;
        for (p, f) in self.patient_ids.iter().zip(&self.assignment) {
            w.write_record([p.as_str(), &f.to_string()])?;
        }
        let bytes = w.into_inner().map_err(|e| csv::Error::from(e.into_error()))?;
        atomic_write(path, &bytes)
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut reader = csv::Reader::from_reader(file);
        crate::ingest::check_csv_header(reader.headers()?, &["patient_id", "fold"], path)?;
        let mut patient_ids = Vec::new();
        let mut assignment = Vec::new();
        for row in reader.deserialize::<(String, usize)>() {
            let (p, f) = row?;
            patient_ids.push(p);
            assignment.push(f);
        }
        let n_folds = assignment.iter().max().map_or(0, |m| m + 1);
        Ok(Self {
            n_folds,
            patient_ids,
            assignment,
        })
    }
}

/// Seeded shuffle, then round-robin assignment.
pub fn make_folds(patient_ids: &[String], folds: usize, seed: u64) -> Result<CohortSplit> {
    if folds < 2 {
        return Err(Error::Config(format!("folds must be >= 2, got {folds}")));
    }
    if patient_ids.len() < folds {
        return Err(Error::Validation(format!(
            "{} patients cannot fill {folds} folds",
            patient_ids.len()
        )));
    }
    let mut order: Vec<usize> = (0..patient_ids.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut assignment = vec![0; patient_ids.len()];
    for (slot, &i) in order.iter().enumerate() {
        assignment[i] = slot % folds;
    }
    Ok(CohortSplit {
        n_folds: folds,
        patient_ids: patient_ids.to_vec(),
        assignment,
    })
}
