//! Synthetic cohorts whose risk depends only on spatial context.
//!
//! Every patient is a square grid of patches. Each patch belongs to one
//! phenotype and its feature vector is the phenotype centroid plus Gaussian
//! noise. Phenotype 0 ("A") and phenotype 1 ("B") occur in equal numbers in
//! high- and low-risk patients; the only difference is placement. High-risk
//! patients have every B patch touching an A patch (8-neighborhood), low-risk
//! patients keep all B patches at Chebyshev distance >= 3 from every A patch.
//! A bag-of-patches model therefore sees identically distributed inputs in
//! both classes.

use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{
    write_labels, FeatureMatrix, PatchCoord, PatchCoordinateSet, SurvivalLabel, DEFAULT_PATCH_SIZE,
};

pub const PHENOTYPE_A: u8 = 0;
pub const PHENOTYPE_B: u8 = 1;

const HIGH_RISK_MEAN_MONTHS: f64 = 12.0;
const LOW_RISK_MEAN_MONTHS: f64 = 48.0;
const CENSOR_PROBABILITY: f64 = 0.25;
const LOW_RISK_MIN_DISTANCE: usize = 3;
const MAX_PLACEMENT_ATTEMPTS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContextRule {
    /// High risk: B patches adjacent to A patches. Low risk: B patches at
    /// Chebyshev distance >= 3 from all A patches.
    AdjacentAB,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_patients: usize,
    pub grid_side: usize,
    pub n_phenotypes: usize,
    pub feature_dim: usize,
    pub noise_sigma: f64,
    pub context_rule: ContextRule,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_patients: 200,
            grid_side: 8,
            n_phenotypes: 4,
            feature_dim: 64,
            noise_sigma: 0.1,
            context_rule: ContextRule::AdjacentAB,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_phenotypes < 2 {
            return Err(Error::Config("n_phenotypes must be >= 2".into()));
        }
        if self.grid_side < 3 {
            return Err(Error::Config("grid_side must be >= 3".into()));
        }
        if self.grid_side <= LOW_RISK_MIN_DISTANCE {
            return Err(Error::Config(format!(
                "a {0}x{0} grid cannot separate A and B by Chebyshev distance {LOW_RISK_MIN_DISTANCE}",
                self.grid_side
            )));
        }
        if !(self.noise_sigma > 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::Config("noise_sigma must be positive".into()));
        }
        if self.feature_dim == 0 {
            return Err(Error::Config("feature_dim must be positive".into()));
        }
        if self.n_patients == 0 {
            return Err(Error::Config("n_patients must be positive".into()));
        }
        Ok(())
    }

    /// Upper bound on the number of A (and of B) patches per patient.
    pub fn max_motif_count(&self) -> usize {
        (self.grid_side * self.grid_side / 16).max(1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticPatient {
    pub coords: PatchCoordinateSet,
    pub features: FeatureMatrix,
    pub label: SurvivalLabel,
    pub high_risk: bool,
    /// Phenotype per patch, row-major.
    pub phenotypes: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCohort {
    pub spec: SyntheticSpec,
    pub centroids: Vec<Vec<f64>>,
    pub patients: Vec<SyntheticPatient>,
}

pub fn generate_synthetic_cohort(spec: &SyntheticSpec) -> Result<SyntheticCohort> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let centroids = phenotype_centroids(spec, &mut rng);

    let n_high = spec.n_patients / 2;
    let mut high_risk: Vec<bool> = (0..spec.n_patients).map(|i| i < n_high).collect();
    high_risk.shuffle(&mut rng);

    let patients = high_risk
        .par_iter()
        .enumerate()
        .map(|(i, &high)| {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            rng.set_stream(i as u64 + 1);
            generate_patient(spec, &centroids, i, high, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(SyntheticCohort {
        spec: spec.clone(),
        centroids,
        patients,
    })
}

/// Unit-norm random directions, one per phenotype. With two phenotypes the
/// filler patches use a zero centroid (pure noise background).
fn phenotype_centroids(spec: &SyntheticSpec, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    (0..spec.n_phenotypes)
        .map(|_| loop {
            let v: Vec<f64> = (0..spec.feature_dim).map(|_| normal.sample(rng)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-12 {
                break v.into_iter().map(|x| x / norm).collect();
            }
        })
        .collect()
}

fn generate_patient(
    spec: &SyntheticSpec,
    centroids: &[Vec<f64>],
    index: usize,
    high_risk: bool,
    rng: &mut ChaCha8Rng,
) -> Result<SyntheticPatient> {
    let side = spec.grid_side;
    let n_cells = side * side;

    // Composition first, independent of the risk class.
    let motif_count = rng.random_range(1..=spec.max_motif_count());
    let filler: Vec<Option<u8>> = (0..n_cells - 2 * motif_count)
        .map(|_| {
            (spec.n_phenotypes > 2).then(|| rng.random_range(2..spec.n_phenotypes) as u8)
        })
        .collect();

    let (a_cells, b_cells) = place_motif(side, motif_count, high_risk, rng).ok_or_else(|| {
        Error::Config(format!(
            "could not place {motif_count} A/B patches on a {side}x{side} grid"
        ))
    })?;

    let mut phenotypes = vec![u8::MAX; n_cells];
    for &c in &a_cells {
        phenotypes[c] = PHENOTYPE_A;
    }
    for &c in &b_cells {
        phenotypes[c] = PHENOTYPE_B;
    }
    let mut filler = filler.into_iter();
    let mut background = vec![false; n_cells];
    for (cell, p) in phenotypes.iter_mut().enumerate() {
        if *p == u8::MAX {
            match filler.next().expect("filler count matches free cells") {
                Some(f) => *p = f,
                None => {
                    *p = 2;
                    background[cell] = true;
                }
            }
        }
    }

    let normal = Normal::new(0.0, spec.noise_sigma).expect("positive sigma");
    let mut data = Vec::with_capacity(n_cells * spec.feature_dim);
    for (cell, &p) in phenotypes.iter().enumerate() {
        for j in 0..spec.feature_dim {
            let centre = if background[cell] {
                0.0
            } else {
                centroids[p as usize][j]
            };
            data.push((centre + normal.sample(rng)) as f32);
        }
    }
    let features = FeatureMatrix::new(n_cells, spec.feature_dim, data)?;

    let patient_id = format!("synth-{index:04}");
    let slide_id = format!("{patient_id}-s0");
    let entries = (0..n_cells)
        .map(|cell| PatchCoord {
            patch_id: cell as u64,
            slide_id: slide_id.clone(),
            x: (cell % side) as u64 * u64::from(DEFAULT_PATCH_SIZE),
            y: (cell / side) as u64 * u64::from(DEFAULT_PATCH_SIZE),
        })
        .collect();
    let coords = PatchCoordinateSet::new(DEFAULT_PATCH_SIZE, entries)?;

    let mean = if high_risk {
        HIGH_RISK_MEAN_MONTHS
    } else {
        LOW_RISK_MEAN_MONTHS
    };
    let event_time = Exp::new(1.0 / mean).expect("positive rate").sample(rng);
    let censored = rng.random::<f64>() < CENSOR_PROBABILITY;
    let time = if censored {
        rng.random::<f64>() * event_time
    } else {
        event_time
    };
    let label = SurvivalLabel::new(patient_id, time, censored)?;

    Ok(SyntheticPatient {
        coords,
        features,
        label,
        high_risk,
        phenotypes,
    })
}

fn chebyshev(side: usize, a: usize, b: usize) -> usize {
    let (ax, ay) = (a % side, a / side);
    let (bx, by) = (b % side, b / side);
    ax.abs_diff(bx).max(ay.abs_diff(by))
}

/// Returns A cells and B cells satisfying the placement rule for the class.
fn place_motif(
    side: usize,
    count: usize,
    high_risk: bool,
    rng: &mut ChaCha8Rng,
) -> Option<(Vec<usize>, Vec<usize>)> {
    let cells: Vec<usize> = (0..side * side).collect();
    for _ in 0..MAX_PLACEMENT_ATTEMPTS {
        let a_cells: Vec<usize> = cells.choose_multiple(rng, count).copied().collect();
        let candidates: Vec<usize> = cells
            .iter()
            .copied()
            .filter(|c| !a_cells.contains(c))
            .filter(|&c| {
                let nearest = a_cells.iter().map(|&a| chebyshev(side, a, c)).min().unwrap();
                if high_risk {
                    nearest == 1
                } else {
                    nearest >= LOW_RISK_MIN_DISTANCE
                }
            })
            .collect();
        if candidates.len() >= count {
            let b_cells = candidates.choose_multiple(rng, count).copied().collect();
            return Some((a_cells, b_cells));
        }
    }
    None
}

impl SyntheticCohort {
    pub fn labels(&self) -> Vec<SurvivalLabel> {
        self.patients.iter().map(|p| p.label.clone()).collect()
    }

    /// Writes `labels.csv`, `features/<id>.fmat`, `coords/<id>.csv` and
    /// `truth.csv` (risk class per patient) under `dir`.
    pub fn write_to_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        let features_dir = dir.join("features");
        let coords_dir = dir.join("coords");
        for d in [dir, &features_dir, &coords_dir] {
            std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
        }
        for p in &self.patients {
            let id = &p.label.patient_id;
            p.features.write(features_dir.join(format!("{id}.fmat")))?;
            p.coords.write_csv(coords_dir.join(format!("{id}.csv")))?;
        }
        write_labels(&self.labels(), dir.join("labels.csv"))?;

        let truth_path = dir.join("truth.csv");
        let mut truth = csv::Writer::from_path(&truth_path)?;
        truth.write_record(["patient_id", "high_risk"])?;
        for p in &self.patients {
            truth.write_record([p.label.patient_id.as_str(), if p.high_risk { "1" } else { "0" }])?;
        }
        truth.flush().map_err(|e| Error::io(&truth_path, e))?;

        let spec_path = dir.join("synthetic_spec.json");
        std::fs::write(&spec_path, serde_json::to_string_pretty(&self.spec)?)
            .map_err(|e| Error::io(&spec_path, e))
    }
}
