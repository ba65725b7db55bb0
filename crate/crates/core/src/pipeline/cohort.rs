use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::graph::{build_feature_knn_graph, build_knn_graph, KnnConfig, WsiGraph};
use crate::ingest::{read_labels, FeatureMatrix, PatchCoordinateSet, SurvivalLabel, SyntheticCohort};
use crate::pipeline::RunConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct PatientData {
    pub graph: WsiGraph,
    pub label: SurvivalLabel,
}

/// Graphs and labels for every patient, in label-file order.
#[derive(Debug, Clone, PartialEq)]
pub struct Cohort {
    pub patients: Vec<PatientData>,
}

impl Cohort {
    pub fn len(&self) -> usize {
        self.patients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patients.is_empty()
    }

    pub fn patient_ids(&self) -> Vec<String> {
        self.patients.iter().map(|p| p.label.patient_id.clone()).collect()
    }

    pub fn feature_dim(&self) -> Result<usize> {
        let dim = self
            .patients
            .first()
            .ok_or_else(|| Error::Validation("cohort is empty".into()))?
            .graph
            .feature_dim();
        if let Some(p) = self.patients.iter().find(|p| p.graph.feature_dim() != dim) {
            return Err(Error::Validation(format!(
                "patient {:?} has feature dimension {}, expected {dim}",
                p.label.patient_id,
                p.graph.feature_dim()
            )));
        }
        Ok(dim)
    }

    /// Reads labels, features and coordinates from the configured paths
    /// and builds one graph per patient.
    pub fn load(config: &RunConfig) -> Result<Self> {
        let labels = read_labels(config.require("labels", &config.labels)?)?;
        let features_dir = config.require("features_dir", &config.features_dir)?;
        let coords_dir = config.require("coords_dir", &config.coords_dir)?;
        let patients = labels
            .into_par_iter()
            .map(|label| {
                let id = &label.patient_id;
                let features = FeatureMatrix::read(features_dir.join(format!("{id}.fmat")))?;
                let coords = PatchCoordinateSet::read_csv(
                    coords_dir.join(format!("{id}.csv")),
                    config.patch_size,
                )?;
                let graph = build_graph(config, id, &coords, features)?;
                Ok(PatientData { graph, label })
            })
            .collect::<Result<Vec<_>>>()?;
        let cohort = Self { patients };
        cohort.feature_dim()?;
        Ok(cohort)
    }

    pub fn from_synthetic(synthetic: &SyntheticCohort, config: &RunConfig) -> Result<Self> {
        let patients = synthetic
            .patients
            .par_iter()
            .map(|p| {
                let graph = build_graph(
                    config,
                    &p.label.patient_id,
                    &p.coords,
                    p.features.clone(),
                )?;
                Ok(PatientData {
                    graph,
                    label: p.label.clone(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { patients })
    }
}

pub fn build_graph(
    config: &RunConfig,
    patient_id: &str,
    coords: &PatchCoordinateSet,
    features: FeatureMatrix,
) -> Result<WsiGraph> {
    let knn = KnnConfig { k: config.k };
    if config.feature_space_edges {
        build_feature_knn_graph(patient_id, coords, features, &knn)
    } else {
        build_knn_graph(patient_id, coords, features, &knn)
    }
}
