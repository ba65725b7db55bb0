use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::DEFAULT_PATCH_SIZE;
use crate::model::ModelConfig;
use crate::nn::AdamConfig;

/// Everything a run needs. Loaded from JSON; any field can then be
/// overridden by name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub k: usize,
    pub n_layers: usize,
    pub d_model: usize,
    pub d_attn: usize,
    pub n_bins: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub accumulation_steps: usize,
    pub folds: usize,
    pub patch_size: u32,
    pub gated_attention: bool,
    pub include_input_in_dense: bool,
    /// Pure attention-MIL baseline: no message passing.
    pub zero_layers: bool,
    /// Build edges by k-NN in feature space instead of slide space.
    pub feature_space_edges: bool,
    /// Directory of `<patient_id>.fmat` files.
    pub features_dir: Option<PathBuf>,
    /// Directory of `<patient_id>.csv` coordinate files.
    pub coords_dir: Option<PathBuf>,
    /// `patient_id,time,censored` CSV.
    pub labels: Option<PathBuf>,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            k: 8,
            n_layers: 4,
            d_model: 128,
            d_attn: 128,
            n_bins: 4,
            learning_rate: 2e-4,
            weight_decay: 1e-5,
            epochs: 20,
            accumulation_steps: 32,
            folds: 5,
            patch_size: DEFAULT_PATCH_SIZE,
            gated_attention: false,
            include_input_in_dense: true,
            zero_layers: false,
            feature_space_edges: false,
            features_dir: None,
            coords_dir: None,
            labels: None,
            output_dir: PathBuf::from("out"),
        }
    }
}

impl RunConfig {
    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let config: Self = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    /// Sets `key` from a command-line string. The value is read as JSON
    /// when it parses as JSON and as a plain string otherwise.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let mut object = match serde_json::to_value(&*self)? {
            serde_json::Value::Object(map) => map,
            _ => unreachable!("RunConfig serializes to an object"),
        };
        if !object.contains_key(key) {
            return Err(Error::Config(format!("unknown configuration field {key:?}")));
        }
        let parsed = serde_json::from_str(value)
            .unwrap_or_else(|_| serde_json::Value::String(value.to_string()));
        object.insert(key.to_string(), parsed);
        *self = serde_json::from_value(serde_json::Value::Object(object))
            .map_err(|e| Error::Config(format!("field {key:?}: {e}")))?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("k", self.k),
            ("d_model", self.d_model),
            ("d_attn", self.d_attn),
            ("n_bins", self.n_bins),
            ("accumulation_steps", self.accumulation_steps),
            ("patch_size", self.patch_size as usize),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("field {name:?} must be >= 1")));
            }
        }
        if self.folds < 2 {
            return Err(Error::Config(format!(
                "field \"folds\" must be >= 2, got {}",
                self.folds
            )));
        }
        for (name, v) in [
            ("learning_rate", self.learning_rate),
            ("weight_decay", self.weight_decay),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!(
                    "field {name:?} must be a non-negative number, got {v}"
                )));
            }
        }
        Ok(())
    }

    pub fn model_config(&self, d_feat: usize) -> ModelConfig {
        ModelConfig {
            d_feat,
            d_model: self.d_model,
            d_attn: self.d_attn,
            n_layers: if self.zero_layers { 0 } else { self.n_layers },
            n_bins: self.n_bins,
            gated_attention: self.gated_attention,
            include_input_in_dense: self.include_input_in_dense,
            ..ModelConfig::default()
        }
    }

    pub fn adam_config(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            weight_decay: self.weight_decay,
            ..AdamConfig::default()
        }
    }

    /// Fills in `features/`, `coords/` and `labels.csv` under `dir` for
    /// any path not already set.
    pub fn with_data_dir(mut self, dir: impl AsRef<Path>) -> Self {
        let dir = dir.as_ref();
        self.features_dir.get_or_insert_with(|| dir.join("features"));
        self.coords_dir.get_or_insert_with(|| dir.join("coords"));
        self.labels.get_or_insert_with(|| dir.join("labels.csv"));
        self
    }

    pub(crate) fn require<'a>(&self, field: &str, value: &'a Option<PathBuf>) -> Result<&'a Path> {
        value
            .as_deref()
            .ok_or_else(|| Error::Config(format!("field {field:?} is required")))
    }
}
