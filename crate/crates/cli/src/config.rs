use std::fs;
use std::path::{Path, PathBuf};

use deepfactor::data::SyntheticSpec;
use deepfactor::forecast::{DEFAULT_QUANTILES, DEFAULT_SAMPLES};
use deepfactor::model::ModelConfig;
use deepfactor::training::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

/// Where the observations come from: a CSV file or a synthetic generator.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub path: Option<PathBuf>,
    pub synthetic: Option<SyntheticSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForecastSection {
    pub horizon: usize,
    pub num_samples: usize,
    /// Must include 0.1, 0.5 and 0.9, which the forecast file reports.
    pub quantiles: Vec<f64>,
}

impl Default for ForecastSection {
    fn default() -> Self {
        Self {
            horizon: 24,
            num_samples: DEFAULT_SAMPLES,
            quantiles: DEFAULT_QUANTILES.to_vec(),
        }
    }
}

/// Settings of the point-forecast comparison between the factor structure
/// and the RNN forecaster.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EfficiencySection {
    pub train_sizes: Vec<usize>,
    /// Steps after the training window scored by MAPE.
    pub holdout: usize,
    pub repeats: usize,
    pub num_factors: usize,
    pub hidden: usize,
    pub layers: usize,
    pub age_feature: bool,
}

impl Default for EfficiencySection {
    fn default() -> Self {
        Self {
            train_sizes: vec![24, 72, 168],
            holdout: 24,
            repeats: 5,
            num_factors: 4,
            hidden: 16,
            layers: 1,
            age_feature: false,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DataSection,
    pub forecast: ForecastSection,
    pub efficiency: EfficiencySection,
}

impl RunConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    /// The file named by `path`, or defaults when no file is given.
    pub fn load_or_default(path: Option<&Path>) -> CliResult<Self> {
        path.map(Self::load).transpose().map(Option::unwrap_or_default)
    }

    pub fn validate(&self) -> CliResult<()> {
        self.model.validate()?;
        self.train.validate()?;
        if let Some(p) = &self.data.path {
            if !p.exists() {
                return Err(CliError::Config(format!("data path {} does not exist", p.display())));
            }
        }
        if let Some(s) = &self.data.synthetic {
            s.validate()?;
        }
        let f = &self.forecast;
        if f.horizon == 0 || f.num_samples == 0 {
            return Err(CliError::Config("forecast horizon and num_samples must be at least 1".into()));
        }
        for level in DEFAULT_QUANTILES {
            if !f.quantiles.iter().any(|q| (q - level).abs() < 1e-12) {
                return Err(CliError::Config(format!("forecast quantiles must include {level}")));
            }
        }
        let e = &self.efficiency;
        if e.train_sizes.is_empty() || e.train_sizes.contains(&0) {
            return Err(CliError::Config("efficiency train_sizes must be non-empty and positive".into()));
        }
        if e.holdout == 0 || e.repeats == 0 || e.num_factors == 0 || e.hidden == 0 || e.layers == 0 {
            return Err(CliError::Config(
                "efficiency holdout, repeats, num_factors, hidden and layers must be at least 1".into(),
            ));
        }
        Ok(())
    }
}
