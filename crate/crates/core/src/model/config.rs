use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::likelihood::Emission;
use crate::local::{GpParams, LevelTrendIssmParams};
use crate::networks::RecognitionKind;

fn default_noise_hidden() -> usize {
    16
}

fn default_layers() -> usize {
    1
}

/// Random-effect model attached to every series.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LocalModelSpec {
    /// Independent Gaussian noise with scales from a shared recurrent network.
    RnnNoise {
        #[serde(default = "default_noise_hidden")]
        hidden: usize,
        #[serde(default = "default_layers")]
        layers: usize,
    },
    /// Damped level-trend innovation state-space model.
    LevelTrendIssm {
        #[serde(default)]
        init: LevelTrendIssmParams,
    },
    /// Zero-mean RBF Gaussian process over normalized time.
    GaussianProcess {
        #[serde(default)]
        init: GpParams,
    },
}

impl Default for LocalModelSpec {
    fn default() -> Self {
        LocalModelSpec::RnnNoise {
            hidden: default_noise_hidden(),
            layers: default_layers(),
        }
    }
}

impl LocalModelSpec {
    pub fn name(&self) -> &'static str {
        match self {
            LocalModelSpec::RnnNoise { .. } => "rnn_noise",
            LocalModelSpec::LevelTrendIssm { .. } => "level_trend_issm",
            LocalModelSpec::GaussianProcess { .. } => "gaussian_process",
        }
    }
}

fn default_num_factors() -> usize {
    10
}

fn default_hidden() -> usize {
    50
}

fn default_recognition() -> RecognitionKind {
    RecognitionKind::BiLstm
}

fn default_recognition_hidden() -> usize {
    16
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Number of global factors `K`; zero gives a purely local model.
    #[serde(default = "default_num_factors")]
    pub num_factors: usize,
    /// Hidden units of the global factor LSTM.
    #[serde(default = "default_hidden")]
    pub hidden: usize,
    #[serde(default = "default_layers")]
    pub layers: usize,
    #[serde(default)]
    pub local: LocalModelSpec,
    #[serde(default)]
    pub emission: Emission,
    /// Recognition network used for non-Gaussian emissions.
    #[serde(default = "default_recognition")]
    pub recognition: RecognitionKind,
    #[serde(default = "default_recognition_hidden")]
    pub recognition_hidden: usize,
    /// Append the position within the training span (scaled to `[0, 1]`) to
    /// the calendar covariates.
    #[serde(default)]
    pub age_feature: bool,
    /// Divide each Gaussian series by its mean absolute training value.
    #[serde(default)]
    pub mean_scaling: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            num_factors: default_num_factors(),
            hidden: default_hidden(),
            layers: default_layers(),
            local: LocalModelSpec::default(),
            emission: Emission::default(),
            recognition: default_recognition(),
            recognition_hidden: default_recognition_hidden(),
            age_feature: false,
            mean_scaling: false,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_factors > 0 && (self.hidden == 0 || self.layers == 0) {
            return Err(Error::invalid("global network needs hidden >= 1 and layers >= 1"));
        }
        match &self.local {
            LocalModelSpec::RnnNoise { hidden, layers } if *hidden == 0 || *layers == 0 => {
                return Err(Error::invalid("noise network needs hidden >= 1 and layers >= 1"));
            }
            LocalModelSpec::LevelTrendIssm { init } => init.validate()?,
            LocalModelSpec::GaussianProcess { init } => init.validate()?,
            _ => {}
        }
        if self.emission != Emission::Gaussian {
            if self.mean_scaling {
                return Err(Error::invalid("mean_scaling is only available for Gaussian emission"));
            }
            if self.recognition != RecognitionKind::PointMass && self.recognition_hidden == 0 {
                return Err(Error::invalid("recognition_hidden must be at least 1"));
            }
        }
        Ok(())
    }
}
