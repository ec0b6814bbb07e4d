//! The deep factor model: shared global factors, per-series embeddings, local
//! random-effect parameters and (for non-Gaussian emissions) a recognition
//! network, all held in one [`ParamStore`].

mod checkpoint;
mod config;

use chrono::NaiveDateTime;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, ParamRecord, CHECKPOINT_FORMAT};
pub use config::{LocalModelSpec, ModelConfig};

use crate::autodiff::{Matrix, NodeId, ParamId, ParamStore, Tape};
use crate::data::{Series, TimeFeatures, TimeSeriesDataset, TIME_FEATURE_DIM};
use crate::error::{Error, Result};
use crate::likelihood::Emission;
use crate::local::{GpParams, LevelTrendIssmParams, GP_RAW_LEN, ISSM_RAW_LEN};
use crate::networks::{Embeddings, GlobalFactorNetwork, NoiseNetwork, RecognitionKind, RecognitionNetwork};

/// Calendar span the model was fitted on. Anchors the age feature and the GP
/// time axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingSpan {
    pub start: NaiveDateTime,
    pub len: usize,
}

impl TrainingSpan {
    fn scale(&self) -> f64 {
        if self.len > 1 {
            1.0 / (self.len - 1) as f64
        } else {
            1.0
        }
    }

    /// Hours from the span start to `t`.
    pub fn offset(&self, t: &NaiveDateTime) -> i64 {
        (*t - self.start).num_hours()
    }

    /// Normalized positions of `len` hourly steps starting at `start`.
    pub fn positions(&self, start: &NaiveDateTime, len: usize) -> Vec<f64> {
        let off = self.offset(start);
        let s = self.scale();
        (0..len).map(|t| (off + t as i64) as f64 * s).collect()
    }
}

#[derive(Clone, Debug)]
pub(crate) enum LocalParams {
    RnnNoise(NoiseNetwork),
    Issm(Vec<ParamId>),
    Gp(Vec<ParamId>),
}

#[derive(Clone, Debug)]
pub struct DeepFactorModel {
    config: ModelConfig,
    store: ParamStore,
    series: Vec<String>,
    scales: Vec<f64>,
    span: TrainingSpan,
    global: Option<GlobalFactorNetwork>,
    embeddings: Embeddings,
    local: LocalParams,
    recognition: Option<RecognitionNetwork>,
}

impl DeepFactorModel {
    /// Fresh model for the series of `dataset`, which must share one hourly
    /// span. Initialization is fully determined by `seed`.
    pub fn new(config: ModelConfig, dataset: &TimeSeriesDataset, seed: u64) -> Result<Self> {
        let (start, len) = dataset.aligned_span()?;
        let scales = if config.mean_scaling {
            dataset
                .series()
                .iter()
                .map(|s| {
                    let m = s.target.iter().map(|v| v.abs()).sum::<f64>() / s.len() as f64;
                    if m > 0.0 {
                        m
                    } else {
                        1.0
                    }
                })
                .collect()
        } else {
            vec![1.0; dataset.len()]
        };
        if config.emission == Emission::Poisson {
            for s in dataset.series() {
                crate::likelihood::validate_counts(&s.target)
                    .map_err(|e| Error::Data(format!("series {:?}: {e}", s.id)))?;
            }
        }
        Self::build(config, dataset.ids(), scales, TrainingSpan { start, len }, seed)
    }

    fn build(config: ModelConfig, series: Vec<String>, scales: Vec<f64>, span: TrainingSpan, seed: u64) -> Result<Self> {
        config.validate()?;
        if series.is_empty() {
            return Err(Error::invalid("a model needs at least one series"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let feature_dim = TIME_FEATURE_DIM + usize::from(config.age_feature);
        let k = config.num_factors;
        let global = (k > 0).then(|| GlobalFactorNetwork::new(&mut store, feature_dim, config.hidden, config.layers, k, &mut rng));
        let embeddings = if k > 0 {
            Embeddings::new(&mut store, &series, k, &mut rng)
        } else {
            Embeddings::default()
        };
        let local = match &config.local {
            LocalModelSpec::RnnNoise { hidden, layers } => {
                LocalParams::RnnNoise(NoiseNetwork::new(&mut store, feature_dim + k, *hidden, *layers, &mut rng))
            }
            LocalModelSpec::LevelTrendIssm { init } => {
                let raw = init.to_raw();
                LocalParams::Issm(
                    series
                        .iter()
                        .map(|id| store.add(format!("issm.{id}"), Matrix::from_column_slice(ISSM_RAW_LEN, 1, &raw)))
                        .collect(),
                )
            }
            LocalModelSpec::GaussianProcess { init } => {
                let raw = init.to_raw();
                LocalParams::Gp(
                    series
                        .iter()
                        .map(|id| store.add(format!("gp.{id}"), Matrix::from_column_slice(GP_RAW_LEN, 1, &raw)))
                        .collect(),
                )
            }
        };
        let recognition = (config.emission != Emission::Gaussian)
            .then(|| RecognitionNetwork::new(&mut store, config.recognition, config.recognition_hidden, &mut rng));
        Ok(Self {
            config,
            store,
            series,
            scales,
            span,
            global,
            embeddings,
            local,
            recognition,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn series_ids(&self) -> &[String] {
        &self.series
    }

    pub fn num_series(&self) -> usize {
        self.series.len()
    }

    pub fn scales(&self) -> &[f64] {
        &self.scales
    }

    pub fn span(&self) -> TrainingSpan {
        self.span
    }

    pub fn emission(&self) -> Emission {
        self.config.emission
    }

    pub fn num_factors(&self) -> usize {
        self.config.num_factors
    }

    pub fn recognition_kind(&self) -> RecognitionKind {
        self.recognition
            .as_ref()
            .map(|r| r.kind())
            .unwrap_or(RecognitionKind::PointMass)
    }

    pub(crate) fn recognition(&self) -> Option<&RecognitionNetwork> {
        self.recognition.as_ref()
    }

    pub(crate) fn local(&self) -> &LocalParams {
        &self.local
    }

    pub fn series_index(&self, id: &str) -> Result<usize> {
        self.series
            .iter()
            .position(|s| s == id)
            .ok_or_else(|| Error::UnknownSeries(id.to_string()))
    }

    pub fn feature_dim(&self) -> usize {
        TIME_FEATURE_DIM + usize::from(self.config.age_feature)
    }

    /// Covariate columns (`d x len`) for `len` hourly steps from `start`.
    pub fn features(&self, start: &NaiveDateTime, len: usize) -> Matrix {
        let cal = TimeFeatures::matrix(start, len);
        if !self.config.age_feature {
            return cal;
        }
        let age = self.span.positions(start, len);
        let mut m = cal.insert_row(TIME_FEATURE_DIM, 0.0);
        for (t, a) in age.iter().enumerate() {
            m[(TIME_FEATURE_DIM, t)] = *a;
        }
        m
    }

    /// Factor matrix `G` (`T x K`) on `tape`, or `None` for a purely local
    /// model.
    pub fn global_factors_tape(&self, tape: &mut Tape, xs: NodeId) -> Result<Option<NodeId>> {
        match &self.global {
            Some(g) => g.forward(tape, &self.store, xs).map(Some),
            None => Ok(None),
        }
    }

    /// Untaped factor matrix for `len` steps from `start` (`len x K`).
    pub fn global_factors(&self, start: &NaiveDateTime, len: usize) -> Result<Matrix> {
        self.global_factors_for(&self.features(start, len))
    }

    /// Untaped factor matrix for explicit covariate columns.
    pub fn global_factors_for(&self, xs: &Matrix) -> Result<Matrix> {
        if xs.nrows() != self.feature_dim() {
            return Err(Error::invalid(format!(
                "covariates have {} rows, model expects {}",
                xs.nrows(),
                self.feature_dim()
            )));
        }
        match &self.global {
            Some(g) => g.factors(&self.store, xs),
            None => Ok(Matrix::zeros(xs.ncols(), 0)),
        }
    }

    /// Embedding `w_i` as a tape node, when the model has global factors.
    pub fn embedding_tape(&self, tape: &mut Tape, index: usize) -> Option<NodeId> {
        self.global.as_ref()?;
        Some(tape.param(&self.store, self.embeddings.get(index)))
    }

    pub fn embedding(&self, index: usize) -> Option<&Matrix> {
        self.global.as_ref()?;
        Some(&self.store.get(self.embeddings.get(index)).value)
    }

    /// Constrained ISSM parameters of series `index`.
    pub fn issm_params(&self, index: usize) -> Option<LevelTrendIssmParams> {
        match &self.local {
            LocalParams::Issm(ids) => Some(LevelTrendIssmParams::from_raw(self.store.get(ids[index]).value.as_slice())),
            _ => None,
        }
    }

    pub fn gp_params(&self, index: usize) -> Option<GpParams> {
        match &self.local {
            LocalParams::Gp(ids) => Some(GpParams::from_raw(self.store.get(ids[index]).value.as_slice())),
            _ => None,
        }
    }

    /// Observations of `series` divided by the model's scale for it.
    pub fn scaled_target(&self, index: usize, series: &Series) -> Vec<f64> {
        let s = self.scales[index];
        if s == 1.0 {
            series.target.clone()
        } else {
            series.target.iter().map(|v| v / s).collect()
        }
    }

    /// Check that `series` can be scored by this model.
    pub fn check_series(&self, series: &Series) -> Result<usize> {
        let i = self.series_index(&series.id)?;
        if self.config.emission == Emission::Poisson {
            crate::likelihood::validate_counts(&series.target)
                .map_err(|e| Error::Data(format!("series {:?}: {e}", series.id)))?;
        }
        Ok(i)
    }
}
