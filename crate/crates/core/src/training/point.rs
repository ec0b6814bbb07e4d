use std::time::Instant;

use chrono::NaiveDateTime;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{TrainConfig, TrainReport};
use crate::autodiff::{Adam, AdamConfig, Matrix, NodeId, ParamId, ParamStore, Tape};
use crate::data::{Series, TimeFeatures, TimeSeriesDataset, TIME_FEATURE_DIM};
use crate::error::{Error, Result};
use crate::model::TrainingSpan;
use crate::networks::{matched_forecaster_hidden, Embeddings, GlobalFactorNetwork, RnnForecaster};
use crate::rng::stream_rng;

/// Deterministic point-forecast structures trained on squared error.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PointStructure {
    /// `z_hat_{i,t} = w_i^T g(x_t)`.
    DeepFactor,
    /// `z_hat_{i,t} = rnn([w_i; x_t])` with a scalar output.
    RnnForecaster,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointModelConfig {
    pub structure: PointStructure,
    /// Embedding size, equal to the number of factors for the factor form.
    pub num_factors: usize,
    /// Hidden units of the factor LSTM. The forecaster's hidden size is
    /// chosen to match the factor structure's parameter count.
    pub hidden: usize,
    pub layers: usize,
    pub age_feature: bool,
}

#[derive(Clone, Debug)]
enum Body {
    Factor(GlobalFactorNetwork),
    Forecaster(RnnForecaster),
}

#[derive(Clone, Debug)]
pub struct PointModel {
    config: PointModelConfig,
    store: ParamStore,
    series: Vec<String>,
    span: TrainingSpan,
    embeddings: Embeddings,
    body: Body,
}

impl PointModel {
    pub fn new(config: PointModelConfig, dataset: &TimeSeriesDataset, seed: u64) -> Result<Self> {
        if config.num_factors == 0 || config.hidden == 0 || config.layers == 0 {
            return Err(Error::invalid("point models need num_factors, hidden and layers >= 1"));
        }
        let (start, len) = dataset.aligned_span()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let d = TIME_FEATURE_DIM + usize::from(config.age_feature);
        let k = config.num_factors;
        let body = match config.structure {
            PointStructure::DeepFactor => {
                Body::Factor(GlobalFactorNetwork::new(&mut store, d, config.hidden, config.layers, k, &mut rng))
            }
            PointStructure::RnnForecaster => {
                let h = matched_forecaster_hidden(d, config.hidden, config.layers, k);
                Body::Forecaster(RnnForecaster::new(&mut store, d, k, h, config.layers, &mut rng))
            }
        };
        let series = dataset.ids();
        let embeddings = Embeddings::new(&mut store, &series, k, &mut rng);
        Ok(Self {
            config,
            store,
            series,
            span: TrainingSpan { start, len },
            embeddings,
            body,
        })
    }

    pub fn structure(&self) -> PointStructure {
        self.config.structure
    }

    pub fn num_params(&self) -> usize {
        self.store.num_scalars()
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    fn index(&self, id: &str) -> Result<usize> {
        self.series
            .iter()
            .position(|s| s == id)
            .ok_or_else(|| Error::UnknownSeries(id.to_string()))
    }

    fn features(&self, start: &NaiveDateTime, len: usize) -> Matrix {
        let cal = TimeFeatures::matrix(start, len);
        if !self.config.age_feature {
            return cal;
        }
        let mut m = cal.insert_row(TIME_FEATURE_DIM, 0.0);
        for (t, a) in self.span.positions(start, len).iter().enumerate() {
            m[(TIME_FEATURE_DIM, t)] = *a;
        }
        m
    }

    /// Point predictions for `len` steps of series `id` starting at `start`.
    pub fn predict(&self, id: &str, start: &NaiveDateTime, len: usize) -> Result<Vec<f64>> {
        let i = self.index(id)?;
        let mut tape = Tape::new();
        let xs = tape.leaf(self.features(start, len));
        let w = tape.param(&self.store, self.embeddings.get(i));
        let y = match &self.body {
            Body::Factor(g) => {
                let gm = g.forward(&mut tape, &self.store, xs)?;
                tape.matmul(gm, w)?
            }
            Body::Forecaster(f) => f.forward(&mut tape, &self.store, w, xs)?,
        };
        Ok(tape.value(y).iter().copied().collect())
    }
}

fn sq_error(tape: &mut Tape, pred: NodeId, target: &Matrix) -> Result<NodeId> {
    let t = tape.leaf(target.clone());
    let diff = tape.sub(pred, t)?;
    let sq = tape.square(diff);
    Ok(tape.sum(sq))
}

/// Gradient of the summed squared error over `batch` into the store.
fn point_step(model: &mut PointModel, xs: &Matrix, targets: &[Vec<f64>], batch: &[usize]) -> Result<f64> {
    model.store.zero_grad();
    match &model.body {
        Body::Factor(g) => {
            // One unroll of the factor network serves every series.
            let mut tape = Tape::new();
            let x = tape.leaf(xs.clone());
            let gm = g.forward(&mut tape, &model.store, x)?;
            let ws: Vec<_> = batch
                .iter()
                .map(|&i| tape.param(&model.store, model.embeddings.get(i)))
                .collect();
            let w = tape.concat_cols(&ws)?;
            let pred = tape.matmul(gm, w)?;
            let t_len = xs.ncols();
            let target = Matrix::from_fn(t_len, batch.len(), |t, j| targets[batch[j]][t]);
            let loss = sq_error(&mut tape, pred, &target)?;
            let grads = tape.backward(loss)?;
            grads.accumulate_into(&tape, &mut model.store);
            Ok(tape.scalar(loss))
        }
        Body::Forecaster(f) => {
            let store = &model.store;
            let emb = &model.embeddings;
            let results: Vec<Result<(f64, Vec<(ParamId, Matrix)>)>> = batch
                .par_iter()
                .map(|&i| {
                    let mut tape = Tape::new();
                    let x = tape.leaf(xs.clone());
                    let w = tape.param(store, emb.get(i));
                    let pred = f.forward(&mut tape, store, w, x)?;
                    let target = Matrix::from_column_slice(targets[i].len(), 1, &targets[i]);
                    let loss = sq_error(&mut tape, pred, &target)?;
                    let grads = tape.backward(loss)?;
                    Ok((tape.scalar(loss), grads.param_grads(&tape)))
                })
                .collect();
            let mut total = 0.0;
            for r in results {
                let (loss, grads) = r?;
                total += loss;
                model.store.accumulate(&grads);
            }
            Ok(total)
        }
    }
}

/// Fit a point model by Adam on squared error. Reported losses are mean
/// squared errors per observation.
pub fn train_point_model(model: &mut PointModel, dataset: &TimeSeriesDataset, config: &TrainConfig) -> Result<TrainReport> {
    config.validate()?;
    let (start, len) = dataset.aligned_span()?;
    let mut order_idx = Vec::with_capacity(dataset.len());
    let mut targets = vec![Vec::new(); model.series.len()];
    for s in dataset.series() {
        let i = model.index(&s.id)?;
        targets[i] = s.target.clone();
        order_idx.push(i);
    }
    let xs = model.features(&start, len);
    let n = order_idx.len();
    let batch = config.batch_for(n);
    let mut adam = Adam::new(
        AdamConfig {
            lr: config.learning_rate,
            ..AdamConfig::default()
        },
        &model.store,
    );
    let mut report = TrainReport::default();
    let clock = Instant::now();
    let mut best = f64::INFINITY;
    let mut since_best = 0;
    for epoch in 0..config.epochs {
        let mut order = order_idx.clone();
        if batch < n {
            order.shuffle(&mut stream_rng(config.seed, super::SHUFFLE_DOMAIN | epoch as u64, 1));
        }
        let mut total = 0.0;
        for chunk in order.chunks(batch) {
            let loss = point_step(model, &xs, &targets, chunk)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite {
                    epoch,
                    series: "<point model batch>".into(),
                });
            }
            total += loss;
            model.store.clip_grad_norm(config.clip_norm);
            adam.step(&mut model.store);
        }
        let mse = total / (n * len) as f64;
        report.losses.push(mse);
        report.param_norms.push(model.store.value_norm());
        report.seconds.push(clock.elapsed().as_secs_f64());
        report.epochs_run += 1;
        if mse < best {
            best = mse;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                report.stopped_early = true;
                break;
            }
        }
    }
    model.store.zero_grad();
    Ok(report)
}

impl PointModel {
    /// Predictions for every series of `dataset` over `len` steps after the
    /// end of each series.
    pub fn predict_after(&self, series: &Series, len: usize) -> Result<Vec<f64>> {
        let all = self.predict(&series.id, &series.start, series.len() + len)?;
        Ok(all[series.len()..].to_vec())
    }
}
