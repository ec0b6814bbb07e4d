//! Minibatch training with per-series parallel gradients, plus objective
//! evaluation.
//!
//! Each minibatch evaluates the global factor network once on a shared tape.
//! Every series then builds a private tape in parallel with the factor matrix
//! as a leaf; the adjoints of that leaf are summed in a fixed order and
//! pushed back through the global network. The reduction order never depends
//! on thread scheduling, so runs are bitwise reproducible.

mod point;

use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use point::{train_point_model, PointModel, PointModelConfig, PointStructure};

use crate::autodiff::{Adam, AdamConfig, Matrix, ParamId, Tape};
use crate::data::TimeSeriesDataset;
use crate::error::{Error, Result};
use crate::likelihood::{draw_eps, elbo, elbo_tape, marginal_loglik, marginal_loglik_tape, Emission, SeriesGraph};
use crate::model::DeepFactorModel;
use crate::rng::stream_rng;

const SHUFFLE_DOMAIN: u64 = 0x5348_5546 << 32;
const DRAW_DOMAIN: u64 = 0x4452_4157 << 32;

/// Series per minibatch when the whole panel does not fit in one.
pub const DEFAULT_BATCH: usize = 32;
/// Panels up to this size train full-batch.
pub const FULL_BATCH_LIMIT: usize = 64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Series per minibatch; `None` picks the whole panel up to 64 series and
    /// 32 otherwise.
    pub batch_size: Option<usize>,
    pub learning_rate: f64,
    /// Monte-Carlo samples per ELBO evaluation during training.
    pub num_samples: usize,
    pub seed: u64,
    pub clip_norm: f64,
    /// Stop after this many epochs without a new best training loss.
    pub patience: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: None,
            learning_rate: AdamConfig::default().lr,
            num_samples: 1,
            seed: 0,
            clip_norm: 10.0,
            patience: 50,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == Some(0) || self.num_samples == 0 || self.patience == 0 {
            return Err(Error::invalid("batch_size, num_samples and patience must be at least 1"));
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::invalid("clip_norm must be positive"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning_rate must be positive"));
        }
        Ok(())
    }

    pub fn batch_for(&self, n: usize) -> usize {
        self.batch_size
            .unwrap_or(if n <= FULL_BATCH_LIMIT { n } else { DEFAULT_BATCH })
            .clamp(1, n.max(1))
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean negative objective per series, one entry per epoch.
    pub losses: Vec<f64>,
    /// Global parameter L2 norm after each epoch.
    pub param_norms: Vec<f64>,
    /// Wall-clock seconds elapsed at the end of each epoch.
    pub seconds: Vec<f64>,
    pub epochs_run: usize,
    pub stopped_early: bool,
}

struct Item {
    name: String,
    index: usize,
    z: Vec<f64>,
    times: Vec<f64>,
}

struct Prepared {
    xs: Matrix,
    items: Vec<Item>,
}

fn prepare(model: &DeepFactorModel, dataset: &TimeSeriesDataset, min_len: usize) -> Result<Prepared> {
    if dataset.is_empty() {
        return Err(Error::Data("empty dataset".into()));
    }
    let (start, len) = dataset.aligned_span()?;
    if len < min_len {
        return Err(Error::Data(format!("series must have at least {min_len} observations, found {len}")));
    }
    let items = dataset
        .series()
        .iter()
        .map(|s| {
            let index = model.check_series(s)?;
            Ok(Item {
                name: s.id.clone(),
                index,
                z: model.scaled_target(index, s),
                times: model.span().positions(&s.start, s.len()),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Prepared {
        xs: model.features(&start, len),
        items,
    })
}

struct SeriesGrad {
    loss: f64,
    d_g: Option<Matrix>,
    grads: Vec<(ParamId, Matrix)>,
}

fn draws_for(model: &DeepFactorModel, item: &Item, seed: u64, epoch: usize, n_samples: usize) -> Vec<Vec<f64>> {
    if model.emission() == Emission::Gaussian {
        return Vec::new();
    }
    let mut rng = stream_rng(seed, DRAW_DOMAIN | epoch as u64, item.index as u64);
    draw_eps(n_samples, item.z.len(), &mut rng)
}

fn series_grad(model: &DeepFactorModel, xs: &Matrix, g_val: Option<&Matrix>, item: &Item, eps: &[Vec<f64>]) -> Result<SeriesGrad> {
    let mut tape = Tape::new();
    let xs = tape.leaf(xs.clone());
    let g = g_val.map(|g| tape.leaf(g.clone()));
    let graph = SeriesGraph {
        index: item.index,
        z: &item.z,
        xs,
        g,
        times: &item.times,
    };
    let objective = match model.emission() {
        Emission::Gaussian => marginal_loglik_tape(&mut tape, model, &graph)?,
        Emission::Poisson => elbo_tape(&mut tape, model, &graph, eps)?.value,
    };
    let loss = tape.neg(objective);
    let grads = tape.backward(loss)?;
    Ok(SeriesGrad {
        loss: tape.scalar(loss),
        d_g: g.map(|g| grads.wrt(&tape, g)),
        grads: grads.param_grads(&tape),
    })
}

fn all_finite(m: &Matrix) -> bool {
    m.iter().all(|v| v.is_finite())
}

/// Loss and parameter gradients of one minibatch, written into the store's
/// gradient buffers (which are zeroed first). Returns per-series losses.
fn batch_step(
    model: &mut DeepFactorModel,
    prep: &Prepared,
    batch: &[usize],
    seed: u64,
    epoch: usize,
    n_samples: usize,
) -> Result<Vec<f64>> {
    let mut global_tape = Tape::new();
    let xs_node = global_tape.leaf(prep.xs.clone());
    let g_node = model.global_factors_tape(&mut global_tape, xs_node)?;
    let g_val = g_node.map(|g| global_tape.value(g).clone());

    let shared: &DeepFactorModel = model;
    let results: Vec<Result<SeriesGrad>> = batch
        .par_iter()
        .map(|&k| {
            let item = &prep.items[k];
            let eps = draws_for(shared, item, seed, epoch, n_samples);
            series_grad(shared, &prep.xs, g_val.as_ref(), item, &eps)
        })
        .collect();

    let store = model.params_mut();
    store.zero_grad();
    let mut losses = Vec::with_capacity(batch.len());
    let mut d_g_sum: Option<Matrix> = None;
    for (&k, res) in batch.iter().zip(results) {
        let item = &prep.items[k];
        let sg = res?;
        let finite = sg.loss.is_finite()
            && sg.grads.iter().all(|(_, g)| all_finite(g))
            && sg.d_g.as_ref().is_none_or(all_finite);
        if !finite {
            return Err(Error::NonFinite {
                epoch,
                series: item.name.clone(),
            });
        }
        losses.push(sg.loss);
        store.accumulate(&sg.grads);
        if let Some(dg) = sg.d_g {
            match d_g_sum.as_mut() {
                Some(acc) => *acc += dg,
                None => d_g_sum = Some(dg),
            }
        }
    }
    if let (Some(g), Some(seed_adj)) = (g_node, d_g_sum) {
        let grads = global_tape.backward_seeded(g, seed_adj)?;
        grads.accumulate_into(&global_tape, store);
    }
    Ok(losses)
}

/// Total negative objective over `dataset` and its gradient for every
/// parameter (indexed like the model's store), through the same pipeline as
/// [`train`]. Stochastic draws are fixed by `seed`, so repeated calls with
/// perturbed parameters see identical noise.
pub fn objective_gradients(
    model: &mut DeepFactorModel,
    dataset: &TimeSeriesDataset,
    n_samples: usize,
    seed: u64,
) -> Result<(f64, Vec<Matrix>)> {
    let prep = prepare(model, dataset, 1)?;
    let batch: Vec<usize> = (0..prep.items.len()).collect();
    let losses = batch_step(model, &prep, &batch, seed, 0, n_samples)?;
    let grads = model.params().iter().map(|p| p.grad.clone()).collect();
    model.params_mut().zero_grad();
    Ok((losses.iter().sum(), grads))
}

/// Fit `model` to `dataset` with Adam. Every dataset series must belong to
/// the model and all series must share one span of at least two steps.
pub fn train(model: &mut DeepFactorModel, dataset: &TimeSeriesDataset, config: &TrainConfig) -> Result<TrainReport> {
    config.validate()?;
    let prep = prepare(model, dataset, 2)?;
    let n = prep.items.len();
    let batch = config.batch_for(n);
    let mut adam = Adam::new(
        AdamConfig {
            lr: config.learning_rate,
            ..AdamConfig::default()
        },
        model.params(),
    );
    let mut report = TrainReport::default();
    let clock = Instant::now();
    let mut best = f64::INFINITY;
    let mut since_best = 0;
    for epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        if batch < n {
            order.shuffle(&mut stream_rng(config.seed, SHUFFLE_DOMAIN | epoch as u64, 0));
        }
        let mut total = 0.0;
        for chunk in order.chunks(batch) {
            let losses = batch_step(model, &prep, chunk, config.seed, epoch, config.num_samples)?;
            total += losses.iter().sum::<f64>();
            let store = model.params_mut();
            store.clip_grad_norm(config.clip_norm);
            adam.step(store);
        }
        let mean = total / n as f64;
        report.losses.push(mean);
        report.param_norms.push(model.params().value_norm());
        report.seconds.push(clock.elapsed().as_secs_f64());
        report.epochs_run += 1;
        if mean < best {
            best = mean;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                report.stopped_early = true;
                break;
            }
        }
    }
    model.params_mut().zero_grad();
    Ok(report)
}

/// Samples used for ELBO evaluation outside training.
pub const EVAL_SAMPLES: usize = 100;

/// Per-series objective values (exact log marginal for Gaussian emission,
/// ELBO with [`EVAL_SAMPLES`] draws otherwise), in dataset order.
pub fn series_objectives(model: &DeepFactorModel, dataset: &TimeSeriesDataset, seed: u64) -> Result<Vec<f64>> {
    dataset
        .series()
        .par_iter()
        .map(|s| match model.emission() {
            Emission::Gaussian => marginal_loglik(model, s),
            Emission::Poisson => elbo(model, s, EVAL_SAMPLES, seed).map(|e| e.value),
        })
        .collect()
}

/// Mean per-series objective. Parameters are not modified.
pub fn evaluate_objective(model: &DeepFactorModel, dataset: &TimeSeriesDataset) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::Data("empty dataset".into()));
    }
    let values = series_objectives(model, dataset, 0)?;
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}
