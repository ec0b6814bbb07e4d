//! Emission models and the two per-series objectives: the exact Gaussian
//! marginal and the structured variational lower bound.

mod emission;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

pub use emission::{emission_loglik, poisson_loglik_tape, validate_counts, Emission};

use crate::autodiff::{NodeId, Tape};
use crate::data::Series;
use crate::error::{Error, Result};
use crate::local::{gp_loglik_tape, kalman_loglik_tape, rnn_noise_loglik_tape, GpNodes, IssmNodes};
use crate::model::{DeepFactorModel, LocalParams};
use crate::networks::fixed_effect;
use crate::rng::stream_rng;

const ELBO_DOMAIN: u64 = 0x454c_424f;

/// Monte-Carlo ELBO with its averaged components.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ElboEstimate {
    pub value: f64,
    /// Mean `log p(z | u)`.
    pub recon: f64,
    /// Mean `log p(u)` under the global plus local model.
    pub prior: f64,
    /// Mean `-log q(u | z)`.
    pub entropy: f64,
    pub n_samples: usize,
}

/// Taped ELBO components, each already averaged over samples.
#[derive(Clone, Copy, Debug)]
pub struct ElboNodes {
    pub value: NodeId,
    pub recon: NodeId,
    pub prior: NodeId,
    pub entropy: NodeId,
}

/// Everything a per-series objective needs on one tape.
#[derive(Clone, Copy, Debug)]
pub struct SeriesGraph<'a> {
    /// Index of the series in the model.
    pub index: usize,
    /// Observations after the model's scaling.
    pub z: &'a [f64],
    /// Covariates `d x T`.
    pub xs: NodeId,
    /// Global factors `T x K`, absent for a purely local model.
    pub g: Option<NodeId>,
    /// Normalized time positions, used by the GP kernel.
    pub times: &'a [f64],
}

impl<'a> SeriesGraph<'a> {
    /// Set up covariates and global factors for a standalone evaluation.
    pub fn standalone(tape: &mut Tape, model: &DeepFactorModel, index: usize, z: &'a [f64], times: &'a [f64], series: &Series) -> Result<Self> {
        let xs = tape.leaf(model.features(&series.start, series.len()));
        let g = model.global_factors_tape(tape, xs)?;
        Ok(Self { index, z, xs, g, times })
    }
}

/// `f_i = G w_i` as a `T x 1` node, or `None` without global factors.
pub fn fixed_effect_tape(tape: &mut Tape, model: &DeepFactorModel, graph: &SeriesGraph) -> Result<Option<NodeId>> {
    match (graph.g, model.embedding_tape(tape, graph.index)) {
        (Some(g), Some(w)) => fixed_effect(tape, w, g).map(Some),
        _ => Ok(None),
    }
}

/// Exact local-model log-density of the residual node `r`.
pub fn local_loglik_tape(tape: &mut Tape, model: &DeepFactorModel, graph: &SeriesGraph, r: NodeId) -> Result<NodeId> {
    let store = model.params();
    match model.local() {
        LocalParams::RnnNoise(net) => {
            let w = model.embedding_tape(tape, graph.index);
            let sigma = net.forward(tape, store, graph.xs, w)?;
            rnn_noise_loglik_tape(tape, r, sigma)
        }
        LocalParams::Issm(ids) => {
            let raw = tape.param(store, ids[graph.index]);
            let p = IssmNodes::from_raw(tape, raw)?;
            kalman_loglik_tape(tape, r, &p)
        }
        LocalParams::Gp(ids) => {
            let raw = tape.param(store, ids[graph.index]);
            let p = GpNodes::from_raw(tape, raw)?;
            gp_loglik_tape(tape, r, graph.times, &p)
        }
    }
}

fn residual(tape: &mut Tape, u: NodeId, f: Option<NodeId>) -> Result<NodeId> {
    match f {
        Some(f) => tape.sub(u, f),
        None => Ok(u),
    }
}

fn log_scale(model: &DeepFactorModel, graph: &SeriesGraph) -> f64 {
    graph.z.len() as f64 * model.scales()[graph.index].ln()
}

/// `log p(z_i)` for a Gaussian-emission model, on the tape.
pub fn marginal_loglik_tape(tape: &mut Tape, model: &DeepFactorModel, graph: &SeriesGraph) -> Result<NodeId> {
    if model.emission() != Emission::Gaussian {
        return Err(Error::invalid("exact marginal requires Gaussian emission; use elbo"));
    }
    let f = fixed_effect_tape(tape, model, graph)?;
    let z = tape.column(graph.z);
    let r = residual(tape, z, f)?;
    let ll = local_loglik_tape(tape, model, graph, r)?;
    Ok(tape.offset(ll, -log_scale(model, graph)))
}

/// Structured ELBO on the tape with explicit standard-normal draws, one
/// vector of length `T` per sample. A Gaussian-emission model uses a point
/// mass at `z`, which makes the bound exact.
pub fn elbo_tape(tape: &mut Tape, model: &DeepFactorModel, graph: &SeriesGraph, eps: &[Vec<f64>]) -> Result<ElboNodes> {
    let n = eps.len();
    if n < 1 {
        return Err(Error::invalid("the ELBO needs at least one sample"));
    }
    let f = fixed_effect_tape(tape, model, graph)?;
    let gaussian = model.emission() == Emission::Gaussian;
    let rec = match model.recognition() {
        Some(net) => Some(net.recognize(tape, model.params(), graph.z)?),
        None => None,
    };
    let mut recon = Vec::with_capacity(n);
    let mut prior = Vec::with_capacity(n);
    let mut entropy = Vec::with_capacity(n);
    for e in eps {
        let (u, log_q) = match &rec {
            Some(r) => {
                if e.len() != graph.z.len() {
                    return Err(Error::invalid(format!("draw has length {}, expected {}", e.len(), graph.z.len())));
                }
                r.sample(tape, e)?
            }
            None => (tape.column(graph.z), tape.constant_scalar(0.0)),
        };
        recon.push(if gaussian {
            tape.constant_scalar(-log_scale(model, graph))
        } else {
            poisson_loglik_tape(tape, graph.z, u)?
        });
        let r = residual(tape, u, f)?;
        prior.push(local_loglik_tape(tape, model, graph, r)?);
        entropy.push(tape.neg(log_q));
    }
    let mut mean = |parts: &[NodeId]| -> Result<NodeId> {
        let all = tape.concat_rows(parts)?;
        let s = tape.sum(all);
        Ok(tape.scale(s, 1.0 / n as f64))
    };
    let recon = mean(&recon)?;
    let prior = mean(&prior)?;
    let entropy = mean(&entropy)?;
    let rp = tape.add(recon, prior)?;
    let value = tape.add(rp, entropy)?;
    Ok(ElboNodes {
        value,
        recon,
        prior,
        entropy,
    })
}

/// `n_samples` standard-normal vectors of length `len`.
pub fn draw_eps<R: Rng + ?Sized>(n_samples: usize, len: usize, rng: &mut R) -> Vec<Vec<f64>> {
    (0..n_samples)
        .map(|_| (0..len).map(|_| StandardNormal.sample(rng)).collect())
        .collect()
}

/// Exact `log p(z_i | Theta)` of `series` under a Gaussian-emission model.
pub fn marginal_loglik(model: &DeepFactorModel, series: &Series) -> Result<f64> {
    let index = model.check_series(series)?;
    let z = model.scaled_target(index, series);
    let times = model.span().positions(&series.start, series.len());
    let mut tape = Tape::new();
    let graph = SeriesGraph::standalone(&mut tape, model, index, &z, &times, series)?;
    let ll = marginal_loglik_tape(&mut tape, model, &graph)?;
    Ok(tape.scalar(ll))
}

/// Monte-Carlo ELBO of `series` with `n_samples` reparameterized draws from
/// a stream seeded by `seed` and the series index.
pub fn elbo(model: &DeepFactorModel, series: &Series, n_samples: usize, seed: u64) -> Result<ElboEstimate> {
    if n_samples < 1 {
        return Err(Error::invalid("the ELBO needs at least one sample"));
    }
    let index = model.check_series(series)?;
    let mut rng = stream_rng(seed, ELBO_DOMAIN, index as u64);
    let eps = draw_eps(n_samples, series.len(), &mut rng);
    elbo_with_draws(model, series, &eps)
}

/// ELBO with caller-supplied draws.
pub fn elbo_with_draws(model: &DeepFactorModel, series: &Series, eps: &[Vec<f64>]) -> Result<ElboEstimate> {
    let index = model.check_series(series)?;
    let z = model.scaled_target(index, series);
    let times = model.span().positions(&series.start, series.len());
    let mut tape = Tape::new();
    let graph = SeriesGraph::standalone(&mut tape, model, index, &z, &times, series)?;
    let nodes = elbo_tape(&mut tape, model, &graph, eps)?;
    Ok(ElboEstimate {
        value: tape.scalar(nodes.value),
        recon: tape.scalar(nodes.recon),
        prior: tape.scalar(nodes.prior),
        entropy: tape.scalar(nodes.entropy),
        n_samples: eps.len(),
    })
}
