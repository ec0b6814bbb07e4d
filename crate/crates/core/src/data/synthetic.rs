use std::f64::consts::PI;

use chrono::NaiveDateTime;
use nalgebra::{Matrix2, Vector2};
use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use super::dataset::{parse_timestamp, Series, TimeSeriesDataset};
use crate::autodiff::{softplus, Matrix};
use crate::error::{Error, Result};
use crate::likelihood::Emission;
use crate::rng::{stream_rng, StreamRng};

const DOMAIN_STATE: u64 = 0x5354_4154;
const DOMAIN_EMISSION: u64 = 0x454d_4954;
const DOMAIN_LOADINGS: u64 = 0x4c4f_4144;

pub fn default_start() -> NaiveDateTime {
    parse_timestamp("2020-01-01T00:00:00").expect("valid literal")
}

fn default_h0() -> [f64; 2] {
    [1.0, 0.0]
}

fn default_num_series() -> usize {
    1
}

fn default_coef_range() -> [f64; 2] {
    [-1.0, 1.0]
}

/// Rotating two-dimensional latent state projected onto its first axis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RotatingLdsSpec {
    pub theta: f64,
    pub alpha: f64,
    pub sigma: f64,
    pub length: usize,
    #[serde(default)]
    pub likelihood: Emission,
    #[serde(default = "default_h0")]
    pub h0: [f64; 2],
    #[serde(default = "default_num_series")]
    pub num_series: usize,
    #[serde(default = "default_start")]
    pub start: NaiveDateTime,
}

/// Per-series stochastic component added to the Fourier fixed effects.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LocalNoise {
    Gaussian {
        std: f64,
    },
    RotatingLds {
        theta: f64,
        alpha: f64,
        sigma: f64,
        #[serde(default = "default_h0")]
        h0: [f64; 2],
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FourierFactorsSpec {
    pub num_factors: usize,
    /// Harmonic order of each factor; empty means `1..=num_factors`.
    #[serde(default)]
    pub orders: Vec<usize>,
    pub num_series: usize,
    pub length: usize,
    #[serde(default = "default_coef_range")]
    pub coef_range: [f64; 2],
    pub noise: LocalNoise,
    #[serde(default)]
    pub likelihood: Emission,
    /// Base period in steps; defaults to the series length.
    #[serde(default)]
    pub period: Option<f64>,
    #[serde(default = "default_start")]
    pub start: NaiveDateTime,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SyntheticSpec {
    RotatingLds(RotatingLdsSpec),
    FourierFactors(FourierFactorsSpec),
}

#[derive(Clone, Debug)]
pub struct RotatingLdsData {
    pub dataset: TimeSeriesDataset,
    /// Latent function values per series.
    pub u: Vec<Vec<f64>>,
    /// Latent states per series.
    pub h: Vec<Vec<[f64; 2]>>,
}

#[derive(Clone, Debug)]
pub struct FourierData {
    pub dataset: TimeSeriesDataset,
    /// True factors `G*`, `T x K`.
    pub factors: Matrix,
    /// True loadings, `N x K`.
    pub loadings: Matrix,
    pub u: Vec<Vec<f64>>,
}

/// Generator output in a kind-independent shape.
#[derive(Clone, Debug)]
pub struct SyntheticData {
    pub dataset: TimeSeriesDataset,
    pub u_true: Vec<Vec<f64>>,
    pub factors: Option<Matrix>,
}

fn check_rotation(theta: f64, alpha: f64, sigma: f64) -> Result<()> {
    if !(theta > 0.0 && theta < PI) {
        return Err(Error::invalid(format!("theta must lie in (0, pi), got {theta}")));
    }
    if !(alpha >= 0.0 && sigma >= 0.0) {
        return Err(Error::invalid("alpha and sigma must be non-negative"));
    }
    Ok(())
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            SyntheticSpec::RotatingLds(s) => {
                check_rotation(s.theta, s.alpha, s.sigma)?;
                if s.length == 0 || s.num_series == 0 {
                    return Err(Error::invalid("length and num_series must be at least 1"));
                }
            }
            SyntheticSpec::FourierFactors(s) => {
                if s.num_factors == 0 || s.num_series == 0 || s.length == 0 {
                    return Err(Error::invalid("num_factors, num_series and length must be at least 1"));
                }
                if !s.orders.is_empty() && s.orders.len() != s.num_factors {
                    return Err(Error::invalid(format!(
                        "{} orders given for {} factors",
                        s.orders.len(),
                        s.num_factors
                    )));
                }
                if s.orders.contains(&0) {
                    return Err(Error::invalid("Fourier orders must be at least 1"));
                }
                if !(s.coef_range[0] <= s.coef_range[1]) {
                    return Err(Error::invalid("coef_range must be [low, high] with low <= high"));
                }
                if matches!(s.period, Some(p) if !(p > 0.0)) {
                    return Err(Error::invalid("period must be positive"));
                }
                match &s.noise {
                    LocalNoise::Gaussian { std } if !(*std >= 0.0) => {
                        return Err(Error::invalid("noise std must be non-negative"));
                    }
                    LocalNoise::RotatingLds { theta, alpha, sigma, .. } => check_rotation(*theta, *alpha, *sigma)?,
                    _ => {}
                }
            }
        }
        Ok(())
    }
}

fn rotation(theta: f64) -> Matrix2<f64> {
    Matrix2::new(theta.cos(), -theta.sin(), theta.sin(), theta.cos())
}

/// Latent states and values of one rotating LDS path.
fn rotating_path(
    theta: f64,
    alpha: f64,
    sigma: f64,
    h0: [f64; 2],
    len: usize,
    rng: &mut StreamRng,
) -> (Vec<[f64; 2]>, Vec<f64>) {
    let a = rotation(theta);
    let mut h = Vector2::new(h0[0], h0[1]);
    let mut states = Vec::with_capacity(len);
    let mut u = Vec::with_capacity(len);
    for _ in 0..len {
        let e0: f64 = StandardNormal.sample(rng);
        let e1: f64 = StandardNormal.sample(rng);
        let ev: f64 = StandardNormal.sample(rng);
        h = a * h + Vector2::new(e0, e1) * alpha;
        states.push([h[0], h[1]]);
        u.push(h[0] + sigma * ev);
    }
    (states, u)
}

/// Draw observations from latent values.
pub fn emit<R: Rng + ?Sized>(emission: Emission, u: &[f64], rng: &mut R) -> Vec<f64> {
    match emission {
        Emission::Gaussian => u.to_vec(),
        Emission::Poisson => u.iter().map(|&v| sample_poisson(softplus(v), rng)).collect(),
    }
}

pub fn sample_poisson<R: Rng + ?Sized>(lambda: f64, rng: &mut R) -> f64 {
    match Poisson::new(lambda.max(f64::MIN_POSITIVE)) {
        Ok(d) => d.sample(rng).round(),
        Err(_) => 0.0,
    }
}

fn series_id(i: usize) -> String {
    format!("item_{i}")
}

pub fn generate_rotating_lds(spec: &RotatingLdsSpec, seed: u64) -> Result<RotatingLdsData> {
    SyntheticSpec::RotatingLds(spec.clone()).validate()?;
    let mut series = Vec::with_capacity(spec.num_series);
    let mut us = Vec::with_capacity(spec.num_series);
    let mut hs = Vec::with_capacity(spec.num_series);
    for i in 0..spec.num_series {
        let mut rng = stream_rng(seed, DOMAIN_STATE, i as u64);
        let (h, u) = rotating_path(spec.theta, spec.alpha, spec.sigma, spec.h0, spec.length, &mut rng);
        let mut erng = stream_rng(seed, DOMAIN_EMISSION, i as u64);
        let target = emit(spec.likelihood, &u, &mut erng);
        series.push(Series {
            id: series_id(i),
            start: spec.start,
            target,
        });
        us.push(u);
        hs.push(h);
    }
    Ok(RotatingLdsData {
        dataset: TimeSeriesDataset::new(series)?,
        u: us,
        h: hs,
    })
}

/// `G*` with column `k` equal to `sin` (even `k`) or `cos` (odd `k`) of
/// harmonic `orders[k]` over `period` steps.
pub fn fourier_factors(orders: &[usize], length: usize, period: f64) -> Matrix {
    Matrix::from_fn(length, orders.len(), |t, k| {
        let phase = 2.0 * PI * orders[k] as f64 * t as f64 / period;
        if k % 2 == 0 {
            phase.sin()
        } else {
            phase.cos()
        }
    })
}

pub fn generate_fourier_factors(spec: &FourierFactorsSpec, seed: u64) -> Result<FourierData> {
    SyntheticSpec::FourierFactors(spec.clone()).validate()?;
    let orders: Vec<usize> = if spec.orders.is_empty() {
        (1..=spec.num_factors).collect()
    } else {
        spec.orders.clone()
    };
    let period = spec.period.unwrap_or(spec.length as f64);
    let factors = fourier_factors(&orders, spec.length, period);
    let mut lrng = stream_rng(seed, DOMAIN_LOADINGS, 0);
    let [lo, hi] = spec.coef_range;
    let loadings = Matrix::from_fn(spec.num_series, spec.num_factors, |_, _| {
        if lo == hi {
            lo
        } else {
            lrng.random_range(lo..hi)
        }
    });
    let mut series = Vec::with_capacity(spec.num_series);
    let mut us = Vec::with_capacity(spec.num_series);
    for i in 0..spec.num_series {
        let fixed = &factors * loadings.row(i).transpose();
        let mut rng = stream_rng(seed, DOMAIN_STATE, i as u64);
        let noise: Vec<f64> = match &spec.noise {
            LocalNoise::Gaussian { std } => {
                let d = Normal::new(0.0, *std).map_err(|e| Error::invalid(e.to_string()))?;
                (0..spec.length).map(|_| d.sample(&mut rng)).collect()
            }
            LocalNoise::RotatingLds { theta, alpha, sigma, h0 } => {
                rotating_path(*theta, *alpha, *sigma, *h0, spec.length, &mut rng).1
            }
        };
        let u: Vec<f64> = fixed.iter().zip(&noise).map(|(f, r)| f + r).collect();
        let mut erng = stream_rng(seed, DOMAIN_EMISSION, i as u64);
        let target = emit(spec.likelihood, &u, &mut erng);
        series.push(Series {
            id: series_id(i),
            start: spec.start,
            target,
        });
        us.push(u);
    }
    Ok(FourierData {
        dataset: TimeSeriesDataset::new(series)?,
        factors,
        loadings,
        u: us,
    })
}

pub fn generate(spec: &SyntheticSpec, seed: u64) -> Result<SyntheticData> {
    match spec {
        SyntheticSpec::RotatingLds(s) => {
            let d = generate_rotating_lds(s, seed)?;
            Ok(SyntheticData {
                dataset: d.dataset,
                u_true: d.u,
                factors: None,
            })
        }
        SyntheticSpec::FourierFactors(s) => {
            let d = generate_fourier_factors(s, seed)?;
            Ok(SyntheticData {
                dataset: d.dataset,
                u_true: d.u,
                factors: Some(d.factors),
            })
        }
    }
}
