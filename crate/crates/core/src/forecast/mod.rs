//! Predictive sample paths, empirical quantiles, evaluation metrics and the
//! forecast file format.

mod io;
mod metrics;

use chrono::{Duration, NaiveDateTime};
use rand_distr::{Distribution, StandardNormal};

pub use io::{evaluate_rows, format_sig, read_forecast_csv, write_forecast_csv, ForecastRow, FORECAST_HEADER};
pub use metrics::{normalized_quantile_loss, quantile_loss, rmse, sorted_quantile, MetricReport};

use crate::autodiff::{softplus, Matrix, Tape};
use crate::data::{sample_poisson, Series};
use crate::error::{Error, Result};
use crate::likelihood::Emission;
use crate::local::{gp_posterior_forecast, kalman_filter, kalman_forecast};
use crate::model::{DeepFactorModel, LocalParams};
use crate::rng::stream_rng;

pub const DEFAULT_SAMPLES: usize = 200;
pub const DEFAULT_QUANTILES: [f64; 3] = [0.1, 0.5, 0.9];

const FORECAST_DOMAIN: u64 = 0x464f_5245;

#[derive(Clone, Debug, PartialEq)]
pub struct ForecastResult {
    pub series_id: String,
    pub horizon: usize,
    /// Timestamp of the first forecast step.
    pub start: NaiveDateTime,
    /// Sample paths, `n_samples x horizon`, on the original data scale.
    pub samples: Matrix,
    /// Sample mean per step.
    pub mean: Vec<f64>,
    /// `(level, values per step)`, levels ascending.
    pub quantiles: Vec<(f64, Vec<f64>)>,
}

impl ForecastResult {
    pub fn from_samples(series_id: String, start: NaiveDateTime, samples: Matrix, levels: &[f64]) -> Result<Self> {
        let (n, horizon) = samples.shape();
        if n == 0 {
            return Err(Error::invalid("at least one sample path is required"));
        }
        let mut levels = levels.to_vec();
        if levels.iter().any(|r| !(*r > 0.0 && *r < 1.0)) {
            return Err(Error::invalid("quantile levels must lie in (0, 1)"));
        }
        levels.sort_by(f64::total_cmp);
        levels.dedup();
        let mut quantiles: Vec<(f64, Vec<f64>)> = levels.iter().map(|&r| (r, Vec::with_capacity(horizon))).collect();
        let mut mean = Vec::with_capacity(horizon);
        for t in 0..horizon {
            let mut col: Vec<f64> = samples.column(t).iter().copied().collect();
            mean.push(col.iter().sum::<f64>() / n as f64);
            col.sort_by(f64::total_cmp);
            for (r, q) in quantiles.iter_mut() {
                q.push(sorted_quantile(&col, *r));
            }
        }
        Ok(Self {
            series_id,
            horizon,
            start,
            samples,
            mean,
            quantiles,
        })
    }

    pub fn quantile(&self, level: f64) -> Option<&[f64]> {
        self.quantiles
            .iter()
            .find(|(r, _)| (r - level).abs() < 1e-12)
            .map(|(_, q)| q.as_slice())
    }

    pub fn timestamp(&self, step: usize) -> NaiveDateTime {
        self.start + Duration::hours(step as i64)
    }
}

/// Point estimate of the latent function over the observed span, on the
/// model's scaled axis: the observations themselves for Gaussian emission,
/// the recognition mean otherwise.
pub fn latent_estimate(model: &DeepFactorModel, series: &Series) -> Result<Vec<f64>> {
    let i = model.check_series(series)?;
    let z = model.scaled_target(i, series);
    match model.recognition() {
        Some(net) => {
            let mut tape = Tape::new();
            let rec = net.recognize(&mut tape, model.params(), &z)?;
            Ok(tape.value(rec.mean).iter().copied().collect())
        }
        None => Ok(z),
    }
}

/// Sample `n_samples` future paths of `series` over `horizon` steps, with
/// calendar covariates derived from the timestamps.
pub fn forecast(
    model: &DeepFactorModel,
    series: &Series,
    horizon: usize,
    n_samples: usize,
    seed: u64,
    levels: &[f64],
) -> Result<ForecastResult> {
    if horizon < 1 {
        return Err(Error::invalid("forecast horizon must be at least 1"));
    }
    let future = model.features(&series.timestamp(series.len()), horizon);
    forecast_with_covariates(model, series, &future, horizon, n_samples, seed, levels)
}

/// As [`forecast`] with explicit future covariate columns (`d x horizon` or
/// wider).
pub fn forecast_with_covariates(
    model: &DeepFactorModel,
    series: &Series,
    future: &Matrix,
    horizon: usize,
    n_samples: usize,
    seed: u64,
    levels: &[f64],
) -> Result<ForecastResult> {
    if horizon < 1 {
        return Err(Error::invalid("forecast horizon must be at least 1"));
    }
    if n_samples < 1 {
        return Err(Error::invalid("n_samples must be at least 1"));
    }
    if future.ncols() < horizon {
        return Err(Error::invalid(format!(
            "future covariates cover {} steps, horizon is {horizon}",
            future.ncols()
        )));
    }
    if future.nrows() != model.feature_dim() {
        return Err(Error::invalid(format!(
            "future covariates have {} rows, model expects {}",
            future.nrows(),
            model.feature_dim()
        )));
    }
    let index = model.check_series(series)?;
    let t_len = series.len();
    let history = model.features(&series.start, t_len);
    let mut xs = Matrix::zeros(history.nrows(), t_len + horizon);
    xs.columns_mut(0, t_len).copy_from(&history);
    xs.columns_mut(t_len, horizon).copy_from(&future.columns(0, horizon));

    let g = model.global_factors_for(&xs)?;
    let f: Vec<f64> = match model.embedding(index) {
        Some(w) => (&g * w).iter().copied().collect(),
        None => vec![0.0; t_len + horizon],
    };
    let u_hist = latent_estimate(model, series)?;
    let r_hist: Vec<f64> = u_hist.iter().zip(&f).map(|(u, f)| u - f).collect();

    let mut rng = stream_rng(seed, FORECAST_DOMAIN, index as u64);
    let local = match model.local() {
        LocalParams::RnnNoise(net) => {
            let mut tape = Tape::new();
            let x = tape.leaf(xs.clone());
            let w = model.embedding_tape(&mut tape, index);
            let sigma = net.forward(&mut tape, model.params(), x, w)?;
            let sigma = tape.value(sigma);
            Matrix::from_fn(n_samples, horizon, |_, t| {
                let e: f64 = StandardNormal.sample(&mut rng);
                sigma[t_len + t] * e
            })
        }
        LocalParams::Issm(_) => {
            let p = model.issm_params(index).expect("issm model");
            let (_, belief) = kalman_filter(&r_hist, &p)?;
            kalman_forecast(&belief, &p, horizon, n_samples, &mut rng)?
        }
        LocalParams::Gp(_) => {
            let p = model.gp_params(index).expect("gp model");
            let span = model.span();
            let times = span.positions(&series.start, t_len);
            let test = span.positions(&series.timestamp(t_len), horizon);
            let post = gp_posterior_forecast(&r_hist, &times, &test, &p)?;
            post.sample(n_samples, p.noise, &mut rng)
        }
    };
    let scale = model.scales()[index];
    let samples = Matrix::from_fn(n_samples, horizon, |n, t| {
        let u = f[t_len + t] + local[(n, t)];
        match model.emission() {
            Emission::Gaussian => u * scale,
            Emission::Poisson => sample_poisson(softplus(u), &mut rng),
        }
    });
    ForecastResult::from_samples(series.id.clone(), series.timestamp(t_len), samples, levels)
}
