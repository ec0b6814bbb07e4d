#![allow(dead_code)]

use deepfactor::data::{default_start, Series, TimeSeriesDataset};
use deepfactor::local::{GpParams, LevelTrendIssmParams};
use nalgebra::{DMatrix, DVector, Matrix2, Vector2};

pub const LN_2PI: f64 = 1.8378770664093453;

/// Log-density of `x` under `N(mean, cov)` through an LU factorization.
pub fn dense_logpdf(x: &[f64], mean: &[f64], cov: &DMatrix<f64>) -> f64 {
    let n = x.len();
    let d = DVector::from_iterator(n, x.iter().zip(mean).map(|(a, b)| a - b));
    let lu = cov.clone().lu();
    let det = lu.determinant();
    assert!(det > 0.0, "oracle covariance is not positive definite");
    let sol = lu.solve(&d).expect("invertible covariance");
    -0.5 * (n as f64 * LN_2PI + det.ln() + d.dot(&sol))
}

/// Covariance of `T` residuals of the level-trend model, built by composing
/// the transition explicitly: each residual is a linear map of the initial
/// state, the innovations and its own observation noise.
pub fn issm_cov(p: &LevelTrendIssmParams, len: usize) -> DMatrix<f64> {
    let f = Matrix2::new(p.delta, p.gamma, 0.0, p.gamma);
    let a = Vector2::new(p.delta, p.gamma);
    let q = Vector2::new(p.alpha, p.beta);
    let mut powers = vec![Matrix2::identity()];
    for k in 1..=len {
        powers.push(f * powers[k - 1]);
    }
    let mut l = DMatrix::zeros(len, 2 + len);
    for t in 0..len {
        let row = a.transpose() * powers[t + 1] * p.s0;
        l[(t, 0)] = row[0];
        l[(t, 1)] = row[1];
        for s in 0..=t {
            l[(t, 2 + s)] = (a.transpose() * powers[t - s] * q)[0];
        }
    }
    &l * l.transpose() + DMatrix::identity(len, len) * (p.sigma * p.sigma)
}

pub fn gp_cov(times: &[f64], p: &GpParams) -> DMatrix<f64> {
    let n = times.len();
    DMatrix::from_fn(n, n, |i, j| {
        let d = times[i] - times[j];
        let k = p.amplitude.powi(2) * (-d * d / (2.0 * p.lengthscale.powi(2))).exp();
        if i == j {
            k + p.noise.powi(2)
        } else {
            k
        }
    })
}

pub fn dataset(targets: &[Vec<f64>]) -> TimeSeriesDataset {
    let series = targets
        .iter()
        .enumerate()
        .map(|(i, t)| Series {
            id: format!("s{i}"),
            start: default_start(),
            target: t.clone(),
        })
        .collect();
    TimeSeriesDataset::new(series).unwrap()
}

/// Probabilists' Gauss-Hermite rule (nodes, weights summing to one) from the
/// eigen-decomposition of the Jacobi matrix.
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    let j = DMatrix::from_fn(n, n, |r, c| {
        if r + 1 == c || c + 1 == r {
            (r.max(c) as f64).sqrt()
        } else {
            0.0
        }
    });
    let eig = j.symmetric_eigen();
    let nodes = eig.eigenvalues.iter().copied().collect();
    let weights = (0..n).map(|k| eig.eigenvectors[(0, k)].powi(2)).collect();
    (nodes, weights)
}
