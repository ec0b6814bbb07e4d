//! Zero-mean Gaussian process random effect with an RBF kernel over
//! normalized time.

use nalgebra::DVector;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::issm::POSITIVE_FLOOR;
use crate::autodiff::{cholesky_with_jitter, softplus, softplus_inv, Matrix, NodeId, Tape};
use crate::error::{Error, Result};

pub const GP_RAW_LEN: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GpParams {
    pub lengthscale: f64,
    pub amplitude: f64,
    /// Observation noise std.
    pub noise: f64,
}

impl Default for GpParams {
    fn default() -> Self {
        Self {
            lengthscale: 0.1,
            amplitude: 1.0,
            noise: 0.5,
        }
    }
}

impl GpParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.lengthscale > 0.0 && self.lengthscale.is_finite()) {
            return Err(Error::invalid(format!("lengthscale must be positive, got {}", self.lengthscale)));
        }
        if !(self.amplitude >= 0.0 && self.amplitude.is_finite()) || !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::invalid("amplitude and noise must be non-negative"));
        }
        Ok(())
    }

    /// Unconstrained values are `[lengthscale, amplitude, noise]`, each through
    /// a floored softplus.
    pub fn from_raw(raw: &[f64]) -> Self {
        let pos = |v: f64| softplus(v) + POSITIVE_FLOOR;
        Self {
            lengthscale: pos(raw[0]),
            amplitude: pos(raw[1]),
            noise: pos(raw[2]),
        }
    }

    pub fn to_raw(&self) -> [f64; GP_RAW_LEN] {
        let pos = |v: f64| softplus_inv((v - POSITIVE_FLOOR).max(1e-300));
        [pos(self.lengthscale), pos(self.amplitude), pos(self.noise)]
    }
}

/// Map integer step indices onto the unit interval of a training span of
/// `span_len` steps.
pub fn normalized_times(start: usize, len: usize, span_len: usize) -> Vec<f64> {
    let scale = if span_len > 1 { 1.0 / (span_len - 1) as f64 } else { 1.0 };
    (start..start + len).map(|t| t as f64 * scale).collect()
}

/// `a^2 exp(-(s - t)^2 / (2 l^2))` for every pair.
pub fn rbf_kernel(lhs: &[f64], rhs: &[f64], lengthscale: f64, amplitude: f64) -> Matrix {
    let a2 = amplitude * amplitude;
    let c = 0.5 / (lengthscale * lengthscale);
    Matrix::from_fn(lhs.len(), rhs.len(), |i, j| {
        let d = lhs[i] - rhs[j];
        a2 * (-c * d * d).exp()
    })
}

fn sq_dists(times: &[f64]) -> Matrix {
    Matrix::from_fn(times.len(), times.len(), |i, j| (times[i] - times[j]).powi(2))
}

fn check_len(r: &[f64], times: &[f64]) -> Result<()> {
    if r.is_empty() {
        return Err(Error::invalid("GP log-likelihood needs at least one observation"));
    }
    if r.len() != times.len() {
        return Err(Error::invalid(format!(
            "{} residuals but {} time inputs",
            r.len(),
            times.len()
        )));
    }
    Ok(())
}

fn train_cov(times: &[f64], p: &GpParams) -> Matrix {
    let mut k = rbf_kernel(times, times, p.lengthscale, p.amplitude);
    for i in 0..times.len() {
        k[(i, i)] += p.noise * p.noise;
    }
    k
}

/// `log N(r | 0, K + sigma^2 I)`.
pub fn gp_loglik(r: &[f64], times: &[f64], params: &GpParams) -> Result<f64> {
    check_len(r, times)?;
    params.validate()?;
    let (chol, _) = cholesky_with_jitter(&train_cov(times, params))?;
    let x = DVector::from_column_slice(r);
    let alpha = chol.solve(&x);
    let l = chol.l_dirty();
    let logdet: f64 = 2.0 * (0..r.len()).map(|i| l[(i, i)].ln()).sum::<f64>();
    Ok(-0.5 * (r.len() as f64 * (2.0 * std::f64::consts::PI).ln() + logdet + x.dot(&alpha)))
}

/// GP hyperparameters as 1x1 tape nodes.
#[derive(Clone, Copy, Debug)]
pub struct GpNodes {
    pub lengthscale: NodeId,
    pub amplitude: NodeId,
    pub noise: NodeId,
}

impl GpNodes {
    pub fn from_raw(tape: &mut Tape, raw: NodeId) -> Result<Self> {
        let mut at = |k: usize| -> Result<NodeId> {
            let v = tape.entry(raw, k, 0)?;
            let s = tape.softplus(v);
            Ok(tape.offset(s, POSITIVE_FLOOR))
        };
        Ok(Self {
            lengthscale: at(0)?,
            amplitude: at(1)?,
            noise: at(2)?,
        })
    }

    pub fn constant(tape: &mut Tape, p: &GpParams) -> Self {
        Self {
            lengthscale: tape.constant_scalar(p.lengthscale),
            amplitude: tape.constant_scalar(p.amplitude),
            noise: tape.constant_scalar(p.noise),
        }
    }

    pub fn values(&self, tape: &Tape) -> GpParams {
        GpParams {
            lengthscale: tape.scalar(self.lengthscale),
            amplitude: tape.scalar(self.amplitude),
            noise: tape.scalar(self.noise),
        }
    }
}

/// Differentiable version of [`gp_loglik`] for the `T x 1` residual node `r`.
pub fn gp_loglik_tape(tape: &mut Tape, r: NodeId, times: &[f64], p: &GpNodes) -> Result<NodeId> {
    let t_len = tape.shape(r).0;
    if t_len == 0 {
        return Err(Error::invalid("GP log-likelihood needs at least one observation"));
    }
    if t_len != times.len() {
        return Err(Error::invalid(format!("{t_len} residuals but {} time inputs", times.len())));
    }
    let d = tape.leaf(sq_dists(times));
    let l2 = tape.square(p.lengthscale);
    let inv = tape.div(d, l2)?;
    let arg = tape.scale(inv, -0.5);
    let rbf = tape.exp(arg);
    let a2 = tape.square(p.amplitude);
    let k = tape.mul(rbf, a2)?;
    let eye = tape.leaf(Matrix::identity(t_len, t_len));
    let s2 = tape.square(p.noise);
    let noise = tape.mul(eye, s2)?;
    let cov = tape.add(k, noise)?;
    tape.gaussian_log_density(cov, r)
}

/// Gaussian predictive distribution of the latent residual at test inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct GpPosterior {
    pub mean: DVector<f64>,
    pub cov: Matrix,
}

/// Standard GP conditional given noisy residuals at `times`.
pub fn gp_posterior_forecast(r: &[f64], times: &[f64], test_times: &[f64], params: &GpParams) -> Result<GpPosterior> {
    check_len(r, times)?;
    params.validate()?;
    let (chol, _) = cholesky_with_jitter(&train_cov(times, params))?;
    let k_star = rbf_kernel(times, test_times, params.lengthscale, params.amplitude);
    let k_ss = rbf_kernel(test_times, test_times, params.lengthscale, params.amplitude);
    let alpha = chol.solve(&DVector::from_column_slice(r));
    let mean = k_star.transpose() * alpha;
    let v = chol.solve(&k_star);
    let mut cov = k_ss - k_star.transpose() * v;
    cov = (&cov + cov.transpose()) * 0.5;
    Ok(GpPosterior { mean, cov })
}

impl GpPosterior {
    /// Draw `n_samples` paths (rows). `extra_noise` is an observation noise
    /// std added independently at each step.
    pub fn sample<R: Rng + ?Sized>(&self, n_samples: usize, extra_noise: f64, rng: &mut R) -> Matrix {
        let m = self.mean.len();
        let root = psd_sqrt(&self.cov);
        let mut out = Matrix::zeros(n_samples, m);
        for n in 0..n_samples {
            let z = DVector::from_fn(m, |_, _| StandardNormal.sample(rng));
            let path = &self.mean + &root * z;
            for t in 0..m {
                let e: f64 = StandardNormal.sample(rng);
                out[(n, t)] = path[t] + extra_noise * e;
            }
        }
        out
    }
}

/// Square root `S` with `S S^T = cov`, clipping tiny negative eigenvalues.
fn psd_sqrt(cov: &Matrix) -> Matrix {
    if let Ok((chol, _)) = cholesky_with_jitter(cov) {
        return chol.l();
    }
    let eig = cov.clone().symmetric_eigen();
    let d = eig.eigenvalues.map(|e| e.max(0.0).sqrt());
    &eig.eigenvectors * Matrix::from_diagonal(&d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn far_apart_inputs_give_standard_normal() {
        let p = GpParams {
            lengthscale: 1.0,
            amplitude: 1.0,
            noise: 0.0,
        };
        let ll = gp_loglik(&[0.0; 3], &[0.0, 100.0, 200.0], &p).unwrap();
        assert!((ll + 1.5 * (2.0 * std::f64::consts::PI).ln()).abs() < 1e-8);
        assert!((ll + 2.7568).abs() < 1e-4);
    }

    #[test]
    fn single_point() {
        let p = GpParams {
            lengthscale: 0.3,
            amplitude: 1.0,
            noise: 0.0,
        };
        let ll = gp_loglik(&[1.0], &[0.0], &p).unwrap();
        assert!((ll + 1.4189).abs() < 1e-4);
    }

    #[test]
    fn zero_data_gives_zero_mean() {
        let p = GpParams::default();
        let post = gp_posterior_forecast(&[0.0; 4], &normalized_times(0, 4, 4), &normalized_times(4, 3, 4), &p).unwrap();
        assert!(post.mean.iter().all(|m| *m == 0.0));
    }

    #[test]
    fn interpolates_training_point_without_noise() {
        let p = GpParams {
            lengthscale: 0.5,
            amplitude: 1.3,
            noise: 0.0,
        };
        let times = normalized_times(0, 5, 5);
        let r = [0.4, -0.2, 1.1, 0.7, 0.0];
        let post = gp_posterior_forecast(&r, &times, &[times[2]], &p).unwrap();
        assert!((post.mean[0] - r[2]).abs() < 1e-8);
        assert!(post.cov[(0, 0)].abs() < 1e-8);
    }

    #[test]
    fn tape_matches_plain() {
        let p = GpParams {
            lengthscale: 0.4,
            amplitude: 0.8,
            noise: 0.3,
        };
        let times = normalized_times(0, 6, 6);
        let r = [0.1, 0.5, -0.3, 0.2, 0.9, -1.0];
        let plain = gp_loglik(&r, &times, &p).unwrap();
        let mut tape = Tape::new();
        let rn = tape.column(&r);
        let nodes = GpNodes::constant(&mut tape, &p);
        let ll = gp_loglik_tape(&mut tape, rn, &times, &nodes).unwrap();
        assert!((tape.scalar(ll) - plain).abs() < 1e-10);
    }

    #[test]
    fn samples_follow_posterior_mean() {
        let p = GpParams::default();
        let times = normalized_times(0, 8, 8);
        let r: Vec<f64> = (0..8).map(|t| (t as f64).sin()).collect();
        let post = gp_posterior_forecast(&r, &times, &normalized_times(8, 2, 8), &p).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 20_000;
        let s = post.sample(n, 0.0, &mut rng);
        for t in 0..2 {
            let m = s.column(t).mean();
            let se = (post.cov[(t, t)] / n as f64).sqrt();
            assert!((m - post.mean[t]).abs() < 4.0 * se);
        }
    }
}
