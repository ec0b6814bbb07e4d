//! Damped level-trend innovation state-space model.
//!
//! ```text
//! h_t = F h_{t-1} + q eps_t,   eps_t ~ N(0, 1)
//! r_t = a^T h_t + nu_t,        nu_t  ~ N(0, sigma^2)
//! a = (delta, gamma),  F = [[delta, gamma], [0, gamma]],  q = (alpha, beta)
//! h_0 ~ N(0, s0^2 I)
//! ```
//!
//! The observation noise is folded into the local model so that the marginal
//! of the residual series is available in closed form from a Kalman filter.

use nalgebra::{Matrix2, Vector2};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{sigmoid, softplus, softplus_inv, Matrix, NodeId, Tape};
use crate::error::{Error, Result};

/// Floor added to every strictly positive parameter after the softplus.
pub const POSITIVE_FLOOR: f64 = 1e-8;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Number of raw (unconstrained) values per series.
pub const ISSM_RAW_LEN: usize = 6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LevelTrendIssmParams {
    /// Level damping `delta` in (0, 1].
    pub delta: f64,
    /// Trend damping `gamma` in (0, 1].
    pub gamma: f64,
    /// Level innovation strength `alpha > 0`.
    pub alpha: f64,
    /// Trend innovation strength `beta > 0`.
    pub beta: f64,
    /// Observation noise std `sigma > 0`.
    pub sigma: f64,
    /// Initial state std `s0 > 0`.
    pub s0: f64,
}

impl Default for LevelTrendIssmParams {
    fn default() -> Self {
        Self {
            delta: 0.9,
            gamma: 0.5,
            alpha: 0.5,
            beta: 0.1,
            sigma: 0.5,
            s0: 1.0,
        }
    }
}

impl LevelTrendIssmParams {
    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| v > 0.0 && v <= 1.0;
        if !unit(self.delta) || !unit(self.gamma) {
            return Err(Error::invalid(format!(
                "damping parameters must lie in (0, 1], got delta={} gamma={}",
                self.delta, self.gamma
            )));
        }
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta), ("sigma", self.sigma), ("s0", self.s0)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be non-negative and finite, got {v}")));
            }
        }
        Ok(())
    }

    pub fn emission(&self) -> Vector2<f64> {
        Vector2::new(self.delta, self.gamma)
    }

    pub fn transition(&self) -> Matrix2<f64> {
        Matrix2::new(self.delta, self.gamma, 0.0, self.gamma)
    }

    pub fn innovation(&self) -> Vector2<f64> {
        Vector2::new(self.alpha, self.beta)
    }

    /// Map unconstrained values `[delta, gamma, alpha, beta, sigma, s0]` to
    /// parameters: sigmoid for the dampings, floored softplus for the rest.
    pub fn from_raw(raw: &[f64]) -> Self {
        let pos = |v: f64| softplus(v) + POSITIVE_FLOOR;
        Self {
            delta: sigmoid(raw[0]),
            gamma: sigmoid(raw[1]),
            alpha: pos(raw[2]),
            beta: pos(raw[3]),
            sigma: pos(raw[4]),
            s0: pos(raw[5]),
        }
    }

    pub fn to_raw(&self) -> [f64; ISSM_RAW_LEN] {
        let logit = |p: f64| {
            let p = p.clamp(1e-12, 1.0 - 1e-12);
            (p / (1.0 - p)).ln()
        };
        let pos = |v: f64| softplus_inv((v - POSITIVE_FLOOR).max(1e-300));
        [
            logit(self.delta),
            logit(self.gamma),
            pos(self.alpha),
            pos(self.beta),
            pos(self.sigma),
            pos(self.s0),
        ]
    }
}

/// Filtered state belief `N(mean, cov)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KalmanBelief {
    pub mean: Vector2<f64>,
    pub cov: Matrix2<f64>,
}

impl KalmanBelief {
    pub fn prior(params: &LevelTrendIssmParams) -> Self {
        Self {
            mean: Vector2::zeros(),
            cov: Matrix2::identity() * (params.s0 * params.s0),
        }
    }
}

/// Exact log-likelihood of the residuals together with the filtered belief
/// after the last observation.
pub fn kalman_filter(r: &[f64], params: &LevelTrendIssmParams) -> Result<(f64, KalmanBelief)> {
    params.validate()?;
    let f = params.transition();
    let a = params.emission();
    let q = params.innovation();
    let qq = q * q.transpose();
    let s2 = params.sigma * params.sigma;
    let mut belief = KalmanBelief::prior(params);
    let mut ll = 0.0;
    for (t, &obs) in r.iter().enumerate() {
        let m_pred = f * belief.mean;
        let p_pred = f * belief.cov * f.transpose() + qq;
        let pa = p_pred * a;
        let s = a.dot(&pa) + s2;
        if !(s > 0.0) {
            return Err(Error::InnovationVariance { step: t, variance: s });
        }
        let v = obs - a.dot(&m_pred);
        ll += -0.5 * (LN_2PI + s.ln() + v * v / s);
        let k = pa / s;
        let j = Matrix2::identity() - k * a.transpose();
        belief = KalmanBelief {
            mean: m_pred + k * v,
            cov: j * p_pred * j.transpose() + k * k.transpose() * s2,
        };
    }
    Ok((ll, belief))
}

/// Marginal log-likelihood `log p(r_{1:T})` via the prediction-error
/// decomposition.
pub fn kalman_loglik(r: &[f64], params: &LevelTrendIssmParams) -> Result<f64> {
    kalman_filter(r, params).map(|(ll, _)| ll)
}

/// Ancestral samples of the next `horizon` residuals given a filtered belief.
/// Rows are sample paths.
pub fn kalman_forecast<R: Rng + ?Sized>(
    belief: &KalmanBelief,
    params: &LevelTrendIssmParams,
    horizon: usize,
    n_samples: usize,
    rng: &mut R,
) -> Result<Matrix> {
    if horizon < 1 {
        return Err(Error::invalid("forecast horizon must be at least 1"));
    }
    params.validate()?;
    let f = params.transition();
    let a = params.emission();
    let q = params.innovation();
    let chol = belief_sqrt(&belief.cov);
    let mut out = Matrix::zeros(n_samples, horizon);
    for n in 0..n_samples {
        let z0: f64 = StandardNormal.sample(rng);
        let z1: f64 = StandardNormal.sample(rng);
        let mut h = belief.mean + chol * Vector2::new(z0, z1);
        for t in 0..horizon {
            let e: f64 = StandardNormal.sample(rng);
            let nu: f64 = StandardNormal.sample(rng);
            h = f * h + q * e;
            out[(n, t)] = a.dot(&h) + params.sigma * nu;
        }
    }
    Ok(out)
}

/// Lower-triangular square root of a symmetric PSD 2x2 matrix, tolerant of
/// exact singularity.
fn belief_sqrt(p: &Matrix2<f64>) -> Matrix2<f64> {
    let l11 = p[(0, 0)].max(0.0).sqrt();
    let l21 = if l11 > 0.0 { p[(1, 0)] / l11 } else { 0.0 };
    let l22 = (p[(1, 1)] - l21 * l21).max(0.0).sqrt();
    Matrix2::new(l11, 0.0, l21, l22)
}

/// Constrained ISSM parameters as 1x1 tape nodes.
#[derive(Clone, Copy, Debug)]
pub struct IssmNodes {
    pub delta: NodeId,
    pub gamma: NodeId,
    pub alpha: NodeId,
    pub beta: NodeId,
    pub sigma: NodeId,
    pub s0: NodeId,
}

impl IssmNodes {
    /// Apply the constraining transforms to a `6 x 1` raw parameter node.
    pub fn from_raw(tape: &mut Tape, raw: NodeId) -> Result<Self> {
        let mut at = |k: usize, positive: bool| -> Result<NodeId> {
            let v = tape.entry(raw, k, 0)?;
            Ok(if positive {
                let s = tape.softplus(v);
                tape.offset(s, POSITIVE_FLOOR)
            } else {
                tape.sigmoid(v)
            })
        };
        Ok(Self {
            delta: at(0, false)?,
            gamma: at(1, false)?,
            alpha: at(2, true)?,
            beta: at(3, true)?,
            sigma: at(4, true)?,
            s0: at(5, true)?,
        })
    }

    /// Constants on the tape (no gradient path to any parameter).
    pub fn constant(tape: &mut Tape, p: &LevelTrendIssmParams) -> Self {
        Self {
            delta: tape.constant_scalar(p.delta),
            gamma: tape.constant_scalar(p.gamma),
            alpha: tape.constant_scalar(p.alpha),
            beta: tape.constant_scalar(p.beta),
            sigma: tape.constant_scalar(p.sigma),
            s0: tape.constant_scalar(p.s0),
        }
    }

    pub fn values(&self, tape: &Tape) -> LevelTrendIssmParams {
        LevelTrendIssmParams {
            delta: tape.scalar(self.delta),
            gamma: tape.scalar(self.gamma),
            alpha: tape.scalar(self.alpha),
            beta: tape.scalar(self.beta),
            sigma: tape.scalar(self.sigma),
            s0: tape.scalar(self.s0),
        }
    }
}

/// Differentiable Kalman log-likelihood of the `T x 1` residual node `r`,
/// using the Joseph form for the covariance update.
pub fn kalman_loglik_tape(tape: &mut Tape, r: NodeId, p: &IssmNodes) -> Result<NodeId> {
    let t_len = tape.shape(r).0;
    if t_len == 0 {
        return Ok(tape.constant_scalar(0.0));
    }
    let zero = tape.constant_scalar(0.0);
    let a = tape.concat_rows(&[p.delta, p.gamma])?;
    let f_top = tape.concat_cols(&[p.delta, p.gamma])?;
    let f_bot = tape.concat_cols(&[zero, p.gamma])?;
    let f = tape.concat_rows(&[f_top, f_bot])?;
    let ft = tape.transpose(f);
    let at = tape.transpose(a);
    let q = tape.concat_rows(&[p.alpha, p.beta])?;
    let qt = tape.transpose(q);
    let qq = tape.matmul(q, qt)?;
    let s2 = tape.square(p.sigma);
    let eye = tape.leaf(Matrix::identity(2, 2));

    let var0 = tape.square(p.s0);
    let mut m = tape.leaf(Matrix::zeros(2, 1));
    let mut cov = tape.mul(eye, var0)?;
    let mut terms = Vec::with_capacity(t_len);
    for t in 0..t_len {
        let m_pred = tape.matmul(f, m)?;
        let fp = tape.matmul(f, cov)?;
        let fpf = tape.matmul(fp, ft)?;
        let p_pred = tape.add(fpf, qq)?;
        let pa = tape.matmul(p_pred, a)?;
        let apa = tape.dot(a, pa)?;
        let s = tape.add(apa, s2)?;
        let s_val = tape.scalar(s);
        if !(s_val > 0.0) {
            return Err(Error::InnovationVariance { step: t, variance: s_val });
        }
        let obs = tape.entry(r, t, 0)?;
        let pred = tape.dot(a, m_pred)?;
        let v = tape.sub(obs, pred)?;
        // -0.5 * (ln S + v^2 / S); the 2 pi constant is added once at the end.
        let ln_s = tape.log(s);
        let v2 = tape.square(v);
        let ratio = tape.div(v2, s)?;
        let sum = tape.add(ln_s, ratio)?;
        terms.push(sum);

        let k = tape.div(pa, s)?;
        let kv = tape.mul(k, v)?;
        m = tape.add(m_pred, kv)?;
        let ka = tape.matmul(k, at)?;
        let j = tape.sub(eye, ka)?;
        let jt = tape.transpose(j);
        let jp = tape.matmul(j, p_pred)?;
        let jpj = tape.matmul(jp, jt)?;
        let kt = tape.transpose(k);
        let kk = tape.matmul(k, kt)?;
        let kks = tape.mul(kk, s2)?;
        cov = tape.add(jpj, kks)?;
    }
    let all = tape.concat_rows(&terms)?;
    let total = tape.sum(all);
    let half = tape.scale(total, -0.5);
    Ok(tape.offset(half, -0.5 * LN_2PI * t_len as f64))
}
