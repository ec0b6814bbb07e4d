use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::autodiff::{softplus, NodeId, Tape};
use crate::error::{Error, Result};

/// Observation model `p(z | u)`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Emission {
    /// Noise lives in the local model, so `z` is observed `u`.
    #[default]
    Gaussian,
    /// `z ~ Poisson(softplus(u))`.
    Poisson,
}

/// Checks that every value is a non-negative integer.
pub fn validate_counts(z: &[f64]) -> Result<()> {
    if let Some((t, v)) = z.iter().enumerate().find(|(_, v)| !(**v >= 0.0 && v.fract() == 0.0 && v.is_finite())) {
        return Err(Error::invalid(format!(
            "Poisson observations must be non-negative integers, got {v} at step {t}"
        )));
    }
    Ok(())
}

fn ln_factorials(z: &[f64]) -> f64 {
    z.iter().map(|&v| ln_gamma(v + 1.0)).sum()
}

/// `sum_t log p(z_t | u_t)` for non-Gaussian emissions.
pub fn emission_loglik(emission: Emission, z: &[f64], u: &[f64]) -> Result<f64> {
    match emission {
        Emission::Gaussian => Err(Error::invalid(
            "Gaussian emission has no separate likelihood term; use exact marginal path",
        )),
        Emission::Poisson => {
            if z.len() != u.len() {
                return Err(Error::invalid(format!("{} observations but {} latent values", z.len(), u.len())));
            }
            validate_counts(z)?;
            let ll: f64 = z
                .iter()
                .zip(u)
                .map(|(&z, &u)| {
                    let lam = softplus(u);
                    z * lam.ln() - lam
                })
                .sum();
            Ok(ll - ln_factorials(z))
        }
    }
}

/// Taped Poisson log-likelihood of counts `z` given the `T x 1` node `u`.
pub fn poisson_loglik_tape(tape: &mut Tape, z: &[f64], u: NodeId) -> Result<NodeId> {
    validate_counts(z)?;
    let lam = tape.softplus(u);
    let log_lam = tape.log(lam);
    let zn = tape.column(z);
    let zl = tape.mul(zn, log_lam)?;
    let per_step = tape.sub(zl, lam)?;
    let total = tape.sum(per_step);
    Ok(tape.offset(total, -ln_factorials(z)))
}
