use crate::autodiff::{NodeId, Tape};
use crate::error::{Error, Result};

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

/// `sum_t log N(r_t | 0, sigma_t^2)`.
pub fn rnn_noise_loglik(r: &[f64], sigma: &[f64]) -> Result<f64> {
    if r.len() != sigma.len() {
        return Err(Error::invalid(format!("{} residuals but {} noise scales", r.len(), sigma.len())));
    }
    let mut ll = 0.0;
    for (t, (&r, &s)) in r.iter().zip(sigma).enumerate() {
        if !(s > 0.0) {
            return Err(Error::invalid(format!("noise scale at step {t} must be positive, got {s}")));
        }
        ll += -HALF_LN_2PI - s.ln() - 0.5 * (r / s).powi(2);
    }
    Ok(ll)
}

/// Taped version for `T x 1` residual and scale nodes.
pub fn rnn_noise_loglik_tape(tape: &mut Tape, r: NodeId, sigma: NodeId) -> Result<NodeId> {
    if let Some((t, s)) = tape.value(sigma).iter().enumerate().find(|(_, s)| !(**s > 0.0)) {
        return Err(Error::invalid(format!("noise scale at step {t} must be positive, got {s}")));
    }
    let t_len = tape.shape(r).0;
    let z = tape.div(r, sigma)?;
    let z2 = tape.square(z);
    let half = tape.scale(z2, 0.5);
    let log_s = tape.log(sigma);
    let per_step = tape.add(half, log_s)?;
    let total = tape.sum(per_step);
    let neg = tape.neg(total);
    Ok(tape.offset(neg, -HALF_LN_2PI * t_len as f64))
}
