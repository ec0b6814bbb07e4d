//! Per-series random-effect models and their exact Gaussian marginals.

mod gp;
mod issm;
mod rnn_noise;

pub use gp::{
    gp_loglik, gp_loglik_tape, gp_posterior_forecast, normalized_times, rbf_kernel, GpNodes, GpParams, GpPosterior,
    GP_RAW_LEN,
};
pub use issm::{
    kalman_filter, kalman_forecast, kalman_loglik, kalman_loglik_tape, IssmNodes, KalmanBelief, LevelTrendIssmParams,
    ISSM_RAW_LEN, POSITIVE_FLOOR,
};
pub use rnn_noise::{rnn_noise_loglik, rnn_noise_loglik_tape};
