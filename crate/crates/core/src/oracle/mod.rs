//! Exact reference computations: a scalar Kalman filter for the log-scale
//! Gompertz model and the Nelder–Mead optimizer used throughout.

pub mod kalman;
pub mod nelder_mead;

pub use kalman::{
    gompertz_loglik, gompertz_ssm, kalman_exact_mle, kalman_loglik, kalman_loglik_log_scale, kalman_loglik_steps,
    ExactMle, LinearGaussianSSM,
};
pub use nelder_mead::{nelder_mead, NelderMeadOptions, NelderMeadResult, OptimStatus};
