//! Stochastic Gompertz population model with lognormal measurement error.
//!
//! ```text
//! X_{t+dt} = K^(1-S) X_t^S eps,   S = exp(-r dt),  log eps ~ N(0, sigma^2)
//! Y_t      = X_t exp(N(0, tau^2))
//! ```

use crate::data::TimeSeriesData;
use crate::distributions::{ldlnorm, rnorm};
use crate::error::Result;
use crate::model::{ModelSpec, Stepper};
use crate::params::ParamVector;

pub const PARAMS: [&str; 5] = ["r", "K", "sigma", "tau", "X.0"];

/// `r = 0.1, K = 1, sigma = 0.1, tau = 0.1, X.0 = 1`.
pub fn default_params() -> ParamVector {
    ParamVector::new([("r", 0.1), ("K", 1.0), ("sigma", 0.1), ("tau", 0.1), ("X.0", 1.0)]).expect("valid")
}

/// Observation times `1, ..., 100` with `t0 = 0`, all missing.
pub fn default_data() -> TimeSeriesData {
    TimeSeriesData::placeholder(0.0, (1..=100).map(f64::from).collect(), &["Y"]).expect("valid")
}

/// The Gompertz model on `data` (default: 100 unit-spaced missing
/// observations). Parameters are log-transformed for estimation.
pub fn gompertz(data: Option<TimeSeriesData>) -> Result<ModelSpec> {
    ModelSpec::builder("gompertz")
        .states(&["X"])
        .params(&PARAMS)
        .data(data.unwrap_or_else(default_data))
        .rprocess(Stepper::DiscreteTime { delta_t: 1.0 }, |x, p, _t, dt, _c, rng| {
            let (r, k, sigma) = (p[0], p[1], p[2]);
            let s = (-r * dt).exp();
            let eps = rnorm(0.0, sigma, rng).exp();
            x[0] = k.powf(1.0 - s) * x[0].powf(s) * eps;
        })
        .rmeasure(|x, p, _t, _c, rng, y| {
            y[0] = x[0] * rnorm(0.0, p[3], rng).exp();
        })
        .dmeasure(|y, x, p, _t, _c| ldlnorm(y[0], x[0].ln(), p[3]))
        .transforms(
            |p, out| out.iter_mut().zip(p).for_each(|(o, v)| *o = v.ln()),
            |p, out| out.iter_mut().zip(p).for_each(|(o, v)| *o = v.exp()),
        )
        .default_params(default_params())
        .build()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::StreamKey;
    use crate::simulate;
    use approx::assert_relative_eq;

    #[test]
    fn noise_free_fixed_point() {
        let m = gompertz(None).unwrap();
        let theta = default_params().with(&[("sigma", 0.0), ("tau", 0.0), ("r", 0.7)]).unwrap();
        let sims = simulate(&m, &theta, StreamKey::new(3), 2).unwrap();
        for s in &sims {
            assert!(s.states.iter().all(|v| *v == 1.0));
            assert!(s.observations.iter().all(|v| *v == 1.0));
        }
    }

    #[test]
    fn zero_growth_is_log_random_walk() {
        let m = gompertz(None).unwrap();
        let theta = default_params().with(&[("r", 0.0), ("K", 5.0), ("X.0", 2.0)]).unwrap();
        let s = &simulate(&m, &theta, StreamKey::new(9), 1).unwrap()[0];
        // with S = 1 the carrying capacity drops out entirely
        let other = default_params().with(&[("r", 0.0), ("K", 50.0), ("X.0", 2.0)]).unwrap();
        let s2 = &simulate(&m, &other, StreamKey::new(9), 1).unwrap()[0];
        assert_eq!(s.states, s2.states);
    }

    #[test]
    fn measurement_density_at_median() {
        let m = gompertz(None).unwrap();
        let p = m.param_values(&default_params()).unwrap();
        let ll = m.dmeasure(&[1.0], &[1.0], &p, 1.0, true).unwrap();
        assert_relative_eq!(ll, 1.383646559789373, epsilon = 1e-12);
    }

    #[test]
    fn log_transform_round_trip() {
        use crate::model::Direction;
        let m = gompertz(None).unwrap();
        let theta = default_params().with(&[("r", 1.0)]).unwrap();
        let est = m.transform_params(&theta, Direction::ToEstimation).unwrap();
        assert_eq!(est.get("r").unwrap(), 0.0);
        let back = m.transform_params(&est, Direction::FromEstimation).unwrap();
        for (a, b) in back.values().iter().zip(theta.values()) {
            assert_relative_eq!(a, b, max_relative = 1e-12);
        }
    }
}
