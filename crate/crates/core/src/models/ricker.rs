//! Stochastic Ricker map with Poisson sampling.
//!
//! ```text
//! e_{t+1} ~ N(0, sigma^2)
//! N_{t+1} = r N_t exp(-N_t + e_{t+1})
//! y_t     ~ Poisson(phi N_t)
//! ```

use crate::data::TimeSeriesData;
use crate::distributions::{ldpois, rnorm, rpois};
use crate::error::Result;
use crate::model::{ModelSpec, Stepper};
use crate::params::ParamVector;

pub const PARAMS: [&str; 5] = ["r", "sigma", "phi", "N.0", "e.0"];

/// `r = exp(3.8), sigma = 0.3, phi = 10, N.0 = 7, e.0 = 0`.
pub fn default_params() -> ParamVector {
    ParamVector::new([("r", 3.8f64.exp()), ("sigma", 0.3), ("phi", 10.0), ("N.0", 7.0), ("e.0", 0.0)]).expect("valid")
}

/// `r = 20, sigma = 1, phi = 20`, other parameters at their defaults.
pub fn guess_params() -> ParamVector {
    default_params()
        .with(&[("r", 20.0), ("sigma", 1.0), ("phi", 20.0)])
        .expect("declared")
}

/// Observation times `0, 1, ..., 50` with `t0 = 0`, all missing.
pub fn default_data() -> TimeSeriesData {
    TimeSeriesData::placeholder(0.0, (0..=50).map(f64::from).collect(), &["y"]).expect("valid")
}

/// The Ricker model. `r`, `sigma`, `phi` and `N.0` are log-transformed for
/// estimation; `e.0` is left as is.
pub fn ricker(data: Option<TimeSeriesData>) -> Result<ModelSpec> {
    const LOGGED: [bool; 5] = [true, true, true, true, false];
    ModelSpec::builder("ricker")
        .states(&["N", "e"])
        .params(&PARAMS)
        .data(data.unwrap_or_else(default_data))
        .rprocess(Stepper::DiscreteTime { delta_t: 1.0 }, |x, p, _t, _dt, _c, rng| {
            let (r, sigma) = (p[0], p[1]);
            x[1] = rnorm(0.0, sigma, rng);
            x[0] = r * x[0] * (-x[0] + x[1]).exp();
        })
        .rmeasure(|x, p, _t, _c, rng, y| y[0] = rpois(p[2] * x[0], rng))
        .dmeasure(|y, x, p, _t, _c| ldpois(y[0], p[2] * x[0]))
        .transforms(
            |p, out| {
                for ((o, v), l) in out.iter_mut().zip(p).zip(LOGGED) {
                    *o = if l { v.ln() } else { *v };
                }
            },
            |p, out| {
                for ((o, v), l) in out.iter_mut().zip(p).zip(LOGGED) {
                    *o = if l { v.exp() } else { *v };
                }
            },
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
    fn fixed_point_without_noise() {
        let m = ricker(None).unwrap();
        let r = 3.8f64.exp();
        let theta = default_params().with(&[("sigma", 0.0), ("N.0", r.ln())]).unwrap();
        let s = &simulate(&m, &theta, StreamKey::new(1), 1).unwrap()[0];
        for n in s.state("N").unwrap() {
            assert_relative_eq!(n, r.ln(), max_relative = 1e-12);
        }
    }

    #[test]
    fn deterministic_orbit_without_noise() {
        let m = ricker(None).unwrap();
        let theta = default_params().with(&[("sigma", 0.0)]).unwrap();
        let s = &simulate(&m, &theta, StreamKey::new(1), 1).unwrap()[0];
        let r = 3.8f64.exp();
        let mut n = 7.0f64;
        // t0 coincides with the first observation time, so the orbit starts there
        for got in s.state("N").unwrap().iter().skip(1) {
            assert_eq!(*got, n);
            n = r * n * (-n).exp();
        }
    }

    #[test]
    fn poisson_zero() {
        let m = ricker(None).unwrap();
        let p = m.param_values(&default_params()).unwrap();
        let d = m.dmeasure(&[0.0], &[0.2, 0.0], &p, 1.0, false).unwrap();
        assert_relative_eq!(d, (-2.0f64).exp(), epsilon = 1e-15);
    }

    #[test]
    fn truth_matches_published_values() {
        let p = default_params();
        assert_relative_eq!(p.get("r").unwrap(), 44.701, epsilon = 1e-3);
    }
}
