//! Exact likelihood for scalar linear-Gaussian state-space models, and the
//! log-scale Gompertz model as an instance.
//!
//! ```text
//! x_n = a x_{n-1} + b + N(0, q)
//! z_n = c + x_n + N(0, r_obs)
//! ```

use serde::Serialize;

use super::nelder_mead::{nelder_mead, NelderMeadOptions, OptimStatus};
use crate::data::TimeSeriesData;
use crate::error::{Error, Result};
use crate::params::ParamVector;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinearGaussianSSM {
    pub a: f64,
    pub b: f64,
    pub q: f64,
    pub c: f64,
    pub r_obs: f64,
    pub x0_mean: f64,
    pub x0_var: f64,
}

impl LinearGaussianSSM {
    fn validate(&self) -> Result<()> {
        if !(self.q >= 0.0 && self.r_obs >= 0.0 && self.x0_var >= 0.0) {
            return Err(Error::Domain("variances must be non-negative".into()));
        }
        Ok(())
    }
}

/// Gaussian log-likelihood of `z` (log-scale observations), one transition per
/// observation. Missing values (NaN) skip the update.
pub fn kalman_loglik_log_scale(ssm: &LinearGaussianSSM, z: &[f64]) -> Result<f64> {
    kalman_loglik_steps(ssm, z, &vec![1; z.len()])
}

/// As [`kalman_loglik_log_scale`] with `steps[n]` transitions before
/// observation `n`.
pub fn kalman_loglik_steps(ssm: &LinearGaussianSSM, z: &[f64], steps: &[usize]) -> Result<f64> {
    ssm.validate()?;
    if steps.len() != z.len() {
        return Err(Error::invalid("kalman steps", "one step count per observation is required"));
    }
    let (mut m, mut v) = (ssm.x0_mean, ssm.x0_var);
    let mut ll = 0.0;
    for (&zn, &k) in z.iter().zip(steps) {
        for _ in 0..k {
            m = ssm.a * m + ssm.b;
            v = ssm.a * ssm.a * v + ssm.q;
        }
        if zn.is_nan() {
            continue;
        }
        let s = v + ssm.r_obs;
        let resid = zn - ssm.c - m;
        if s == 0.0 {
            if resid != 0.0 {
                log::warn!("zero predictive variance with a mismatched observation");
                return Ok(f64::NEG_INFINITY);
            }
            continue;
        }
        ll += -0.5 * ((2.0 * std::f64::consts::PI * s).ln() + resid * resid / s);
        let gain = v / s;
        m += gain * resid;
        v *= 1.0 - gain;
    }
    Ok(ll)
}

/// Log-likelihood of positive observations `y` whose logs follow the model;
/// includes the Jacobian `-sum(log y_n)` so it is on the scale of `y`.
pub fn kalman_loglik(ssm: &LinearGaussianSSM, y_log: &[f64]) -> Result<f64> {
    if y_log.iter().any(|v| v.is_infinite()) {
        return Err(Error::Domain("log observations must be finite".into()));
    }
    let jacobian: f64 = y_log.iter().filter(|v| !v.is_nan()).sum();
    Ok(kalman_loglik_log_scale(ssm, y_log)? - jacobian)
}

/// The log-scale Gompertz model for one unit time step `dt`.
pub fn gompertz_ssm(theta: &ParamVector, dt: f64) -> Result<LinearGaussianSSM> {
    let r = theta.get("r")?;
    let k = theta.get("K")?;
    let sigma = theta.get("sigma")?;
    let tau = theta.get("tau")?;
    let x0 = theta.get("X.0")?;
    if !(k > 0.0 && x0 > 0.0) {
        return Err(Error::Domain("K and X.0 must be positive".into()));
    }
    let a = (-r * dt).exp();
    Ok(LinearGaussianSSM {
        a,
        b: (1.0 - a) * k.ln(),
        q: sigma * sigma,
        c: 0.0,
        r_obs: tau * tau,
        x0_mean: x0.ln(),
        x0_var: 0.0,
    })
}

/// Exact log-likelihood of Gompertz data (column `Y`) with a unit process step.
pub fn gompertz_loglik(data: &TimeSeriesData, theta: &ParamVector) -> Result<f64> {
    let y = data.column("Y")?;
    if y.iter().any(|v| *v <= 0.0) {
        return Err(Error::Domain("Gompertz observations must be positive".into()));
    }
    let ssm = gompertz_ssm(theta, 1.0)?;
    let mut t_prev = data.t0();
    let mut steps = Vec::with_capacity(y.len());
    for &t in data.times() {
        let k = (t - t_prev).round();
        if ((t - t_prev) - k).abs() > 1e-8 {
            return Err(Error::invalid("data", "Gompertz observation times must be whole steps apart"));
        }
        steps.push(k as usize);
        t_prev = t;
    }
    let z: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let jacobian: f64 = z.iter().filter(|v| !v.is_nan()).sum();
    Ok(kalman_loglik_steps(&ssm, &z, &steps)? - jacobian)
}

/// Exact maximum-likelihood estimate.
#[derive(Clone, Debug, Serialize)]
pub struct ExactMle {
    pub theta: ParamVector,
    pub loglik: f64,
    pub status: OptimStatus,
}

/// Maximizes the exact Gompertz likelihood over `(r, sigma, tau)` on the log
/// scale, holding `K` and `X.0` at their values in `start`.
pub fn kalman_exact_mle(data: &TimeSeriesData, start: &ParamVector) -> Result<ExactMle> {
    const EST: [&str; 3] = ["r", "sigma", "tau"];
    let x0: Vec<f64> = EST.iter().map(|n| start.get(n).map(f64::ln)).collect::<Result<_>>()?;
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("starting r, sigma, tau must be positive".into()));
    }
    gompertz_loglik(data, start)?;
    let at = |x: &[f64]| -> ParamVector {
        let mut theta = start.clone();
        for (n, v) in EST.iter().zip(x) {
            theta.set(n, v.exp()).expect("declared");
        }
        theta
    };
    let objective = |x: &[f64]| match gompertz_loglik(data, &at(x)) {
        Ok(ll) => -ll,
        Err(_) => f64::INFINITY,
    };
    let opts = NelderMeadOptions {
        maxit: 5000,
        reltol: 1e-12,
    };
    // restart from the optimum until it stops moving
    let mut best = nelder_mead(objective, &x0, &opts);
    for _ in 0..5 {
        let again = nelder_mead(objective, &best.x, &opts);
        let done = (best.value - again.value).abs() < 1e-10;
        if again.value <= best.value {
            best = again;
        }
        if done {
            break;
        }
    }
    Ok(ExactMle {
        theta: at(&best.x),
        loglik: -best.value,
        status: best.status,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn ldnorm(x: f64, m: f64, s2: f64) -> f64 {
        -0.5 * ((2.0 * std::f64::consts::PI * s2).ln() + (x - m).powi(2) / s2)
    }

    #[test]
    fn iid_reduction() {
        let ssm = LinearGaussianSSM {
            a: 0.0,
            b: 0.0,
            q: 0.0,
            c: 0.0,
            r_obs: 1.0,
            x0_mean: 0.0,
            x0_var: 0.0,
        };
        let z = [0.3, -1.2, 2.0];
        let expected: f64 = z.iter().map(|v| ldnorm(*v, 0.0, 1.0)).sum::<f64>() - z.iter().sum::<f64>();
        assert_relative_eq!(kalman_loglik(&ssm, &z).unwrap(), expected, epsilon = 1e-14);
    }

    #[test]
    fn zero_variance_mismatch_is_impossible() {
        let ssm = LinearGaussianSSM {
            a: 1.0,
            b: 0.0,
            q: 0.0,
            c: 0.0,
            r_obs: 0.0,
            x0_mean: 0.0,
            x0_var: 0.0,
        };
        assert_eq!(kalman_loglik_log_scale(&ssm, &[0.0]).unwrap(), 0.0);
        assert_eq!(kalman_loglik_log_scale(&ssm, &[0.5]).unwrap(), f64::NEG_INFINITY);
    }

    #[test]
    fn missing_values_skip_updates() {
        let ssm = LinearGaussianSSM {
            a: 0.5,
            b: 0.1,
            q: 0.2,
            c: 0.0,
            r_obs: 0.3,
            x0_mean: 0.0,
            x0_var: 0.0,
        };
        let with_gap = kalman_loglik_log_scale(&ssm, &[f64::NAN, 0.4]).unwrap();
        let two_steps = kalman_loglik_steps(&ssm, &[0.4], &[2]).unwrap();
        assert_relative_eq!(with_gap, two_steps, epsilon = 1e-14);
    }
}
