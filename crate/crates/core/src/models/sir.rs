//! Stochastic SIR models simulated by Euler-multinomial tau-leaping, with
//! negative binomial case reports.
//!
//! Time is in years; cases are reported weekly and the Euler step is one
//! twentieth of a week. `H` counts new infections since the last report.

use std::f64::consts::PI;

use crate::covariate::CovariateTable;
use crate::data::TimeSeriesData;
use crate::distributions::{ldnbinom_mu, reulermultinom_into, rnbinom_mu, rnorm, rpois};
use crate::error::{Error, Result};
use crate::model::{ModelSpec, Stepper};
use crate::params::ParamVector;

pub const DELTA_T: f64 = 1.0 / 52.0 / 20.0;

pub const PARAMS: [&str; 9] = ["popsize", "beta", "gamma", "mu", "rho", "theta", "S.0", "I.0", "R.0"];

pub const SEASONAL_PARAMS: [&str; 13] = [
    "popsize", "iota", "b1", "b2", "b3", "gamma", "mu", "rho", "theta", "sigma", "S.0", "I.0", "R.0",
];

pub fn default_params() -> ParamVector {
    ParamVector::new([
        ("popsize", 500_000.0),
        ("beta", 400.0),
        ("gamma", 26.0),
        ("mu", 1.0 / 50.0),
        ("rho", 0.1),
        ("theta", 100.0),
        ("S.0", 26.0 / 400.0),
        ("I.0", 0.002),
        ("R.0", 1.0),
    ])
    .expect("valid")
}

pub fn seasonal_default_params() -> ParamVector {
    ParamVector::new([
        ("popsize", 500_000.0),
        ("iota", 5.0),
        ("b1", 6.0),
        ("b2", 0.2),
        ("b3", -0.1),
        ("gamma", 26.0),
        ("mu", 1.0 / 50.0),
        ("rho", 0.1),
        ("theta", 100.0),
        ("sigma", 0.3),
        ("S.0", 0.055),
        ("I.0", 0.002),
        ("R.0", 0.94),
    ])
    .expect("valid")
}

/// Weekly reports over ten years, `t = 0, 1/52, ..., 10`, with `t0 = -1/52`.
pub fn default_data() -> TimeSeriesData {
    TimeSeriesData::placeholder(-1.0 / 52.0, (0..=520).map(|k| k as f64 / 52.0).collect(), &["cases"]).expect("valid")
}

/// Synthetic monthly birth counts (births per year) covering the default
/// data span: a population of 500 000 at birth rate 1/50 per year with a
/// 10% seasonal swing peaking in spring. Not derived from any real population.
pub fn synthetic_births() -> CovariateTable {
    let times: Vec<f64> = (-1..=121).map(|k| k as f64 / 12.0).collect();
    let rows = times
        .iter()
        .map(|t| 10_000.0 * (1.0 + 0.1 * (2.0 * PI * (t - 0.25)).cos()))
        .collect();
    CovariateTable::new(times, vec!["births".into()], rows).expect("valid")
}

fn round_fractions(popsize: f64, fracs: [f64; 3]) -> [f64; 3] {
    let total: f64 = fracs.iter().sum();
    fracs.map(|f| (popsize * f / total).round())
}

/// Transmission, recovery and death exits for one Euler step; returns
/// `(births, dN_SI, dN_S, dN_IR, dN_I, dN_R)`.
#[allow(clippy::too_many_arguments)]
fn tau_leap(
    s: f64,
    i: f64,
    r: f64,
    birth_rate: f64,
    force: f64,
    gamma: f64,
    mu: f64,
    dt: f64,
    rng: &mut crate::rng::StreamRng,
) -> [f64; 6] {
    let mut dn = [0.0; 6];
    dn[0] = rpois(birth_rate * dt, rng);
    reulermultinom_into(s, &[force, mu], dt, rng, &mut dn[1..3]);
    reulermultinom_into(i, &[gamma, mu], dt, rng, &mut dn[3..5]);
    reulermultinom_into(r, &[mu], dt, rng, &mut dn[5..6]);
    dn
}

fn check_counts(x: &[f64]) {
    assert!(
        x.iter().all(|v| *v >= 0.0),
        "negative compartment count {x:?}; multinomial exits must not exceed compartment sizes"
    );
}

fn measurement_parts(builder: crate::model::ModelBuilder, rho: usize, theta: usize, h: usize) -> crate::model::ModelBuilder {
    builder
        .rmeasure(move |x, p, _t, _c, rng, y| y[0] = rnbinom_mu(p[theta], p[rho] * x[h], rng))
        .dmeasure(move |y, x, p, _t, _c| ldnbinom_mu(y[0], p[theta], p[rho] * x[h]))
}

fn positive_transforms(builder: crate::model::ModelBuilder, rho: usize, identity: &'static [usize]) -> crate::model::ModelBuilder {
    builder.transforms(
        move |p, out| {
            for (k, (o, v)) in out.iter_mut().zip(p).enumerate() {
                *o = if k == rho {
                    (v / (1.0 - v)).ln()
                } else if identity.contains(&k) {
                    *v
                } else {
                    v.ln()
                };
            }
        },
        move |p, out| {
            for (k, (o, v)) in out.iter_mut().zip(p).enumerate() {
                *o = if k == rho {
                    1.0 / (1.0 + (-v).exp())
                } else if identity.contains(&k) {
                    *v
                } else {
                    v.exp()
                };
            }
        },
    )
}

/// Basic SIR with constant transmission and births at rate `mu * P`.
/// States `S, I, R, H`; `H` is reset after each report.
pub fn sir(data: Option<TimeSeriesData>) -> Result<ModelSpec> {
    let b = ModelSpec::builder("sir")
        .states(&["S", "I", "R", "H"])
        .params(&PARAMS)
        .data(data.unwrap_or_else(default_data))
        .accumulators(&["H"])
        .initializer(|p, _t0, _rng, x| {
            let [s, i, r] = round_fractions(p[0], [p[6], p[7], p[8]]);
            x.copy_from_slice(&[s, i, r, 0.0]);
        })
        .rprocess(Stepper::Euler { delta_t: DELTA_T }, |x, p, _t, dt, _c, rng| {
            let (beta, gamma, mu) = (p[1], p[2], p[3]);
            let pop = x[0] + x[1] + x[2];
            let force = if pop > 0.0 { beta * x[1] / pop } else { 0.0 };
            let dn = tau_leap(x[0], x[1], x[2], mu * pop, force, gamma, mu, dt, rng);
            x[0] += dn[0] - dn[1] - dn[2];
            x[1] += dn[1] - dn[3] - dn[4];
            x[2] += dn[3] - dn[5];
            x[3] += dn[1];
            check_counts(x);
        });
    let b = measurement_parts(b, 4, 5, 3);
    positive_transforms(b, 4, &[])
        .default_params(default_params())
        .build()
}

/// Seasonal SIR with covariate births, imported infections `iota`, and a
/// randomly diffusing seasonal phase `Phi` (`dPhi = dt + sigma dW`).
/// States `S, I, R, H, P, Phi, noise`; `H` and `noise` are reset after each
/// report. The covariate table must have a `births` column (births per year);
/// when omitted, [`synthetic_births`] is used.
pub fn sir_seasonal(data: Option<TimeSeriesData>, births: Option<CovariateTable>) -> Result<ModelSpec> {
    let table = births.unwrap_or_else(synthetic_births);
    let births_col = table
        .names()
        .iter()
        .position(|n| n == "births")
        .ok_or_else(|| Error::invalid("covariates", "seasonal SIR needs a `births` column"))?;
    let b = ModelSpec::builder("sir-seasonal")
        .states(&["S", "I", "R", "H", "P", "Phi", "noise"])
        .params(&SEASONAL_PARAMS)
        .data(data.unwrap_or_else(default_data))
        .covariates(table)
        .accumulators(&["H", "noise"])
        .initializer(|p, _t0, _rng, x| {
            let [s, i, r] = round_fractions(p[0], [p[10], p[11], p[12]]);
            x.copy_from_slice(&[s, i, r, 0.0, p[0].round(), 0.0, 0.0]);
        })
        .rprocess(Stepper::Euler { delta_t: DELTA_T }, move |x, p, _t, dt, c, rng| {
            let (iota, b1, b2, b3, gamma, mu, sigma) = (p[1], p[2], p[3], p[4], p[5], p[6], p[9]);
            let phase = 2.0 * PI * x[5];
            let beta = (b1 + b2 * phase.cos() + b3 * phase.sin()).exp();
            let force = if x[4] > 0.0 { beta * (x[1] + iota) / x[4] } else { 0.0 };
            let dn = tau_leap(x[0], x[1], x[2], c[births_col], force, gamma, mu, dt, rng);
            let dw = rnorm(dt, sigma * dt.sqrt(), rng);
            x[0] += dn[0] - dn[1] - dn[2];
            x[1] += dn[1] - dn[3] - dn[4];
            x[2] += dn[3] - dn[5];
            x[3] += dn[1];
            x[4] = x[0] + x[1] + x[2];
            x[5] += dw;
            if sigma > 0.0 {
                x[6] += (dw - dt) / sigma;
            }
            check_counts(&x[..5]);
        });
    let b = measurement_parts(b, 7, 8, 3);
    // b1, b2, b3 are unconstrained
    positive_transforms(b, 7, &[2, 3, 4])
        .default_params(seasonal_default_params())
        .build()
}

/// Transmission rate `exp(b1 + b2 cos 2 pi phi + b3 sin 2 pi phi)`.
pub fn seasonal_beta(b1: f64, b2: f64, b3: f64, phi: f64) -> f64 {
    let phase = 2.0 * PI * phi;
    (b1 + b2 * phase.cos() + b3 * phase.sin()).exp()
}

/// Force of infection `beta I / P`.
pub fn force_of_infection(beta: f64, infected: f64, pop: f64) -> f64 {
    beta * infected / pop
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::StreamKey;
    use crate::simulate;
    use approx::assert_relative_eq;

    fn short_data() -> TimeSeriesData {
        TimeSeriesData::placeholder(-1.0 / 52.0, (0..=52).map(|k| k as f64 / 52.0).collect(), &["cases"]).unwrap()
    }

    #[test]
    fn force_of_infection_example() {
        assert_relative_eq!(force_of_infection(400.0, 1000.0, 500_000.0), 0.8, epsilon = 1e-15);
    }

    #[test]
    fn reproductive_number_near_fifteen() {
        let p = default_params();
        let r0 = p.get("beta").unwrap() / (p.get("gamma").unwrap() + p.get("mu").unwrap());
        assert!((r0 - 15.0).abs() < 0.5, "{r0}");
    }

    #[test]
    fn initializer_rounds_fractions() {
        let m = sir(Some(short_data())).unwrap();
        let s = &simulate(&m, &default_params(), StreamKey::new(2), 1).unwrap()[0];
        let fr = [26.0 / 400.0, 0.002, 1.0];
        let total: f64 = fr.iter().sum();
        assert_eq!(s.states[0], (500_000.0 * fr[0] / total).round());
        assert_eq!(s.states[1], (500_000.0 * fr[1] / total).round());
        assert_eq!(s.states[3], 0.0);
    }

    #[test]
    fn counts_stay_whole_and_nonnegative() {
        let m = sir(Some(short_data())).unwrap();
        let s = &simulate(&m, &default_params(), StreamKey::new(4), 1).unwrap()[0];
        assert!(s.states.iter().all(|v| *v >= 0.0 && v.fract() == 0.0));
        assert!(s.observations.iter().all(|v| *v >= 0.0 && v.fract() == 0.0));
    }

    #[test]
    fn seasonal_builds_with_synthetic_births() {
        let m = sir_seasonal(Some(short_data()), None).unwrap();
        let s = &simulate(&m, &seasonal_default_params(), StreamKey::new(4), 1).unwrap()[0];
        let p = s.state("P").unwrap();
        let (si, ii, ri) = (s.state("S").unwrap(), s.state("I").unwrap(), s.state("R").unwrap());
        for n in 1..p.len() {
            assert_eq!(p[n], si[n] + ii[n] + ri[n]);
        }
    }

    #[test]
    fn seasonal_requires_births_column() {
        let t = CovariateTable::new(vec![0.0], vec!["other".into()], vec![1.0]).unwrap();
        assert!(sir_seasonal(None, Some(t)).is_err());
    }

    #[test]
    fn constant_beta_without_seasonality() {
        for phi in [0.0, 0.13, 0.5, 2.71] {
            assert_eq!(seasonal_beta(6.0, 0.0, 0.0, phi), 6f64.exp());
        }
    }
}
