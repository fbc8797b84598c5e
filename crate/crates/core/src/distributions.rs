//! Random deviates and densities used by the built-in models.
//!
//! The centerpiece is the Euler-multinomial family: over a step of length
//! `dt`, each of `size` individuals leaves by route `j` with probability
//! `p_j = (r_j / R) (1 - exp(-R dt))`, `R = sum r_j`, and stays otherwise.

use rand::Rng;
use rand_distr::{Binomial, Distribution, Gamma, Poisson, StandardNormal};
use statrs::function::factorial::ln_factorial;
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

/// Parameters of an Euler-multinomial draw.
#[derive(Clone, Debug, PartialEq)]
pub struct EulerMultinomSpec {
    pub size: u64,
    pub rates: Vec<f64>,
    pub dt: f64,
}

impl EulerMultinomSpec {
    pub fn new(size: u64, rates: Vec<f64>, dt: f64) -> Result<Self> {
        let spec = EulerMultinomSpec { size, rates, dt };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(r) = self.rates.iter().find(|r| !(r.is_finite() && **r >= 0.0)) {
            return Err(Error::Domain(format!("euler-multinomial rate {r} must be finite and non-negative")));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Domain(format!("euler-multinomial dt = {} must be positive", self.dt)));
        }
        Ok(())
    }

    /// Exit probabilities `p_j` and the total exit probability.
    pub fn probabilities(&self) -> (Vec<f64>, f64) {
        exit_probabilities(&self.rates, self.dt)
    }
}

fn exit_probabilities(rates: &[f64], dt: f64) -> (Vec<f64>, f64) {
    let total: f64 = rates.iter().sum();
    if total == 0.0 {
        return (vec![0.0; rates.len()], 0.0);
    }
    let leave = -(-total * dt).exp_m1();
    (rates.iter().map(|r| r / total * leave).collect(), leave)
}

/// Draws Euler-multinomial exit counts.
pub fn reulermultinom<R: Rng + ?Sized>(spec: &EulerMultinomSpec, rng: &mut R) -> Result<Vec<u64>> {
    spec.validate()?;
    let mut out = vec![0.0; spec.rates.len()];
    reulermultinom_into(spec.size as f64, &spec.rates, spec.dt, rng, &mut out);
    Ok(out.into_iter().map(|v| v as u64).collect())
}

/// Unchecked sampler for model step functions: `size` is a count stored as
/// `f64`, results are written to `out` as `f64`. Draws the total number of
/// exits, then splits it across routes by sequential binomials.
pub fn reulermultinom_into<R: Rng + ?Sized>(size: f64, rates: &[f64], dt: f64, rng: &mut R, out: &mut [f64]) {
    debug_assert!(size >= 0.0 && size.fract() == 0.0, "size {size} is not a count");
    out.iter_mut().for_each(|o| *o = 0.0);
    let total: f64 = rates.iter().sum();
    if total <= 0.0 || size <= 0.0 {
        return;
    }
    let leave = -(-total * dt).exp_m1();
    let mut remaining = rbinom(size as u64, leave, rng);
    let mut rate_left = total;
    let k = rates.len();
    for j in 0..k {
        if remaining == 0 {
            break;
        }
        if j + 1 == k || rate_left <= rates[j] {
            out[j] = remaining as f64;
            break;
        }
        let d = rbinom(remaining, rates[j] / rate_left, rng);
        out[j] = d as f64;
        remaining -= d;
        rate_left -= rates[j];
    }
}

/// Binomial deviate that tolerates `p` at or slightly outside the unit interval.
pub fn rbinom<R: Rng + ?Sized>(n: u64, p: f64, rng: &mut R) -> u64 {
    if n == 0 || p <= 0.0 {
        return 0;
    }
    if p >= 1.0 {
        return n;
    }
    Binomial::new(n, p).expect("valid binomial").sample(rng)
}

/// Euler-multinomial probability mass. Counts summing past `size` have mass 0.
pub fn deulermultinom(counts: &[u64], spec: &EulerMultinomSpec, log: bool) -> Result<f64> {
    spec.validate()?;
    if counts.len() != spec.rates.len() {
        return Err(Error::Domain(format!(
            "{} counts for {} rates",
            counts.len(),
            spec.rates.len()
        )));
    }
    let exits: u64 = counts.iter().sum();
    let lp = if exits > spec.size {
        f64::NEG_INFINITY
    } else {
        let (p, leave) = spec.probabilities();
        let stay = spec.size - exits;
        let mut lp = ln_factorial(spec.size) - ln_factorial(stay);
        for (&d, &pj) in counts.iter().zip(&p) {
            lp += xlogy(d as f64, pj) - ln_factorial(d);
        }
        // log(1 - leave) = -R dt, exact even when leave rounds to 1
        let total: f64 = spec.rates.iter().sum();
        lp += if leave == 0.0 { 0.0 } else { -(stay as f64) * total * spec.dt };
        lp
    };
    Ok(if log { lp } else { lp.exp() })
}

/// `x log y` with the convention `0 log 0 = 0`.
fn xlogy(x: f64, y: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * y.ln()
    }
}

/// Negative binomial mass with mean `mu` and dispersion `size`; the variance is
/// `mu + mu^2 / size`.
pub fn dnbinom_mu(y: f64, size: f64, mu: f64, log: bool) -> Result<f64> {
    if !(size > 0.0) || !(mu >= 0.0) || !mu.is_finite() {
        return Err(Error::Domain(format!("dnbinom_mu needs size > 0 and mu >= 0 (size = {size}, mu = {mu})")));
    }
    let lp = ldnbinom_mu(y, size, mu);
    Ok(if log { lp } else { lp.exp() })
}

/// Unchecked log mass for measurement models; `y` need not be integral-valued
/// in storage but non-integers have mass 0.
pub fn ldnbinom_mu(y: f64, size: f64, mu: f64) -> f64 {
    if y < 0.0 || y.fract() != 0.0 || !y.is_finite() {
        return f64::NEG_INFINITY;
    }
    if mu == 0.0 {
        return if y == 0.0 { 0.0 } else { f64::NEG_INFINITY };
    }
    let base = -size * (mu / size).ln_1p();
    if y == 0.0 {
        return base;
    }
    let denom = size + mu;
    let head = if y <= 1000.0 {
        let n = y as u64;
        (0..n).map(|i| ((i as f64 - mu) / denom).ln_1p()).sum::<f64>()
    } else {
        ln_gamma(y + size) - ln_gamma(size) - y * denom.ln()
    };
    base + head + y * mu.ln() - ln_factorial(y as u64)
}

/// Negative binomial deviate as a gamma-Poisson mixture.
pub fn rnbinom_mu<R: Rng + ?Sized>(size: f64, mu: f64, rng: &mut R) -> f64 {
    if mu <= 0.0 {
        return 0.0;
    }
    let lambda = Gamma::new(size, mu / size).expect("valid gamma").sample(rng);
    rpois(lambda, rng)
}

/// Poisson deviate; `lambda <= 0` gives 0.
pub fn rpois<R: Rng + ?Sized>(lambda: f64, rng: &mut R) -> f64 {
    if !(lambda > 0.0) {
        return 0.0;
    }
    Poisson::new(lambda).expect("valid poisson").sample(rng)
}

/// Poisson log mass.
pub fn ldpois(y: f64, lambda: f64) -> f64 {
    if y < 0.0 || y.fract() != 0.0 || !y.is_finite() {
        return f64::NEG_INFINITY;
    }
    if lambda == 0.0 {
        return if y == 0.0 { 0.0 } else { f64::NEG_INFINITY };
    }
    xlogy(y, lambda) - lambda - ln_factorial(y as u64)
}

/// Normal log density.
pub fn ldnorm(x: f64, mean: f64, sd: f64) -> f64 {
    let z = (x - mean) / sd;
    -0.5 * z * z - sd.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
}

/// Lognormal log density of `y` with log-scale mean and sd.
pub fn ldlnorm(y: f64, meanlog: f64, sdlog: f64) -> f64 {
    if y <= 0.0 {
        return f64::NEG_INFINITY;
    }
    ldnorm(y.ln(), meanlog, sdlog) - y.ln()
}

/// Standard normal deviate.
pub fn rnorm<R: Rng + ?Sized>(mean: f64, sd: f64, rng: &mut R) -> f64 {
    let z: f64 = StandardNormal.sample(rng);
    mean + sd * z
}
