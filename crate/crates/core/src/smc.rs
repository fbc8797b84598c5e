//! Particle filtering, systematic resampling and likelihood averaging.

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::ModelSpec;
use crate::params::ParamVector;
use crate::rng::{StreamKey, StreamRng};

/// Output of [`pfilter`].
#[derive(Clone, Debug, Serialize)]
pub struct FilterResult {
    pub loglik: f64,
    /// Conditional log-likelihoods `log f(y_n | y_{1:n-1})`.
    pub cond_logliks: Vec<f64>,
    /// Effective sample size at each step, before resampling. Zero at a
    /// tolerated failure step.
    pub ess: Vec<f64>,
    pub state_names: Vec<String>,
    /// `N x q`, row-major; weighted means before resampling.
    pub filter_means: Vec<f64>,
    pub np: usize,
    /// Number of steps at which every weight vanished (only nonzero under `max_fail`).
    pub n_fail: usize,
    /// `J x q` particles after the last step, when requested.
    #[serde(skip)]
    pub final_particles: Option<Vec<f64>>,
}

impl FilterResult {
    pub fn filter_mean(&self, name: &str) -> Result<Vec<f64>> {
        let q = self.state_names.len();
        let k = self
            .state_names
            .iter()
            .position(|s| s == name)
            .ok_or_else(|| Error::UnknownName(name.to_string()))?;
        Ok(self.filter_means.iter().skip(k).step_by(q).copied().collect())
    }
}

/// Particle filter options.
#[derive(Clone, Debug)]
pub struct PfilterOptions {
    pub np: usize,
    /// Number of all-zero-weight steps tolerated before failing. Each one
    /// contributes `-inf` to the log-likelihood.
    pub max_fail: usize,
    pub save_particles: bool,
}

impl PfilterOptions {
    pub fn new(np: usize) -> Self {
        PfilterOptions {
            np,
            max_fail: 0,
            save_particles: false,
        }
    }
}

/// Runs the bootstrap particle filter with `np` particles.
pub fn pfilter(model: &ModelSpec, params: &ParamVector, np: usize, key: StreamKey) -> Result<FilterResult> {
    pfilter_with(model, params, &PfilterOptions::new(np), key)
}

pub fn pfilter_with(model: &ModelSpec, params: &ParamVector, opts: &PfilterOptions, key: StreamKey) -> Result<FilterResult> {
    let values = model.param_values(params)?;
    pfilter_values(model, &values, opts, key)
}

/// Streams: particle `j` is initialized from `key/0/j`, propagated at step `n`
/// from `key/1/n/j`; resampling at step `n` uses `key/2/n`.
pub(crate) fn pfilter_values(model: &ModelSpec, params: &[f64], opts: &PfilterOptions, key: StreamKey) -> Result<FilterResult> {
    model.require_rprocess()?;
    model.require_dmeasure()?;
    model.require_initializer()?;
    let np = opts.np;
    if np == 0 {
        return Err(Error::invalid("particle count", "must be at least 1"));
    }
    let q = model.state_dim();
    let data = model.data();
    let n_times = data.len();

    let mut particles = vec![0.0; np * q];
    init_particles(model, params, &mut particles, q, key.child(0))?;

    let mut scratch = vec![0.0; np * q];
    let mut logw = vec![0.0; np];
    let mut weights = vec![0.0; np];
    let mut cond_logliks = Vec::with_capacity(n_times);
    let mut ess_out = Vec::with_capacity(n_times);
    let mut filter_means = Vec::with_capacity(n_times * q);
    let mut n_fail = 0;
    let mut t_prev = data.t0();

    for n in 0..n_times {
        let t = data.times()[n];
        let y = data.row(n);
        let step_key = key.child(1).child(n as u64);
        particles
            .par_chunks_mut(q.max(1))
            .zip(logw.par_iter_mut())
            .enumerate()
            .try_for_each_init(Vec::new, |covars, (j, (x, lw))| -> Result<()> {
                let mut rng = step_key.child(j as u64).rng();
                model.advance(x, params, t_prev, t, &mut rng, covars)?;
                *lw = model.dmeasure_log(y, x, params, t, covars)?;
                Ok(())
            })?;

        match normalize_log_weights(&logw, &mut weights) {
            Some(ll) => {
                cond_logliks.push(ll);
                ess_out.push(ess_normalized(&weights));
                push_weighted_mean(&particles, &weights, q, &mut filter_means);
                let mut rng = key.child(2).child(n as u64).rng();
                let idx = systematic_indices(&weights, np, rng.random::<f64>());
                gather(&particles, &idx, q, &mut scratch);
                std::mem::swap(&mut particles, &mut scratch);
            }
            None => {
                n_fail += 1;
                if n_fail > opts.max_fail {
                    return Err(Error::FilterFailure { step: n + 1 });
                }
                log::warn!("all particle weights zero at observation {} (t = {t})", n + 1);
                cond_logliks.push(f64::NEG_INFINITY);
                ess_out.push(0.0);
                weights.iter_mut().for_each(|w| *w = 1.0 / np as f64);
                push_weighted_mean(&particles, &weights, q, &mut filter_means);
            }
        }
        for x in particles.chunks_mut(q.max(1)) {
            model.reset_accumulators(x);
        }
        t_prev = t;
    }

    Ok(FilterResult {
        loglik: cond_logliks.iter().sum(),
        cond_logliks,
        ess: ess_out,
        state_names: model.state_names().to_vec(),
        filter_means,
        np,
        n_fail,
        final_particles: opts.save_particles.then_some(particles),
    })
}

pub(crate) fn init_particles(model: &ModelSpec, params: &[f64], particles: &mut [f64], q: usize, key: StreamKey) -> Result<()> {
    particles
        .par_chunks_mut(q.max(1))
        .enumerate()
        .try_for_each(|(j, x)| {
            let mut rng = key.child(j as u64).rng();
            model.init_state(params, &mut rng, x)
        })
}

/// Writes normalized weights and returns `log(mean(exp(logw)))`, or `None`
/// when every weight is zero.
pub(crate) fn normalize_log_weights(logw: &[f64], weights: &mut [f64]) -> Option<f64> {
    let max = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return None;
    }
    if max == f64::INFINITY {
        // infinite densities share the mass equally
        let count = logw.iter().filter(|l| **l == f64::INFINITY).count() as f64;
        for (w, l) in weights.iter_mut().zip(logw) {
            *w = if *l == f64::INFINITY { 1.0 / count } else { 0.0 };
        }
        return Some(f64::INFINITY);
    }
    let mut sum = 0.0;
    for (w, l) in weights.iter_mut().zip(logw) {
        *w = (l - max).exp();
        sum += *w;
    }
    weights.iter_mut().for_each(|w| *w /= sum);
    Some(max + (sum / logw.len() as f64).ln())
}

pub(crate) fn ess_normalized(weights: &[f64]) -> f64 {
    1.0 / weights.iter().map(|w| w * w).sum::<f64>()
}

fn push_weighted_mean(particles: &[f64], weights: &[f64], q: usize, out: &mut Vec<f64>) {
    let start = out.len();
    out.resize(start + q, 0.0);
    let mean = &mut out[start..];
    for (x, w) in particles.chunks(q.max(1)).zip(weights) {
        if *w > 0.0 {
            for (m, v) in mean.iter_mut().zip(x) {
                *m += w * v;
            }
        }
    }
}

pub(crate) fn gather(src: &[f64], idx: &[usize], width: usize, dst: &mut [f64]) {
    for (row, &i) in dst.chunks_mut(width.max(1)).zip(idx) {
        row.copy_from_slice(&src[i * width..(i + 1) * width]);
    }
}

fn check_weights(weights: &[f64]) -> Result<f64> {
    if weights.is_empty() {
        return Err(Error::invalid("weights", "empty weight vector"));
    }
    if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
        return Err(Error::invalid("weights", format!("weight {w} is negative or not finite")));
    }
    let sum: f64 = weights.iter().sum();
    if sum <= 0.0 {
        return Err(Error::Degenerate("all weights are zero".into()));
    }
    Ok(sum)
}

/// Systematic resampling: draws `U_1 ~ U(0, 1/J)` and walks the cumulative
/// weights at `U_1 + (j-1)/J`. Weights are renormalized if they do not sum to 1.
/// Returns 0-based indices.
pub fn systematic_resample(weights: &[f64], rng: &mut StreamRng) -> Result<Vec<usize>> {
    check_weights(weights)?;
    let r: f64 = rng.random();
    systematic_resample_at(weights, r)
}

/// Systematic resampling with the offset fixed at `U_1 = (1 - r)/J`, `r` in `[0, 1)`.
pub fn systematic_resample_at(weights: &[f64], r: f64) -> Result<Vec<usize>> {
    systematic_resample_n(weights, weights.len(), r)
}

/// Draws `n` indices (not necessarily `weights.len()`) with offset `(1 - r)/n`.
pub fn systematic_resample_n(weights: &[f64], n: usize, r: f64) -> Result<Vec<usize>> {
    let sum = check_weights(weights)?;
    if !(0.0..1.0).contains(&r) {
        return Err(Error::invalid("resampling offset", format!("{r} is not in [0, 1)")));
    }
    if (sum - 1.0).abs() > 1e-9 {
        let w: Vec<f64> = weights.iter().map(|w| w / sum).collect();
        Ok(systematic_indices(&w, n, r))
    } else {
        Ok(systematic_indices(weights, n, r))
    }
}

fn systematic_indices(weights: &[f64], j_count: usize, r: f64) -> Vec<usize> {
    let last = weights.iter().rposition(|w| *w > 0.0).unwrap_or(weights.len() - 1);
    let step = 1.0 / j_count as f64;
    let u1 = (1.0 - r) * step;
    let mut out = Vec::with_capacity(j_count);
    let mut i = 0;
    let mut cum = weights[0];
    for j in 0..j_count {
        let u = u1 + j as f64 * step;
        while cum < u && i < last {
            i += 1;
            cum += weights[i];
        }
        out.push(i);
    }
    out
}

/// Effective sample size `1 / sum(w^2)` of the normalized weights.
pub fn ess(weights: &[f64]) -> Result<f64> {
    let sum = check_weights(weights)?;
    Ok(sum * sum / weights.iter().map(|w| w * w).sum::<f64>())
}

/// `log(mean(exp(values)))`, and optionally its jackknife standard error
/// (`None` for a single value).
pub fn logmeanexp(values: &[f64], with_se: bool) -> (f64, Option<f64>) {
    let lme = |v: &mut dyn Iterator<Item = f64>| {
        let items: Vec<f64> = v.collect();
        let max = items.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() {
            return max;
        }
        max + (items.iter().map(|x| (x - max).exp()).sum::<f64>() / items.len() as f64).ln()
    };
    let est = lme(&mut values.iter().copied());
    if !with_se || values.len() < 2 {
        return (est, None);
    }
    let n = values.len();
    let jk: Vec<f64> = (0..n)
        .map(|i| lme(&mut values.iter().enumerate().filter(|(k, _)| *k != i).map(|(_, v)| *v)))
        .collect();
    let mean = jk.iter().sum::<f64>() / n as f64;
    let ss: f64 = jk.iter().map(|v| (v - mean).powi(2)).sum();
    (est, Some(((n as f64 - 1.0) / n as f64 * ss).sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn equal_weights_leave_particles_unchanged() {
        for r in [0.0, 0.3, 0.999] {
            assert_eq!(systematic_resample_at(&[0.2; 5], r).unwrap(), vec![0, 1, 2, 3, 4]);
        }
    }

    #[test]
    fn degenerate_weight_duplicates() {
        assert_eq!(systematic_resample_at(&[1.0, 0.0, 0.0], 0.5).unwrap(), vec![0, 0, 0]);
        assert_eq!(systematic_resample_at(&[0.0, 0.0, 1.0], 0.5).unwrap(), vec![2, 2, 2]);
    }

    #[test]
    fn three_to_one_split_for_every_offset() {
        for k in 0..100 {
            let r = k as f64 / 100.0;
            assert_eq!(systematic_resample_n(&[0.75, 0.25], 4, r).unwrap(), vec![0, 0, 0, 1]);
            assert_eq!(systematic_resample_at(&[0.75, 0.25, 0.0, 0.0], r).unwrap(), vec![0, 0, 0, 1]);
        }
    }

    #[test]
    fn unnormalized_weights_are_rescaled() {
        assert_eq!(systematic_resample_n(&[3.0, 1.0], 4, 0.5).unwrap(), vec![0, 0, 0, 1]);
        assert!(systematic_resample_at(&[0.0, 0.0], 0.5).is_err());
    }

    #[test]
    fn ess_examples() {
        assert_relative_eq!(ess(&[0.01; 100]).unwrap(), 100.0, epsilon = 1e-9);
        assert_eq!(ess(&[1.0, 0.0, 0.0, 0.0]).unwrap(), 1.0);
        assert_relative_eq!(ess(&[0.5, 0.25, 0.25]).unwrap(), 1.0 / 0.375, epsilon = 1e-12);
        assert!(ess(&[0.0, 0.0]).is_err());
    }

    #[test]
    fn logmeanexp_examples() {
        assert_eq!(logmeanexp(&[0.0, 0.0, 0.0], false).0, 0.0);
        assert_relative_eq!(logmeanexp(&[2f64.ln(), 4f64.ln()], false).0, 3f64.ln(), epsilon = 1e-14);
        assert_eq!(logmeanexp(&[-3.5], true), (-3.5, None));
        let (_, se) = logmeanexp(&[1.0, 1.0, 1.0], true);
        assert_eq!(se, Some(0.0));
    }

    #[test]
    fn logmeanexp_is_stable() {
        let (v, _) = logmeanexp(&[-1000.0, -1000.0], false);
        assert_relative_eq!(v, -1000.0, epsilon = 1e-12);
    }

    #[test]
    fn normalize_reports_all_zero() {
        let mut w = vec![0.0; 2];
        assert!(normalize_log_weights(&[f64::NEG_INFINITY; 2], &mut w).is_none());
        let ll = normalize_log_weights(&[0.0, 2f64.ln()], &mut w).unwrap();
        assert_relative_eq!(ll, 1.5f64.ln(), epsilon = 1e-14);
        assert_relative_eq!(w[1], 2.0 / 3.0, epsilon = 1e-14);
    }
}
