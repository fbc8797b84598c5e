//! Iterated filtering for maximum likelihood estimation.
//!
//! Each iteration runs a particle filter on a model whose parameters take a
//! random walk, then moves the parameter estimate along the variance-weighted
//! sum of filter-mean increments. Random-walk intensity decays geometrically
//! across iterations. Initial-value parameters (IVPs) are perturbed only at
//! time zero and re-estimated as fixed-lag smoothed means.

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::ModelSpec;
use crate::params::ParamVector;
use crate::rng::StreamKey;
use crate::distributions::rnorm;
use crate::smc::{ess_normalized, gather, normalize_log_weights, systematic_resample_at, FilterResult};

/// How the random-walk intensity decays.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Cooling {
    /// Intensity multiplied by `a` each iteration.
    Factor(f64),
    /// Intensity reduced to `fraction` of its initial value after `window`
    /// iterations: `a = fraction^(1 / window)`. With `window = None` the window
    /// is `M - 1`, so the last iteration runs at `fraction`.
    Fraction { fraction: f64, window: Option<usize> },
}

#[derive(Clone, Debug)]
pub struct MifSettings {
    pub start: ParamVector,
    pub iterations: usize,
    pub np: usize,
    /// Random-walk scales by parameter name; unnamed parameters are fixed.
    pub rw_sd: Vec<(String, f64)>,
    pub ivp_names: Vec<String>,
    /// Fixed lag for the IVP update; defaults to `min(N, 20)`.
    pub ic_lag: Option<usize>,
    pub var_factor: f64,
    pub cooling: Cooling,
    /// Perturb on the model's estimation scale.
    pub transform: bool,
    /// Tolerated all-zero-weight steps per iteration.
    pub max_fail: usize,
}

impl MifSettings {
    pub fn new(start: ParamVector, iterations: usize, np: usize) -> Self {
        MifSettings {
            start,
            iterations,
            np,
            rw_sd: Vec::new(),
            ivp_names: Vec::new(),
            ic_lag: None,
            var_factor: 2.0,
            cooling: Cooling::Fraction {
                fraction: 0.7,
                window: None,
            },
            transform: false,
            max_fail: 0,
        }
    }

    pub fn rw_sd(mut self, sd: &[(&str, f64)]) -> Self {
        self.rw_sd = sd.iter().map(|(n, v)| (n.to_string(), *v)).collect();
        self
    }

    pub fn ivps(mut self, names: &[&str]) -> Self {
        self.ivp_names = names.iter().map(|s| s.to_string()).collect();
        self
    }

    pub fn transform(mut self, on: bool) -> Self {
        self.transform = on;
        self
    }

    pub fn cooling(mut self, cooling: Cooling) -> Self {
        self.cooling = cooling;
        self
    }

    /// The per-iteration cooling factor `a`.
    pub fn cooling_factor(&self) -> Result<f64> {
        let a = match self.cooling {
            Cooling::Factor(a) => a,
            Cooling::Fraction { fraction, window } => {
                let w = window.unwrap_or(self.iterations.saturating_sub(1)).max(1);
                if !(fraction > 0.0 && fraction <= 1.0) {
                    return Err(Error::invalid("cooling fraction", format!("{fraction} is not in (0, 1]")));
                }
                fraction.powf(1.0 / w as f64)
            }
        };
        if !(a > 0.0 && a <= 1.0) {
            return Err(Error::invalid("cooling factor", format!("{a} is not in (0, 1]")));
        }
        Ok(a)
    }

    /// Random-walk sd at iteration `m` (1-based): `a^(m-1) sigma`.
    pub fn perturbation_sd(&self, sigma: f64, m: usize) -> Result<f64> {
        Ok(self.cooling_factor()?.powi(m as i32 - 1) * sigma)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct MifResult {
    pub theta_hat: ParamVector,
    pub param_names: Vec<String>,
    /// `M x p`, row-major; row `m` is the estimate after iteration `m`.
    pub trace: Vec<f64>,
    /// Log-likelihood of the perturbed-parameter filter at each iteration.
    pub iteration_logliks: Vec<f64>,
    pub cooling_factor: f64,
    /// The filter from the last iteration (states only).
    pub last_filter: Option<FilterResult>,
}

impl MifResult {
    pub fn trace_row(&self, m: usize) -> &[f64] {
        let p = self.param_names.len();
        &self.trace[m * p..(m + 1) * p]
    }

    pub fn trace_column(&self, name: &str) -> Result<Vec<f64>> {
        let p = self.param_names.len();
        let k = self
            .param_names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::UnknownName(name.to_string()))?;
        Ok(self.trace.iter().skip(k).step_by(p).copied().collect())
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Role {
    Fixed,
    Regular,
    Ivp,
}

/// Runs iterated filtering. Streams: iteration `m` uses `key/m`; within it
/// the starting cloud draws from `/0/j`, the initial states from `/1/j`, the
/// step-`n` perturbation and propagation of particle `j` from `/2/n/j`, and
/// resampling from `/3/n`.
pub fn mif(model: &ModelSpec, settings: &MifSettings, key: StreamKey) -> Result<MifResult> {
    model.require_rprocess()?;
    model.require_dmeasure()?;
    model.require_initializer()?;
    let p = model.param_dim();
    let q = model.state_dim();
    let np = settings.np;
    let data = model.data();
    let n_times = data.len();
    if np == 0 {
        return Err(Error::invalid("particle count", "must be at least 1"));
    }
    if !(settings.var_factor > 0.0) {
        return Err(Error::invalid("var_factor", "must be positive"));
    }
    let a = settings.cooling_factor()?;

    let mut sigma = vec![0.0; p];
    for (name, sd) in &settings.rw_sd {
        let i = model.param_index(name)?;
        if !(sd.is_finite() && *sd >= 0.0) {
            return Err(Error::invalid("rw_sd", format!("`{name}` has scale {sd}")));
        }
        sigma[i] = *sd;
    }
    let mut roles: Vec<Role> = sigma.iter().map(|s| if *s > 0.0 { Role::Regular } else { Role::Fixed }).collect();
    for name in &settings.ivp_names {
        let i = model.param_index(name)?;
        if roles[i] == Role::Regular {
            roles[i] = Role::Ivp;
        }
    }
    let lag = settings.ic_lag.unwrap_or(n_times.min(20));
    if lag > n_times {
        return Err(Error::invalid("ic_lag", format!("{lag} exceeds the {n_times} observations")));
    }

    let start_nat = model.param_values(&settings.start)?;
    let to_est = |v: &[f64]| if settings.transform { model.to_estimation(v) } else { Ok(v.to_vec()) };
    let from_est_into = |v: &[f64], out: &mut [f64]| -> Result<()> {
        if settings.transform {
            model.from_estimation_into(v, out)?;
        } else {
            out.copy_from_slice(v);
        }
        // fixed parameters are passed exactly as given
        for (i, r) in roles.iter().enumerate() {
            if *r == Role::Fixed {
                out[i] = start_nat[i];
            }
        }
        Ok(())
    };

    let mut theta = to_est(&start_nat)?;
    let mut trace = Vec::with_capacity(settings.iterations * p);
    let mut iteration_logliks = Vec::with_capacity(settings.iterations);
    let mut last_filter = None;

    let mut cloud = vec![0.0; np * p];
    let mut cloud_scratch = vec![0.0; np * p];
    let mut states = vec![0.0; np * q];
    let mut state_scratch = vec![0.0; np * q];
    let mut logw = vec![0.0; np];
    let mut weights = vec![0.0; np];

    for m in 1..=settings.iterations {
        let iter_key = key.child(m as u64);
        let scale = a.powi(m as i32 - 1);
        let c = settings.var_factor;

        // starting cloud and initial states
        cloud
            .par_chunks_mut(p.max(1))
            .zip(states.par_chunks_mut(q.max(1)))
            .enumerate()
            .try_for_each_init(
                || vec![0.0; p],
                |nat, (j, (th, x))| -> Result<()> {
                    let mut rng = iter_key.child(0).child(j as u64).rng();
                    for i in 0..p {
                        th[i] = if roles[i] == Role::Fixed {
                            theta[i]
                        } else {
                            rnorm(theta[i], c * scale * sigma[i], &mut rng)
                        };
                    }
                    from_est_into(th, nat)?;
                    let mut rng = iter_key.child(1).child(j as u64).rng();
                    model.init_state(nat, &mut rng, x)
                },
            )?;

        let v1: Vec<f64> = sigma.iter().map(|s| (c * c + 1.0) * (scale * s).powi(2)).collect();
        let mut v_n = v1.clone();
        let mut mean_prev = theta.clone();
        let mut gradient = vec![0.0; p];
        let mut ivp_mean = if lag == 0 { Some(column_means(&cloud, p)) } else { None };
        let mut cond = Vec::with_capacity(n_times);
        let mut ess_out = Vec::with_capacity(n_times);
        let mut filter_means = Vec::with_capacity(n_times * q);
        let mut n_fail = 0;
        let mut t_prev = data.t0();

        for n in 0..n_times {
            let t = data.times()[n];
            let y = data.row(n);
            let step_key = iter_key.child(2).child(n as u64);
            cloud
                .par_chunks_mut(p.max(1))
                .zip(states.par_chunks_mut(q.max(1)))
                .zip(logw.par_iter_mut())
                .enumerate()
                .try_for_each_init(
                    || (vec![0.0; p], Vec::new()),
                    |(nat, covars), (j, ((th, x), lw))| -> Result<()> {
                        let mut rng = step_key.child(j as u64).rng();
                        for i in 0..p {
                            if roles[i] == Role::Regular {
                                th[i] += scale * sigma[i] * rnorm(0.0, 1.0, &mut rng);
                            }
                        }
                        from_est_into(th, nat)?;
                        model.advance(x, nat, t_prev, t, &mut rng, covars)?;
                        *lw = model.dmeasure_log(y, x, nat, t, covars)?;
                        Ok(())
                    },
                )?;

            let ok = match normalize_log_weights(&logw, &mut weights) {
                Some(ll) => {
                    cond.push(ll);
                    ess_out.push(ess_normalized(&weights));
                    true
                }
                None => {
                    n_fail += 1;
                    if n_fail > settings.max_fail {
                        return Err(Error::FilterFailure { step: n + 1 });
                    }
                    log::warn!("mif iteration {m}: all particle weights zero at observation {}", n + 1);
                    cond.push(f64::NEG_INFINITY);
                    ess_out.push(0.0);
                    weights.iter_mut().for_each(|w| *w = 1.0 / np as f64);
                    false
                }
            };

            // filter mean and prediction variance use the pre-resampling cloud
            let mut mean = vec![0.0; p];
            for (th, w) in cloud.chunks(p.max(1)).zip(&weights) {
                for i in 0..p {
                    mean[i] += w * th[i];
                }
            }
            let mut state_mean = vec![0.0; q];
            for (x, w) in states.chunks(q.max(1)).zip(&weights) {
                for k in 0..q {
                    state_mean[k] += w * x[k];
                }
            }
            filter_means.extend_from_slice(&state_mean);
            for i in 0..p {
                if roles[i] != Role::Regular {
                    continue;
                }
                gradient[i] += (mean[i] - mean_prev[i]) / v_n[i];
                let spread: f64 = cloud
                    .chunks(p)
                    .zip(&weights)
                    .map(|(th, w)| w * (th[i] - mean[i]).powi(2))
                    .sum();
                v_n[i] = (scale * sigma[i]).powi(2) + spread;
            }
            mean_prev = mean;

            if ok {
                let mut rng = iter_key.child(3).child(n as u64).rng();
                let idx = systematic_resample_at(&weights, rng.random::<f64>())?;
                gather(&cloud, &idx, p, &mut cloud_scratch);
                gather(&states, &idx, q, &mut state_scratch);
                std::mem::swap(&mut cloud, &mut cloud_scratch);
                std::mem::swap(&mut states, &mut state_scratch);
            }
            for x in states.chunks_mut(q.max(1)) {
                model.reset_accumulators(x);
            }
            if n + 1 == lag {
                ivp_mean = Some(column_means(&cloud, p));
            }
            t_prev = t;
        }

        let mut next = theta.clone();
        for i in 0..p {
            match roles[i] {
                Role::Fixed => {}
                Role::Regular => next[i] = theta[i] + v1[i] * gradient[i],
                Role::Ivp => next[i] = ivp_mean.as_ref().map_or(theta[i], |mean| mean[i]),
            }
        }
        theta = next;
        let mut nat = vec![0.0; p];
        from_est_into(&theta, &mut nat)?;
        trace.extend_from_slice(&nat);
        let loglik = cond.iter().sum();
        iteration_logliks.push(loglik);
        log::debug!("mif iteration {m}: loglik {loglik:.3}");
        if m == settings.iterations {
            last_filter = Some(FilterResult {
                loglik,
                cond_logliks: cond,
                ess: ess_out,
                state_names: model.state_names().to_vec(),
                filter_means,
                np,
                n_fail,
                final_particles: None,
            });
        }
    }

    let theta_hat = if settings.iterations == 0 {
        model.param_vector(&start_nat)
    } else {
        model.param_vector(&trace[(settings.iterations - 1) * p..])
    };
    Ok(MifResult {
        theta_hat,
        param_names: model.param_names().to_vec(),
        trace,
        iteration_logliks,
        cooling_factor: a,
        last_filter,
    })
}

fn column_means(rows: &[f64], width: usize) -> Vec<f64> {
    let mut mean = vec![0.0; width];
    let count = rows.len() / width.max(1);
    for row in rows.chunks(width.max(1)) {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= count as f64);
    mean
}
