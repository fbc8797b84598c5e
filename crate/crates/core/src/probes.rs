//! Summary statistics ("probes"), synthetic likelihood and probe matching.

use std::fmt;
use std::io::Write;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::data::{format_num, ObsView};
use crate::error::{Error, Result};
use crate::model::ModelSpec;
use crate::oracle::{nelder_mead, NelderMeadOptions, OptimStatus};
use crate::params::ParamVector;
use crate::rng::StreamKey;

/// Elementwise map applied to a series before a probe is computed.
#[derive(Clone, Default)]
pub enum Transform {
    #[default]
    Identity,
    Sqrt,
    Log,
    Custom(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
}

impl Transform {
    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "identity" | "none" => Ok(Transform::Identity),
            "sqrt" => Ok(Transform::Sqrt),
            "log" => Ok(Transform::Log),
            other => Err(Error::invalid(
                "transform",
                format!("unknown transform `{other}` (expected one of identity, sqrt, log)"),
            )),
        }
    }

    pub fn apply(&self, x: f64) -> f64 {
        match self {
            Transform::Identity => x,
            Transform::Sqrt => x.sqrt(),
            Transform::Log => x.ln(),
            Transform::Custom(f) => f(x),
        }
    }
}

impl fmt::Debug for Transform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Transform::Identity => f.write_str("Identity"),
            Transform::Sqrt => f.write_str("Sqrt"),
            Transform::Log => f.write_str("Log"),
            Transform::Custom(_) => f.write_str("Custom"),
        }
    }
}

pub type ProbeFn = dyn Fn(&ObsView<'_>) -> Result<Vec<f64>> + Send + Sync;

/// A named summary statistic with a fixed output dimension.
#[derive(Clone)]
pub struct Probe {
    name: String,
    components: Vec<String>,
    apply: Arc<ProbeFn>,
}

impl fmt::Debug for Probe {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Probe").field("name", &self.name).field("components", &self.components).finish()
    }
}

impl Probe {
    /// A custom probe. `components` names each output and fixes the arity.
    pub fn new<F>(name: &str, components: Vec<String>, f: F) -> Self
    where
        F: Fn(&ObsView<'_>) -> Result<Vec<f64>> + Send + Sync + 'static,
    {
        Probe {
            name: name.to_string(),
            components,
            apply: Arc::new(f),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn arity(&self) -> usize {
        self.components.len()
    }

    pub fn component_names(&self) -> &[String] {
        &self.components
    }

    pub fn apply(&self, data: &ObsView<'_>) -> Result<Vec<f64>> {
        let out = (self.apply)(data)?;
        if out.len() != self.arity() {
            return Err(Error::invalid(
                "probe",
                format!("`{}` returned {} values, expected {}", self.name, out.len(), self.arity()),
            ));
        }
        Ok(out)
    }
}

fn transformed(data: &ObsView<'_>, var: &str, transform: &Transform) -> Result<Vec<f64>> {
    Ok(data.column(var)?.into_iter().map(|x| transform.apply(x)).collect())
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

pub fn probe_mean(var: &str, transform: Transform) -> Probe {
    let v = var.to_string();
    Probe::new(&format!("mean.{var}"), vec![format!("mean.{var}")], move |data| {
        let x = transformed(data, &v, &transform)?;
        if x.is_empty() {
            return Err(Error::invalid("probe", format!("mean of an empty series `{v}`")));
        }
        Ok(vec![mean(&x)])
    })
}

/// Sample autocovariances, divisor `N`, of the mean-centered series.
pub fn autocovariance(x: &[f64], lags: &[usize]) -> Result<Vec<f64>> {
    let n = x.len();
    if let Some(&bad) = lags.iter().find(|&&l| l >= n) {
        return Err(Error::invalid("probe", format!("acf lag {bad} needs more than {n} observations")));
    }
    let m = mean(x);
    let c: Vec<f64> = x.iter().map(|v| v - m).collect();
    Ok(lags
        .iter()
        .map(|&l| c[..n - l].iter().zip(&c[l..]).map(|(a, b)| a * b).sum::<f64>() / n as f64)
        .collect())
}

pub fn probe_acf(var: &str, lags: &[usize], transform: Transform) -> Probe {
    let v = var.to_string();
    let lags = lags.to_vec();
    let names = lags.iter().map(|l| format!("acf.{l}.{var}")).collect();
    Probe::new(&format!("acf.{var}"), names, move |data| {
        autocovariance(&transformed(data, &v, &transform)?, &lags)
    })
}

/// Least-squares fit through the origin; singular values below the usual
/// rank tolerance are dropped, giving the minimum-norm solution. The flag is
/// true when that happened.
fn min_norm_lstsq(design: DMatrix<f64>, response: DVector<f64>) -> Result<(Vec<f64>, bool)> {
    let cols = design.ncols();
    let svd = design.svd(true, true);
    let smax = svd.singular_values.max();
    let tol = smax * (svd.singular_values.len().max(response.len())) as f64 * f64::EPSILON;
    let rank = svd.singular_values.iter().filter(|s| **s > tol).count();
    let sol = svd
        .solve(&response, tol)
        .map_err(|e| Error::Degenerate(format!("least squares: {e}")))?;
    Ok((sol.iter().copied().collect(), rank < cols))
}

/// Coefficients of `y_t ~ sum_j a_j y_{t - lag_j}^{power_j}` with no intercept,
/// optionally after centering `y`. Returns the coefficients and whether the
/// design was rank deficient.
pub fn nlar_coefficients(x: &[f64], lags: &[usize], powers: &[i32], center: bool) -> Result<(Vec<f64>, bool)> {
    if lags.len() != powers.len() || lags.is_empty() {
        return Err(Error::invalid("probe", "nlar needs equally many lags and powers"));
    }
    if lags.contains(&0) {
        return Err(Error::invalid("probe", "nlar lags must be at least 1"));
    }
    let maxlag = *lags.iter().max().unwrap();
    if x.len() <= maxlag {
        return Err(Error::invalid("probe", format!("nlar lag {maxlag} needs more than {} observations", x.len())));
    }
    let m = if center { mean(x) } else { 0.0 };
    let y: Vec<f64> = x.iter().map(|v| v - m).collect();
    let rows = y.len() - maxlag;
    let design = DMatrix::from_fn(rows, lags.len(), |i, j| y[i + maxlag - lags[j]].powi(powers[j]));
    let response = DVector::from_fn(rows, |i, _| y[i + maxlag]);
    min_norm_lstsq(design, response)
}

pub fn probe_nlar(var: &str, lags: &[usize], powers: &[i32], transform: Transform) -> Probe {
    let v = var.to_string();
    let (lags, powers) = (lags.to_vec(), powers.to_vec());
    let names = lags
        .iter()
        .zip(&powers)
        .map(|(l, p)| format!("nlar.{l}^{p}.{var}"))
        .collect();
    Probe::new(&format!("nlar.{var}"), names, move |data| {
        let (coef, deficient) = nlar_coefficients(&transformed(data, &v, &transform)?, &lags, &powers, true)?;
        if deficient {
            log::warn!("nlar probe on `{v}`: rank-deficient design, using minimum-norm coefficients");
        }
        Ok(coef)
    })
}

/// Sorted, centered reference values at `n` evenly spaced quantile positions.
fn reference_basis(reference: &[f64], n: usize) -> Result<Vec<f64>> {
    if reference.is_empty() {
        return Err(Error::invalid("probe", "marginal reference is empty"));
    }
    let mut r = reference.to_vec();
    r.sort_by(f64::total_cmp);
    let m = r.len();
    let r: Vec<f64> = if m == n {
        r
    } else {
        (0..n)
            .map(|i| {
                if n == 1 || m == 1 {
                    return r[0];
                }
                let pos = i as f64 * (m - 1) as f64 / (n - 1) as f64;
                let lo = pos.floor() as usize;
                let hi = (lo + 1).min(m - 1);
                r[lo] + (pos - lo as f64) * (r[hi] - r[lo])
            })
            .collect()
    };
    let mu = mean(&r);
    let c: Vec<f64> = r.iter().map(|v| v - mu).collect();
    if c.iter().all(|v| v.abs() <= 1e-12 * mu.abs().max(1.0)) {
        return Err(Error::invalid("probe", "marginal reference has zero variance"));
    }
    Ok(c)
}

/// Regression of the centered order statistics of `x` on powers `1..=npoly`
/// of the centered order statistics of `reference`.
pub fn marginal_coefficients(x: &[f64], reference: &[f64], npoly: usize) -> Result<Vec<f64>> {
    if npoly == 0 {
        return Err(Error::invalid("probe", "marginal npoly must be at least 1"));
    }
    let n = x.len();
    let basis = reference_basis(reference, n)?;
    let mut s = x.to_vec();
    s.sort_by(f64::total_cmp);
    let mu = mean(&s);
    let design = DMatrix::from_fn(n, npoly, |i, j| basis[i].powi(j as i32 + 1));
    let response = DVector::from_fn(n, |i, _| s[i] - mu);
    let (coef, deficient) = min_norm_lstsq(design, response)?;
    if deficient {
        log::warn!("marginal probe: rank-deficient design, using minimum-norm coefficients");
    }
    Ok(coef)
}

/// The reference is transformed like the data.
pub fn probe_marginal(var: &str, reference: &[f64], npoly: usize, transform: Transform) -> Result<Probe> {
    let reference: Vec<f64> = reference.iter().map(|v| transform.apply(*v)).collect();
    reference_basis(&reference, reference.len())?;
    let v = var.to_string();
    let names = (1..=npoly).map(|k| format!("marg.{k}.{var}")).collect();
    Ok(Probe::new(&format!("marg.{var}"), names, move |data| {
        marginal_coefficients(&transformed(data, &v, &transform)?, &reference, npoly)
    }))
}

/// Evaluates every probe on one dataset and concatenates the outputs.
pub fn apply_probes(probes: &[Probe], data: &ObsView<'_>) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for p in probes {
        out.extend(p.apply(data)?);
    }
    Ok(out)
}

pub fn probe_names(probes: &[Probe]) -> Vec<String> {
    probes.iter().flat_map(|p| p.component_names().iter().cloned()).collect()
}

fn column_mean_cov(simulated: &[f64], d: usize) -> (Vec<f64>, DMatrix<f64>) {
    let j = simulated.len() / d;
    let mut mu = vec![0.0; d];
    for row in simulated.chunks(d) {
        for (m, v) in mu.iter_mut().zip(row) {
            *m += v;
        }
    }
    mu.iter_mut().for_each(|m| *m /= j as f64);
    let mut cov = DMatrix::zeros(d, d);
    for row in simulated.chunks(d) {
        for a in 0..d {
            for b in 0..=a {
                cov[(a, b)] += (row[a] - mu[a]) * (row[b] - mu[b]);
            }
        }
    }
    for a in 0..d {
        for b in 0..=a {
            let v = cov[(a, b)] / (j - 1) as f64;
            cov[(a, b)] = v;
            cov[(b, a)] = v;
        }
    }
    (mu, cov)
}

/// Names of simulated probe columns that are (numerically) linear
/// combinations of earlier ones, together with the earlier columns involved.
fn collinear_columns(simulated: &[f64], d: usize, names: &[String]) -> Vec<String> {
    let j = simulated.len() / d;
    let cols: Vec<Vec<f64>> = (0..d)
        .map(|k| {
            let c: Vec<f64> = simulated.iter().skip(k).step_by(d).copied().collect();
            let m = mean(&c);
            c.into_iter().map(|v| v - m).collect()
        })
        .collect();
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let mut basis: Vec<(usize, Vec<f64>)> = Vec::new();
    let mut flagged: Vec<usize> = Vec::new();
    for (k, col) in cols.iter().enumerate() {
        let norm0 = dot(col, col);
        let mut r = col.clone();
        let mut involved = Vec::new();
        for (src, q) in &basis {
            let c = dot(&r, q);
            if c.abs() > 1e-8 * norm0.sqrt().max(f64::MIN_POSITIVE) {
                involved.push(*src);
            }
            for (ri, qi) in r.iter_mut().zip(q) {
                *ri -= c * qi;
            }
        }
        let norm = dot(&r, &r);
        if norm0 == 0.0 || norm <= 1e-10 * norm0 || j < 2 {
            flagged.extend(involved);
            flagged.push(k);
        } else {
            let s = norm.sqrt();
            basis.push((k, r.into_iter().map(|v| v / s).collect()));
        }
    }
    flagged.sort_unstable();
    flagged.dedup();
    flagged.into_iter().map(|k| names[k].clone()).collect()
}

/// Gaussian log-density at `observed` with mean and covariance (divisor
/// `J - 1`) estimated from the `J x d` row-major `simulated` matrix.
pub fn synth_loglik(simulated: &[f64], observed: &[f64]) -> Result<f64> {
    let names: Vec<String> = (1..=observed.len()).map(|k| format!("probe{k}")).collect();
    synth_loglik_named(simulated, observed, &names)
}

pub fn synth_loglik_named(simulated: &[f64], observed: &[f64], names: &[String]) -> Result<f64> {
    let d = observed.len();
    if d == 0 || simulated.len() % d != 0 {
        return Err(Error::invalid("synthetic likelihood", "simulated matrix does not match the probe dimension"));
    }
    let j = simulated.len() / d;
    if j <= d {
        return Err(Error::invalid(
            "synthetic likelihood",
            format!("{j} simulations cannot estimate a {d}-dimensional covariance"),
        ));
    }
    if simulated.iter().chain(observed).any(|v| !v.is_finite()) {
        return Err(Error::Domain("non-finite probe value".into()));
    }
    let collinear = collinear_columns(simulated, d, names);
    if !collinear.is_empty() {
        return Err(Error::SingularCovariance { collinear });
    }
    let (mu, cov) = column_mean_cov(simulated, d);
    let chol = cov.cholesky().ok_or(Error::SingularCovariance { collinear: Vec::new() })?;
    let diff = DVector::from_fn(d, |k, _| observed[k] - mu[k]);
    let z = chol
        .l_dirty()
        .solve_lower_triangular(&diff)
        .ok_or(Error::SingularCovariance { collinear: Vec::new() })?;
    let logdet: f64 = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    Ok(-0.5 * z.norm_squared() - 0.5 * logdet - 0.5 * d as f64 * (2.0 * std::f64::consts::PI).ln())
}

/// Two-sided rank p-value: `2 min(#{s < s*} + 1, #{s > s*} + 1) / (J + 1)`,
/// capped at 1.
pub fn rank_p_value(simulated: &[f64], observed: f64) -> f64 {
    let below = simulated.iter().filter(|s| **s < observed).count();
    let above = simulated.iter().filter(|s| **s > observed).count();
    let j = simulated.len() as f64;
    (2.0 * (below.min(above) + 1) as f64 / (j + 1.0)).min(1.0)
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let (ma, mb) = (mean(a), mean(b));
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    sab / (saa * sbb).sqrt()
}

/// Probes evaluated on `nsim` simulations; simulation `i` uses `key/i`.
/// Returns the `nsim x d` matrix.
pub fn simulate_probes(model: &ModelSpec, params: &[f64], probes: &[Probe], nsim: usize, key: StreamKey) -> Result<Vec<f64>> {
    model.require_initializer()?;
    let times = model.data().times();
    let rows: Vec<Vec<f64>> = (0..nsim)
        .into_par_iter()
        .map(|i| {
            let mut rng = key.child(i as u64).rng();
            let obs = model.simulate_path(params, times, &mut rng, None)?;
            let view = ObsView {
                names: model.obs_names(),
                values: &obs,
            };
            apply_probes(probes, &view)
        })
        .collect::<Result<_>>()?;
    Ok(rows.concat())
}

#[derive(Clone, Debug, Serialize)]
pub struct ProbeResult {
    pub names: Vec<String>,
    pub observed: Vec<f64>,
    /// `nsim x d`, row-major.
    pub simulated: Vec<f64>,
    pub nsim: usize,
    pub synth_loglik: f64,
    pub p_values: Vec<f64>,
    /// `d x d`, row-major.
    pub correlations: Vec<f64>,
}

impl ProbeResult {
    pub fn simulated_column(&self, k: usize) -> Vec<f64> {
        self.simulated.iter().skip(k).step_by(self.names.len()).copied().collect()
    }

    /// One `observed` row then one row per simulation.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        let mut header = vec!["sim".to_string()];
        header.extend(self.names.iter().cloned());
        wtr.write_record(&header)?;
        let mut row = vec!["observed".to_string()];
        row.extend(self.observed.iter().map(|v| format_num(*v)));
        wtr.write_record(&row)?;
        for (i, sim) in self.simulated.chunks(self.names.len()).enumerate() {
            let mut row = vec![(i + 1).to_string()];
            row.extend(sim.iter().map(|v| format_num(*v)));
            wtr.write_record(&row)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Synthetic-likelihood evaluation with per-probe diagnostics.
pub fn probe(model: &ModelSpec, params: &ParamVector, probes: &[Probe], nsim: usize, key: StreamKey) -> Result<ProbeResult> {
    let values = model.param_values(params)?;
    let names = probe_names(probes);
    let d = names.len();
    if nsim <= d {
        return Err(Error::invalid(
            "probe",
            format!("nsim = {nsim} cannot estimate a {d}-dimensional covariance"),
        ));
    }
    let observed = apply_probes(probes, &model.data().view())?;
    let simulated = simulate_probes(model, &values, probes, nsim, key)?;
    let synth = synth_loglik_named(&simulated, &observed, &names)?;
    let cols: Vec<Vec<f64>> = (0..d).map(|k| simulated.iter().skip(k).step_by(d).copied().collect()).collect();
    let p_values = cols.iter().zip(&observed).map(|(c, o)| rank_p_value(c, *o)).collect();
    let mut correlations = vec![0.0; d * d];
    for a in 0..d {
        for b in 0..d {
            correlations[a * d + b] = if a == b { 1.0 } else { pearson(&cols[a], &cols[b]) };
        }
    }
    Ok(ProbeResult {
        names,
        observed,
        simulated,
        nsim,
        synth_loglik: synth,
        p_values,
        correlations,
    })
}

#[derive(Clone, Debug)]
pub struct ProbeMatchSettings {
    pub est: Vec<String>,
    pub nsim: usize,
    pub transform: bool,
    pub optim: NelderMeadOptions,
}

impl ProbeMatchSettings {
    pub fn new(est: &[&str], nsim: usize) -> Self {
        ProbeMatchSettings {
            est: est.iter().map(|s| s.to_string()).collect(),
            nsim,
            transform: true,
            optim: NelderMeadOptions::default(),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ProbeMatchResult {
    pub params: ParamVector,
    pub synth_loglik: f64,
    pub status: OptimStatus,
    pub evaluations: usize,
}

/// Maximizes the synthetic likelihood over `est` with Nelder–Mead. Every
/// evaluation uses the same simulation streams, so the objective is a
/// deterministic function of the parameters.
pub fn probe_match(
    model: &ModelSpec,
    start: &ParamVector,
    probes: &[Probe],
    settings: &ProbeMatchSettings,
    key: StreamKey,
) -> Result<ProbeMatchResult> {
    let natural = model.param_values(start)?;
    let names = probe_names(probes);
    let observed = apply_probes(probes, &model.data().view())?;
    let idx = settings
        .est
        .iter()
        .map(|n| model.param_index(n))
        .collect::<Result<Vec<_>>>()?;
    let base = if settings.transform {
        model.to_estimation(&natural)?
    } else {
        natural.clone()
    };
    let to_natural = |x: &[f64]| -> Result<Vec<f64>> {
        let mut est = base.clone();
        for (&k, v) in idx.iter().zip(x) {
            est[k] = *v;
        }
        let mut p = if settings.transform {
            model.from_estimation(&est)?
        } else {
            est
        };
        // keep non-estimated parameters bit-identical
        for (k, v) in p.iter_mut().enumerate() {
            if !idx.contains(&k) {
                *v = natural[k];
            }
        }
        Ok(p)
    };
    let evaluate = |p: &[f64]| -> Result<f64> {
        let sims = simulate_probes(model, p, probes, settings.nsim, key)?;
        synth_loglik_named(&sims, &observed, &names)
    };
    if idx.is_empty() {
        return Ok(ProbeMatchResult {
            params: start.clone(),
            synth_loglik: evaluate(&natural)?,
            status: OptimStatus::Converged,
            evaluations: 1,
        });
    }
    let x0: Vec<f64> = idx.iter().map(|&k| base[k]).collect();
    let objective = |x: &[f64]| -> f64 {
        match to_natural(x).and_then(|p| evaluate(&p)) {
            Ok(v) => -v,
            Err(e) => {
                log::debug!("probe_match: objective failed: {e}");
                f64::INFINITY
            }
        }
    };
    let res = nelder_mead(objective, &x0, &settings.optim);
    let best = to_natural(&res.x)?;
    Ok(ProbeMatchResult {
        params: model.param_vector(&best),
        synth_loglik: -res.value,
        status: res.status,
        evaluations: res.evaluations,
    })
}
