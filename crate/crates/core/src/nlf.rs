//! Nonlinear forecasting: a simulated quasi-likelihood built from a radial
//! basis autoregression fitted to one long simulation.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::ModelSpec;
use crate::oracle::{nelder_mead, NelderMeadOptions, OptimStatus};
use crate::params::ParamVector;
use crate::rng::StreamKey;

#[derive(Clone, Debug)]
pub struct NlfSettings {
    pub start: ParamVector,
    pub est: Vec<String>,
    pub lags: Vec<usize>,
    /// Number of radial basis functions.
    pub nrbf: usize,
    /// Discarded transient length.
    pub nconverge: usize,
    /// Length of the simulation used for fitting.
    pub nasymp: usize,
    pub transform: bool,
    pub optim: NelderMeadOptions,
}

impl NlfSettings {
    pub fn new(start: ParamVector, est: &[&str], lags: &[usize]) -> Self {
        NlfSettings {
            start,
            est: est.iter().map(|s| s.to_string()).collect(),
            lags: lags.to_vec(),
            nrbf: 4,
            nconverge: 1000,
            nasymp: 1000,
            transform: true,
            optim: NelderMeadOptions::default(),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.lags.is_empty() || self.lags.contains(&0) {
            return Err(Error::invalid("nlf settings", "lags must be non-empty and at least 1"));
        }
        if self.nrbf < 2 {
            return Err(Error::invalid("nlf settings", format!("nrbf = {} (need at least 2)", self.nrbf)));
        }
        let maxlag = self.max_lag();
        if self.nconverge < maxlag || self.nasymp < maxlag + 1 {
            return Err(Error::invalid(
                "nlf settings",
                format!("nconverge and nasymp must exceed the largest lag {maxlag}"),
            ));
        }
        Ok(())
    }

    fn max_lag(&self) -> usize {
        self.lags.iter().copied().max().unwrap_or(0)
    }
}

/// Centers `m_k = ymin + R (1.2 (k-1)/(K-1) - 0.1)` and scale `0.3 R`, where
/// `R = ymax - ymin`.
pub fn rbf_centers(ymin: f64, ymax: f64, k: usize) -> Result<(Vec<f64>, f64)> {
    if k < 2 {
        return Err(Error::invalid("radial basis", format!("K = {k} (need at least 2)")));
    }
    let range = ymax - ymin;
    if !(range > 0.0 && range.is_finite()) {
        return Err(Error::Degenerate(format!("range [{ymin}, {ymax}] has no width")));
    }
    let centers = (0..k)
        .map(|i| ymin + range * (1.2 * i as f64 / (k - 1) as f64 - 0.1))
        .collect();
    Ok((centers, 0.3 * range))
}

/// A fitted radial basis predictor `H(y_{n-lag_1}, ..) = sum_jk a_jk f_k(y_{n-lag_j})`
/// with Gaussian bumps `f_k(x) = exp(-(x - m_k)^2 / (2 s^2))`.
#[derive(Clone, Debug, Serialize)]
pub struct RbfFit {
    pub lags: Vec<usize>,
    pub centers: Vec<f64>,
    pub scale: f64,
    /// `L x K`, row-major by lag.
    pub coefficients: Vec<f64>,
    /// Mean squared residual on the fitting series.
    pub sigma2: f64,
    pub rank_deficient: bool,
}

impl RbfFit {
    fn features(&self, y: &[f64], n: usize, out: &mut [f64]) {
        let k = self.centers.len();
        for (j, &lag) in self.lags.iter().enumerate() {
            let x = y[n - lag];
            for (c, m) in self.centers.iter().enumerate() {
                out[j * k + c] = (-(x - m).powi(2) / (2.0 * self.scale * self.scale)).exp();
            }
        }
    }

    /// Prediction of `y[n]` from its lagged values; needs `n >= max(lags)`.
    pub fn predict(&self, y: &[f64], n: usize) -> f64 {
        let mut f = vec![0.0; self.coefficients.len()];
        self.features(y, n, &mut f);
        f.iter().zip(&self.coefficients).map(|(a, b)| a * b).sum()
    }
}

/// Least-squares fit of the predictor to `series[first..]`, where `first` is
/// at least the largest lag. Centers come from the range of `series[first..]`.
pub fn fit_rbf_predictor(series: &[f64], first: usize, lags: &[usize], k: usize) -> Result<RbfFit> {
    let maxlag = lags.iter().copied().max().unwrap_or(0);
    if first < maxlag || first >= series.len() {
        return Err(Error::invalid("radial basis fit", "fitting window does not cover the lags"));
    }
    let window = &series[first..];
    if window.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("non-finite value in simulated series".into()));
    }
    let ymin = window.iter().copied().fold(f64::INFINITY, f64::min);
    let ymax = window.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (centers, scale) = rbf_centers(ymin, ymax, k)?;
    let mut fit = RbfFit {
        lags: lags.to_vec(),
        centers,
        scale,
        coefficients: vec![0.0; lags.len() * k],
        sigma2: 0.0,
        rank_deficient: false,
    };
    let rows = window.len();
    let cols = fit.coefficients.len();
    let mut design = DMatrix::zeros(rows, cols);
    let mut f = vec![0.0; cols];
    for i in 0..rows {
        fit.features(series, first + i, &mut f);
        for (c, v) in f.iter().enumerate() {
            design[(i, c)] = *v;
        }
    }
    let response = DVector::from_column_slice(window);
    let svd = design.clone().svd(true, true);
    let tol = svd.singular_values.max() * rows.max(cols) as f64 * f64::EPSILON;
    fit.rank_deficient = svd.singular_values.iter().filter(|s| **s > tol).count() < cols;
    let coef = svd
        .solve(&response, tol)
        .map_err(|e| Error::Degenerate(format!("radial basis least squares: {e}")))?;
    fit.coefficients = coef.iter().copied().collect();
    let resid = response - design * coef;
    fit.sigma2 = resid.norm_squared() / rows as f64;
    if fit.rank_deficient {
        log::warn!("nlf: rank-deficient basis design, using minimum-norm coefficients");
    }
    Ok(fit)
}

fn check_model(model: &ModelSpec) -> Result<f64> {
    if model.obs_dim() != 1 {
        return Err(Error::invalid("nlf", format!("needs one observable, model has {}", model.obs_dim())));
    }
    if model.covariates().is_some() {
        return Err(Error::invalid("nlf", "models with time-varying covariates are not supported"));
    }
    model
        .data()
        .spacing()
        .ok_or_else(|| Error::invalid("nlf", "observation times must be equally spaced"))
}

/// Simulated quasi log-likelihood at `params`. The long simulation uses the
/// stream `key`, so repeated calls with the same key are bit-identical.
pub fn nlf_quasi_loglik(model: &ModelSpec, params: &ParamVector, settings: &NlfSettings, key: StreamKey) -> Result<f64> {
    let values = model.param_values(params)?;
    quasi_loglik_values(model, &values, settings, key)
}

fn quasi_loglik_values(model: &ModelSpec, params: &[f64], settings: &NlfSettings, key: StreamKey) -> Result<f64> {
    settings.validate()?;
    model.require_initializer()?;
    let dt = check_model(model)?;
    let t0 = model.data().t0();
    let total = settings.nconverge + settings.nasymp;
    let times: Vec<f64> = (1..=total).map(|k| t0 + dt * k as f64).collect();
    let mut rng = key.rng();
    let sim = model.simulate_path(params, &times, &mut rng, None)?;
    let fit = fit_rbf_predictor(&sim, settings.nconverge, &settings.lags, settings.nrbf)?;
    if !(fit.sigma2 > 0.0) {
        return Err(Error::Degenerate("simulated series is predicted exactly (zero residual variance)".into()));
    }
    let y = model.data().values();
    let maxlag = settings.max_lag();
    if y.len() <= maxlag {
        return Err(Error::invalid("nlf", format!("{} observations do not exceed the largest lag", y.len())));
    }
    let ss: f64 = (maxlag..y.len()).map(|n| (y[n] - fit.predict(y, n)).powi(2)).sum();
    let count = (y.len() - maxlag) as f64;
    Ok(-0.5 * count * (2.0 * std::f64::consts::PI * fit.sigma2).ln() - ss / (2.0 * fit.sigma2))
}

#[derive(Clone, Debug, Serialize)]
pub struct NlfResult {
    pub params: ParamVector,
    pub quasi_loglik: f64,
    pub status: OptimStatus,
    pub evaluations: usize,
}

/// Maximizes the quasi log-likelihood over `settings.est` by Nelder–Mead,
/// reusing the stream `key` for every evaluation.
pub fn nlf_fit(model: &ModelSpec, settings: &NlfSettings, key: StreamKey) -> Result<NlfResult> {
    settings.validate()?;
    let natural = model.param_values(&settings.start)?;
    let idx = settings
        .est
        .iter()
        .map(|n| model.param_index(n))
        .collect::<Result<Vec<_>>>()?;
    if idx.is_empty() {
        return Ok(NlfResult {
            params: settings.start.clone(),
            quasi_loglik: quasi_loglik_values(model, &natural, settings, key)?,
            status: OptimStatus::Converged,
            evaluations: 1,
        });
    }
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
        for (k, v) in p.iter_mut().enumerate() {
            if !idx.contains(&k) {
                *v = natural[k];
            }
        }
        Ok(p)
    };
    let objective = |x: &[f64]| -> f64 {
        match to_natural(x).and_then(|p| quasi_loglik_values(model, &p, settings, key)) {
            Ok(v) => -v,
            Err(e) => {
                log::debug!("nlf: objective failed: {e}");
                f64::INFINITY
            }
        }
    };
    let x0: Vec<f64> = idx.iter().map(|&k| base[k]).collect();
    let res = nelder_mead(objective, &x0, &settings.optim);
    Ok(NlfResult {
        params: model.param_vector(&to_natural(&res.x)?),
        quasi_loglik: -res.value,
        status: res.status,
        evaluations: res.evaluations,
    })
}
