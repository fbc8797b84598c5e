//! The partially observed Markov process model and whole-model simulation.
//!
//! A [`ModelSpec`] bundles the component callbacks (process simulator,
//! measurement simulator and density, initializer, prior, parameter
//! transforms) with names, data and optional covariates. Callbacks receive
//! parameters and states as slices in declared name order; name resolution
//! happens once when a [`ParamVector`] is aligned to the model.

use std::io::Write;
use std::sync::Arc;

use rayon::prelude::*;

use crate::covariate::CovariateTable;
use crate::data::{format_num, TimeSeriesData};
use crate::error::{Error, Result};
use crate::params::ParamVector;
use crate::rng::{StreamKey, StreamRng};

/// One step of the latent process: `(state, params, t, dt, covariates, rng)`.
/// The state is advanced in place from `t` to `t + dt`.
pub type StepFn = dyn Fn(&mut [f64], &[f64], f64, f64, &[f64], &mut StreamRng) + Send + Sync;
/// Measurement simulator: `(state, params, t, covariates, rng, out)`.
pub type MeasureSimFn = dyn Fn(&[f64], &[f64], f64, &[f64], &mut StreamRng, &mut [f64]) + Send + Sync;
/// Measurement log density: `(y, state, params, t, covariates) -> log f(y | x)`.
pub type MeasureDensFn = dyn Fn(&[f64], &[f64], &[f64], f64, &[f64]) -> f64 + Send + Sync;
/// Initial-state simulator: `(params, t0, rng, out)`.
pub type InitFn = dyn Fn(&[f64], f64, &mut StreamRng, &mut [f64]) + Send + Sync;
/// Prior log density over the full parameter vector.
pub type PriorDensFn = dyn Fn(&[f64]) -> f64 + Send + Sync;
/// Prior simulator writing a full parameter vector.
pub type PriorSimFn = dyn Fn(&mut StreamRng, &mut [f64]) + Send + Sync;
/// Parameter transform `(input, output)`, both in declared parameter order.
pub type TransformFn = dyn Fn(&[f64], &mut [f64]) + Send + Sync;

/// How the step function is iterated between observation times.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Stepper {
    /// Fixed steps of exactly `delta_t`; intervals must be whole multiples.
    DiscreteTime { delta_t: f64 },
    /// Steps of at most `delta_t`, shortened uniformly so each interval is
    /// covered by a whole number of steps.
    Euler { delta_t: f64 },
}

impl Stepper {
    /// Number of steps and their size for the interval `[t1, t2]`.
    pub fn schedule(&self, t1: f64, t2: f64) -> Result<(usize, f64)> {
        let span = t2 - t1;
        if span < 0.0 {
            return Err(Error::invalid("time interval", format!("t2 = {t2} precedes t1 = {t1}")));
        }
        if span == 0.0 {
            return Ok((0, 0.0));
        }
        match *self {
            Stepper::DiscreteTime { delta_t } => {
                let steps = (span / delta_t).round();
                if ((steps * delta_t) - span).abs() > 1e-8 * span.max(1.0) {
                    return Err(Error::invalid(
                        "time interval",
                        format!("interval {span} is not a multiple of the step {delta_t}"),
                    ));
                }
                Ok((steps as usize, delta_t))
            }
            Stepper::Euler { delta_t } => {
                let steps = ((span / delta_t) - 1e-9).ceil().max(1.0);
                Ok((steps as usize, span / steps))
            }
        }
    }

    pub fn delta_t(&self) -> f64 {
        match *self {
            Stepper::DiscreteTime { delta_t } | Stepper::Euler { delta_t } => delta_t,
        }
    }
}

#[derive(Clone)]
struct RProcess {
    step: Arc<StepFn>,
    stepper: Stepper,
}

#[derive(Clone)]
enum Initializer {
    /// state `k` copied from parameter index `from[k]` (the `<state>.0` parameter)
    FromParams(Vec<usize>),
    Custom(Arc<InitFn>),
}

/// Which way [`ModelSpec::transform_params`] maps.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    ToEstimation,
    FromEstimation,
}

/// A POMP model: component callbacks, names, data and covariates.
///
/// Immutable once built and cheap to clone; share freely across threads.
#[derive(Clone)]
pub struct ModelSpec {
    name: String,
    state_names: Vec<String>,
    param_names: Vec<String>,
    rprocess: Option<RProcess>,
    rmeasure: Option<Arc<MeasureSimFn>>,
    dmeasure: Option<Arc<MeasureDensFn>>,
    initializer: Option<Initializer>,
    rprior: Option<Arc<PriorSimFn>>,
    dprior: Option<Arc<PriorDensFn>>,
    to_est: Option<Arc<TransformFn>>,
    from_est: Option<Arc<TransformFn>>,
    accumulators: Vec<usize>,
    data: TimeSeriesData,
    params: Option<ParamVector>,
    covariates: Option<Arc<CovariateTable>>,
}

impl std::fmt::Debug for ModelSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ModelSpec")
            .field("name", &self.name)
            .field("states", &self.state_names)
            .field("params", &self.param_names)
            .field("observables", &self.data.names())
            .field("n_times", &self.data.len())
            .finish_non_exhaustive()
    }
}

/// Builder for [`ModelSpec`].
pub struct ModelBuilder {
    name: String,
    state_names: Vec<String>,
    param_names: Vec<String>,
    rprocess: Option<RProcess>,
    rmeasure: Option<Arc<MeasureSimFn>>,
    dmeasure: Option<Arc<MeasureDensFn>>,
    initializer: Option<Arc<InitFn>>,
    rprior: Option<Arc<PriorSimFn>>,
    dprior: Option<Arc<PriorDensFn>>,
    transforms: Option<(Arc<TransformFn>, Arc<TransformFn>)>,
    accumulators: Vec<String>,
    data: Option<TimeSeriesData>,
    params: Option<ParamVector>,
    covariates: Option<CovariateTable>,
}

fn to_strings(names: &[&str]) -> Vec<String> {
    names.iter().map(|s| s.to_string()).collect()
}

fn check_unique(what: &'static str, names: &[String]) -> Result<()> {
    for (i, name) in names.iter().enumerate() {
        if name.is_empty() {
            return Err(Error::invalid(what, "names must be non-empty"));
        }
        if names[..i].contains(name) {
            return Err(Error::DuplicateName(name.clone()));
        }
    }
    Ok(())
}

impl ModelBuilder {
    pub fn states(mut self, names: &[&str]) -> Self {
        self.state_names = to_strings(names);
        self
    }

    pub fn params(mut self, names: &[&str]) -> Self {
        self.param_names = to_strings(names);
        self
    }

    pub fn data(mut self, data: TimeSeriesData) -> Self {
        self.data = Some(data);
        self
    }

    pub fn rprocess<F>(mut self, stepper: Stepper, step: F) -> Self
    where
        F: Fn(&mut [f64], &[f64], f64, f64, &[f64], &mut StreamRng) + Send + Sync + 'static,
    {
        self.rprocess = Some(RProcess {
            step: Arc::new(step),
            stepper,
        });
        self
    }

    pub fn rmeasure<F>(mut self, f: F) -> Self
    where
        F: Fn(&[f64], &[f64], f64, &[f64], &mut StreamRng, &mut [f64]) + Send + Sync + 'static,
    {
        self.rmeasure = Some(Arc::new(f));
        self
    }

    pub fn dmeasure<F>(mut self, f: F) -> Self
    where
        F: Fn(&[f64], &[f64], &[f64], f64, &[f64]) -> f64 + Send + Sync + 'static,
    {
        self.dmeasure = Some(Arc::new(f));
        self
    }

    pub fn initializer<F>(mut self, f: F) -> Self
    where
        F: Fn(&[f64], f64, &mut StreamRng, &mut [f64]) + Send + Sync + 'static,
    {
        self.initializer = Some(Arc::new(f));
        self
    }

    pub fn rprior<F>(mut self, f: F) -> Self
    where
        F: Fn(&mut StreamRng, &mut [f64]) + Send + Sync + 'static,
    {
        self.rprior = Some(Arc::new(f));
        self
    }

    pub fn dprior<F>(mut self, f: F) -> Self
    where
        F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        self.dprior = Some(Arc::new(f));
        self
    }

    /// Registers the `to_estimation` / `from_estimation` pair.
    pub fn transforms<F, G>(mut self, to_estimation: F, from_estimation: G) -> Self
    where
        F: Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
        G: Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    {
        self.transforms = Some((Arc::new(to_estimation), Arc::new(from_estimation)));
        self
    }

    pub fn accumulators(mut self, names: &[&str]) -> Self {
        self.accumulators = to_strings(names);
        self
    }

    pub fn default_params(mut self, params: ParamVector) -> Self {
        self.params = Some(params);
        self
    }

    pub fn covariates(mut self, table: CovariateTable) -> Self {
        self.covariates = Some(table);
        self
    }

    pub fn build(self) -> Result<ModelSpec> {
        check_unique("state names", &self.state_names)?;
        check_unique("parameter names", &self.param_names)?;
        let data = self.data.ok_or(Error::MissingComponent("data"))?;

        let accumulators = self
            .accumulators
            .iter()
            .map(|a| {
                self.state_names
                    .iter()
                    .position(|s| s == a)
                    .ok_or_else(|| Error::invalid("accumulator", format!("`{a}` is not a declared state")))
            })
            .collect::<Result<Vec<_>>>()?;

        let initializer = match self.initializer {
            Some(f) => Some(Initializer::Custom(f)),
            None if self.state_names.is_empty() => None,
            None => {
                let from = self
                    .state_names
                    .iter()
                    .map(|s| {
                        let ic = format!("{s}.0");
                        self.param_names.iter().position(|p| *p == ic).ok_or_else(|| {
                            Error::invalid(
                                "initializer",
                                format!("no custom initializer and no parameter `{ic}` for state `{s}`"),
                            )
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                Some(Initializer::FromParams(from))
            }
        };

        let (to_est, from_est) = match self.transforms {
            Some((a, b)) => (Some(a), Some(b)),
            None => (None, None),
        };

        let model = ModelSpec {
            name: self.name,
            state_names: self.state_names,
            param_names: self.param_names,
            rprocess: self.rprocess,
            rmeasure: self.rmeasure,
            dmeasure: self.dmeasure,
            initializer,
            rprior: self.rprior,
            dprior: self.dprior,
            to_est,
            from_est,
            accumulators,
            data,
            params: None,
            covariates: self.covariates.map(Arc::new),
        };
        match self.params {
            Some(p) => model.with_params(p),
            None => Ok(model),
        }
    }
}

impl ModelSpec {
    pub fn builder(name: &str) -> ModelBuilder {
        ModelBuilder {
            name: name.to_string(),
            state_names: Vec::new(),
            param_names: Vec::new(),
            rprocess: None,
            rmeasure: None,
            dmeasure: None,
            initializer: None,
            rprior: None,
            dprior: None,
            transforms: None,
            accumulators: Vec::new(),
            data: None,
            params: None,
            covariates: None,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn state_names(&self) -> &[String] {
        &self.state_names
    }

    pub fn param_names(&self) -> &[String] {
        &self.param_names
    }

    pub fn obs_names(&self) -> &[String] {
        self.data.names()
    }

    pub fn state_dim(&self) -> usize {
        self.state_names.len()
    }

    pub fn param_dim(&self) -> usize {
        self.param_names.len()
    }

    pub fn obs_dim(&self) -> usize {
        self.data.n_obs()
    }

    pub fn data(&self) -> &TimeSeriesData {
        &self.data
    }

    pub fn params(&self) -> Option<&ParamVector> {
        self.params.as_ref()
    }

    pub fn covariates(&self) -> Option<&CovariateTable> {
        self.covariates.as_deref()
    }

    pub fn accumulator_indices(&self) -> &[usize] {
        &self.accumulators
    }

    pub fn has_dmeasure(&self) -> bool {
        self.dmeasure.is_some()
    }

    pub fn has_dprior(&self) -> bool {
        self.dprior.is_some()
    }

    pub fn has_transform(&self) -> bool {
        self.to_est.is_some()
    }

    pub fn stepper(&self) -> Option<Stepper> {
        self.rprocess.as_ref().map(|r| r.stepper)
    }

    /// Replaces the data; observable names must match.
    pub fn with_data(&self, data: TimeSeriesData) -> Result<Self> {
        if data.names() != self.data.names() {
            return Err(Error::invalid(
                "data",
                format!(
                    "observables {:?} do not match the model's {:?}",
                    data.names(),
                    self.data.names()
                ),
            ));
        }
        let mut out = self.clone();
        out.data = data;
        Ok(out)
    }

    pub fn with_params(&self, params: ParamVector) -> Result<Self> {
        self.param_values(&params)?;
        let mut out = self.clone();
        out.params = Some(params);
        Ok(out)
    }

    pub fn with_dprior<F>(&self, f: F) -> Self
    where
        F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        let mut out = self.clone();
        out.dprior = Some(Arc::new(f));
        out
    }

    pub fn with_covariates(&self, table: CovariateTable) -> Self {
        let mut out = self.clone();
        out.covariates = Some(Arc::new(table));
        out
    }

    /// The stored default parameters, or an error if none were set.
    pub fn default_params(&self) -> Result<&ParamVector> {
        self.params
            .as_ref()
            .ok_or_else(|| Error::invalid("parameters", "model has no default parameter vector"))
    }

    /// Values of `theta` in declared parameter order.
    pub fn param_values(&self, theta: &ParamVector) -> Result<Vec<f64>> {
        for name in theta.names() {
            if !self.param_names.contains(name) {
                return Err(Error::UnknownName(name.clone()));
            }
        }
        self.param_names.iter().map(|n| theta.get(n)).collect()
    }

    pub fn param_vector(&self, values: &[f64]) -> ParamVector {
        ParamVector::from_parts(self.param_names.clone(), values.to_vec())
    }

    pub fn param_index(&self, name: &str) -> Result<usize> {
        self.param_names
            .iter()
            .position(|p| p == name)
            .ok_or_else(|| Error::UnknownName(name.to_string()))
    }

    pub fn state_index(&self, name: &str) -> Result<usize> {
        self.state_names
            .iter()
            .position(|p| p == name)
            .ok_or_else(|| Error::UnknownName(name.to_string()))
    }

    fn covars_into(&self, t: f64, buf: &mut Vec<f64>) {
        match &self.covariates {
            Some(table) => {
                buf.resize(table.width(), 0.0);
                table.lookup_into(t, buf);
            }
            None => buf.clear(),
        }
    }

    pub(crate) fn require_rprocess(&self) -> Result<()> {
        self.rprocess.as_ref().map(|_| ()).ok_or(Error::MissingComponent("rprocess"))
    }

    pub(crate) fn require_rmeasure(&self) -> Result<()> {
        self.rmeasure.as_ref().map(|_| ()).ok_or(Error::MissingComponent("rmeasure"))
    }

    pub(crate) fn require_dmeasure(&self) -> Result<()> {
        self.dmeasure.as_ref().map(|_| ()).ok_or(Error::MissingComponent("dmeasure"))
    }

    pub(crate) fn require_initializer(&self) -> Result<()> {
        self.initializer.as_ref().map(|_| ()).ok_or(Error::MissingComponent("initializer"))
    }

    pub(crate) fn require_dprior(&self) -> Result<()> {
        self.dprior.as_ref().map(|_| ()).ok_or(Error::MissingComponent("dprior"))
    }

    /// Draws `X(t0)`.
    pub fn init_state(&self, params: &[f64], rng: &mut StreamRng, out: &mut [f64]) -> Result<()> {
        match self.initializer.as_ref().ok_or(Error::MissingComponent("initializer"))? {
            Initializer::FromParams(from) => {
                for (o, &i) in out.iter_mut().zip(from) {
                    *o = params[i];
                }
            }
            Initializer::Custom(f) => f(params, self.data.t0(), rng, out),
        }
        self.check_finite(out, self.data.t0())
    }

    /// Advances `state` from `t1` to `t2` by iterating the step function.
    pub fn advance(
        &self,
        state: &mut [f64],
        params: &[f64],
        t1: f64,
        t2: f64,
        rng: &mut StreamRng,
        covars: &mut Vec<f64>,
    ) -> Result<()> {
        let rp = self.rprocess.as_ref().ok_or(Error::MissingComponent("rprocess"))?;
        let (steps, dt) = rp.stepper.schedule(t1, t2)?;
        let mut t = t1;
        for k in 0..steps {
            self.covars_into(t, covars);
            (rp.step)(state, params, t, dt, covars, rng);
            t = if k + 1 == steps { t2 } else { t1 + (k + 1) as f64 * dt };
        }
        self.check_finite(state, t2)
    }

    fn check_finite(&self, state: &[f64], t: f64) -> Result<()> {
        match state.iter().position(|v| !v.is_finite()) {
            None => Ok(()),
            Some(k) => Err(Error::SimulationDiverged {
                time: t,
                state: self.state_names[k].clone(),
                value: state[k],
            }),
        }
    }

    /// Draws an observation at time `t`.
    pub fn measure(
        &self,
        state: &[f64],
        params: &[f64],
        t: f64,
        rng: &mut StreamRng,
        covars: &mut Vec<f64>,
        out: &mut [f64],
    ) -> Result<()> {
        let f = self.rmeasure.as_ref().ok_or(Error::MissingComponent("rmeasure"))?;
        self.covars_into(t, covars);
        f(state, params, t, covars, rng, out);
        Ok(())
    }

    /// Measurement log density. A record whose components are all missing
    /// contributes 0.
    pub fn dmeasure_log(
        &self,
        y: &[f64],
        state: &[f64],
        params: &[f64],
        t: f64,
        covars: &mut Vec<f64>,
    ) -> Result<f64> {
        let f = self.dmeasure.as_ref().ok_or(Error::MissingComponent("dmeasure"))?;
        if y.iter().all(|v| v.is_nan()) {
            return Ok(0.0);
        }
        self.covars_into(t, covars);
        let ll = f(y, state, params, t, covars);
        if ll.is_nan() {
            return Err(Error::Domain(format!("dmeasure returned NaN at t = {t}")));
        }
        Ok(ll)
    }

    /// Measurement density on the natural (`log = false`) or log scale.
    pub fn dmeasure(&self, y: &[f64], state: &[f64], params: &[f64], t: f64, log: bool) -> Result<f64> {
        let ll = self.dmeasure_log(y, state, params, t, &mut Vec::new())?;
        Ok(if log { ll } else { ll.exp() })
    }

    pub fn reset_accumulators(&self, state: &mut [f64]) {
        for &k in &self.accumulators {
            state[k] = 0.0;
        }
    }

    /// Prior log density; errors when no prior is registered.
    pub fn log_prior(&self, params: &[f64]) -> Result<f64> {
        let f = self.dprior.as_ref().ok_or(Error::MissingComponent("dprior"))?;
        let lp = f(params);
        if lp.is_nan() {
            return Err(Error::Domain("dprior returned NaN".into()));
        }
        Ok(lp)
    }

    pub fn draw_prior(&self, rng: &mut StreamRng) -> Result<ParamVector> {
        let f = self.rprior.as_ref().ok_or(Error::MissingComponent("rprior"))?;
        let mut out = vec![0.0; self.param_dim()];
        f(rng, &mut out);
        Ok(self.param_vector(&out))
    }

    fn apply_transform(&self, f: Option<&Arc<TransformFn>>, input: &[f64], out: &mut [f64]) -> Result<()> {
        match f {
            Some(f) => f(input, out),
            None => out.copy_from_slice(input),
        }
        match out.iter().position(|v| !v.is_finite()) {
            None => Ok(()),
            Some(k) => Err(Error::TransformDomain(self.param_names[k].clone())),
        }
    }

    pub fn to_estimation_into(&self, natural: &[f64], out: &mut [f64]) -> Result<()> {
        self.apply_transform(self.to_est.as_ref(), natural, out)
    }

    pub fn from_estimation_into(&self, est: &[f64], out: &mut [f64]) -> Result<()> {
        self.apply_transform(self.from_est.as_ref(), est, out)
    }

    pub fn to_estimation(&self, natural: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; natural.len()];
        self.to_estimation_into(natural, &mut out)?;
        Ok(out)
    }

    pub fn from_estimation(&self, est: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; est.len()];
        self.from_estimation_into(est, &mut out)?;
        Ok(out)
    }

    /// Maps a parameter vector to or from the estimation scale. Identity when
    /// the model registers no transform.
    pub fn transform_params(&self, theta: &ParamVector, direction: Direction) -> Result<ParamVector> {
        let values = self.param_values(theta)?;
        let out = match direction {
            Direction::ToEstimation => self.to_estimation(&values)?,
            Direction::FromEstimation => self.from_estimation(&values)?,
        };
        Ok(self.param_vector(&out))
    }

    /// Simulates one realization at the data's times. Returns observations
    /// (`N x r`, row-major) and, when `states` is given, fills it with the
    /// `(N + 1) x q` states at `t0, t_1, ..., t_N`.
    pub(crate) fn simulate_path(
        &self,
        params: &[f64],
        times: &[f64],
        rng: &mut StreamRng,
        mut states: Option<&mut Vec<f64>>,
    ) -> Result<Vec<f64>> {
        self.require_rprocess()?;
        self.require_rmeasure()?;
        let (q, r) = (self.state_dim(), self.obs_dim());
        let mut x = vec![0.0; q];
        let mut covars = Vec::new();
        self.init_state(params, rng, &mut x)?;
        if let Some(s) = states.as_deref_mut() {
            s.clear();
            s.extend_from_slice(&x);
        }
        let mut obs = vec![0.0; times.len() * r];
        let mut t_prev = self.data.t0();
        for (n, &t) in times.iter().enumerate() {
            self.advance(&mut x, params, t_prev, t, rng, &mut covars)?;
            self.measure(&x, params, t, rng, &mut covars, &mut obs[n * r..(n + 1) * r])?;
            if let Some(s) = states.as_deref_mut() {
                s.extend_from_slice(&x);
            }
            self.reset_accumulators(&mut x);
            t_prev = t;
        }
        Ok(obs)
    }
}

/// One simulated realization: latent states at `t0, t_1..t_N` and observations
/// at `t_1..t_N`. Accumulator states are reported as accumulated over the
/// preceding interval.
#[derive(Clone, Debug)]
pub struct SimulationRecord {
    pub t0: f64,
    pub times: Vec<f64>,
    pub state_names: Vec<String>,
    pub obs_names: Vec<String>,
    /// `(N + 1) x q`, row-major.
    pub states: Vec<f64>,
    /// `N x r`, row-major.
    pub observations: Vec<f64>,
    pub params: ParamVector,
}

impl SimulationRecord {
    /// State trajectory for one variable at `t0, t_1, ..., t_N`.
    pub fn state(&self, name: &str) -> Result<Vec<f64>> {
        let q = self.state_names.len();
        let k = self
            .state_names
            .iter()
            .position(|s| s == name)
            .ok_or_else(|| Error::UnknownName(name.to_string()))?;
        Ok(self.states.iter().skip(k).step_by(q).copied().collect())
    }

    pub fn observation(&self, name: &str) -> Result<Vec<f64>> {
        self.data()?.column(name)
    }

    /// The observations as a dataset.
    pub fn data(&self) -> Result<TimeSeriesData> {
        TimeSeriesData::new(self.t0, self.times.clone(), self.obs_names.clone(), self.observations.clone())
    }
}

/// Simulates `nsim` independent realizations. Simulation `i` uses the stream
/// `key.child(i)`, so output is independent of thread count.
pub fn simulate(model: &ModelSpec, params: &ParamVector, key: StreamKey, nsim: usize) -> Result<Vec<SimulationRecord>> {
    model.require_rprocess()?;
    model.require_rmeasure()?;
    model.require_initializer()?;
    let values = model.param_values(params)?;
    let times = model.data().times().to_vec();
    (0..nsim)
        .into_par_iter()
        .map(|i| {
            let mut rng = key.child(i as u64).rng();
            let mut states = Vec::new();
            let observations = model.simulate_path(&values, &times, &mut rng, Some(&mut states))?;
            Ok(SimulationRecord {
                t0: model.data().t0(),
                times: times.clone(),
                state_names: model.state_names().to_vec(),
                obs_names: model.obs_names().to_vec(),
                states,
                observations,
                params: params.clone(),
            })
        })
        .collect()
}

/// Writes simulations as CSV: `time`, the states, then the observables, one row
/// per observation time. A leading `sim` column is added when there is more
/// than one record.
pub fn write_simulations_csv<W: Write>(records: &[SimulationRecord], writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let Some(first) = records.first() else {
        wtr.flush()?;
        return Ok(());
    };
    let multi = records.len() > 1;
    let mut header = Vec::new();
    if multi {
        header.push("sim".to_string());
    }
    header.push("time".to_string());
    header.extend(first.state_names.iter().cloned());
    header.extend(first.obs_names.iter().cloned());
    wtr.write_record(&header)?;
    let (q, r) = (first.state_names.len(), first.obs_names.len());
    for (i, rec) in records.iter().enumerate() {
        for (n, t) in rec.times.iter().enumerate() {
            let mut row = Vec::with_capacity(header.len());
            if multi {
                row.push((i + 1).to_string());
            }
            row.push(format_num(*t));
            row.extend(rec.states[(n + 1) * q..(n + 2) * q].iter().map(|v| format_num(*v)));
            row.extend(rec.observations[n * r..(n + 1) * r].iter().map(|v| format_num(*v)));
            wtr.write_record(&row)?;
        }
    }
    wtr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, StandardNormal};

    /// Random walk with a counting accumulator `C` that adds 1 per step.
    fn walk(accumulate: bool) -> ModelSpec {
        let data = TimeSeriesData::placeholder(0.0, vec![1.0, 2.0, 3.5], &["y"]).unwrap();
        let b = ModelSpec::builder("walk")
            .states(&["x", "C"])
            .params(&["s", "x.0", "C.0"])
            .data(data)
            .rprocess(Stepper::Euler { delta_t: 0.5 }, |x, p, _t, dt, _c, rng| {
                let z: f64 = StandardNormal.sample(rng);
                x[0] += p[0] * dt.sqrt() * z;
                x[1] += 1.0;
            })
            .rmeasure(|x, _p, _t, _c, _rng, out| out[0] = x[0])
            .dmeasure(|y, x, _p, _t, _c| if y[0] == x[0] { 0.0 } else { f64::NEG_INFINITY });
        let b = if accumulate { b.accumulators(&["C"]) } else { b };
        b.build().unwrap()
    }

    #[test]
    fn euler_schedule_shortens_steps() {
        let s = Stepper::Euler { delta_t: 0.3 };
        let (n, dt) = s.schedule(0.0, 1.0).unwrap();
        assert_eq!(n, 4);
        assert!((dt - 0.25).abs() < 1e-15);
        assert_eq!(s.schedule(1.0, 1.0).unwrap(), (0, 0.0));
        assert!(s.schedule(1.0, 0.0).is_err());
    }

    #[test]
    fn discrete_schedule_requires_multiples() {
        let s = Stepper::DiscreteTime { delta_t: 1.0 };
        assert_eq!(s.schedule(0.0, 3.0).unwrap(), (3, 1.0));
        assert!(s.schedule(0.0, 2.5).is_err());
    }

    #[test]
    fn default_initializer_needs_dot_zero_params() {
        let data = TimeSeriesData::placeholder(0.0, vec![1.0], &["y"]).unwrap();
        let err = ModelSpec::builder("m")
            .states(&["x"])
            .params(&["a"])
            .data(data)
            .build()
            .unwrap_err();
        assert!(err.to_string().contains("x.0"));
    }

    #[test]
    fn accumulator_must_be_a_state() {
        let data = TimeSeriesData::placeholder(0.0, vec![1.0], &["y"]).unwrap();
        let err = ModelSpec::builder("m")
            .states(&["x"])
            .params(&["x.0"])
            .accumulators(&["H"])
            .data(data)
            .build()
            .unwrap_err();
        assert!(err.to_string().contains("`H`"));
    }

    #[test]
    fn accumulators_report_interval_counts() {
        let theta = ParamVector::new([("s", 1.0), ("x.0", 0.0), ("C.0", 0.0)]).unwrap();
        let with = simulate(&walk(true), &theta, StreamKey::new(1), 1).unwrap();
        let without = simulate(&walk(false), &theta, StreamKey::new(1), 1).unwrap();
        // steps per interval: (0,1] -> 2, (1,2] -> 2, (2,3.5] -> 3
        assert_eq!(with[0].state("C").unwrap(), vec![0.0, 2.0, 2.0, 3.0]);
        assert_eq!(without[0].state("C").unwrap(), vec![0.0, 2.0, 4.0, 7.0]);
        assert_eq!(with[0].state("x").unwrap(), without[0].state("x").unwrap());
    }

    #[test]
    fn simulate_is_reproducible_and_stream_keyed() {
        let theta = ParamVector::new([("s", 1.0), ("x.0", 0.0), ("C.0", 0.0)]).unwrap();
        let a = simulate(&walk(true), &theta, StreamKey::new(5), 3).unwrap();
        let b = simulate(&walk(true), &theta, StreamKey::new(5), 3).unwrap();
        for (ra, rb) in a.iter().zip(&b) {
            assert_eq!(ra.observations, rb.observations);
        }
        assert_ne!(a[0].observations, a[1].observations);
        let single = simulate(&walk(true), &theta, StreamKey::new(5), 1).unwrap();
        assert_eq!(single[0].observations, a[0].observations);
    }

    #[test]
    fn missing_observation_contributes_zero() {
        let m = walk(true);
        let ll = m.dmeasure(&[f64::NAN], &[1.0, 0.0], &[1.0, 0.0, 0.0], 1.0, true).unwrap();
        assert_eq!(ll, 0.0);
        let ll = m.dmeasure(&[2.0], &[1.0, 0.0], &[1.0, 0.0, 0.0], 1.0, false).unwrap();
        assert_eq!(ll, 0.0);
    }

    #[test]
    fn divergence_names_time_and_state() {
        let data = TimeSeriesData::placeholder(0.0, vec![1.0, 2.0], &["y"]).unwrap();
        let m = ModelSpec::builder("boom")
            .states(&["x"])
            .params(&["x.0"])
            .data(data)
            .rprocess(Stepper::DiscreteTime { delta_t: 1.0 }, |x, _p, t, _dt, _c, _r| {
                if t >= 1.0 {
                    x[0] = f64::INFINITY;
                }
            })
            .rmeasure(|x, _p, _t, _c, _r, out| out[0] = x[0])
            .build()
            .unwrap();
        let theta = ParamVector::new([("x.0", 1.0)]).unwrap();
        match simulate(&m, &theta, StreamKey::new(0), 1) {
            Err(Error::SimulationDiverged { time, state, .. }) => {
                assert_eq!(time, 2.0);
                assert_eq!(state, "x");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_component_is_reported() {
        let data = TimeSeriesData::placeholder(0.0, vec![1.0], &["y"]).unwrap();
        let m = ModelSpec::builder("bare")
            .states(&["x"])
            .params(&["x.0"])
            .data(data)
            .build()
            .unwrap();
        let theta = ParamVector::new([("x.0", 1.0)]).unwrap();
        assert!(matches!(
            simulate(&m, &theta, StreamKey::new(0), 1),
            Err(Error::MissingComponent("rprocess"))
        ));
    }

    #[test]
    fn transform_identity_without_registration() {
        let m = walk(false);
        let theta = ParamVector::new([("s", 0.3), ("x.0", -1.0), ("C.0", 0.0)]).unwrap();
        assert_eq!(m.transform_params(&theta, Direction::ToEstimation).unwrap(), theta);
    }

    #[test]
    fn unknown_parameter_is_rejected() {
        let m = walk(false);
        let theta = ParamVector::new([("s", 0.3), ("x.0", -1.0), ("C.0", 0.0), ("bogus", 1.0)]).unwrap();
        assert!(matches!(m.param_values(&theta), Err(Error::UnknownName(n)) if n == "bogus"));
        let short = ParamVector::new([("s", 0.3)]).unwrap();
        assert!(m.param_values(&short).is_err());
    }
}
