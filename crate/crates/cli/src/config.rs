//! Run configuration: the JSON schema and its validation.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const SCHEMA_VERSION: u32 = 1;

pub const ALGORITHMS: [&str; 8] = ["simulate", "pfilter", "mif", "pmcmc", "probe", "abc", "nlf", "kalman"];

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema: u32,
    pub model: String,
    /// CSV path, or `"simulate"` to simulate a dataset at `params`.
    #[serde(default = "default_data")]
    pub data: String,
    pub algorithm: String,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    /// Overrides of the model's default parameters.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub params: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulate: Option<SimulateBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pfilter: Option<PfilterBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mif: Option<MifBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pmcmc: Option<PmcmcBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probe: Option<ProbeBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub abc: Option<AbcBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nlf: Option<NlfBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kalman: Option<KalmanBlock>,
}

fn default_data() -> String {
    "simulate".into()
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateBlock {
    #[serde(default = "one")]
    pub nsim: usize,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct PfilterBlock {
    #[serde(default = "thousand")]
    pub np: usize,
    /// Independent replicate filters; more than one reports a standard error.
    #[serde(default = "one")]
    pub reps: usize,
    #[serde(default)]
    pub max_fail: usize,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct MifBlock {
    /// Number of independent runs from randomized starts.
    #[serde(default = "one")]
    pub starts: usize,
    /// Log-scale spread of the randomized starts around `params` (0 starts
    /// every run at `params`).
    #[serde(default = "unit")]
    pub start_sdlog: f64,
    #[serde(default = "hundred")]
    pub iterations: usize,
    #[serde(default = "thousand")]
    pub np: usize,
    pub rw_sd: BTreeMap<String, f64>,
    #[serde(default)]
    pub ivps: Vec<String>,
    #[serde(default)]
    pub ic_lag: Option<usize>,
    #[serde(default = "two")]
    pub var_factor: f64,
    #[serde(default = "cooling_fraction")]
    pub cooling_fraction: f64,
    /// Iterations over which the intensity falls to `cooling_fraction`
    /// (default: all of them).
    #[serde(default)]
    pub cooling_window: Option<usize>,
    #[serde(default = "yes")]
    pub transform: bool,
    #[serde(default)]
    pub max_fail: usize,
    /// Particles and replicates for the final likelihood evaluation.
    #[serde(default = "thousand")]
    pub eval_np: usize,
    #[serde(default = "ten")]
    pub eval_reps: usize,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct PmcmcBlock {
    #[serde(default = "thousand")]
    pub iterations: usize,
    #[serde(default = "hundred")]
    pub np: usize,
    pub proposal: BTreeMap<String, f64>,
    /// Uniform prior on `[v / f, v * f]` around the starting parameters.
    #[serde(default = "ten_f")]
    pub prior_factor: f64,
    /// Tolerated filtering failures per likelihood evaluation (default: any).
    #[serde(default)]
    pub max_fail: Option<usize>,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProbeSpec {
    Mean {
        var: String,
        #[serde(default)]
        transform: Option<String>,
    },
    Acf {
        var: String,
        lags: Vec<usize>,
        #[serde(default)]
        transform: Option<String>,
    },
    Nlar {
        var: String,
        lags: Vec<usize>,
        powers: Vec<i32>,
        #[serde(default)]
        transform: Option<String>,
    },
    /// Reference distribution is the observed data.
    Marginal {
        var: String,
        #[serde(default = "three")]
        npoly: usize,
        #[serde(default)]
        transform: Option<String>,
    },
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct MatchBlock {
    pub est: Vec<String>,
    #[serde(default = "maxit")]
    pub maxit: usize,
    #[serde(default = "reltol")]
    pub reltol: f64,
    #[serde(default = "yes")]
    pub transform: bool,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeBlock {
    #[serde(default = "thousand")]
    pub nsim: usize,
    pub probes: Vec<ProbeSpec>,
    #[serde(default, rename = "match")]
    pub matching: Option<MatchBlock>,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct AbcBlock {
    #[serde(default = "thousand")]
    pub iterations: usize,
    pub probes: Vec<ProbeSpec>,
    /// Per-probe scales; estimated from `scale_nsim` simulations when absent.
    #[serde(default)]
    pub scale: Option<Vec<f64>>,
    #[serde(default = "five_hundred")]
    pub scale_nsim: usize,
    #[serde(default = "two")]
    pub epsilon: f64,
    pub proposal: BTreeMap<String, f64>,
    #[serde(default = "ten_f")]
    pub prior_factor: f64,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct NlfBlock {
    pub est: Vec<String>,
    #[serde(default = "nlf_lags")]
    pub lags: Vec<usize>,
    #[serde(default = "four")]
    pub nrbf: usize,
    #[serde(default = "thousand")]
    pub nconverge: usize,
    #[serde(default = "thousand")]
    pub nasymp: usize,
    #[serde(default = "yes")]
    pub transform: bool,
    #[serde(default = "maxit")]
    pub maxit: usize,
    #[serde(default = "reltol")]
    pub reltol: f64,
}

#[derive(Clone, Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct KalmanBlock {
    /// Also maximize the exact likelihood over r, sigma and tau.
    #[serde(default)]
    pub mle: bool,
}

fn one() -> usize {
    1
}
fn three() -> usize {
    3
}
fn four() -> usize {
    4
}
fn ten() -> usize {
    10
}
fn hundred() -> usize {
    100
}
fn five_hundred() -> usize {
    500
}
fn thousand() -> usize {
    1000
}
fn maxit() -> usize {
    2000
}
fn unit() -> f64 {
    1.0
}
fn two() -> f64 {
    2.0
}
fn ten_f() -> f64 {
    10.0
}
fn cooling_fraction() -> f64 {
    0.7
}
fn reltol() -> f64 {
    1e-8
}
fn yes() -> bool {
    true
}
fn nlf_lags() -> Vec<usize> {
    vec![2, 3]
}

impl RunConfig {
    /// A configuration for `algorithm` with every settings block at its defaults.
    pub fn with_defaults(model: &str, algorithm: &str, seed: u64) -> Self {
        let mut c = RunConfig {
            schema: SCHEMA_VERSION,
            model: model.into(),
            data: default_data(),
            algorithm: algorithm.into(),
            seed,
            output: None,
            params: BTreeMap::new(),
            simulate: None,
            pfilter: None,
            mif: None,
            pmcmc: None,
            probe: None,
            abc: None,
            nlf: None,
            kalman: None,
        };
        c.fill_default_block();
        c
    }

    /// Inserts the algorithm's settings block with defaults when it is absent.
    pub fn fill_default_block(&mut self) {
        let empty = serde_json::json!({});
        match self.algorithm.as_str() {
            "simulate" if self.simulate.is_none() => self.simulate = serde_json::from_value(empty).ok(),
            "pfilter" if self.pfilter.is_none() => self.pfilter = serde_json::from_value(empty).ok(),
            "mif" if self.mif.is_none() => self.mif = serde_json::from_value(serde_json::json!({"rw_sd": {}})).ok(),
            "pmcmc" if self.pmcmc.is_none() => {
                self.pmcmc = serde_json::from_value(serde_json::json!({"proposal": {}})).ok()
            }
            "probe" if self.probe.is_none() => self.probe = serde_json::from_value(serde_json::json!({"probes": []})).ok(),
            "abc" if self.abc.is_none() => {
                self.abc = serde_json::from_value(serde_json::json!({"probes": [], "proposal": {}})).ok()
            }
            "nlf" if self.nlf.is_none() => self.nlf = serde_json::from_value(serde_json::json!({"est": []})).ok(),
            "kalman" if self.kalman.is_none() => self.kalman = Some(KalmanBlock::default()),
            _ => {}
        }
    }

    fn present_blocks(&self) -> Vec<&'static str> {
        let mut out = Vec::new();
        if self.simulate.is_some() {
            out.push("simulate");
        }
        if self.pfilter.is_some() {
            out.push("pfilter");
        }
        if self.mif.is_some() {
            out.push("mif");
        }
        if self.pmcmc.is_some() {
            out.push("pmcmc");
        }
        if self.probe.is_some() {
            out.push("probe");
        }
        if self.abc.is_some() {
            out.push("abc");
        }
        if self.nlf.is_some() {
            out.push("nlf");
        }
        if self.kalman.is_some() {
            out.push("kalman");
        }
        out
    }
}

/// 1-based line of the first `"key":` in `text`.
fn key_line(text: &str, key: &str) -> Option<usize> {
    let needle = format!("\"{key}\"");
    text.lines().position(|line| {
        line.find(&needle)
            .map(|i| line[i + needle.len()..].trim_start().starts_with(':'))
            .unwrap_or(false)
    })
    .map(|i| i + 1)
}

fn anchored(text: &str, key: &str, message: String) -> CliError {
    match key_line(text, key) {
        Some(line) => CliError::Validation(format!("line {line}: {message}")),
        None => CliError::Validation(message),
    }
}

/// Parses and checks a configuration. Messages carry the offending line.
pub fn parse_config(text: &str) -> Result<RunConfig, CliError> {
    let mut config: RunConfig = serde_json::from_str(text).map_err(|e| {
        let msg = e.to_string();
        // serde_json appends " at line L column C"; lead with the line instead
        let body = msg.split(" at line ").next().unwrap_or(&msg).to_string();
        if e.line() > 0 {
            CliError::Validation(format!("line {}: {body}", e.line()))
        } else {
            CliError::Validation(body)
        }
    })?;
    if config.schema != SCHEMA_VERSION {
        return Err(anchored(
            text,
            "schema",
            format!("unsupported schema version {} (expected {SCHEMA_VERSION})", config.schema),
        ));
    }
    if !ALGORITHMS.contains(&config.algorithm.as_str()) {
        return Err(anchored(
            text,
            "algorithm",
            format!(
                "unknown algorithm `{}`; expected one of {}",
                config.algorithm,
                ALGORITHMS.join(", ")
            ),
        ));
    }
    if !pomp_kit::models::NAMES.contains(&config.model.as_str()) {
        return Err(anchored(
            text,
            "model",
            format!(
                "unknown model `{}`; expected one of {}",
                config.model,
                pomp_kit::models::NAMES.join(", ")
            ),
        ));
    }
    if let Some(other) = config.present_blocks().into_iter().find(|b| *b != config.algorithm) {
        return Err(anchored(
            text,
            other,
            format!(
                "settings block `{other}` does not match algorithm `{}`",
                config.algorithm
            ),
        ));
    }
    config.fill_default_block();
    Ok(config)
}

pub fn load_config(path: &Path) -> Result<RunConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
    parse_config(&text).map_err(|e| match e {
        CliError::Validation(m) => CliError::Validation(format!("{}: {m}", path.display())),
        other => other,
    })
}
