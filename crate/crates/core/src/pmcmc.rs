//! Particle marginal Metropolis–Hastings, the shared [`Chain`] type, and chain
//! diagnostics.

use std::io::Write;

use rand::Rng;
use serde::Serialize;

use crate::data::format_num;
use crate::distributions::rnorm;
use crate::error::{Error, Result};
use crate::model::ModelSpec;
use crate::params::ParamVector;
use crate::rng::{StreamKey, StreamRng};
use crate::smc::{pfilter_values, PfilterOptions};

/// Multivariate normal random walk with diagonal covariance, on the natural
/// parameter scale. Parameters without a scale (or with scale 0) are held fixed.
#[derive(Clone, Debug, Serialize)]
pub struct Proposal {
    pub sd: Vec<(String, f64)>,
}

impl Proposal {
    pub fn mvn_diag_rw(sd: &[(&str, f64)]) -> Self {
        Proposal {
            sd: sd.iter().map(|(n, v)| (n.to_string(), *v)).collect(),
        }
    }

    /// Scales aligned to the model's parameter order.
    pub fn aligned(&self, model: &ModelSpec) -> Result<Vec<f64>> {
        let mut out = vec![0.0; model.param_dim()];
        for (name, sd) in &self.sd {
            if !(sd.is_finite() && *sd >= 0.0) {
                return Err(Error::invalid("proposal", format!("`{name}` has scale {sd}")));
            }
            out[model.param_index(name)?] = *sd;
        }
        Ok(out)
    }

    pub(crate) fn draw(current: &[f64], sd: &[f64], rng: &mut StreamRng) -> Vec<f64> {
        current
            .iter()
            .zip(sd)
            .map(|(c, s)| if *s > 0.0 { rnorm(*c, *s, rng) } else { *c })
            .collect()
    }
}

/// Independent uniform prior on a box.
#[derive(Clone, Debug, Serialize)]
pub struct UniformBoxPrior {
    pub names: Vec<String>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl UniformBoxPrior {
    pub fn new(bounds: &[(&str, f64, f64)]) -> Result<Self> {
        for (name, lo, hi) in bounds {
            if !(lo < hi) {
                return Err(Error::invalid("prior bounds", format!("`{name}`: {lo} is not below {hi}")));
            }
        }
        Ok(UniformBoxPrior {
            names: bounds.iter().map(|b| b.0.to_string()).collect(),
            lower: bounds.iter().map(|b| b.1).collect(),
            upper: bounds.iter().map(|b| b.2).collect(),
        })
    }

    /// `[v / factor, v * factor]` around every (positive) entry of `params`.
    pub fn around(params: &ParamVector, factor: f64) -> Result<Self> {
        let bounds: Vec<(&str, f64, f64)> = params.iter().map(|(n, v)| (n, v / factor, v * factor)).collect();
        Self::new(&bounds)
    }

    /// Registers the prior density on `model`. Parameters outside the box's
    /// names are unconstrained.
    pub fn attach(&self, model: &ModelSpec) -> Result<ModelSpec> {
        let idx = self.names.iter().map(|n| model.param_index(n)).collect::<Result<Vec<_>>>()?;
        let (lower, upper) = (self.lower.clone(), self.upper.clone());
        let log_volume: f64 = lower.iter().zip(&upper).map(|(l, u)| (u - l).ln()).sum();
        Ok(model.with_dprior(move |p| {
            let inside = idx
                .iter()
                .zip(lower.iter().zip(&upper))
                .all(|(&i, (l, u))| p[i] >= *l && p[i] <= *u);
            if inside {
                -log_volume
            } else {
                f64::NEG_INFINITY
            }
        }))
    }
}

/// Sequence of parameter samples with acceptance bookkeeping.
#[derive(Clone, Debug, Serialize)]
pub struct Chain {
    pub names: Vec<String>,
    /// `M x p`, row-major.
    pub samples: Vec<f64>,
    pub logliks: Vec<f64>,
    pub log_priors: Vec<f64>,
    pub accepted: Vec<bool>,
    pub acceptance_rate: f64,
    /// Scaled probe distance of each proposal (ABC only; NaN where not simulated).
    pub distances: Option<Vec<f64>>,
    /// Number of likelihood evaluations performed.
    pub pfilter_calls: usize,
}

impl Chain {
    pub fn len(&self) -> usize {
        self.accepted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.accepted.is_empty()
    }

    pub fn row(&self, m: usize) -> &[f64] {
        let p = self.names.len();
        &self.samples[m * p..(m + 1) * p]
    }

    pub fn column(&self, name: &str) -> Result<Vec<f64>> {
        let p = self.names.len();
        let k = self
            .names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::UnknownName(name.to_string()))?;
        Ok(self.samples.iter().skip(k).step_by(p).copied().collect())
    }

    /// One row per step: `iteration`, the parameters, `loglik`, `logprior`,
    /// `accepted`, and `distance` when present.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        let mut header = vec!["iteration".to_string()];
        header.extend(self.names.iter().cloned());
        header.extend(["loglik", "logprior", "accepted"].map(String::from));
        if self.distances.is_some() {
            header.push("distance".into());
        }
        wtr.write_record(&header)?;
        for m in 0..self.len() {
            let mut row = vec![(m + 1).to_string()];
            row.extend(self.row(m).iter().map(|v| format_num(*v)));
            row.push(format_num(self.logliks[m]));
            row.push(format_num(self.log_priors[m]));
            row.push(u8::from(self.accepted[m]).to_string());
            if let Some(d) = &self.distances {
                row.push(format_num(d[m]));
            }
            wtr.write_record(&row)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct PmcmcSettings {
    pub start: ParamVector,
    pub iterations: usize,
    pub np: usize,
    pub proposal: Proposal,
    /// Passed to each particle filter.
    pub max_fail: usize,
}

/// Particle marginal Metropolis–Hastings. The incumbent's likelihood estimate
/// is carried forward, never recomputed. Proposals with zero prior density
/// are rejected without filtering.
///
/// Streams: the starting filter uses `key/0`; at step `m` the proposal and
/// acceptance uniform come from `key/1/m` and the filter from `key/2/m`.
pub fn pmcmc(model: &ModelSpec, settings: &PmcmcSettings, key: StreamKey) -> Result<Chain> {
    model.require_dprior()?;
    let sd = settings.proposal.aligned(model)?;
    let opts = PfilterOptions {
        np: settings.np,
        max_fail: settings.max_fail,
        save_particles: false,
    };
    let mut current = model.param_values(&settings.start)?;
    let mut lp = model.log_prior(&current)?;
    if lp == f64::NEG_INFINITY {
        return Err(Error::ZeroPrior);
    }
    let mut ll = pfilter_values(model, &current, &opts, key.child(0))?.loglik;
    let mut calls = 1;

    let p = model.param_dim();
    let m_total = settings.iterations;
    let mut chain = Chain {
        names: model.param_names().to_vec(),
        samples: Vec::with_capacity(m_total * p),
        logliks: Vec::with_capacity(m_total),
        log_priors: Vec::with_capacity(m_total),
        accepted: Vec::with_capacity(m_total),
        acceptance_rate: 0.0,
        distances: None,
        pfilter_calls: 0,
    };
    for m in 1..=m_total {
        let mut rng = key.child(1).child(m as u64).rng();
        let proposal = Proposal::draw(&current, &sd, &mut rng);
        let u: f64 = rng.random();
        let lp_new = model.log_prior(&proposal)?;
        let mut accept = false;
        if lp_new > f64::NEG_INFINITY {
            calls += 1;
            let ll_new = match pfilter_values(model, &proposal, &opts, key.child(2).child(m as u64)) {
                Ok(f) => f.loglik,
                Err(Error::FilterFailure { step }) => {
                    log::info!("pmcmc step {m}: filter failed at observation {step}; rejecting");
                    f64::NEG_INFINITY
                }
                Err(e) => return Err(e),
            };
            let log_ratio = (lp_new + ll_new) - (lp + ll);
            if u.ln() < log_ratio {
                accept = true;
                current = proposal;
                lp = lp_new;
                ll = ll_new;
            }
        }
        chain.samples.extend_from_slice(&current);
        chain.logliks.push(ll);
        chain.log_priors.push(lp);
        chain.accepted.push(accept);
    }
    chain.pfilter_calls = calls;
    chain.acceptance_rate = acceptance_rate(&chain.accepted);
    Ok(chain)
}

pub(crate) fn acceptance_rate(accepted: &[bool]) -> f64 {
    if accepted.is_empty() {
        0.0
    } else {
        accepted.iter().filter(|a| **a).count() as f64 / accepted.len() as f64
    }
}

/// Effective sample size of one chain component.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ChainEss {
    pub ess: f64,
    /// The raw estimate exceeded the chain length and was capped.
    pub capped: bool,
}

/// `N / (1 + 2 sum rho_k)`, truncating the autocorrelation sum at the first
/// non-positive pair `rho_{2k} + rho_{2k+1}`. A constant chain gives 1.
pub fn effective_sample_size_chain(samples: &[f64]) -> Result<ChainEss> {
    let n = samples.len();
    if n < 10 {
        return Err(Error::invalid("chain", format!("ESS needs at least 10 samples, got {n}")));
    }
    let mean = samples.iter().sum::<f64>() / n as f64;
    let centered: Vec<f64> = samples.iter().map(|v| v - mean).collect();
    let autocov = |k: usize| -> f64 { centered[..n - k].iter().zip(&centered[k..]).map(|(a, b)| a * b).sum::<f64>() / n as f64 };
    let c0 = autocov(0);
    if c0 <= 0.0 {
        return Ok(ChainEss { ess: 1.0, capped: false });
    }
    let mut tau = -1.0;
    let mut k = 0;
    while k + 1 < n {
        let pair = (autocov(k) + autocov(k + 1)) / c0;
        if pair <= 0.0 {
            break;
        }
        tau += 2.0 * pair;
        k += 2;
    }
    let raw = n as f64 / tau;
    if !(raw <= n as f64) {
        return Ok(ChainEss {
            ess: n as f64,
            capped: true,
        });
    }
    Ok(ChainEss { ess: raw, capped: false })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::gompertz;

    #[test]
    fn constant_chain_has_ess_one() {
        assert_eq!(effective_sample_size_chain(&[2.5; 50]).unwrap().ess, 1.0);
    }

    #[test]
    fn alternating_chain_is_capped() {
        let x: Vec<f64> = (0..100).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let e = effective_sample_size_chain(&x).unwrap();
        assert!(e.capped);
        assert_eq!(e.ess, 100.0);
    }

    #[test]
    fn short_chain_is_rejected() {
        assert!(effective_sample_size_chain(&[1.0; 5]).is_err());
    }

    #[test]
    fn zero_scale_proposal_keeps_start() {
        let m = gompertz::gompertz(None).unwrap();
        let start = gompertz::default_params();
        let sim = crate::simulate(&m, &start, StreamKey::new(1), 1).unwrap();
        let m = m.with_data(sim[0].data().unwrap()).unwrap();
        let m = UniformBoxPrior::around(&start, 10.0).unwrap().attach(&m).unwrap();
        let s = PmcmcSettings {
            start: start.clone(),
            iterations: 5,
            np: 20,
            proposal: Proposal::mvn_diag_rw(&[]),
            max_fail: 0,
        };
        let chain = pmcmc(&m, &s, StreamKey::new(2)).unwrap();
        for k in 0..5 {
            assert_eq!(chain.row(k), start.values());
        }
        assert_eq!(chain.pfilter_calls, 6);
    }

    #[test]
    fn zero_prior_start_is_an_error() {
        let m = gompertz::gompertz(None).unwrap();
        let start = gompertz::default_params();
        let prior = UniformBoxPrior::new(&[("r", 1.0, 2.0)]).unwrap();
        let m = prior.attach(&m).unwrap();
        let s = PmcmcSettings {
            start,
            iterations: 1,
            np: 10,
            proposal: Proposal::mvn_diag_rw(&[("r", 0.1)]),
            max_fail: 0,
        };
        assert!(matches!(pmcmc(&m, &s, StreamKey::new(0)), Err(Error::ZeroPrior)));
    }

    #[test]
    fn missing_prior_is_reported() {
        let m = gompertz::gompertz(None).unwrap();
        let s = PmcmcSettings {
            start: gompertz::default_params(),
            iterations: 1,
            np: 10,
            proposal: Proposal::mvn_diag_rw(&[]),
            max_fail: 0,
        };
        assert!(matches!(pmcmc(&m, &s, StreamKey::new(0)), Err(Error::MissingComponent("dprior"))));
    }

    #[test]
    fn csv_has_one_row_per_step() {
        let chain = Chain {
            names: vec!["a".into()],
            samples: vec![1.0, 1.5],
            logliks: vec![-2.0, -1.0],
            log_priors: vec![0.0, 0.0],
            accepted: vec![false, true],
            acceptance_rate: 0.5,
            distances: None,
            pfilter_calls: 2,
        };
        let mut buf = Vec::new();
        chain.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "iteration,a,loglik,logprior,accepted\n1,1,-2,0,0\n2,1.5,-1,0,1\n");
    }
}
