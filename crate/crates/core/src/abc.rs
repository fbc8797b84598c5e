//! ABC-MCMC on scaled probe discrepancies.

use rand::Rng;

use crate::error::{Error, Result};
use crate::model::ModelSpec;
use crate::params::ParamVector;
use crate::pmcmc::{acceptance_rate, Chain, Proposal};
use crate::probes::{apply_probes, probe_names, simulate_probes, Probe};
use crate::rng::StreamKey;

#[derive(Clone, Debug)]
pub struct AbcSettings {
    pub start: ParamVector,
    pub iterations: usize,
    pub probes: Vec<Probe>,
    /// One positive scale per probe component.
    pub scale: Vec<f64>,
    pub epsilon: f64,
    pub proposal: Proposal,
}

/// Runs the ABC Metropolis–Hastings chain. Each proposal with positive prior
/// density gets exactly one simulated dataset; it is accepted when the scaled
/// squared distance between simulated and observed probes is below
/// `epsilon^2` and a uniform falls below the prior ratio.
///
/// Streams: at step `m` the proposal and uniform come from `key/1/m`, the
/// simulation from `key/2/m`.
pub fn abc(model: &ModelSpec, settings: &AbcSettings, key: StreamKey) -> Result<Chain> {
    model.require_dprior()?;
    let d: usize = settings.probes.iter().map(Probe::arity).sum();
    if settings.scale.len() != d {
        return Err(Error::invalid(
            "abc settings",
            format!("{} scales given for {d} probe values", settings.scale.len()),
        ));
    }
    if let Some(s) = settings.scale.iter().find(|s| !(s.is_finite() && **s > 0.0)) {
        return Err(Error::invalid("abc settings", format!("probe scale {s} is not positive")));
    }
    if !(settings.epsilon >= 0.0) {
        return Err(Error::invalid("abc settings", format!("epsilon = {} is negative", settings.epsilon)));
    }
    let sd = settings.proposal.aligned(model)?;
    let observed = apply_probes(&settings.probes, &model.data().view())?;
    let mut current = model.param_values(&settings.start)?;
    let mut lp = model.log_prior(&current)?;
    if lp == f64::NEG_INFINITY {
        return Err(Error::ZeroPrior);
    }
    let eps2 = settings.epsilon * settings.epsilon;
    let p = model.param_dim();
    let m_total = settings.iterations;
    let mut samples = Vec::with_capacity(m_total * p);
    let mut log_priors = Vec::with_capacity(m_total);
    let mut accepted = Vec::with_capacity(m_total);
    let mut distances = Vec::with_capacity(m_total);
    let mut sims = 0;
    for m in 1..=m_total {
        let mut rng = key.child(1).child(m as u64).rng();
        let proposal = Proposal::draw(&current, &sd, &mut rng);
        let u: f64 = rng.random();
        let lp_new = model.log_prior(&proposal)?;
        let mut dist = f64::NAN;
        let mut accept = false;
        if lp_new > f64::NEG_INFINITY {
            sims += 1;
            match simulate_probes(model, &proposal, &settings.probes, 1, key.child(2).child(m as u64)) {
                Ok(s) => {
                    dist = scaled_distance(&s, &observed, &settings.scale);
                    accept = dist < eps2 && u.ln() < lp_new - lp;
                }
                Err(e @ (Error::SimulationDiverged { .. } | Error::Domain(_))) => {
                    log::info!("abc step {m}: simulation failed ({e}); rejecting");
                }
                Err(e) => return Err(e),
            }
        }
        if accept {
            current = proposal;
            lp = lp_new;
        }
        samples.extend_from_slice(&current);
        log_priors.push(lp);
        accepted.push(accept);
        distances.push(dist);
    }
    Ok(Chain {
        names: model.param_names().to_vec(),
        samples,
        logliks: vec![f64::NAN; m_total],
        log_priors,
        acceptance_rate: acceptance_rate(&accepted),
        accepted,
        distances: Some(distances),
        pfilter_calls: sims,
    })
}

/// `sum_i ((s_i - s*_i) / tau_i)^2`.
pub fn scaled_distance(simulated: &[f64], observed: &[f64], scale: &[f64]) -> f64 {
    simulated
        .iter()
        .zip(observed)
        .zip(scale)
        .map(|((s, o), t)| ((s - o) / t).powi(2))
        .sum()
}

/// Standard deviation (divisor `nsim - 1`) of each probe component across
/// `nsim` simulations at `params`.
pub fn compute_probe_scales(
    model: &ModelSpec,
    params: &ParamVector,
    probes: &[Probe],
    nsim: usize,
    key: StreamKey,
) -> Result<Vec<f64>> {
    if nsim < 2 {
        return Err(Error::invalid("probe scales", format!("nsim = {nsim}, need at least 2")));
    }
    let values = model.param_values(params)?;
    let sims = simulate_probes(model, &values, probes, nsim, key)?;
    column_sds(&sims, &probe_names(probes))
}

pub(crate) fn column_sds(sims: &[f64], names: &[String]) -> Result<Vec<f64>> {
    let d = names.len();
    let n = sims.len() / d;
    (0..d)
        .map(|k| {
            let col: Vec<f64> = sims.iter().skip(k).step_by(d).copied().collect();
            let m = col.iter().sum::<f64>() / n as f64;
            let var = col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1) as f64;
            if var > 0.0 {
                Ok(var.sqrt())
            } else {
                Err(Error::ZeroVariance(names[k].clone()))
            }
        })
        .collect()
}
