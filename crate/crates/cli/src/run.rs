//! Executes a validated [`RunConfig`] and writes its artifacts.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde_json::{json, Value};

use pomp_kit::abc::{abc, compute_probe_scales, AbcSettings};
use pomp_kit::distributions::rnorm;
use pomp_kit::mif::{mif, Cooling, MifSettings};
use pomp_kit::models;
use pomp_kit::nlf::{nlf_fit, NlfSettings};
use pomp_kit::oracle::{gompertz_loglik, kalman_exact_mle, NelderMeadOptions};
use pomp_kit::pmcmc::{effective_sample_size_chain, pmcmc, Chain, PmcmcSettings, Proposal, UniformBoxPrior};
use pomp_kit::probes::{
    probe, probe_acf, probe_marginal, probe_match, probe_mean, probe_nlar, Probe, ProbeMatchSettings, Transform,
};
use pomp_kit::smc::{logmeanexp, pfilter_with, PfilterOptions};
use pomp_kit::{simulate, ModelSpec, ParamVector, StreamKey, TimeSeriesData};

use crate::config::{ProbeSpec, RunConfig};
use crate::error::CliError;

type CliResult<T> = Result<T, CliError>;

/// Everything an algorithm needs once inputs are resolved.
pub struct Prepared {
    pub config: RunConfig,
    pub model: ModelSpec,
    pub params: ParamVector,
    pub output: PathBuf,
}

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Validation(msg.into())
}

/// Builds the model, parameters and dataset. Any failure here is a
/// validation error.
pub fn prepare(config: RunConfig, default_output: &Path) -> CliResult<Prepared> {
    let base = models::by_name(&config.model, None)?;
    let mut params = base.default_params()?.clone();
    for (name, value) in &config.params {
        params
            .set(name, *value)
            .map_err(|_| invalid(format!("params: `{name}` is not a parameter of `{}`", config.model)))?;
    }
    let master = StreamKey::new(config.seed);
    let data = if config.data == "simulate" {
        let sim = simulate(&base, &params, master.child(0), 1).map_err(|e| CliError::Algorithm(e.to_string()))?;
        sim[0].data()?
    } else {
        let path = Path::new(&config.data);
        if !path.exists() {
            return Err(invalid(format!("data file `{}` does not exist", path.display())));
        }
        TimeSeriesData::read_csv_path(path, Some(base.data().t0()), base.obs_names())
            .map_err(|e| invalid(format!("{}: {e}", path.display())))?
    };
    let model = base.with_data(data)?;
    let output = config.output.clone().unwrap_or_else(|| default_output.to_path_buf());
    Ok(Prepared {
        config,
        model,
        params,
        output,
    })
}

fn create(dir: &Path, name: &str) -> CliResult<BufWriter<File>> {
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

fn write_json(dir: &Path, value: &Value) -> CliResult<()> {
    let mut w = create(dir, "result.json")?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| CliError::Algorithm(e.to_string()))?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn named(names: &[String], values: &[f64]) -> Value {
    Value::Object(names.iter().cloned().zip(values.iter().map(|v| json!(v))).collect())
}

fn pairs(map: &std::collections::BTreeMap<String, f64>) -> Vec<(&str, f64)> {
    map.iter().map(|(k, v)| (k.as_str(), *v)).collect()
}

fn transform_of(name: &Option<String>) -> CliResult<Transform> {
    match name {
        None => Ok(Transform::Identity),
        Some(n) => Ok(Transform::from_name(n)?),
    }
}

fn build_probes(specs: &[ProbeSpec], model: &ModelSpec) -> CliResult<Vec<Probe>> {
    if specs.is_empty() {
        return Err(invalid("at least one probe is required"));
    }
    specs
        .iter()
        .map(|s| {
            Ok(match s {
                ProbeSpec::Mean { var, transform } => probe_mean(var, transform_of(transform)?),
                ProbeSpec::Acf { var, lags, transform } => probe_acf(var, lags, transform_of(transform)?),
                ProbeSpec::Nlar {
                    var,
                    lags,
                    powers,
                    transform,
                } => probe_nlar(var, lags, powers, transform_of(transform)?),
                ProbeSpec::Marginal { var, npoly, transform } => {
                    let reference = model.data().column(var)?;
                    probe_marginal(var, &reference, *npoly, transform_of(transform)?)?
                }
            })
        })
        .collect()
}

fn header(p: &Prepared) -> serde_json::Map<String, Value> {
    let mut m = serde_json::Map::new();
    m.insert("algorithm".into(), json!(p.config.algorithm));
    m.insert("model".into(), json!(p.config.model));
    m.insert("data".into(), json!(p.config.data));
    m.insert("seed".into(), json!(p.config.seed));
    m
}

/// Runs the configured algorithm and writes its artifacts to the output
/// directory.
pub fn execute(p: &Prepared) -> CliResult<()> {
    fs::create_dir_all(&p.output)?;
    let key = StreamKey::new(p.config.seed).child(1);
    let mut result = header(p);
    match p.config.algorithm.as_str() {
        "simulate" => run_simulate(p, key, &mut result)?,
        "pfilter" => run_pfilter(p, key, &mut result)?,
        "mif" => run_mif(p, key, &mut result)?,
        "pmcmc" => run_pmcmc(p, key, &mut result)?,
        "probe" => run_probe(p, key, &mut result)?,
        "abc" => run_abc(p, key, &mut result)?,
        "nlf" => run_nlf(p, key, &mut result)?,
        "kalman" => run_kalman(p, &mut result)?,
        other => return Err(invalid(format!("unknown algorithm `{other}`"))),
    }
    write_json(&p.output, &Value::Object(result))
}

type Summary = serde_json::Map<String, Value>;

fn run_simulate(p: &Prepared, key: StreamKey, out: &mut Summary) -> CliResult<()> {
    let nsim = p.config.simulate.as_ref().map_or(1, |s| s.nsim);
    if nsim == 0 {
        return Err(invalid("simulate: nsim must be positive"));
    }
    let records = simulate(&p.model, &p.params, key, nsim)?;
    let mut w = create(&p.output, "simulations.csv")?;
    pomp_kit::model::write_simulations_csv(&records, &mut w)?;
    w.flush()?;
    out.insert("params".into(), json!(p.params));
    out.insert("nsim".into(), json!(nsim));
    Ok(())
}

fn filter_opts(np: usize, max_fail: usize) -> CliResult<PfilterOptions> {
    if np == 0 {
        return Err(invalid("np must be positive"));
    }
    let mut opts = PfilterOptions::new(np);
    opts.max_fail = max_fail;
    Ok(opts)
}

fn run_pfilter(p: &Prepared, key: StreamKey, out: &mut Summary) -> CliResult<()> {
    let s = p.config.pfilter.as_ref().expect("settings block filled");
    let opts = filter_opts(s.np, s.max_fail)?;
    let reps = s.reps.max(1);
    let runs = (0..reps)
        .into_par_iter()
        .map(|i| pfilter_with(&p.model, &p.params, &opts, key.child(i as u64)))
        .collect::<Result<Vec<_>, _>>()?;
    let lls: Vec<f64> = runs.iter().map(|r| r.loglik).collect();
    let first = &runs[0];
    out.insert("params".into(), json!(p.params));
    out.insert("np".into(), json!(s.np));
    if reps > 1 {
        let (ll, se) = logmeanexp(&lls, true);
        out.insert("loglik".into(), json!(ll));
        out.insert("loglik_se".into(), json!(se));
        out.insert("replicate_logliks".into(), json!(lls));
    } else {
        out.insert("loglik".into(), json!(first.loglik));
    }
    out.insert("cond_logliks".into(), json!(first.cond_logliks));
    out.insert("ess".into(), json!(first.ess));
    out.insert("n_fail".into(), json!(first.n_fail));
    Ok(())
}

fn run_mif(p: &Prepared, key: StreamKey, out: &mut Summary) -> CliResult<()> {
    let s = p.config.mif.as_ref().expect("settings block filled");
    if s.starts == 0 || s.eval_reps == 0 {
        return Err(invalid("mif: starts and eval_reps must be positive"));
    }
    let eval_opts = filter_opts(s.eval_np, s.max_fail)?;
    let cooling = Cooling::Fraction {
        fraction: s.cooling_fraction,
        window: s.cooling_window,
    };
    let ivps: Vec<&str> = s.ivps.iter().map(String::as_str).collect();
    let base = MifSettings::new(p.params.clone(), s.iterations, s.np)
        .rw_sd(&pairs(&s.rw_sd))
        .ivps(&ivps)
        .transform(s.transform)
        .cooling(cooling);
    let base = MifSettings {
        ic_lag: s.ic_lag,
        var_factor: s.var_factor,
        max_fail: s.max_fail,
        ..base
    };
    base.cooling_factor()?;
    let runs = (0..s.starts)
        .into_par_iter()
        .map(|k| {
            let run_key = key.child(k as u64);
            let mut start = p.params.clone();
            if s.start_sdlog > 0.0 {
                let mut rng = run_key.child(0).rng();
                for name in s.rw_sd.keys().filter(|n| !s.ivps.contains(n)) {
                    let v = start.get(name)?;
                    start.set(name, (v.ln() + rnorm(0.0, s.start_sdlog, &mut rng)).exp())?;
                }
            }
            let settings = MifSettings {
                start: start.clone(),
                ..base.clone()
            };
            let fit = mif(&p.model, &settings, run_key.child(1))?;
            let lls = (0..s.eval_reps)
                .map(|i| pfilter_with(&p.model, &fit.theta_hat, &eval_opts, run_key.child(2).child(i as u64)).map(|f| f.loglik))
                .collect::<Result<Vec<_>, _>>()?;
            let (ll, se) = logmeanexp(&lls, s.eval_reps > 1);
            Ok((start, fit, ll, se))
        })
        .collect::<Result<Vec<_>, pomp_kit::Error>>()?;

    let names = p.model.param_names();
    let mut w = create(&p.output, "trace.csv")?;
    let mut line = String::from("run,iteration,loglik");
    for n in names {
        line.push(',');
        line.push_str(n);
    }
    writeln!(w, "{line}")?;
    for (k, (_, fit, _, _)) in runs.iter().enumerate() {
        for m in 0..fit.iteration_logliks.len() {
            let mut line = format!("{},{},{}", k + 1, m + 1, fmt(fit.iteration_logliks[m]));
            for v in fit.trace_row(m) {
                line.push(',');
                line.push_str(&fmt(*v));
            }
            writeln!(w, "{line}")?;
        }
    }
    w.flush()?;

    let best = runs
        .iter()
        .enumerate()
        .max_by(|a, b| a.1 .2.total_cmp(&b.1 .2))
        .map(|(k, _)| k)
        .unwrap_or(0);
    out.insert("theta_hat".into(), json!(runs[best].1.theta_hat));
    out.insert("loglik".into(), json!(runs[best].2));
    out.insert("loglik_se".into(), json!(runs[best].3));
    out.insert("best_run".into(), json!(best + 1));
    out.insert("cooling_factor".into(), json!(runs[best].1.cooling_factor));
    out.insert(
        "runs".into(),
        Value::Array(
            runs.iter()
                .map(|(start, fit, ll, se)| json!({"start": start, "theta_hat": fit.theta_hat, "loglik": ll, "loglik_se": se}))
                .collect(),
        ),
    );
    Ok(())
}

fn fmt(v: f64) -> String {
    pomp_kit::data::format_num(v)
}

fn box_prior(model: &ModelSpec, start: &ParamVector, proposal: &Proposal, factor: f64) -> CliResult<ModelSpec> {
    if !(factor > 1.0) {
        return Err(invalid("prior_factor must exceed 1"));
    }
    let mut bounds = Vec::new();
    for (name, sd) in &proposal.sd {
        if *sd > 0.0 {
            let v = start.get(name)?;
            if !(v > 0.0) {
                return Err(invalid(format!("box prior needs a positive start for `{name}`")));
            }
            bounds.push((name.as_str(), v / factor, v * factor));
        }
    }
    if bounds.is_empty() {
        return Ok(model.with_dprior(|_| 0.0));
    }
    Ok(UniformBoxPrior::new(&bounds)?.attach(model)?)
}

fn chain_summary(chain: &Chain, proposal: &Proposal, out: &mut Summary) -> CliResult<()> {
    let mut means = Vec::new();
    let mut sds = Vec::new();
    let mut ess = serde_json::Map::new();
    for name in &chain.names {
        let col = chain.column(name)?;
        let n = col.len().max(1) as f64;
        let m = col.iter().sum::<f64>() / n;
        let var = col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
        means.push(m);
        sds.push(var.sqrt());
        if proposal.sd.iter().any(|(p, sd)| p == name && *sd > 0.0) && col.len() >= 10 {
            let e = effective_sample_size_chain(&col)?;
            ess.insert(name.clone(), json!({"ess": e.ess, "capped": e.capped}));
        }
    }
    out.insert("iterations".into(), json!(chain.len()));
    out.insert("acceptance_rate".into(), json!(chain.acceptance_rate));
    out.insert("posterior_mean".into(), named(&chain.names, &means));
    out.insert("posterior_sd".into(), named(&chain.names, &sds));
    out.insert("ess".into(), Value::Object(ess));
    Ok(())
}

fn run_pmcmc(p: &Prepared, key: StreamKey, out: &mut Summary) -> CliResult<()> {
    let s = p.config.pmcmc.as_ref().expect("settings block filled");
    let proposal = Proposal::mvn_diag_rw(&pairs(&s.proposal));
    let model = box_prior(&p.model, &p.params, &proposal, s.prior_factor)?;
    let settings = PmcmcSettings {
        start: p.params.clone(),
        iterations: s.iterations,
        np: s.np,
        proposal: proposal.clone(),
        max_fail: s.max_fail.unwrap_or(usize::MAX),
    };
    filter_opts(s.np, 0)?;
    let chain = pmcmc(&model, &settings, key)?;
    let mut w = create(&p.output, "chain.csv")?;
    chain.write_csv(&mut w)?;
    w.flush()?;
    out.insert("start".into(), json!(p.params));
    out.insert("pfilter_calls".into(), json!(chain.pfilter_calls));
    chain_summary(&chain, &proposal, out)
}

fn run_probe(p: &Prepared, key: StreamKey, out: &mut Summary) -> CliResult<()> {
    let s = p.config.probe.as_ref().expect("settings block filled");
    let probes = build_probes(&s.probes, &p.model)?;
    let res = probe(&p.model, &p.params, &probes, s.nsim, key.child(0))?;
    let mut w = create(&p.output, "simulations.csv")?;
    res.write_csv(&mut w)?;
    w.flush()?;
    out.insert("params".into(), json!(p.params));
    out.insert("nsim".into(), json!(s.nsim));
    out.insert("probes".into(), json!(res.names));
    out.insert("observed".into(), json!(res.observed));
    out.insert("synth_loglik".into(), json!(res.synth_loglik));
    out.insert("p_values".into(), json!(res.p_values));
    if let Some(m) = &s.matching {
        let est: Vec<&str> = m.est.iter().map(String::as_str).collect();
        let mut settings = ProbeMatchSettings::new(&est, s.nsim);
        settings.transform = m.transform;
        settings.optim = NelderMeadOptions {
            maxit: m.maxit,
            reltol: m.reltol,
        };
        let fit = probe_match(&p.model, &p.params, &probes, &settings, key.child(1))?;
        out.insert("match".into(), json!(fit));
    }
    Ok(())
}

fn run_abc(p: &Prepared, key: StreamKey, out: &mut Summary) -> CliResult<()> {
    let s = p.config.abc.as_ref().expect("settings block filled");
    let probes = build_probes(&s.probes, &p.model)?;
    let scale = match &s.scale {
        Some(v) => v.clone(),
        None => compute_probe_scales(&p.model, &p.params, &probes, s.scale_nsim, key.child(0))?,
    };
    let proposal = Proposal::mvn_diag_rw(&pairs(&s.proposal));
    let model = box_prior(&p.model, &p.params, &proposal, s.prior_factor)?;
    let settings = AbcSettings {
        start: p.params.clone(),
        iterations: s.iterations,
        probes,
        scale: scale.clone(),
        epsilon: s.epsilon,
        proposal: proposal.clone(),
    };
    let chain = abc(&model, &settings, key.child(1))?;
    let mut w = create(&p.output, "chain.csv")?;
    chain.write_csv(&mut w)?;
    w.flush()?;
    out.insert("start".into(), json!(p.params));
    out.insert("scale".into(), json!(scale));
    out.insert("epsilon".into(), json!(s.epsilon));
    chain_summary(&chain, &proposal, out)
}

fn run_nlf(p: &Prepared, key: StreamKey, out: &mut Summary) -> CliResult<()> {
    let s = p.config.nlf.as_ref().expect("settings block filled");
    let est: Vec<&str> = s.est.iter().map(String::as_str).collect();
    let mut settings = NlfSettings::new(p.params.clone(), &est, &s.lags);
    settings.nrbf = s.nrbf;
    settings.nconverge = s.nconverge;
    settings.nasymp = s.nasymp;
    settings.transform = s.transform;
    settings.optim = NelderMeadOptions {
        maxit: s.maxit,
        reltol: s.reltol,
    };
    let fit = nlf_fit(&p.model, &settings, key)?;
    out.insert("start".into(), json!(p.params));
    out.insert("theta_hat".into(), json!(fit.params));
    out.insert("quasi_loglik".into(), json!(fit.quasi_loglik));
    out.insert("status".into(), json!(fit.status));
    out.insert("evaluations".into(), json!(fit.evaluations));
    Ok(())
}

fn run_kalman(p: &Prepared, out: &mut Summary) -> CliResult<()> {
    if p.config.model != "gompertz" {
        return Err(invalid(format!(
            "kalman: exact likelihood is available for `gompertz` only, not `{}`",
            p.config.model
        )));
    }
    let s = p.config.kalman.clone().unwrap_or_default();
    out.insert("params".into(), json!(p.params));
    out.insert("loglik".into(), json!(gompertz_loglik(p.model.data(), &p.params)?));
    if s.mle {
        let mle = kalman_exact_mle(p.model.data(), &p.params)?;
        out.insert("mle".into(), json!(mle));
    }
    Ok(())
}
