//! `pomp-kit`: simulation and inference for partially observed Markov models.

mod config;
mod error;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{load_config, RunConfig};
use error::CliError;

#[derive(Parser)]
#[command(name = "pomp-kit", version, about = "Plug-and-play inference for partially observed Markov process models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate datasets from a model
    Simulate(Common),
    /// Particle filter log-likelihood
    Pfilter(Common),
    /// Iterated filtering
    Mif(Common),
    /// Particle marginal Metropolis-Hastings
    Pmcmc(Common),
    /// Synthetic likelihood and probe matching
    Probe(Common),
    /// ABC-MCMC on probe discrepancies
    Abc(Common),
    /// Nonlinear forecasting quasi-likelihood fit
    Nlf(Common),
    /// Exact likelihood of the Gompertz model
    Kalman(Common),
    /// Run whatever algorithm a config file names
    Run(Common),
    /// Check a config file without running it
    Validate {
        /// Path to a JSON config
        config: PathBuf,
    },
}

#[derive(Args, Clone)]
struct Common {
    /// JSON run configuration
    #[arg(long)]
    config: Option<PathBuf>,
    /// Built-in model name
    #[arg(long)]
    model: Option<String>,
    /// Data CSV, or "simulate"
    #[arg(long)]
    data: Option<String>,
    /// Number of particles (or simulations for probe)
    #[arg(long)]
    np: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; results do not depend on it
    #[arg(long)]
    threads: Option<usize>,
    /// Output directory
    #[arg(short, long)]
    output: Option<PathBuf>,
}

fn resolve(algorithm: Option<&str>, args: &Common) -> Result<RunConfig, CliError> {
    let mut config = match &args.config {
        Some(path) => {
            let c = load_config(path)?;
            if let Some(a) = algorithm {
                if c.algorithm != a {
                    return Err(CliError::Validation(format!(
                        "{}: config runs `{}` but the `{a}` subcommand was given",
                        path.display(),
                        c.algorithm
                    )));
                }
            }
            c
        }
        None => {
            let Some(a) = algorithm else {
                return Err(CliError::Validation("`run` needs --config".into()));
            };
            let seed = args
                .seed
                .ok_or_else(|| CliError::Validation("missing `--seed` (or a config with a `seed` field)".into()))?;
            let model = args.model.as_deref().unwrap_or("gompertz");
            if !pomp_kit::models::NAMES.contains(&model) {
                return Err(CliError::Validation(format!(
                    "unknown model `{model}`; expected one of {}",
                    pomp_kit::models::NAMES.join(", ")
                )));
            }
            RunConfig::with_defaults(model, a, seed)
        }
    };
    if let Some(m) = &args.model {
        if args.config.is_some() && *m != config.model {
            return Err(CliError::Validation(format!(
                "--model `{m}` conflicts with the config's `{}`",
                config.model
            )));
        }
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(d) = &args.data {
        config.data = d.clone();
    }
    if let Some(o) = &args.output {
        config.output = Some(o.clone());
    }
    if let Some(np) = args.np {
        apply_np(&mut config, np);
    }
    Ok(config)
}

fn apply_np(config: &mut RunConfig, np: usize) {
    if let Some(b) = config.pfilter.as_mut() {
        b.np = np;
    }
    if let Some(b) = config.mif.as_mut() {
        b.np = np;
    }
    if let Some(b) = config.pmcmc.as_mut() {
        b.np = np;
    }
    if let Some(b) = config.probe.as_mut() {
        b.nsim = np;
    }
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    let (algorithm, args) = match cli.command {
        Command::Validate { config } => {
            let c = load_config(&config)?;
            run::prepare(c, &PathBuf::from("."))?;
            println!("{}: valid", config.display());
            return Ok(());
        }
        Command::Simulate(a) => (Some("simulate"), a),
        Command::Pfilter(a) => (Some("pfilter"), a),
        Command::Mif(a) => (Some("mif"), a),
        Command::Pmcmc(a) => (Some("pmcmc"), a),
        Command::Probe(a) => (Some("probe"), a),
        Command::Abc(a) => (Some("abc"), a),
        Command::Nlf(a) => (Some("nlf"), a),
        Command::Kalman(a) => (Some("kalman"), a),
        Command::Run(a) => (None, a),
    };
    if let Some(n) = args.threads {
        if n == 0 {
            return Err(CliError::Validation("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Algorithm(e.to_string()))?;
    }
    let config = resolve(algorithm, &args)?;
    let prepared = run::prepare(config, &PathBuf::from("pomp-kit-out"))?;
    log::info!("running {} on {}", prepared.config.algorithm, prepared.config.model);
    run::execute(&prepared)?;
    log::info!("wrote {}", prepared.output.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("PK_LOG", "warn")).init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
