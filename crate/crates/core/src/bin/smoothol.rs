use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use smoothol::adversary::greedy_fill;
use smoothol::coupling::{validate_coupling, CouplingConfig};
use smoothol::harness::{self, BanditConfig, ExperimentConfig};
use smoothol::{Error, Result};

#[derive(Parser)]
#[command(
    name = "smoothol",
    version,
    about = "Online learning against smoothed adversaries"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment config.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        learner: Option<String>,
        #[arg(long)]
        eta: Option<f64>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        m: Option<usize>,
        #[arg(long)]
        epsilon: Option<f64>,
        #[arg(long)]
        zeta: Option<f64>,
        #[arg(long)]
        k: Option<usize>,
        /// Overrides the output directory.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Run one experiment per value of a config parameter.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Dotted path into the config, e.g. `sigma` or `learner.eta`.
        #[arg(long)]
        param: String,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
    },
    /// Empirically check the rejection-sampling coupling.
    CoupleTest {
        #[arg(long)]
        sigma: f64,
        #[arg(long)]
        k: usize,
        #[arg(long, default_value_t = 100_000)]
        trials: usize,
        #[arg(long, default_value_t = 20)]
        atoms: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run the smoothed SquareCB contextual bandit.
    Bandit {
        #[arg(long)]
        config: PathBuf,
    },
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run {
            config,
            learner,
            eta,
            n,
            m,
            epsilon,
            zeta,
            k,
            output,
        } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(kind) = learner {
                cfg.learner.kind = kind;
            }
            let spec = &mut cfg.learner;
            spec.eta = eta.or(spec.eta);
            spec.n = n.or(spec.n);
            spec.m = m.or(spec.m);
            spec.epsilon = epsilon.or(spec.epsilon);
            spec.zeta = zeta.or(spec.zeta);
            spec.k = k.or(spec.k);
            if output.is_some() {
                cfg.output = output;
            }
            cfg.validate()?;
            print_json(&harness::run_experiment(&cfg)?)
        }
        Command::Sweep {
            config,
            param,
            values,
        } => {
            let text = std::fs::read_to_string(&config)?;
            let template: serde_json::Value =
                serde_json::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
            let summaries = harness::sweep(&template, &param, &values)?;
            print_json(&summaries)
        }
        Command::CoupleTest {
            sigma,
            k,
            trials,
            atoms,
            seed,
        } => {
            if atoms == 0 {
                return Err(Error::InvalidParameter("atoms must be >= 1".into()));
            }
            let mu = vec![1.0 / atoms as f64; atoms];
            let p = greedy_fill(&mu, sigma);
            let report = validate_coupling(
                &CouplingConfig {
                    sigma,
                    k,
                    mu,
                    p,
                    seed,
                },
                trials,
            )?;
            print_json(&report)
        }
        Command::Bandit { config } => {
            let cfg = BanditConfig::load(&config)?;
            print_json(&harness::run_bandit(&cfg)?)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(harness::exit_code(&err) as u8)
        }
    }
}
