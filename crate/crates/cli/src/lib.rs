//! Command-line front end: configuration, validation, the synthetic
//! experiment grid and fits of user data.

pub mod config;
pub mod experiment;
pub mod fit;
pub mod validate;

use std::path::PathBuf;
use std::process::ExitCode;

use aoadmm::synth::ExperimentKind;
use clap::{Args, Parser, Subcommand};

use crate::config::RunConfig;
use crate::validate::{has_errors, validate_config, Diagnostic};

#[derive(Debug, Parser)]
#[command(name = "aoadmm", version, about = "AO-ADMM for coupled matrix and tensor factorizations")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one of the synthetic experiments.
    Experiment {
        /// exp1a, exp1b, exp2, exp3, exp4 or exp5; taken from the config
        /// when omitted.
        name: Option<String>,
        /// Optional config file with [run], [solver] and [experiment].
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Fit tensors described in a config file.
    Fit {
        config: PathBuf,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Check a config file and print diagnostics.
    Validate {
        config: PathBuf,
        /// key=value assignments applied to the config.
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub datasets: Option<usize>,
    #[arg(long)]
    pub inits: Option<usize>,
    #[arg(long)]
    pub threads: Option<usize>,
    /// key=value assignments applied to the config, e.g.
    /// `solver.inner_max_iters=10`.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

impl CommonArgs {
    fn apply(&self, cfg: &mut RunConfig) {
        if let Some(s) = self.seed {
            cfg.run.seed = s;
        }
        if let Some(d) = self.datasets {
            cfg.run.datasets = Some(d);
        }
        if let Some(i) = self.inits {
            cfg.run.inits = Some(i);
        }
        if let Some(t) = self.threads {
            cfg.run.threads = Some(t);
        }
        if let Some(o) = &self.out {
            cfg.run.out = Some(o.clone());
        }
    }
}

/// Exit status: 0 success, 1 invalid input, 2 failure while running.
pub mod exit {
    pub const OK: u8 = 0;
    pub const INVALID: u8 = 1;
    pub const RUNTIME: u8 = 2;
}

fn report(diagnostics: &[Diagnostic]) {
    for d in diagnostics {
        eprintln!("{d}");
    }
}

fn invalid(err: anyhow::Error) -> ExitCode {
    eprintln!("error: {err:#}");
    ExitCode::from(exit::INVALID)
}

fn runtime(err: anyhow::Error) -> ExitCode {
    eprintln!("error: {err:#}");
    ExitCode::from(exit::RUNTIME)
}

fn checked(cfg: &RunConfig) -> Result<(), ExitCode> {
    let diagnostics = validate_config(cfg);
    report(&diagnostics);
    if has_errors(&diagnostics) {
        return Err(ExitCode::from(exit::INVALID));
    }
    Ok(())
}

pub fn run(cli: Cli) -> ExitCode {
    match cli.command {
        Command::Validate { config, overrides } => {
            let cfg = match RunConfig::load(&config, &overrides) {
                Ok(c) => c,
                Err(e) => return invalid(e),
            };
            let diagnostics = validate_config(&cfg);
            report(&diagnostics);
            if has_errors(&diagnostics) {
                ExitCode::from(exit::INVALID)
            } else {
                println!("{}: ok", config.display());
                ExitCode::from(exit::OK)
            }
        }
        Command::Experiment { name, config, common } => {
            // The positional name goes first so that overrides can refine
            // the section it creates.
            let mut overrides = Vec::with_capacity(common.overrides.len() + 1);
            if let Some(name) = name {
                if ExperimentKind::parse(&name).is_none() {
                    let names: Vec<_> = ExperimentKind::ALL.iter().map(|k| k.name()).collect();
                    return invalid(anyhow::anyhow!("unknown experiment `{name}`; expected one of {}", names.join(", ")));
                }
                overrides.push(format!("experiment.name=\"{name}\""));
            }
            overrides.extend(common.overrides.iter().cloned());
            let loaded = match &config {
                Some(path) => RunConfig::load(path, &overrides),
                None => RunConfig::parse("", &overrides),
            };
            let mut cfg = match loaded {
                Ok(c) => c,
                Err(e) => return invalid(e),
            };
            common.apply(&mut cfg);
            if let Err(code) = checked(&cfg) {
                return code;
            }
            let name = cfg.experiment.as_ref().map_or("experiment", |e| e.name.name());
            let out = cfg.run.out.clone().unwrap_or_else(|| PathBuf::from("runs").join(name));
            match experiment::run_experiment(&cfg, &out) {
                Ok(summary) => {
                    for arm in &summary.arms {
                        println!(
                            "{} {:?}: failed runs {}/{} (all/best), median best FMS {:.4}",
                            summary.experiment, arm.loss, arm.failed_all, arm.failed_best, arm.median_best_fms
                        );
                    }
                    println!("results in {}", out.display());
                    ExitCode::from(exit::OK)
                }
                Err(e) => runtime(e),
            }
        }
        Command::Fit { config, common } => {
            let mut cfg = match RunConfig::load(&config, &common.overrides) {
                Ok(c) => c,
                Err(e) => return invalid(e),
            };
            common.apply(&mut cfg);
            if cfg.experiment.is_some() {
                return invalid(anyhow::anyhow!("`fit` takes tensors; use `experiment` for [experiment] configs"));
            }
            if let Err(code) = checked(&cfg) {
                return code;
            }
            // Data that violates a loss's domain is an input error.
            let problem = match fit::build_problem(&cfg) {
                Ok(p) => p,
                Err(e) => return invalid(e),
            };
            let out = cfg.run.out.clone().unwrap_or_else(|| PathBuf::from("runs").join("fit"));
            match fit::run_fit(&cfg, &problem, &out) {
                Ok(s) => {
                    println!(
                        "best init {}: f_tensors {:e}, {:?}; results in {}",
                        s.best_init,
                        s.f_tensors,
                        s.termination,
                        out.display()
                    );
                    ExitCode::from(exit::OK)
                }
                Err(e) => runtime(e),
            }
        }
    }
}
