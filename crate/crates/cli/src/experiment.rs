//! The synthetic experiment grid: datasets × loss arms × initializations.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::Context;
use aoadmm::loss::LossSpec;
use aoadmm::metrics::{factor_match_score, is_failed_run, shared_components_consistent};
use aoadmm::rng::init_stream;
use aoadmm::solver::{fit, write_trace_csv, InitMethod, SolverOptions, Termination};
use aoadmm::synth::{build_experiment, Experiment};
use log::info;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{ExperimentSection, RunConfig};

/// Outcome of one fit.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunRecord {
    pub init: usize,
    pub init_method: InitMethod,
    pub iterations: usize,
    pub termination: Termination,
    pub f_tensors: f64,
    pub f_couplings: f64,
    pub f_constraints: f64,
    pub fms: f64,
    pub failed: bool,
    /// Trace file, relative to the output directory.
    pub trace: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetSummary {
    pub dataset: usize,
    pub best_init: usize,
    pub best_f_tensors: f64,
    pub best_fms: f64,
    pub best_failed: bool,
    /// Shared components matched consistently across tensors in the best
    /// run; only for component-selection couplings.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub best_consistent: Option<bool>,
    pub runs: Vec<RunRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ArmSummary {
    pub loss: LossSpec,
    /// Failed runs among all runs.
    pub failed_all: usize,
    /// Datasets whose best run failed.
    pub failed_best: usize,
    pub total_runs: usize,
    pub median_best_fms: f64,
    pub min_best_fms: f64,
    pub datasets: Vec<DatasetSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentSummary {
    pub experiment: String,
    pub seed: u64,
    pub datasets: usize,
    pub inits: usize,
    pub fms_threshold: f64,
    pub arms: Vec<ArmSummary>,
}

impl ExperimentSummary {
    pub fn arm(&self, loss: &LossSpec) -> Option<&ArmSummary> {
        self.arms.iter().find(|a| &a.loss == loss)
    }
}

fn arm_label(loss: &LossSpec) -> String {
    match loss {
        LossSpec::Frobenius => "frobenius".into(),
        LossSpec::Kl => "kl".into(),
        LossSpec::Is => "is".into(),
        LossSpec::Beta { beta } => format!("beta_{beta}"),
        LossSpec::Alpha { alpha } => format!("alpha_{alpha}"),
        LossSpec::Huber { delta } => format!("huber_{delta}"),
    }
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    match v.len() {
        0 => f64::NAN,
        n if n % 2 == 1 => v[n / 2],
        n => 0.5 * (v[n / 2 - 1] + v[n / 2]),
    }
}

pub fn thread_pool(threads: Option<usize>) -> anyhow::Result<rayon::ThreadPool> {
    let n = threads.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    Ok(rayon::ThreadPoolBuilder::new().num_threads(n).build()?)
}

struct Task {
    arm: usize,
    dataset: usize,
    init: usize,
}

/// Runs the grid described by `cfg`, writing traces under `out` along with a
/// config snapshot and `summary.json`.
pub fn run_experiment(cfg: &RunConfig, out: &Path) -> anyhow::Result<ExperimentSummary> {
    let section = cfg.experiment.as_ref().context("the config has no [experiment] section")?;
    let datasets = cfg.datasets();
    let inits = cfg.inits();
    let arms = section.arms();
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    fs::write(out.join("config.toml"), cfg.to_toml()?)?;
    for a in &arms {
        fs::create_dir_all(out.join("traces").join(arm_label(a)))?;
    }

    let pool = thread_pool(cfg.run.threads)?;
    let started = Instant::now();
    // Datasets are generated once per arm and shared by its initializations.
    let problems: Vec<Vec<Experiment>> = pool.install(|| {
        arms.par_iter()
            .map(|loss| {
                (0..datasets)
                    .into_par_iter()
                    .map(|d| Ok(build_experiment(&section.synth_spec(cfg.run.seed, d as u32, Some(*loss)))?))
                    .collect::<anyhow::Result<Vec<_>>>()
            })
            .collect::<anyhow::Result<Vec<_>>>()
    })?;

    let tasks: Vec<Task> = (0..arms.len())
        .flat_map(|arm| (0..datasets).flat_map(move |dataset| (0..inits).map(move |init| Task { arm, dataset, init })))
        .collect();
    let records: Vec<(RunRecord, Option<bool>)> = pool.install(|| {
        tasks
            .par_iter()
            .map(|t| {
                let e = &problems[t.arm][t.dataset];
                run_one(cfg, section, e, &arms[t.arm], t, out)
            })
            .collect::<anyhow::Result<Vec<_>>>()
    })?;
    info!("{} runs finished in {:.1}s", records.len(), started.elapsed().as_secs_f64());

    let threshold = aoadmm::metrics::failure_threshold(problems[0][0].truth.iter().map(|k| k.order()));
    let mut it = records.into_iter();
    let mut arm_summaries = Vec::with_capacity(arms.len());
    for loss in &arms {
        let mut per_dataset = Vec::with_capacity(datasets);
        for dataset in 0..datasets {
            let runs: Vec<(RunRecord, Option<bool>)> = it.by_ref().take(inits).collect();
            let best = runs
                .iter()
                .enumerate()
                .min_by(|a, b| a.1 .0.f_tensors.total_cmp(&b.1 .0.f_tensors))
                .map(|(k, _)| k)
                .expect("at least one initialization");
            let (b, consistent) = &runs[best];
            per_dataset.push(DatasetSummary {
                dataset,
                best_init: b.init,
                best_f_tensors: b.f_tensors,
                best_fms: b.fms,
                best_failed: b.failed,
                best_consistent: *consistent,
                runs: runs.iter().map(|(r, _)| r.clone()).collect(),
            });
        }
        let best_fms: Vec<f64> = per_dataset.iter().map(|d| d.best_fms).collect();
        arm_summaries.push(ArmSummary {
            loss: *loss,
            failed_all: per_dataset.iter().flat_map(|d| &d.runs).filter(|r| r.failed).count(),
            failed_best: per_dataset.iter().filter(|d| d.best_failed).count(),
            total_runs: datasets * inits,
            median_best_fms: median(&best_fms),
            min_best_fms: best_fms.iter().copied().fold(f64::INFINITY, f64::min),
            datasets: per_dataset,
        });
    }
    let summary = ExperimentSummary {
        experiment: section.name.name().to_string(),
        seed: cfg.run.seed,
        datasets,
        inits,
        fms_threshold: threshold,
        arms: arm_summaries,
    };
    let mut text = serde_json::to_string_pretty(&summary)?;
    text.push('\n');
    fs::write(out.join("summary.json"), text)?;
    Ok(summary)
}

fn run_one(
    cfg: &RunConfig,
    section: &ExperimentSection,
    e: &Experiment,
    loss: &LossSpec,
    t: &Task,
    out: &Path,
) -> anyhow::Result<(RunRecord, Option<bool>)> {
    let init_method = section.name.init_method(t.init);
    let opts = SolverOptions {
        seed: cfg.run.seed,
        stream: init_stream(t.dataset as u32, t.init as u32),
        init: init_method,
        outer_tol_rel: section.outer_tol_rel(loss, &cfg.solver),
        ..cfg.solver
    };
    let started = Instant::now();
    let result = fit(&e.problem, &opts, Some(&e.truth))
        .with_context(|| format!("{} dataset {} init {}", arm_label(loss), t.dataset, t.init))?;
    let report = factor_match_score(result.factors(), &e.truth)?;
    let last = result.final_objective();
    let hit_cap = result.termination == Termination::IterationCap;
    let consistent = e.selections.as_ref().map(|sel| shared_components_consistent(&report, sel));
    if consistent == Some(false) {
        info!("dataset {} init {}: shared components matched inconsistently", t.dataset, t.init);
    }

    let rel: PathBuf = ["traces", &arm_label(loss), &format!("dataset_{:03}_init_{:02}.csv", t.dataset, t.init)]
        .iter()
        .collect();
    let file = File::create(out.join(&rel)).with_context(|| format!("creating {}", rel.display()))?;
    write_trace_csv(&result.trace, e.problem.max_order(), cfg.run.record_time, BufWriter::new(file))?;

    let record = RunRecord {
        init: t.init,
        init_method,
        iterations: result.trace.len(),
        termination: result.termination,
        f_tensors: last.map_or(f64::NAN, |r| r.f_tensors),
        f_couplings: last.map_or(f64::NAN, |r| r.f_couplings),
        f_constraints: last.map_or(f64::NAN, |r| r.f_constraints),
        fms: report.fms,
        failed: is_failed_run(report.fms, report.threshold, hit_cap),
        trace: rel.to_string_lossy().replace('\\', "/"),
    };
    info!(
        "{} dataset {} init {}: fms {:.4}, {} iterations, {:.1}s",
        arm_label(loss),
        t.dataset,
        t.init,
        record.fms,
        record.iterations,
        started.elapsed().as_secs_f64()
    );
    Ok((record, consistent))
}
