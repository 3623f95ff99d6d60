//! Fitting user data described by `[[tensors]]` and `[[couplings]]`.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::Path;

use anyhow::Context;
use aoadmm::coupling::{CouplingSpec, Participant};
use aoadmm::prox::Regularizer;
use aoadmm::solver::{fit, normalize_blocks, write_trace_csv, InitMethod, ProblemSpec, SolverOptions, TensorBlock, Termination};
use aoadmm::tensor::{read_tensor_path, write_text, DenseTensor};
use aoadmm::Matrix;
use log::info;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::RunConfig;
use crate::experiment::thread_pool;
use crate::validate::transform;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitRun {
    pub init: usize,
    pub init_method: InitMethod,
    pub iterations: usize,
    pub termination: Termination,
    pub f_tensors: f64,
    pub f_couplings: f64,
    pub f_constraints: f64,
    pub trace: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitSummary {
    pub seed: u64,
    pub best_init: usize,
    pub termination: Termination,
    pub f_tensors: f64,
    pub f_couplings: f64,
    pub f_constraints: f64,
    pub runs: Vec<FitRun>,
}

/// Loads the data and builds the problem. Assumes the config validated.
pub fn build_problem(cfg: &RunConfig) -> anyhow::Result<ProblemSpec<f64>> {
    let n = cfg.tensors.len();
    let mut blocks = Vec::with_capacity(n);
    for t in &cfg.tensors {
        let data: DenseTensor<f64> =
            read_tensor_path(&t.path).with_context(|| format!("reading {}", t.path.display()))?;
        let order = data.order();
        let mut b = TensorBlock::new(data, t.rank)
            .with_loss(t.loss)
            .with_weight(t.weight.unwrap_or(1.0 / n as f64));
        let regs = match (&t.regularizer, &t.regularizers) {
            (Some(g), _) => vec![g.clone(); order],
            (None, Some(list)) => list.clone(),
            (None, None) => vec![Regularizer::None; order],
        };
        for (d, g) in regs.into_iter().enumerate() {
            b = b.with_regularizer(d, g);
        }
        blocks.push(b);
    }
    if cfg.run.normalize {
        normalize_blocks(&mut blocks)?;
    }
    let mut couplings = Vec::with_capacity(cfg.couplings.len());
    for c in &cfg.couplings {
        let participants = c
            .participants
            .iter()
            .map(|p| Ok(Participant { tensor: p.tensor, transform: transform(c, p)? }))
            .collect::<anyhow::Result<Vec<_>>>()?;
        couplings.push(CouplingSpec::new(c.mode, c.case, participants, (c.delta_shape[0], c.delta_shape[1]))?);
    }
    Ok(ProblemSpec::new(blocks, couplings)?)
}

fn write_matrix(path: &Path, m: &Matrix) -> anyhow::Result<()> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    write_text(&DenseTensor::from_matrix(m), BufWriter::new(file))?;
    Ok(())
}

/// Fits `problem` from every configured initialization and writes the
/// traces, the best run's factors and consensus matrices, and `result.json`.
pub fn run_fit(cfg: &RunConfig, problem: &ProblemSpec<f64>, out: &Path) -> anyhow::Result<FitSummary> {
    fs::create_dir_all(out.join("traces")).with_context(|| format!("creating {}", out.display()))?;
    fs::create_dir_all(out.join("factors"))?;
    fs::write(out.join("config.toml"), cfg.to_toml()?)?;
    let inits = cfg.inits();
    let pool = thread_pool(cfg.run.threads)?;
    let results = pool.install(|| {
        (0..inits)
            .into_par_iter()
            .map(|init| {
                // The configured start for the first run, random ones after.
                let init_method = if init == 0 { cfg.solver.init } else { InitMethod::Random };
                let opts = SolverOptions { seed: cfg.run.seed, stream: init as u64, init: init_method, ..cfg.solver };
                let result = fit(problem, &opts, None).with_context(|| format!("init {init}"))?;
                let rel = format!("traces/init_{init:02}.csv");
                let file = File::create(out.join(&rel))?;
                write_trace_csv(&result.trace, problem.max_order(), cfg.run.record_time, BufWriter::new(file))?;
                Ok((init_method, rel, result))
            })
            .collect::<anyhow::Result<Vec<_>>>()
    })?;

    let runs: Vec<FitRun> = results
        .iter()
        .enumerate()
        .map(|(init, (init_method, rel, r))| {
            let last = r.final_objective();
            FitRun {
                init,
                init_method: *init_method,
                iterations: r.trace.len(),
                termination: r.termination,
                f_tensors: last.map_or(f64::NAN, |t| t.f_tensors),
                f_couplings: last.map_or(f64::NAN, |t| t.f_couplings),
                f_constraints: last.map_or(f64::NAN, |t| t.f_constraints),
                trace: rel.clone(),
            }
        })
        .collect();
    let best = runs
        .iter()
        .min_by(|a, b| a.f_tensors.total_cmp(&b.f_tensors))
        .map(|r| r.init)
        .context("no runs")?;
    let (_, _, result) = &results[best];
    for (i, k) in result.factors().iter().enumerate() {
        for (d, f) in k.factors().iter().enumerate() {
            write_matrix(&out.join("factors").join(format!("tensor_{i}_mode_{d}.txt")), f)?;
        }
    }
    if !problem.couplings().is_empty() {
        fs::create_dir_all(out.join("deltas"))?;
        for (c, delta) in result.deltas().iter().enumerate() {
            write_matrix(&out.join("deltas").join(format!("coupling_{c}.txt")), delta)?;
        }
    }
    let b = &runs[best];
    let summary = FitSummary {
        seed: cfg.run.seed,
        best_init: best,
        termination: b.termination,
        f_tensors: b.f_tensors,
        f_couplings: b.f_couplings,
        f_constraints: b.f_constraints,
        runs,
    };
    let mut text = serde_json::to_string_pretty(&summary)?;
    text.push('\n');
    fs::write(out.join("result.json"), text)?;
    info!("best of {inits} runs: init {best}, f_tensors {:e}, {:?}", summary.f_tensors, summary.termination);
    Ok(summary)
}
