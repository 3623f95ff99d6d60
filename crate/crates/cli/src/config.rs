//! Run configuration: a TOML document with `[run]`, `[solver]` and either
//! an `[experiment]` section or `[[tensors]]` / `[[couplings]]` tables.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use aoadmm::coupling::CouplingCase;
use aoadmm::loss::LossSpec;
use aoadmm::prox::Regularizer;
use aoadmm::solver::SolverOptions;
use aoadmm::synth::{ExperimentKind, FactorDistribution, NoiseModel, SynthSpec};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub run: RunSection,
    #[serde(default)]
    pub solver: SolverOptions,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub experiment: Option<ExperimentSection>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tensors: Vec<TensorConfig>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub couplings: Vec<CouplingConfig>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    /// Master seed.
    pub seed: u64,
    /// Number of synthetic datasets; 10 when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub datasets: Option<usize>,
    /// Initializations per dataset; the experiment's default when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub inits: Option<usize>,
    /// Worker threads; all available cores when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    /// Fill the `seconds` column of trace files. Off by default so that
    /// repeated runs produce identical files.
    pub record_time: bool,
    /// Scale every tensor to unit norm and use weights `1/N` (fit only).
    pub normalize: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

/// One of the synthetic experiments plus overrides of its recipe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    pub name: ExperimentKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shapes: Option<Vec<Vec<usize>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ranks: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub congruence: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distribution: Option<FactorDistribution>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<NoiseModel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loss: Option<LossSpec>,
    /// Further losses fitted to the same datasets; Frobenius for `exp5`
    /// when unset, none otherwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub control_losses: Option<Vec<LossSpec>>,
    /// Relative outer tolerance for arms fitted with a divergence;
    /// [`DIVERGENCE_OUTER_TOL_REL`] when unset. Frobenius arms use
    /// `solver.outer_tol_rel`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub divergence_outer_tol_rel: Option<f64>,
}

/// Inexact coupled inner solves leave divergence objectives on raw counts
/// wobbling at a relative level near 1e-8, so `1e-12` is never reached.
pub const DIVERGENCE_OUTER_TOL_REL: f64 = 1e-8;

impl ExperimentSection {
    pub fn new(name: ExperimentKind) -> Self {
        Self {
            name,
            shapes: None,
            ranks: None,
            congruence: None,
            distribution: None,
            noise: None,
            loss: None,
            control_losses: None,
            divergence_outer_tol_rel: None,
        }
    }

    /// Recipe of one dataset fitted with `loss`.
    pub fn synth_spec(&self, seed: u64, dataset: u32, loss: Option<LossSpec>) -> SynthSpec {
        SynthSpec {
            experiment: self.name,
            shapes: self.shapes.clone(),
            ranks: self.ranks.clone(),
            congruence: self.congruence,
            distribution: self.distribution,
            noise: self.noise,
            loss: loss.or(self.loss),
            seed,
            dataset,
        }
    }

    /// Relative outer tolerance for an arm fitted with `loss`.
    pub fn outer_tol_rel(&self, loss: &LossSpec, solver: &SolverOptions) -> f64 {
        if loss.is_frobenius() {
            solver.outer_tol_rel
        } else {
            self.divergence_outer_tol_rel.unwrap_or(DIVERGENCE_OUTER_TOL_REL)
        }
    }

    /// Primary loss followed by the control losses.
    pub fn arms(&self) -> Vec<LossSpec> {
        let noise = self.noise.unwrap_or(self.name.default_noise());
        let primary = self.loss.unwrap_or(match noise {
            NoiseModel::Poisson => LossSpec::Kl,
            _ => LossSpec::Frobenius,
        });
        let controls = self.control_losses.clone().unwrap_or_else(|| match self.name {
            ExperimentKind::Exp5 => vec![LossSpec::Frobenius],
            _ => vec![],
        });
        let mut arms = vec![primary];
        for c in controls {
            if !arms.contains(&c) {
                arms.push(c);
            }
        }
        arms
    }
}

/// A data tensor (or matrix) stored in a tensor file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorConfig {
    pub path: PathBuf,
    pub rank: usize,
    /// `1/N` when unset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight: Option<f64>,
    #[serde(default)]
    pub loss: LossSpec,
    /// Applied to every mode; mutually exclusive with `regularizers`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub regularizer: Option<Regularizer>,
    /// One entry per mode.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub regularizers: Option<Vec<Regularizer>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CouplingConfig {
    /// Zero-based mode.
    pub mode: usize,
    pub case: CouplingCase,
    /// `[rows, columns]` of the consensus matrix.
    pub delta_shape: [usize; 2],
    pub participants: Vec<ParticipantConfig>,
}

/// A coupled tensor and its transform. Cases other than `case1` need either
/// `matrix` (a file in tensor format with two modes) or `ones` with `shape`
/// (a 0/1 matrix given by the positions of its ones).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParticipantConfig {
    pub tensor: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matrix: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ones: Option<Vec<[usize; 2]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shape: Option<[usize; 2]>,
}

/// Sets `key` (dotted path) to `value`, parsed as a TOML value when
/// possible and as a string otherwise.
pub fn apply_override(doc: &mut toml::Table, assignment: &str) -> anyhow::Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .with_context(|| format!("override `{assignment}` is not of the form key=value"))?;
    let key = key.trim();
    let raw = raw.trim();
    let value = match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        bail!("override key `{key}` is malformed");
    }
    let mut table = doc;
    for p in &parts[..parts.len() - 1] {
        let entry = table
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .with_context(|| format!("override key `{key}`: `{p}` is not a section"))?;
    }
    table.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

impl RunConfig {
    /// Parses `text`, then applies the overrides in order.
    pub fn parse(text: &str, overrides: &[String]) -> anyhow::Result<Self> {
        // Parse once as-is so that errors carry line and column.
        let base: RunConfig = toml::from_str(text)?;
        if overrides.is_empty() {
            return Ok(base);
        }
        let mut doc: toml::Table = text.parse()?;
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        let merged = toml::to_string(&doc)?;
        toml::from_str(&merged).context("after applying overrides")
    }

    /// Reads a config file. Relative paths inside it are resolved against
    /// the file's directory.
    pub fn load(path: &Path, overrides: &[String]) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut cfg = Self::parse(&text, overrides).with_context(|| format!("in {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for t in &mut self.tensors {
            fix(&mut t.path);
        }
        for c in &mut self.couplings {
            for p in &mut c.participants {
                if let Some(m) = &mut p.matrix {
                    fix(m);
                }
            }
        }
    }

    pub fn to_toml(&self) -> anyhow::Result<String> {
        Ok(toml::to_string(self)?)
    }

    /// Configuration of a synthetic experiment with default settings.
    pub fn for_experiment(kind: ExperimentKind) -> Self {
        Self {
            experiment: Some(ExperimentSection::new(kind)),
            ..Default::default()
        }
    }

    pub fn datasets(&self) -> usize {
        self.run.datasets.unwrap_or(10)
    }

    pub fn inits(&self) -> usize {
        self.run
            .inits
            .unwrap_or_else(|| self.experiment.as_ref().map_or(1, |e| e.name.default_inits()))
    }
}
