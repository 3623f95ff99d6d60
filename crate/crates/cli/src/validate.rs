//! Static checks of a configuration. Tensor files are only opened to read
//! their headers.

use std::fmt;
use std::path::Path;

use aoadmm::coupling::{CouplingCase, CouplingSpec, Participant, Transform};
use aoadmm::prox::Regularizer;
use aoadmm::tensor::{read_header, read_tensor_path};
use aoadmm::Matrix;
use serde::Serialize;

use crate::config::{CouplingConfig, ParticipantConfig, RunConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Diagnostic {
    pub severity: Severity,
    /// Dotted path of the offending config entry.
    pub location: String,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = match self.severity {
            Severity::Error => "error",
            Severity::Warning => "warning",
        };
        write!(f, "{tag}: {}: {}", self.location, self.message)
    }
}

pub fn has_errors(diagnostics: &[Diagnostic]) -> bool {
    diagnostics.iter().any(|d| d.severity == Severity::Error)
}

#[derive(Default)]
struct Report(Vec<Diagnostic>);

impl Report {
    fn error(&mut self, location: impl Into<String>, message: impl fmt::Display) {
        self.0.push(Diagnostic { severity: Severity::Error, location: location.into(), message: message.to_string() });
    }

    fn warning(&mut self, location: impl Into<String>, message: impl fmt::Display) {
        self.0.push(Diagnostic { severity: Severity::Warning, location: location.into(), message: message.to_string() });
    }
}

/// All problems found in `cfg`, errors and warnings alike.
pub fn validate_config(cfg: &RunConfig) -> Vec<Diagnostic> {
    let mut r = Report::default();
    if let Err(e) = cfg.solver.validate() {
        r.error("solver", e);
    }
    if cfg.run.inits == Some(0) {
        r.error("run.inits", "needs at least one initialization");
    }
    if cfg.run.datasets == Some(0) {
        r.error("run.datasets", "needs at least one dataset");
    }
    if cfg.run.threads == Some(0) {
        r.error("run.threads", "needs at least one thread");
    }
    match (&cfg.experiment, cfg.tensors.is_empty()) {
        (Some(_), false) => r.error("experiment", "give either an experiment or tensors, not both"),
        (None, true) => r.error("tensors", "no experiment and no tensors"),
        (Some(e), true) => {
            if !cfg.couplings.is_empty() {
                r.error("couplings", "experiments define their own couplings");
            }
            if let Err(err) = e.synth_spec(cfg.run.seed, 0, None).validate() {
                r.error("experiment", err);
            }
            for (k, loss) in e.control_losses.iter().flatten().enumerate() {
                if let Err(err) = loss.validate() {
                    r.error(format!("experiment.control_losses[{k}]"), err);
                }
            }
            if let Some(tol) = e.divergence_outer_tol_rel {
                if !(tol > 0.0 && tol.is_finite()) {
                    r.error("experiment.divergence_outer_tol_rel", format!("must be positive, got {tol}"));
                }
            }
        }
        (None, false) => validate_problem(cfg, &mut r),
    }
    r.0
}

fn validate_problem(cfg: &RunConfig, r: &mut Report) {
    let n = cfg.tensors.len();
    // Shapes from headers; `None` when the file is unusable.
    let mut shapes: Vec<Option<Vec<usize>>> = Vec::with_capacity(n);
    for (i, t) in cfg.tensors.iter().enumerate() {
        let at = format!("tensors[{i}]");
        let shape = match read_header(&t.path) {
            Ok((_, dims)) => Some(dims),
            Err(e) => {
                r.error(format!("{at}.path"), format!("{}: {e}", t.path.display()));
                None
            }
        };
        if t.rank == 0 {
            r.error(format!("{at}.rank"), "must be at least 1");
        }
        if let Some(w) = t.weight {
            if !(w > 0.0 && w.is_finite()) {
                r.error(format!("{at}.weight"), format!("must be positive, got {w}"));
            }
            if cfg.run.normalize {
                r.warning(format!("{at}.weight"), "ignored because run.normalize sets weights to 1/N");
            }
        }
        if let Err(e) = t.loss.validate() {
            r.error(format!("{at}.loss"), e);
        }
        let regs: Option<Vec<Regularizer>> = match (&t.regularizer, &t.regularizers) {
            (Some(_), Some(_)) => {
                r.error(at.clone(), "give either `regularizer` or `regularizers`, not both");
                None
            }
            (Some(g), None) => shape.as_ref().map(|s| vec![g.clone(); s.len()]),
            (None, Some(list)) => {
                if let Some(s) = &shape {
                    if list.len() != s.len() {
                        r.error(
                            format!("{at}.regularizers"),
                            format!("{} entries for a tensor with {} modes", list.len(), s.len()),
                        );
                    }
                }
                Some(list.clone())
            }
            (None, None) => None,
        };
        if let (Some(regs), Some(s)) = (&regs, &shape) {
            for (d, (g, &len)) in regs.iter().zip(s).enumerate() {
                if let Err(e) = g.validate(Some(len)) {
                    r.error(format!("{at}.regularizers[{d}]"), e);
                }
                if t.loss.requires_nonnegative_model() && !matches!(g, Regularizer::None | Regularizer::NonNegative) {
                    r.warning(
                        format!("{at}.regularizers[{d}]"),
                        format!("{g:?} combined with a loss that already bounds the factors below by zero"),
                    );
                }
            }
        }
        if let Some(s) = &shape {
            if t.rank > 0 && s.iter().any(|&d| d < t.rank) {
                r.warning(format!("{at}.rank"), format!("rank {} exceeds a mode size of {s:?}", t.rank));
            }
        }
        shapes.push(shape);
    }

    for (c, coupling) in cfg.couplings.iter().enumerate() {
        let at = format!("couplings[{c}]");
        if cfg.couplings[..c].iter().any(|o| o.mode == coupling.mode) {
            r.error(
                format!("{at}.mode"),
                format!("more than one coupling in mode {}; at most one coupling per mode is supported", coupling.mode),
            );
            continue;
        }
        let mut participants = Vec::with_capacity(coupling.participants.len());
        let mut ok = true;
        for (k, p) in coupling.participants.iter().enumerate() {
            let pat = format!("{at}.participants[{k}]");
            if p.tensor >= n {
                r.error(format!("{pat}.tensor"), format!("tensor {} of {n}", p.tensor));
                ok = false;
                continue;
            }
            if let Some(Some(s)) = shapes.get(p.tensor) {
                if coupling.mode >= s.len() {
                    r.error(format!("{pat}.tensor"), format!("tensor {} has no mode {}", p.tensor, coupling.mode));
                    ok = false;
                }
            }
            match transform(coupling, p) {
                Ok(transform) => participants.push(Participant { tensor: p.tensor, transform }),
                Err(e) => {
                    r.error(pat, e);
                    ok = false;
                }
            }
        }
        if !ok {
            continue;
        }
        let spec = match CouplingSpec::new(
            coupling.mode,
            coupling.case,
            participants,
            (coupling.delta_shape[0], coupling.delta_shape[1]),
        ) {
            Ok(spec) => spec,
            Err(e) => {
                r.error(at, e);
                continue;
            }
        };
        let shape_of = |i: usize| {
            let s = shapes.get(i)?.as_ref()?;
            Some((*s.get(coupling.mode)?, cfg.tensors[i].rank))
        };
        if coupling.participants.iter().all(|p| shapes[p.tensor].is_some()) {
            if let Err(e) = spec.check_factor_shapes(shape_of) {
                r.error(at, e);
            }
        }
    }
}

/// Builds the transform of one participant.
pub fn transform(coupling: &CouplingConfig, p: &ParticipantConfig) -> anyhow::Result<Transform<f64>> {
    if coupling.case == CouplingCase::Exact {
        if p.matrix.is_some() || p.ones.is_some() {
            anyhow::bail!("case1 couplings take no transform matrix");
        }
        return Ok(Transform::Identity);
    }
    let m = load_matrix(p)?;
    Ok(match coupling.case {
        CouplingCase::Exact => unreachable!(),
        CouplingCase::ModeTransformToDelta => Transform::ModeToDelta(m),
        CouplingCase::DeltaToMode => Transform::DeltaToMode(m),
        CouplingCase::ComponentTransformToDelta => Transform::ComponentToDelta(m),
        CouplingCase::DeltaToComponent => Transform::DeltaToComponent(m),
    })
}

fn load_matrix(p: &ParticipantConfig) -> anyhow::Result<Matrix> {
    match (&p.matrix, &p.ones, &p.shape) {
        (Some(path), None, None) => read_matrix(path),
        (None, Some(ones), Some([rows, cols])) => {
            let mut m = Matrix::zeros(*rows, *cols);
            for &[i, j] in ones {
                if i >= *rows || j >= *cols {
                    anyhow::bail!("one at ({i}, {j}) lies outside the {rows}x{cols} matrix");
                }
                m[(i, j)] = 1.0;
            }
            Ok(m)
        }
        (None, Some(_), None) => anyhow::bail!("`ones` needs `shape`"),
        _ => anyhow::bail!("give either `matrix` or `ones` with `shape`"),
    }
}

fn read_matrix(path: &Path) -> anyhow::Result<Matrix> {
    let t = read_tensor_path::<f64>(path).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))?;
    t.as_matrix()
        .ok_or_else(|| anyhow::anyhow!("{}: expected a matrix, found shape {:?}", path.display(), t.shape()))
}
