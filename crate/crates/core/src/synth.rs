//! Synthetic coupled datasets with known factors.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Exp1, Poisson, StandardNormal, StandardUniform};
use serde::{Deserialize, Serialize};

use crate::coupling::{CouplingCase, CouplingSpec, Participant, Transform};
use crate::error::{Error, Result};
use crate::loss::LossSpec;
use crate::prox::Regularizer;
use crate::rng::{dataset_stream, generator, Generator};
use crate::solver::{normalize_blocks, InitMethod, ProblemSpec, TensorBlock};
use crate::tensor::{reconstruct, DenseTensor, KruskalFactors};
use crate::{Kruskal, Matrix, Tensor};

/// Columns with unit norm and pairwise inner products `c`.
///
/// Orthonormalizes a standard normal `n × r` matrix and multiplies it by the
/// transposed Cholesky factor of `(1 − c)I + c𝟙𝟙ᵀ`.
pub fn generate_collinear_factors(n: usize, r: usize, c: f64, rng: &mut impl Rng) -> Result<Matrix> {
    if r == 0 || r > n {
        return Err(Error::param(format!("need 1 <= rank <= rows, got rank {r} with {n} rows")));
    }
    if !(0.0..1.0).contains(&c) {
        return Err(Error::param(format!("congruence must lie in [0, 1), got {c}")));
    }
    let g = DMatrix::from_fn(n, r, |_, _| rng.sample::<f64, _>(StandardNormal));
    let q = g.qr().q();
    let k = DMatrix::from_fn(r, r, |i, j| if i == j { 1.0 } else { c });
    let l = nalgebra::Cholesky::new(k)
        .ok_or_else(|| Error::param(format!("congruence {c} is too close to 1")))?
        .l();
    Ok(q * l.transpose())
}

/// `x + level·(‖x‖/‖n‖)·n` with standard normal `n`.
pub fn add_gaussian_noise(x: &Tensor, level: f64, rng: &mut impl Rng) -> Result<Tensor> {
    if !(level > 0.0 && level.is_finite()) {
        return Err(Error::param(format!("noise level must be positive, got {level}")));
    }
    let xn = x.frobenius_norm();
    if xn == 0.0 {
        return Err(Error::param("cannot scale noise to an all-zero tensor"));
    }
    let noise: Vec<f64> = (0..x.len()).map(|_| rng.sample(StandardNormal)).collect();
    let nn = noise.iter().map(|v| v * v).sum::<f64>().sqrt();
    let scale = level * xn / nn;
    let values = x.values().iter().zip(&noise).map(|(a, b)| a + scale * b).collect();
    DenseTensor::new(x.shape().to_vec(), values)
}

/// Independent Poisson counts with the entries of `x` as means.
pub fn sample_poisson(x: &Tensor, rng: &mut impl Rng) -> Result<Tensor> {
    let mut values = Vec::with_capacity(x.len());
    for (j, &lambda) in x.values().iter().enumerate() {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::Domain {
                index: j,
                message: format!("Poisson mean {lambda} is not a nonnegative number"),
            });
        }
        values.push(if lambda == 0.0 {
            0.0
        } else {
            Poisson::new(lambda)
                .map_err(|e| Error::param(format!("Poisson mean {lambda}: {e}")))?
                .sample(rng)
        });
    }
    DenseTensor::new(x.shape().to_vec(), values)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExperimentKind {
    /// Exact coupling, mildly collinear factors.
    Exp1a,
    /// Exact coupling, strongly collinear factors.
    Exp1b,
    /// Exact coupling, nonnegative factors.
    Exp2,
    /// Row-selection coupling of a tensor with a matrix.
    Exp3,
    /// Component-selection coupling of three tensors with different ranks.
    Exp4,
    /// Poisson counts fitted with the KL divergence.
    Exp5,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 6] = [
        ExperimentKind::Exp1a,
        ExperimentKind::Exp1b,
        ExperimentKind::Exp2,
        ExperimentKind::Exp3,
        ExperimentKind::Exp4,
        ExperimentKind::Exp5,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ExperimentKind::Exp1a => "exp1a",
            ExperimentKind::Exp1b => "exp1b",
            ExperimentKind::Exp2 => "exp2",
            ExperimentKind::Exp3 => "exp3",
            ExperimentKind::Exp4 => "exp4",
            ExperimentKind::Exp5 => "exp5",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == name)
    }

    pub fn default_shapes(&self) -> Vec<Vec<usize>> {
        match self {
            ExperimentKind::Exp3 => vec![vec![80, 50, 60], vec![40, 100]],
            ExperimentKind::Exp4 => vec![vec![40, 50, 60], vec![40, 70, 60], vec![40, 30, 50]],
            _ => vec![vec![40, 50, 60], vec![40, 100]],
        }
    }

    pub fn default_ranks(&self) -> Vec<usize> {
        match self {
            ExperimentKind::Exp4 => vec![2, 3, 4],
            _ => vec![3, 3],
        }
    }

    pub fn default_congruence(&self) -> Option<f64> {
        match self {
            ExperimentKind::Exp1a => Some(0.5),
            ExperimentKind::Exp1b => Some(0.9),
            _ => None,
        }
    }

    pub fn default_distribution(&self) -> FactorDistribution {
        match self {
            ExperimentKind::Exp2 => FactorDistribution::Uniform,
            ExperimentKind::Exp5 => FactorDistribution::Gamma,
            _ => FactorDistribution::Normal,
        }
    }

    pub fn default_noise(&self) -> NoiseModel {
        match self {
            ExperimentKind::Exp5 => NoiseModel::Poisson,
            _ => NoiseModel::Gaussian { level: 0.2 },
        }
    }

    pub fn default_inits(&self) -> usize {
        match self {
            ExperimentKind::Exp4 => 10,
            _ => 5,
        }
    }

    /// Initialization of run `init` (zero-based) on a dataset.
    pub fn init_method(&self, init: usize) -> InitMethod {
        match self {
            // Unconstrained Frobenius fits with exact couplings start their
            // first run from singular vectors.
            ExperimentKind::Exp1a | ExperimentKind::Exp1b if init == 0 => InitMethod::Svd,
            _ => InitMethod::Random,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FactorDistribution {
    Normal,
    Uniform,
    /// Gamma with shape 1 and scale 1.
    Gamma,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NoiseModel {
    Gaussian { level: f64 },
    Poisson,
    None,
}

/// A dataset recipe: one of the experiment layouts plus optional overrides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub experiment: ExperimentKind,
    #[serde(default)]
    pub shapes: Option<Vec<Vec<usize>>>,
    #[serde(default)]
    pub ranks: Option<Vec<usize>>,
    #[serde(default)]
    pub congruence: Option<f64>,
    #[serde(default)]
    pub distribution: Option<FactorDistribution>,
    #[serde(default)]
    pub noise: Option<NoiseModel>,
    /// Fit loss; defaults to KL for Poisson data and Frobenius otherwise.
    #[serde(default)]
    pub loss: Option<LossSpec>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub dataset: u32,
}

impl SynthSpec {
    /// Checks the overrides against the experiment's layout.
    pub fn validate(&self) -> Result<()> {
        let kind = self.experiment;
        let invalid = |msg: String| Err(Error::InvalidProblem(format!("{}: {msg}", kind.name())));
        let shapes = self.shapes.clone().unwrap_or_else(|| kind.default_shapes());
        let ranks = self.ranks.clone().unwrap_or_else(|| kind.default_ranks());
        let expected_count = kind.default_shapes().len();
        if shapes.len() != expected_count || ranks.len() != expected_count {
            return invalid(format!("needs {expected_count} shapes and ranks"));
        }
        if shapes.iter().any(|s| s.len() < 2 || s.contains(&0)) {
            return invalid(format!("invalid shapes {shapes:?}"));
        }
        if ranks.iter().zip(&shapes).any(|(&r, s)| r == 0 || r > s[0]) {
            return invalid(format!("ranks {ranks:?} must lie between 1 and the first mode size"));
        }
        if let Some(c) = self.congruence.or(kind.default_congruence()) {
            if !(0.0..1.0).contains(&c) {
                return invalid(format!("congruence {c} outside [0, 1)"));
            }
        }
        if let Some(NoiseModel::Gaussian { level }) = self.noise {
            if !(level >= 0.0 && level.is_finite()) {
                return invalid(format!("noise level {level} must be nonnegative"));
            }
        }
        if let Some(loss) = self.loss {
            loss.validate()?;
        }
        let n = shapes[0][0];
        match kind {
            ExperimentKind::Exp3 => {
                let n1 = shapes[1][0];
                if n.div_ceil(2) != n1 || ranks[0] != ranks[1] {
                    return invalid(format!(
                        "row selection needs the matrix to have half the tensor's first mode and equal ranks, got {n} and {n1}"
                    ));
                }
            }
            ExperimentKind::Exp4 => {
                if shapes.iter().any(|s| s[0] != n) || ranks != [2, 3, 4] {
                    return invalid("component sharing needs equal first modes and ranks 2, 3, 4".into());
                }
            }
            _ => {
                if shapes[1][0] != n || ranks[0] != ranks[1] {
                    return invalid("exact coupling needs equal first modes and ranks".into());
                }
            }
        }
        Ok(())
    }

    pub fn new(experiment: ExperimentKind, seed: u64, dataset: u32) -> Self {
        Self {
            experiment,
            shapes: None,
            ranks: None,
            congruence: None,
            distribution: None,
            noise: None,
            loss: None,
            seed,
            dataset,
        }
    }
}

/// Generated problem and the factors behind it.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub kind: ExperimentKind,
    pub problem: ProblemSpec<f64>,
    /// Ground truth, scaled so that it reproduces the noise-free part of
    /// the data. Gaussian-noise data is normalized to unit norm; Poisson
    /// counts are left as drawn.
    pub truth: Vec<Kruskal>,
    pub truth_deltas: Vec<Matrix>,
    /// For component-selection couplings: the consensus column behind each
    /// component of each tensor.
    pub selections: Option<Vec<Vec<usize>>>,
}

fn draw(dist: FactorDistribution, n: usize, r: usize, rng: &mut Generator) -> Matrix {
    DMatrix::from_fn(n, r, |_, _| match dist {
        FactorDistribution::Normal => rng.sample(StandardNormal),
        FactorDistribution::Uniform => rng.sample(StandardUniform),
        FactorDistribution::Gamma => rng.sample(Exp1),
    })
}

fn factor(
    dist: FactorDistribution,
    congruence: Option<f64>,
    n: usize,
    r: usize,
    rng: &mut Generator,
) -> Result<Matrix> {
    match congruence {
        Some(c) => generate_collinear_factors(n, r, c, rng),
        None => Ok(draw(dist, n, r, rng)),
    }
}

fn selection(rows: usize, picks: &[usize]) -> Matrix {
    let mut h = DMatrix::zeros(rows, picks.len());
    for (c, &r) in picks.iter().enumerate() {
        h[(r, c)] = 1.0;
    }
    h
}

/// Builds the dataset described by `spec` from its own generator stream.
pub fn build_experiment(spec: &SynthSpec) -> Result<Experiment> {
    let kind = spec.experiment;
    let shapes = spec.shapes.clone().unwrap_or_else(|| kind.default_shapes());
    let ranks = spec.ranks.clone().unwrap_or_else(|| kind.default_ranks());
    let congruence = spec.congruence.or(kind.default_congruence());
    let dist = spec.distribution.unwrap_or(kind.default_distribution());
    let noise = spec.noise.unwrap_or(kind.default_noise());
    let loss = spec.loss.unwrap_or(match noise {
        NoiseModel::Poisson => LossSpec::Kl,
        _ => LossSpec::Frobenius,
    });
    spec.validate()?;
    let mut rng = generator(spec.seed, dataset_stream(spec.dataset));

    // Factors of the coupled first mode, then every other factor.
    let (first, couplings_for, deltas, selections) = match kind {
        ExperimentKind::Exp3 => {
            let (n0, n1) = (shapes[0][0], shapes[1][0]);
            let c0 = factor(dist, congruence, n0, ranks[0], &mut rng)?;
            let h = selection(n0, &(0..n0).step_by(2).collect::<Vec<_>>()).transpose();
            let c1 = &h * &c0;
            let participants = vec![
                Participant { tensor: 0, transform: Transform::ModeToDelta(h) },
                Participant { tensor: 1, transform: Transform::ModeToDelta(DMatrix::identity(n1, n1)) },
            ];
            let coupling = CouplingSpec::new(0, CouplingCase::ModeTransformToDelta, participants, (n1, ranks[0]))?;
            (vec![c0, c1.clone()], coupling, vec![c1], None)
        }
        ExperimentKind::Exp4 => {
            let n = shapes[0][0];
            let delta = factor(dist, congruence, n, 4, &mut rng)?;
            let picks: Vec<Vec<usize>> = vec![vec![0, 1], vec![0, 1, 2], vec![0, 1, 2, 3]];
            let mut cs = Vec::new();
            let mut participants = Vec::new();
            for (i, p) in picks.iter().enumerate() {
                let h = selection(4, p);
                cs.push(&delta * &h);
                participants.push(Participant { tensor: i, transform: Transform::DeltaToComponent(h) });
            }
            let coupling = CouplingSpec::new(0, CouplingCase::DeltaToComponent, participants, (n, 4))?;
            (cs, coupling, vec![delta], Some(picks))
        }
        _ => {
            let n = shapes[0][0];
            let c = factor(dist, congruence, n, ranks[0], &mut rng)?;
            let participants = (0..2)
                .map(|tensor| Participant { tensor, transform: Transform::Identity })
                .collect();
            let coupling = CouplingSpec::new(0, CouplingCase::Exact, participants, (n, ranks[0]))?;
            (vec![c.clone(), c.clone()], coupling, vec![c], None)
        }
    };

    let mut truth = Vec::with_capacity(shapes.len());
    for (i, (shape, &r)) in shapes.iter().zip(&ranks).enumerate() {
        let mut mats = vec![first[i].clone()];
        for &n in &shape[1..] {
            mats.push(factor(dist, congruence, n, r, &mut rng)?);
        }
        truth.push(KruskalFactors::new(mats)?);
    }

    let mut blocks = Vec::with_capacity(truth.len());
    for (k, shape) in truth.iter().zip(&shapes) {
        let clean = reconstruct(k, shape)?;
        let data = match noise {
            NoiseModel::Gaussian { level } => add_gaussian_noise(&clean, level, &mut rng)?,
            NoiseModel::Poisson => sample_poisson(&clean, &mut rng)?,
            NoiseModel::None => clean,
        };
        let r = k.rank();
        let mut block = TensorBlock::new(data, r).with_loss(loss);
        if kind == ExperimentKind::Exp2 || (kind == ExperimentKind::Exp5 && loss.is_frobenius()) {
            block = block.with_all_regularizers(Regularizer::NonNegative);
        }
        blocks.push(block);
    }
    // Count data keeps its scale; everything else is normalized.
    let norms: Vec<f64> = if noise == NoiseModel::Poisson {
        let w = 1.0 / blocks.len() as f64;
        blocks.iter_mut().for_each(|b| b.weight = w);
        vec![1.0; blocks.len()]
    } else {
        let norms = blocks.iter().map(|b| b.data.frobenius_norm()).collect();
        normalize_blocks(&mut blocks)?;
        norms
    };
    // Keep the truth on the scale of the data by scaling each tensor's last
    // factor; the coupled first mode stays untouched.
    let truth = truth
        .into_iter()
        .zip(&norms)
        .map(|(k, &norm)| {
            let mut mats = k.into_factors();
            let last = mats.len() - 1;
            mats[last] /= norm;
            KruskalFactors::new(mats)
        })
        .collect::<Result<Vec<_>>>()?;
    let problem = ProblemSpec::new(blocks, vec![couplings_for])?;
    Ok(Experiment {
        kind,
        problem,
        truth,
        truth_deltas: deltas,
        selections,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn collinear_gram_matches() {
        let mut rng = generator(1, 0);
        for c in [0.0, 0.5, 0.9] {
            let f = generate_collinear_factors(20, 3, c, &mut rng).unwrap();
            let g = f.tr_mul(&f);
            for i in 0..3 {
                for j in 0..3 {
                    let want = if i == j { 1.0 } else { c };
                    assert!((g[(i, j)] - want).abs() < 1e-10);
                }
            }
        }
        assert!(generate_collinear_factors(2, 3, 0.5, &mut rng).is_err());
        assert!(generate_collinear_factors(5, 3, 1.0, &mut rng).is_err());
    }

    #[test]
    fn noise_hits_the_requested_snr() {
        let mut rng = generator(2, 0);
        let x = DenseTensor::new(vec![100, 120], (0..12000).map(|_| rng.sample(StandardNormal)).collect()).unwrap();
        let t = add_gaussian_noise(&x, 0.2, &mut rng).unwrap();
        let noise: f64 = t.values().iter().zip(x.values()).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let snr = 20.0 * (x.frobenius_norm() / noise).log10();
        assert!((snr - 13.979).abs() < 0.1, "{snr}");
    }

    #[test]
    fn poisson_zero_mean_and_sample_mean() {
        let mut rng = generator(3, 0);
        let zero = DenseTensor::zeros(vec![10, 10]).unwrap();
        assert!(sample_poisson(&zero, &mut rng).unwrap().values().iter().all(|&v| v == 0.0));
        let n = 100_000;
        let four = DenseTensor::new(vec![n, 1], vec![4.0; n]).unwrap();
        let s = sample_poisson(&four, &mut rng).unwrap();
        let mean = s.values().iter().sum::<f64>() / n as f64;
        assert!((mean - 4.0).abs() < 3.0 * (4.0 / n as f64).sqrt());
        assert!(sample_poisson(&DenseTensor::new(vec![1, 1], vec![-1.0]).unwrap(), &mut rng).is_err());
    }

    #[test]
    fn experiment_layouts() {
        let e = build_experiment(&SynthSpec::new(ExperimentKind::Exp3, 1, 0)).unwrap();
        let h = e.problem.couplings()[0].participants()[0].transform.matrix().unwrap().clone();
        assert_eq!(h.shape(), (40, 80));
        assert_eq!(h[(0, 0)], 1.0);
        assert_eq!(h[(1, 2)], 1.0);
        assert_eq!(h.row(1).sum(), 1.0);

        let e = build_experiment(&SynthSpec::new(ExperimentKind::Exp4, 1, 0)).unwrap();
        assert_eq!(e.problem.tensors().iter().map(|b| b.rank).collect::<Vec<_>>(), vec![2, 3, 4]);
        let coupling = &e.problem.couplings()[0];
        assert_eq!(coupling.delta_shape(), (40, 4));
        let h2 = coupling.participants()[1].transform.matrix().unwrap();
        assert_eq!(h2, &selection(4, &[0, 1, 2]));
        for b in e.problem.tensors() {
            assert!((b.data.frobenius_norm() - 1.0).abs() < 1e-12);
            assert!((b.weight - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn counts_keep_their_scale() {
        let e = build_experiment(&SynthSpec::new(ExperimentKind::Exp5, 1, 0)).unwrap();
        for (b, k) in e.problem.tensors().iter().zip(&e.truth) {
            assert_eq!(b.loss, LossSpec::Kl);
            assert_eq!(b.weight, 0.5);
            assert!(b.data.values().iter().all(|&v| v >= 0.0 && v.fract() == 0.0));
            let mean = reconstruct(k, b.data.shape()).unwrap();
            let ratio = b.data.values().iter().sum::<f64>() / mean.values().iter().sum::<f64>();
            assert!((ratio - 1.0).abs() < 0.05, "{ratio}");
        }
    }

    #[test]
    fn experiments_are_reproducible() {
        let spec = SynthSpec::new(ExperimentKind::Exp1a, 42, 3);
        let a = build_experiment(&spec).unwrap();
        let b = build_experiment(&spec).unwrap();
        assert_eq!(a.problem, b.problem);
        let c = build_experiment(&SynthSpec { dataset: 4, ..spec }).unwrap();
        assert_ne!(a.problem, c.problem);
    }
}
