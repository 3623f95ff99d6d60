//! Independent reference computations shared by the integration and
//! acceptance tests. Everything here works on dense, vectorized or
//! brute-force formulations and never calls the routine it checks.

#![allow(dead_code, clippy::neg_cmp_op_on_partial_ord, clippy::type_complexity)]

use aoadmm::coupling::{
    update_delta, update_factor_frobenius, CouplingCase, CouplingSpec, Participant, PenaltyTerms,
    Transform,
};
use aoadmm::loss::LossSpec;
use aoadmm::prox::{apply_prox, difference_matrix, Regularizer};
use aoadmm::solver::{
    admm_mode_update, initialize_state, ProblemSpec, SolverOptions, TensorBlock, Workspace,
};
use aoadmm::tensor::{co_khatri_rao, unfold, DenseTensor, KruskalFactors};
use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{StandardNormal, Uniform};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal_matrix(rng: &mut impl Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

pub fn normal_tensor(rng: &mut impl Rng, shape: &[usize]) -> DenseTensor<f64> {
    let n = shape.iter().product();
    DenseTensor::new(shape.to_vec(), (0..n).map(|_| rng.sample(StandardNormal)).collect()).unwrap()
}

/// Result of running one family of checks.
#[derive(Debug, Clone)]
pub struct SuiteOutcome {
    pub name: String,
    pub checked: usize,
    /// Largest observed error, in the units of the suite's tolerance.
    pub worst: f64,
    pub failures: Vec<String>,
}

impl SuiteOutcome {
    pub fn new(name: impl Into<String>) -> Self {
        Self { name: name.into(), checked: 0, worst: 0.0, failures: Vec::new() }
    }

    pub fn passed(&self) -> bool {
        self.failures.is_empty() && self.checked > 0
    }

    /// Records one measured error against its bound.
    pub fn record(&mut self, what: impl FnOnce() -> String, error: f64, bound: f64) {
        self.checked += 1;
        if error.is_nan() || error > self.worst {
            self.worst = error;
        }
        if !(error <= bound) && self.failures.len() < 10 {
            self.failures.push(format!("{}: error {error:e} > {bound:e}", what()));
        }
    }

    pub fn summary(&self) -> String {
        format!(
            "{}: {} checks, worst {:e}, {} failures{}",
            self.name,
            self.checked,
            self.worst,
            self.failures.len(),
            self.failures.first().map(|f| format!(" (first: {f})")).unwrap_or_default()
        )
    }
}

// ---------------------------------------------------------------------------
// Vectorized quadratic programs

pub fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let (ar, ac) = a.shape();
    let (br, bc) = b.shape();
    DMatrix::from_fn(ar * br, ac * bc, |i, j| a[(i / br, j / bc)] * b[(i % br, j % bc)])
}

fn vec(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_column_slice(m.as_slice())
}

fn unvec(v: &DVector<f64>, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_column_slice(rows, cols, v.as_slice())
}

/// Matrix of `vec(X) ↦ vec(A(X))` for an `n × r` factor.
pub fn factor_side_operator(t: &Transform<f64>, n: usize, r: usize) -> DMatrix<f64> {
    match t {
        Transform::ModeToDelta(h) => kron(&DMatrix::identity(r, r), h),
        Transform::ComponentToDelta(h) => kron(&h.transpose(), &DMatrix::identity(n, n)),
        _ => DMatrix::identity(n * r, n * r),
    }
}

/// Matrix of `vec(Δ) ↦ vec(B(Δ))`.
pub fn delta_side_operator(t: &Transform<f64>, delta_shape: (usize, usize)) -> DMatrix<f64> {
    let (n, r) = delta_shape;
    match t {
        Transform::DeltaToMode(h) => kron(&DMatrix::identity(r, r), h),
        Transform::DeltaToComponent(h) => kron(&h.transpose(), &DMatrix::identity(n, n)),
        _ => DMatrix::identity(n * r, n * r),
    }
}

/// Dense minimizer over `vec(X)` of
/// `w‖T_(d) − X Mᵀ‖² + ρ/2‖X − s‖² + ρ/2‖A·vec(X) − b‖²`.
pub fn factor_qp_oracle(
    unfolded: &DMatrix<f64>,
    cokr: &DMatrix<f64>,
    weight: f64,
    rho: f64,
    split_target: Option<&DMatrix<f64>>,
    coupling: Option<(&Transform<f64>, &DMatrix<f64>)>,
) -> DMatrix<f64> {
    let n = unfolded.nrows();
    let r = cokr.ncols();
    // vec(X Mᵀ) = (M ⊗ I) vec(X)
    let lift = kron(cokr, &DMatrix::identity(n, n));
    let mut h = lift.tr_mul(&lift) * (2.0 * weight);
    let mut g = lift.tr_mul(&vec(unfolded)) * (2.0 * weight);
    if let Some(s) = split_target {
        h += DMatrix::identity(n * r, n * r) * rho;
        g += vec(s) * rho;
    }
    if let Some((t, b)) = coupling {
        let a = factor_side_operator(t, n, r);
        h += a.tr_mul(&a) * rho;
        g += a.tr_mul(&vec(b)) * rho;
    }
    let x = h.lu().solve(&g).expect("oracle system is nonsingular");
    unvec(&x, n, r)
}

/// Gradient in `Δ` of `Σ_i w_i ‖B_i(Δ) − (A_i(C_i) + μ_i)‖²`, computed on the
/// vectorized form.
pub fn delta_objective_gradient(
    spec: &CouplingSpec<f64>,
    factors: &[&DMatrix<f64>],
    duals: &[DMatrix<f64>],
    weights: &[f64],
    delta: &DMatrix<f64>,
) -> (DMatrix<f64>, f64) {
    let shape = spec.delta_shape();
    let mut grad = DVector::zeros(shape.0 * shape.1);
    let mut scale = 0.0f64;
    for (((p, c), mu), &w) in spec.participants().iter().zip(factors).zip(duals).zip(weights) {
        let a = factor_side_operator(&p.transform, c.nrows(), c.ncols());
        let b = delta_side_operator(&p.transform, shape);
        let target = &a * vec(c) + vec(mu);
        let pull = b.tr_mul(&target) * (2.0 * w);
        scale = scale.max(pull.amax());
        grad += b.tr_mul(&(&b * vec(delta))) * (2.0 * w) - pull;
    }
    (unvec(&grad, shape.0, shape.1), scale)
}

// ---------------------------------------------------------------------------
// Random coupling instances

pub fn selection_matrix(rows: usize, picks: &[usize]) -> DMatrix<f64> {
    let mut h = DMatrix::zeros(rows, picks.len());
    for (c, &r) in picks.iter().enumerate() {
        h[(r, c)] = 1.0;
    }
    h
}

pub const ALL_CASES: [CouplingCase; 5] = [
    CouplingCase::Exact,
    CouplingCase::ModeTransformToDelta,
    CouplingCase::DeltaToMode,
    CouplingCase::ComponentTransformToDelta,
    CouplingCase::DeltaToComponent,
];

/// A coupling in mode 0 of `participants` random third-order tensors, with
/// factor shapes `(rows[i], ranks[i])`.
#[derive(Debug, Clone)]
pub struct CouplingInstance {
    pub spec: CouplingSpec<f64>,
    pub rows: Vec<usize>,
    pub ranks: Vec<usize>,
}

pub fn random_coupling(rng: &mut impl Rng, case: CouplingCase, participants: usize) -> CouplingInstance {
    let dim = Uniform::new_inclusive(2usize, 8).unwrap();
    let rank = Uniform::new_inclusive(1usize, 4).unwrap();
    let (rows, ranks, delta_shape, transforms): (Vec<usize>, Vec<usize>, (usize, usize), Vec<Transform<f64>>) =
        match case {
            CouplingCase::Exact => {
                let (n, r) = (rng.sample(dim), rng.sample(rank));
                (vec![n; participants], vec![r; participants], (n, r), vec![Transform::Identity; participants])
            }
            CouplingCase::ModeTransformToDelta => {
                let r = rng.sample(rank);
                let rows: Vec<usize> = (0..participants).map(|_| rng.sample(dim)).collect();
                let nd = rng.random_range(1..=*rows.iter().min().unwrap());
                let ts = rows.iter().map(|&n| Transform::ModeToDelta(normal_matrix(rng, nd, n))).collect();
                (rows, vec![r; participants], (nd, r), ts)
            }
            CouplingCase::DeltaToMode => {
                let r = rng.sample(rank);
                let rows: Vec<usize> = (0..participants).map(|_| rng.sample(dim)).collect();
                let nd = rng.random_range(1..=*rows.iter().max().unwrap());
                let ts = rows.iter().map(|&n| Transform::DeltaToMode(normal_matrix(rng, n, nd))).collect();
                (rows, vec![r; participants], (nd, r), ts)
            }
            CouplingCase::ComponentTransformToDelta => {
                let n = rng.sample(dim);
                let ranks: Vec<usize> = (0..participants).map(|_| rng.sample(rank)).collect();
                let rd = rng.sample(rank);
                let ts = ranks.iter().map(|&r| Transform::ComponentToDelta(normal_matrix(rng, r, rd))).collect();
                (vec![n; participants], ranks, (n, rd), ts)
            }
            CouplingCase::DeltaToComponent => {
                let n = rng.sample(dim);
                let rd = rng.sample(rank);
                let mut cols: Vec<usize> = (0..rd).collect();
                let mut picks: Vec<Vec<usize>> = Vec::new();
                for _ in 0..participants {
                    cols.shuffle(rng);
                    let r = rng.random_range(1..=rd);
                    picks.push(cols[..r].to_vec());
                }
                // Give unused columns to the first participant.
                for c in 0..rd {
                    if !picks.iter().any(|p| p.contains(&c)) {
                        picks[0].push(c);
                    }
                }
                let ranks = picks.iter().map(Vec::len).collect();
                let ts = picks.iter().map(|p| Transform::DeltaToComponent(selection_matrix(rd, p))).collect();
                (vec![n; participants], ranks, (n, rd), ts)
            }
        };
    let participants = transforms
        .into_iter()
        .enumerate()
        .map(|(tensor, transform)| Participant { tensor, transform })
        .collect();
    let spec = CouplingSpec::new(0, case, participants, delta_shape).expect("random coupling is valid");
    CouplingInstance { spec, rows, ranks }
}

// ---------------------------------------------------------------------------
// Suites

/// Closed-form Frobenius factor updates against the dense vectorized QP,
/// for every coupling case, with and without a split term.
pub fn factor_update_suite(instances: usize, seed: u64, tol: f64) -> SuiteOutcome {
    let mut out = SuiteOutcome::new("factor updates vs dense QP");
    let mut rng = rng(seed);
    for case in ALL_CASES {
        for inst in 0..instances {
            let ci = random_coupling(&mut rng, case, 1);
            let (n, r) = (ci.rows[0], ci.ranks[0]);
            let shape = [n, rng.random_range(1..=8), rng.random_range(1..=8)];
            let k = KruskalFactors::new(shape.iter().map(|&d| normal_matrix(&mut rng, d, r)).collect()).unwrap();
            let t = normal_tensor(&mut rng, &shape);
            let weight = rng.random_range(0.1..2.0);
            let rho = rng.random_range(0.1..3.0);
            let transform = &ci.spec.participants()[0].transform;
            let delta = normal_matrix(&mut rng, ci.spec.delta_shape().0, ci.spec.delta_shape().1);
            let side = transform.factor_side_shape(n, r).unwrap();
            let mu = normal_matrix(&mut rng, side.0, side.1);
            let with_split = inst % 2 == 0;
            let z = normal_matrix(&mut rng, n, r);
            let muz = normal_matrix(&mut rng, n, r);
            let terms = PenaltyTerms {
                split: with_split.then_some((&z, &muz)),
                coupling: Some((transform, &delta, &mu)),
            };
            let got = update_factor_frobenius(&t, &k, 0, weight, rho, terms).unwrap();
            let split_target = &z - &muz;
            let coupling_target = transform.delta_side(&delta) - &mu;
            let want = factor_qp_oracle(
                &unfold(&t, 0).unwrap(),
                &co_khatri_rao(&k, 0).unwrap(),
                weight,
                rho,
                with_split.then_some(&split_target),
                Some((transform, &coupling_target)),
            );
            let err = (&got - &want).amax() / (1.0 + want.amax());
            out.record(|| format!("{} instance {inst}", case.label()), err, tol);
        }
    }
    out
}

/// Consensus updates zero the gradient of their quadratic, unweighted and
/// with random positive weights.
pub fn delta_update_suite(instances: usize, seed: u64, tol: f64) -> SuiteOutcome {
    let mut out = SuiteOutcome::new("consensus updates are stationary");
    let mut rng = rng(seed);
    for case in ALL_CASES {
        for inst in 0..instances {
            let participants = rng.random_range(1..=3);
            let ci = random_coupling(&mut rng, case, participants);
            let factors: Vec<DMatrix<f64>> =
                ci.rows.iter().zip(&ci.ranks).map(|(&n, &r)| normal_matrix(&mut rng, n, r)).collect();
            let duals: Vec<DMatrix<f64>> = ci
                .spec
                .participants()
                .iter()
                .zip(&factors)
                .map(|(p, c)| {
                    let (a, b) = p.transform.factor_side_shape(c.nrows(), c.ncols()).unwrap();
                    normal_matrix(&mut rng, a, b)
                })
                .collect();
            let weighted = inst % 2 == 1;
            let weights: Vec<f64> = (0..participants)
                .map(|_| if weighted { rng.random_range(0.1..5.0) } else { 1.0 })
                .collect();
            let refs: Vec<&DMatrix<f64>> = factors.iter().collect();
            let delta = update_delta(&ci.spec, &refs, &duals, weighted.then_some(weights.as_slice())).unwrap();
            let (grad, scale) = delta_objective_gradient(&ci.spec, &refs, &duals, &weights, &delta);
            out.record(|| format!("{} instance {inst}", case.label()), grad.amax() / (1.0 + scale), tol);
        }
    }
    out
}

/// Central difference of a scalar function.
pub fn central_difference(f: &dyn Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|j| {
            let step = h * x[j].abs().max(1.0);
            probe[j] = x[j] + step;
            let up = f(&probe);
            probe[j] = x[j] - step;
            let down = f(&probe);
            probe[j] = x[j];
            (up - down) / (2.0 * step)
        })
        .collect()
}

pub fn loss_settings() -> Vec<LossSpec> {
    vec![
        LossSpec::Frobenius,
        LossSpec::Kl,
        LossSpec::Is,
        LossSpec::Beta { beta: 0.5 },
        LossSpec::Beta { beta: 1.5 },
        LossSpec::Beta { beta: 2.5 },
        LossSpec::Alpha { alpha: 0.5 },
        LossSpec::Alpha { alpha: 2.0 },
        LossSpec::Huber { delta: 0.1 },
        LossSpec::Huber { delta: 1.0 },
    ]
}

/// Random data/model pair inside the loss's domain.
pub fn feasible_pair(rng: &mut impl Rng, loss: &LossSpec, len: usize) -> (Vec<f64>, Vec<f64>) {
    let mut t = Vec::with_capacity(len);
    let mut x = Vec::with_capacity(len);
    for _ in 0..len {
        match loss {
            LossSpec::Frobenius => {
                t.push(rng.sample::<f64, _>(StandardNormal) * 2.0);
                x.push(rng.sample::<f64, _>(StandardNormal) * 2.0);
            }
            LossSpec::Huber { delta } => {
                let tj: f64 = rng.sample::<f64, _>(StandardNormal) * 2.0;
                // Stay clear of the kink at |x − t| = δ.
                let xj = loop {
                    let xj: f64 = tj + rng.sample::<f64, _>(StandardNormal) * 3.0 * delta;
                    if ((xj - tj).abs() - delta).abs() > 1e-3 * delta {
                        break xj;
                    }
                };
                t.push(tj);
                x.push(xj);
            }
            LossSpec::Kl => {
                t.push(rng.random_range(0..6) as f64);
                x.push(rng.random_range(0.2..5.0));
            }
            _ => {
                t.push(rng.random_range(0.1..5.0));
                x.push(rng.random_range(0.2..5.0));
            }
        }
    }
    (t, x)
}

/// Analytic gradients against central differences, `points` random feasible
/// points per loss setting.
pub fn gradient_suite(points: usize, seed: u64, tol: f64) -> Vec<SuiteOutcome> {
    let mut rng = rng(seed);
    loss_settings()
        .into_iter()
        .map(|loss| {
            let mut out = SuiteOutcome::new(format!("gradient {loss:?}"));
            for p in 0..points {
                let (t, x) = feasible_pair(&mut rng, &loss, 6);
                let mut grad = vec![0.0; x.len()];
                loss.accumulate(&t, &x, Some(&mut grad)).unwrap();
                let f = |v: &[f64]| loss.accumulate(&t, v, None).unwrap();
                let fd = central_difference(&f, &x, 1e-6);
                let diff: f64 = grad.iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                let norm: f64 = fd.iter().map(|v| v * v).sum::<f64>().sqrt();
                out.record(|| format!("point {p}"), diff / norm.max(1e-8), tol);
            }
            out
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Proximal operators

/// Least-squares nondecreasing fit by enumerating every partition of the
/// index range into contiguous blocks.
pub fn isotonic_bruteforce(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    if n == 0 {
        return Vec::new();
    }
    let mut best: Option<(f64, Vec<f64>)> = None;
    for cuts in 0u32..(1u32 << (n - 1)) {
        let mut fit = Vec::with_capacity(n);
        let mut start = 0;
        let mut last_mean = f64::NEG_INFINITY;
        let mut monotone = true;
        for end in 1..=n {
            if end == n || cuts & (1 << (end - 1)) != 0 {
                let mean = x[start..end].iter().sum::<f64>() / (end - start) as f64;
                if mean < last_mean - 1e-15 {
                    monotone = false;
                }
                last_mean = mean;
                fit.extend(std::iter::repeat_n(mean, end - start));
                start = end;
            }
        }
        if !monotone {
            continue;
        }
        let cost: f64 = x.iter().zip(&fit).map(|(a, b)| (a - b).powi(2)).sum();
        if best.as_ref().is_none_or(|(c, _)| cost < *c) {
            best = Some((cost, fit));
        }
    }
    best.expect("a single block is always monotone").1
}

/// `min ‖x − u‖` over unit vectors with at most `k` nonzeros, by trying
/// every support of size `k`.
pub fn hard_sparsity_bruteforce(x: &[f64], k: usize) -> f64 {
    let n = x.len();
    let mut best = f64::INFINITY;
    for mask in 0u32..(1u32 << n) {
        if mask.count_ones() as usize != k.min(n) {
            continue;
        }
        let kept: Vec<f64> = (0..n).map(|i| if mask & (1 << i) != 0 { x[i] } else { 0.0 }).collect();
        let norm = kept.iter().map(|v| v * v).sum::<f64>().sqrt();
        let dist = if norm == 0.0 {
            // Any unit vector on the support; all are at distance √(‖x‖² + 1).
            (x.iter().map(|v| v * v).sum::<f64>() + 1.0).sqrt()
        } else {
            x.iter().zip(&kept).map(|(a, b)| (a - b / norm).powi(2)).sum::<f64>().sqrt()
        };
        best = best.min(dist);
    }
    best
}

pub fn prox_settings() -> Vec<Regularizer> {
    vec![
        Regularizer::NonNegative,
        Regularizer::Box { lower: -0.5, upper: 1.0 },
        Regularizer::Simplex,
        Regularizer::Monotone,
        Regularizer::L1Ball { radius: 1.5 },
        Regularizer::L2UnitBall,
        Regularizer::Lasso { gamma: 0.3 },
        Regularizer::L2Norm { gamma: 0.4 },
        Regularizer::Smoothness { gamma: 0.7, order: 1 },
        Regularizer::Smoothness { gamma: 0.7, order: 2 },
        Regularizer::NormalizedHardSparsity { k: 2 },
    ]
}

/// `step·g(u) + ½‖x − u‖²`.
fn prox_objective(reg: &Regularizer, x: &DMatrix<f64>, u: &DMatrix<f64>, step: f64) -> f64 {
    step * reg.evaluate(u) + 0.5 * (x - u).norm_squared()
}

/// Exact stationarity residual for the regularizers with a closed-form
/// optimality condition; `None` for the rest.
fn stationarity_residual(reg: &Regularizer, x: &DMatrix<f64>, p: &DMatrix<f64>, step: f64) -> Option<f64> {
    match *reg {
        Regularizer::Lasso { gamma } => {
            let thr = gamma * step;
            Some(
                x.iter()
                    .zip(p.iter())
                    .map(|(&xi, &pi)| {
                        if pi != 0.0 {
                            (xi - pi - thr * pi.signum()).abs()
                        } else {
                            (xi.abs() - thr).max(0.0)
                        }
                    })
                    .fold(0.0, f64::max),
            )
        }
        Regularizer::L2Norm { gamma } => {
            let thr = gamma * step;
            Some(
                x.column_iter()
                    .zip(p.column_iter())
                    .map(|(xc, pc)| {
                        let pn = pc.norm();
                        if pn > 0.0 {
                            (xc - pc - pc * (thr / pn)).amax()
                        } else {
                            (xc.norm() - thr).max(0.0)
                        }
                    })
                    .fold(0.0, f64::max),
            )
        }
        Regularizer::Smoothness { gamma, order } => {
            let d = difference_matrix::<f64>(x.nrows(), order);
            let lhs = (d.tr_mul(&d) * (2.0 * gamma * step) + DMatrix::identity(x.nrows(), x.nrows())) * p;
            Some((lhs - x).amax() / (1.0 + x.amax()))
        }
        _ => None,
    }
}

/// Invariants of one regularizer's prox on `inputs` random matrices, each
/// also compared against `candidates` random competitors.
pub fn prox_suite(reg: &Regularizer, inputs: usize, candidates: usize, seed: u64) -> SuiteOutcome {
    let mut out = SuiteOutcome::new(format!("prox {reg:?}"));
    let mut rng = rng(seed);
    let indicator = reg.is_indicator() || matches!(reg, Regularizer::NormalizedHardSparsity { .. });
    let convex = reg.is_convex();
    // Difference penalties need more rows than their order; sparsity needs
    // at least `k` rows.
    let min_rows = match *reg {
        Regularizer::Smoothness { order, .. } => order + 1,
        Regularizer::NormalizedHardSparsity { k } => k,
        _ => 1,
    };
    for case in 0..inputs {
        let n = rng.random_range(min_rows..=8);
        let r = rng.random_range(1..=3);
        let spread = [0.1, 1.0, 4.0][case % 3];
        let x = normal_matrix(&mut rng, n, r) * spread;
        let y = normal_matrix(&mut rng, n, r) * spread;
        let step = rng.random_range(0.2..3.0);
        let p = apply_prox(reg, &x, step).unwrap();
        let label = || format!("input {case}");

        if indicator {
            out.record(|| format!("{} feasibility", label()), reg.evaluate(&p), 0.0);
            let again = apply_prox(reg, &p, step).unwrap();
            out.record(|| format!("{} idempotence", label()), (&again - &p).amax(), 1e-12);
        }
        if convex {
            let py = apply_prox(reg, &y, step).unwrap();
            let excess = (&p - &py).norm() - (&x - &y).norm();
            out.record(|| format!("{} non-expansiveness", label()), excess, 1e-12);
        }
        if let Some(res) = stationarity_residual(reg, &x, &p, step) {
            out.record(|| format!("{} stationarity", label()), res, 1e-10);
        }
        match *reg {
            Regularizer::Simplex => {
                let mut worst = 0.0f64;
                for c in p.column_iter() {
                    worst = worst.max((c.sum() - 1.0).abs()).max(-c.min());
                }
                out.record(|| format!("{} simplex", label()), worst, 1e-10);
            }
            Regularizer::L1Ball { radius } => {
                for (xc, pc) in x.column_iter().zip(p.column_iter()) {
                    out.record(|| format!("{} l1 norm", label()), pc.lp_norm(1) - radius, 1e-10);
                    if xc.lp_norm(1) <= radius {
                        out.record(|| format!("{} feasible input kept", label()), (xc - pc).amax(), 0.0);
                    }
                }
            }
            Regularizer::Monotone => {
                for (xc, pc) in x.column_iter().zip(p.column_iter()) {
                    let want = isotonic_bruteforce(xc.as_slice());
                    let err = pc.iter().zip(&want).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                    out.record(|| format!("{} isotonic oracle", label()), err, 1e-8);
                }
            }
            Regularizer::NormalizedHardSparsity { k } => {
                for (xc, pc) in x.column_iter().zip(p.column_iter()) {
                    let best = hard_sparsity_bruteforce(xc.as_slice(), k);
                    out.record(|| format!("{} support oracle", label()), (xc - pc).norm() - best, 1e-10);
                }
            }
            _ => {}
        }

        if convex {
            // Randomized optimality: nearby and far-away competitors, made
            // feasible by projection when g is an indicator.
            let best = prox_objective(reg, &x, &p, step);
            let mut worst_gap = f64::NEG_INFINITY;
            for j in 0..candidates {
                let radius = [1e-6, 1e-3, 0.1, 1.0, 10.0][j % 5] * spread;
                let mut u = &p + normal_matrix(&mut rng, n, r) * radius;
                if indicator {
                    u = apply_prox(reg, &u, 1.0).unwrap();
                }
                let value = prox_objective(reg, &x, &u, step);
                worst_gap = worst_gap.max(best - value);
            }
            out.record(|| format!("{} randomized optimality", label()), worst_gap / (1.0 + best.abs()), 1e-12);
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Factor match score

pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

/// FMS by trying every permutation of components in every tensor.
pub fn fms_bruteforce(est: &[KruskalFactors<f64>], truth: &[KruskalFactors<f64>]) -> f64 {
    est.iter()
        .zip(truth)
        .map(|(e, t)| {
            let r = e.rank();
            permutations(r)
                .into_iter()
                .map(|perm| {
                    (0..r)
                        .map(|a| {
                            e.factors()
                                .iter()
                                .zip(t.factors())
                                .map(|(fe, ft)| {
                                    let (ce, ct) = (fe.column(a), ft.column(perm[a]));
                                    (ce.dot(&ct) / (ce.norm() * ct.norm())).abs()
                                })
                                .product::<f64>()
                        })
                        .sum::<f64>()
                        / r as f64
                })
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .product()
}

// ---------------------------------------------------------------------------
// Inner ADMM convergence

/// A nonnegative, coupled Frobenius problem: a 6×5×4 tensor and a 6×7
/// matrix of rank 3 whose even rows in the first mode are tied to one
/// consensus matrix.
pub fn convex_inner_fixture() -> ProblemSpec<f64> {
    let mut rng = rng(91);
    let x = DenseTensor::new(vec![6, 5, 4], (0..120).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap();
    let y = DenseTensor::new(vec![6, 7], (0..42).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap();
    let blocks = vec![
        TensorBlock::new(x, 3).with_all_regularizers(Regularizer::NonNegative),
        TensorBlock::new(y, 3).with_weight(0.5).with_all_regularizers(Regularizer::NonNegative),
    ];
    let h = selection_matrix(6, &[0, 2, 4]).transpose();
    let coupling = CouplingSpec::new(
        0,
        CouplingCase::ModeTransformToDelta,
        vec![
            Participant { tensor: 0, transform: Transform::ModeToDelta(h.clone()) },
            Participant { tensor: 1, transform: Transform::ModeToDelta(h) },
        ],
        (3, 3),
    )
    .unwrap();
    ProblemSpec::new(blocks, vec![coupling]).unwrap()
}

/// Runs one mode-0 update of the fixture and returns the inner iteration
/// count with the largest of the four final residuals.
pub fn inner_convergence(max_iters: usize, tol: f64) -> (usize, f64) {
    let problem = convex_inner_fixture();
    let opts = SolverOptions {
        inner_max_iters: max_iters,
        inner_tol_primal: tol,
        inner_tol_dual: tol,
        seed: 5,
        ..Default::default()
    };
    let mut state = initialize_state(&problem, &opts).unwrap();
    let ws = Workspace::new(&problem).unwrap();
    let report = admm_mode_update(&problem, 0, &mut state, &opts, &ws).unwrap();
    let r = report.last_residuals.expect("the coupled group reports residuals");
    let worst = [r.primal_split, r.primal_coupling, r.dual_split, r.dual_coupling]
        .into_iter()
        .fold(0.0, f64::max);
    (report.inner_iterations, worst)
}
