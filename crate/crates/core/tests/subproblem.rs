mod oracles;

use aoadmm::coupling::{update_factor_frobenius, PenaltyTerms, Transform};
use aoadmm::loss::{
    solve_factor_subproblem, Bounds, CouplingPenalty, LbfgsbOptions, LossSpec, SplitPenalty,
};
use aoadmm::tensor::{reconstruct, DenseTensor, KruskalFactors};
use nalgebra::DMatrix;
use oracles::{normal_matrix, normal_tensor, rng};
use rand::Rng;

fn tight() -> LbfgsbOptions {
    LbfgsbOptions { max_iters: 2000, max_evaluations: 20_000, pgtol: 1e-12, ftol: 1e-15, ..Default::default() }
}

fn random_model(rng: &mut impl Rng, shape: &[usize], rank: usize) -> KruskalFactors<f64> {
    KruskalFactors::new(shape.iter().map(|&n| normal_matrix(rng, n, rank)).collect()).unwrap()
}

#[test]
fn iterative_solver_agrees_with_the_closed_form() {
    let mut rng = rng(21);
    let shape = [4, 3, 2];
    for mode in 0..3 {
        let t = normal_tensor(&mut rng, &shape);
        let k = random_model(&mut rng, &shape, 2);
        let n = shape[mode];
        let z = normal_matrix(&mut rng, n, 2);
        let mu = normal_matrix(&mut rng, n, 2) * 0.1;
        let delta = normal_matrix(&mut rng, n, 2);
        let mu_delta = normal_matrix(&mut rng, n, 2) * 0.1;
        let transform = Transform::Identity;
        let (w, rho) = (0.5, 1.3);

        let closed = update_factor_frobenius(
            &t,
            &k,
            mode,
            w,
            rho,
            PenaltyTerms { split: Some((&z, &mu)), coupling: Some((&transform, &delta, &mu_delta)) },
        )
        .unwrap();

        let split_target = &z - &mu;
        let coupling_target = &delta - &mu_delta;
        let out = solve_factor_subproblem(
            &LossSpec::Frobenius,
            &t,
            &k,
            mode,
            w,
            rho,
            Some(SplitPenalty { target: &split_target }),
            Some(CouplingPenalty { transform: &transform, target: &coupling_target }),
            Bounds::none(),
            &tight(),
        )
        .unwrap();
        let err = (&out.x - &closed).amax();
        assert!(err < 1e-6, "mode {mode}: {err}");
    }
}

#[test]
fn huge_step_pins_the_factor_to_the_split_target() {
    let mut rng = rng(22);
    let shape = [4, 3, 2];
    let k = random_model(&mut rng, &shape, 2).into_factors();
    let k = KruskalFactors::new(k.into_iter().map(|m| m.abs()).collect()).unwrap();
    let t = reconstruct(&k, &shape).unwrap();
    let target = DMatrix::from_fn(4, 2, |_, _| rng.random_range(0.1..2.0));
    let out = solve_factor_subproblem(
        &LossSpec::Kl,
        &t,
        &k,
        0,
        1.0,
        1e8,
        Some(SplitPenalty { target: &target }),
        None,
        Bounds::nonnegative(),
        &LbfgsbOptions::default(),
    )
    .unwrap();
    let err = (&out.x - &target).amax();
    assert!(err < 1e-4, "{err}");
}

#[test]
fn kl_subproblem_never_increases_the_objective() {
    let mut rng = rng(23);
    let shape = [4, 3, 2];
    let truth = KruskalFactors::new(
        shape.iter().map(|&n| DMatrix::from_fn(n, 2, |_, _| rng.random_range(0.2..1.5))).collect(),
    )
    .unwrap();
    let mean = reconstruct(&truth, &shape).unwrap();
    let t = DenseTensor::new(shape.to_vec(), mean.values().iter().map(|&v: &f64| (3.0 * v).round()).collect())
        .unwrap();
    let mut k = KruskalFactors::new(
        shape.iter().map(|&n| DMatrix::from_fn(n, 2, |_, _| rng.random_range(0.1..1.0))).collect(),
    )
    .unwrap();
    let mut previous = f64::INFINITY;
    for sweep in 0..20 {
        for mode in 0..3 {
            let out = solve_factor_subproblem(
                &LossSpec::Kl,
                &t,
                &k,
                mode,
                1.0,
                1e-3,
                None,
                None,
                Bounds::nonnegative(),
                &LbfgsbOptions::default(),
            )
            .unwrap();
            assert!(out.report.final_objective() <= out.report.initial_objective());
            k.set_factor(mode, out.x).unwrap();
        }
        let f = aoadmm::loss::loss_value(&LossSpec::Kl, &t, &reconstruct(&k, &shape).unwrap()).unwrap();
        assert!(f <= previous * (1.0 + 1e-6) + 1e-9, "sweep {sweep}: {f} > {previous}");
        previous = f;
    }
}

#[test]
fn data_outside_the_domain_is_reported() {
    let mut rng = rng(24);
    let k = random_model(&mut rng, &[3, 2], 1);
    let t = DenseTensor::new(vec![3, 2], vec![1.0, -1.0, 2.0, 0.0, 1.0, 1.0]).unwrap();
    let err = solve_factor_subproblem(
        &LossSpec::Kl,
        &t,
        &k,
        0,
        1.0,
        1.0,
        None,
        None,
        Bounds::nonnegative(),
        &LbfgsbOptions::default(),
    );
    assert!(err.is_err());
}
