use nalgebra::DMatrix;

use super::*;
use crate::testutil::{assert_close, random_problem};

fn sigma(dim: usize, entries: &[f64]) -> DMatrix<f64> {
    DMatrix::from_row_slice(dim, dim, entries)
}

fn same_as_protected() -> EmbeddedProblem {
    EmbeddedProblem::from_covariance(&sigma(2, &[1.0, 1.0, 1.0, 1.0]), &[1.0]).unwrap()
}

fn strong_first() -> EmbeddedProblem {
    let s = sigma(3, &[1.0, 0.9, 0.0, 0.9, 1.0, 0.0, 0.0, 0.0, 1.0]);
    EmbeddedProblem::from_covariance(&s, &[1.0, 1.0]).unwrap()
}

fn assert_contract(inst: &ConeInstance, res: &SolveResult) {
    assert!(res.residuals.box_violation <= BOX_CONTRACT, "{res:?}");
    assert!(
        res.residuals.cone_violation <= inst.cone_tolerance(),
        "{res:?}"
    );
    for &i in inst.fixed_zero() {
        assert_eq!(res.alphas[i], 0.0);
    }
    let prob = inst.problem();
    let envelope: f64 = res.alphas.iter().zip(prob.c()).map(|(a, c)| a * c).sum();
    assert!(envelope >= prob.component_vector(&res.alphas).norm() - 1e-12);
}

/// Grid maximum of `objectiveᵀα` over points inside the cone.
fn grid_linear(inst: &ConeInstance, objective: &[f64], steps: usize) -> f64 {
    let n = inst.problem().len();
    let mut best = 0.0f64;
    let mut idx = vec![0usize; n];
    loop {
        let alphas: Vec<f64> = idx.iter().map(|&k| k as f64 / steps as f64).collect();
        if inst.cone_violation(&alphas) == 0.0 && inst.box_violation(&alphas) == 0.0 {
            best = best.max(alphas.iter().zip(objective).map(|(a, o)| a * o).sum());
        }
        let mut d = 0;
        while d < n && idx[d] == steps {
            idx[d] = 0;
            d += 1;
        }
        if d == n {
            return best;
        }
        idx[d] += 1;
    }
}

#[test]
fn segment_inside_cone() {
    let prob = same_as_protected();
    let inst = ConeInstance::new(&prob, 0.5, Side::Positive).unwrap();
    let res = solve_linear(&inst, prob.c()).unwrap();
    assert_eq!(res.status, SolveStatus::Optimal);
    assert_close(res.alphas[0], 1.0, 1e-8);
    assert_close(res.objective_value, prob.c()[0], 1e-8);
    assert_contract(&inst, &res);
}

#[test]
fn opposite_side_is_trivial() {
    let prob = same_as_protected();
    let inst = ConeInstance::new(&prob, 0.5, Side::Negative).unwrap();
    let res = solve_linear(&inst, prob.c()).unwrap();
    assert_eq!(res.status, SolveStatus::Trivial);
    assert_eq!(res.objective_value, 0.0);
    assert_eq!(res.alphas, vec![0.0]);
    let res = solve_norm_max(&inst, &NormMaxOptions::default()).unwrap();
    assert_eq!(res.status, SolveStatus::Trivial);
    assert_eq!(res.objective_value, 0.0);
}

#[test]
fn boundary_only_cone_is_found() {
    // Association exactly 1 is only reachable on the cone boundary.
    let prob = same_as_protected();
    let inst = ConeInstance::new(&prob, 1.0, Side::Positive).unwrap();
    let res = solve_norm_max(&inst, &NormMaxOptions::default()).unwrap();
    assert_eq!(res.status, SolveStatus::Stationary);
    assert_close(res.alphas[0], 1.0, 1e-8);
    assert_close(res.objective_value, 1.0, 1e-7);
    assert_contract(&inst, &res);
}

#[test]
fn linear_matches_grid_on_strong_input() {
    let prob = strong_first();
    let inst = ConeInstance::new(&prob, 0.5, Side::Positive).unwrap();
    let res = solve_linear(&inst, prob.c()).unwrap();
    assert_eq!(res.status, SolveStatus::Optimal);
    assert!(
        res.residuals.duality_gap.unwrap() <= GAP_CONTRACT * res.objective_value.abs().max(1.0)
    );
    assert_contract(&inst, &res);
    let grid = grid_linear(&inst, prob.c(), 50);
    assert!(res.objective_value >= grid - 1e-9);
    assert!(
        (res.objective_value - grid).abs() <= 0.01 * grid,
        "{} vs {grid}",
        res.objective_value
    );
}

#[test]
fn norm_max_single_input() {
    let prob = same_as_protected();
    let inst = ConeInstance::new(&prob, 0.5, Side::Positive).unwrap();
    let res = solve_norm_max(&inst, &NormMaxOptions::default()).unwrap();
    assert_eq!(res.status, SolveStatus::Stationary);
    assert_close(res.objective_value, 1.0, 1e-8);
}

#[test]
fn fixed_zero_inputs_are_honoured() {
    let prob = strong_first();
    let inst = ConeInstance::new(&prob, 0.3, Side::Positive)
        .unwrap()
        .with_fixed_zero(&[0])
        .unwrap();
    let res = solve_linear(&inst, prob.c()).unwrap();
    assert_eq!(res.alphas[0], 0.0);
    assert_eq!(res.status, SolveStatus::Trivial);
    assert!(ConeInstance::new(&prob, 0.3, Side::Positive)
        .unwrap()
        .with_fixed_zero(&[2])
        .is_err());
}

#[test]
fn instance_validation() {
    let prob = strong_first();
    assert!(ConeInstance::new(&prob, 0.0, Side::Positive).is_err());
    assert!(ConeInstance::new(&prob, 1.5, Side::Positive).is_err());
    let inst = ConeInstance::new(&prob, 0.5, Side::Positive).unwrap();
    assert!(solve_linear(&inst, &[1.0]).is_err());
    assert!(solve_linear(&inst, &[f64::NAN, 1.0]).is_err());
}

#[test]
fn side_serializes_as_sign() {
    assert_eq!(serde_json::to_string(&Side::Negative).unwrap(), "-1");
    assert_eq!(serde_json::from_str::<Side>("1").unwrap(), Side::Positive);
    assert!(serde_json::from_str::<Side>("0").is_err());
}

#[test]
fn random_linear_solves_match_grid() {
    for seed in 0..40 {
        let n = 2 + (seed as usize % 2);
        let prob = random_problem(seed, n);
        for side in Side::BOTH {
            for eps in [0.1, 0.5, 0.8] {
                let inst = ConeInstance::new(&prob, eps, side).unwrap();
                let obj: Vec<f64> = (0..n)
                    .map(|i| ((seed as usize + i) % 3) as f64 - 0.5)
                    .collect();
                let res = solve_linear(&inst, &obj).unwrap();
                assert_contract(&inst, &res);
                let grid = grid_linear(&inst, &obj, if n == 2 { 100 } else { 30 });
                assert!(
                    res.objective_value >= grid - 1e-7,
                    "seed {seed} eps {eps} {side:?}: {} < grid {grid}",
                    res.objective_value
                );
            }
        }
    }
}

#[test]
fn relaxing_epsilon_never_hurts() {
    for seed in 0..20 {
        let prob = random_problem(100 + seed, 3);
        let mut last = f64::INFINITY;
        for eps in [0.05, 0.2, 0.4, 0.6, 0.9] {
            let best = Side::BOTH
                .iter()
                .map(|&s| {
                    let inst = ConeInstance::new(&prob, eps, s).unwrap();
                    solve_linear(&inst, prob.c()).unwrap().objective_value
                })
                .fold(0.0, f64::max);
            assert!(best <= last + 1e-7 * last.max(1.0), "seed {seed}");
            last = best;
        }
    }
}

#[test]
fn norm_max_close_to_grid() {
    let spec = crate::oracle::GridSpec::default();
    let mut within = 0;
    let total = 60;
    for seed in 0..total {
        let prob = random_problem(1000 + seed, 3);
        let eps = [0.1, 0.3, 0.5][seed as usize % 3];
        let grid = crate::oracle::grid_best(&prob, eps, &spec)
            .unwrap()
            .map_or(0.0, |g| g.component.influence * prob.model_variance());
        let best = Side::BOTH
            .iter()
            .map(|&s| {
                let inst = ConeInstance::new(&prob, eps, s).unwrap();
                let res = solve_norm_max(&inst, &NormMaxOptions::default()).unwrap();
                assert_contract(&inst, &res);
                res.objective_value
            })
            .fold(0.0, f64::max);
        if best >= 0.98 * grid {
            within += 1;
        }
    }
    assert!(within * 100 >= 95 * total, "{within}/{total}");
}
