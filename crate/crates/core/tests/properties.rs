use linproxy_core::{
    association, influence, is_proxy, psd_decompose_with, solve_linear, Component, ConeInstance,
    CovarianceMatrix, Decomposition, EmbeddedProblem, Side, Thresholds,
};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn inf_norm(m: &DMatrix<f64>) -> f64 {
    m.row_iter()
        .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// `BBᵀ` for a `dim × rank` factor with entries in `[-2, 2]`.
fn psd() -> impl Strategy<Value = DMatrix<f64>> {
    (1usize..=20, 1usize..=20).prop_flat_map(|(dim, rank)| {
        prop::collection::vec(-2.0f64..2.0, dim * rank).prop_map(move |v| {
            let b = DMatrix::from_vec(dim, rank, v);
            &b * b.transpose()
        })
    })
}

/// Small problems: covariance over `Z` and up to four inputs plus coefficients.
fn problem() -> impl Strategy<Value = EmbeddedProblem> {
    (1usize..=4)
        .prop_flat_map(|n| {
            (
                prop::collection::vec(-1.0f64..1.0, (n + 1) * (n + 3)),
                prop::collection::vec(-2.0f64..2.0, n),
            )
        })
        .prop_filter_map("degenerate model", |(b, beta)| {
            let dim = beta.len() + 1;
            let b = DMatrix::from_vec(dim, dim + 2, b);
            let p = EmbeddedProblem::from_covariance(&(&b * b.transpose()), &beta).ok()?;
            (p.model_variance() > 1e-6 && p.z().norm() > 1e-6).then_some(p)
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn embedding_reproduces_covariance(sigma in psd()) {
        let cov = CovarianceMatrix::from_matrix(sigma.clone()).unwrap();
        let scale = inf_norm(&sigma).max(1.0);
        for method in [Decomposition::Auto, Decomposition::Eigen] {
            let a = psd_decompose_with(&cov, method).unwrap();
            let err = inf_norm(&(a.transpose() * &a - &sigma)) / scale;
            prop_assert!(err <= 1e-10, "{method:?}: {err:e}");
        }
    }

    #[test]
    fn cholesky_and_eigen_agree(v in prop::collection::vec(-1.0f64..1.0, 25)) {
        // Shifted to be safely positive definite.
        let b = DMatrix::from_vec(5, 5, v);
        let sigma = &b * b.transpose() + DMatrix::identity(5, 5);
        let cov = CovarianceMatrix::from_matrix(sigma).unwrap();
        let c = psd_decompose_with(&cov, Decomposition::Cholesky).unwrap();
        let e = psd_decompose_with(&cov, Decomposition::Eigen).unwrap();
        let d = inf_norm(&(c.transpose() * &c - e.transpose() * &e));
        prop_assert!(d <= 1e-9, "{d:e}");
    }

    #[test]
    fn association_is_scale_free_and_bounded(
        p in prop::collection::vec(-3.0f64..3.0, 4),
        z in prop::collection::vec(-3.0f64..3.0, 4),
        k in prop_oneof![-10.0f64..-0.1, 0.1f64..10.0],
    ) {
        let p = DVector::from_vec(p);
        let z = DVector::from_vec(z);
        prop_assume!(p.norm() > 1e-3 && z.norm() > 1e-3);
        let a = association(&p, &z).unwrap().unwrap();
        prop_assert!((0.0..=1.0).contains(&a));
        let b = association(&(&p * k), &z).unwrap().unwrap();
        let c = association(&p, &(&z * k)).unwrap().unwrap();
        prop_assert!((a - b).abs() <= 1e-12 && (a - c).abs() <= 1e-12);
    }

    #[test]
    fn influence_is_nonnegative_and_quadratic(
        prob in problem(),
        raw in prop::collection::vec(0.0f64..=1.0, 4),
        k in 0.0f64..=1.0,
    ) {
        let alphas = &raw[..prob.len()];
        let base = influence(alphas, &prob).unwrap();
        prop_assert!(base >= 0.0);
        let scaled: Vec<f64> = alphas.iter().map(|a| a * k).collect();
        let inf = influence(&scaled, &prob).unwrap();
        prop_assert!((inf - k * k * base).abs() <= 1e-9 * base.max(1.0));
        let full = influence(&vec![1.0; prob.len()], &prob).unwrap();
        prop_assert!((full - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn proxy_predicate_is_monotone(
        prob in problem(),
        raw in prop::collection::vec(0.0f64..=1.0, 4),
        eps in 0.01f64..0.99,
        delta in 0.01f64..0.99,
        shrink in 0.0f64..=1.0,
    ) {
        let comp = Component::evaluate(raw[..prob.len()].to_vec(), &prob).unwrap();
        let strict = Thresholds::new(eps, delta).unwrap();
        let loose = Thresholds::new(eps * shrink.max(0.01), delta * shrink.max(0.01)).unwrap();
        if is_proxy(&comp, &strict) {
            prop_assert!(is_proxy(&comp, &loose));
        }
    }

    #[test]
    fn linear_solve_is_feasible_and_beats_samples(
        prob in problem(),
        eps in 0.05f64..0.95,
        samples in prop::collection::vec(prop::collection::vec(0.0f64..=1.0, 4), 20),
    ) {
        for side in Side::BOTH {
            let cone = ConeInstance::new(&prob, eps, side).unwrap();
            let r = solve_linear(&cone, prob.c()).unwrap();
            prop_assert!(cone.is_feasible(&r.alphas));
            let value: f64 = prob.c().iter().zip(&r.alphas).map(|(c, a)| c * a).sum();
            let slack = 1e-8 * value.abs().max(1.0);
            for s in &samples {
                let s = &s[..prob.len()];
                if cone.is_feasible(s) {
                    let v: f64 = prob.c().iter().zip(s).map(|(c, a)| c * a).sum();
                    prop_assert!(v <= value + slack, "{v} > {value}");
                }
            }
        }
    }
}
