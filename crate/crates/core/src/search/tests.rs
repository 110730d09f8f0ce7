use nalgebra::DMatrix;

use super::*;
use crate::model::exemption_status;
use crate::model::ExemptionStatus;
use crate::oracle::{grid_has_proxy, grid_has_proxy_restricted, GridSpec};
use crate::testutil::{assert_close, random_problem};

fn problem(dim: usize, entries: &[f64], beta: &[f64]) -> EmbeddedProblem {
    EmbeddedProblem::from_covariance(&DMatrix::from_row_slice(dim, dim, entries), beta).unwrap()
}

fn same_as_protected() -> EmbeddedProblem {
    problem(2, &[1.0, 1.0, 1.0, 1.0], &[1.0])
}

fn strong_first() -> EmbeddedProblem {
    problem(
        3,
        &[1.0, 0.9, 0.0, 0.9, 1.0, 0.0, 0.0, 0.0, 1.0],
        &[1.0, 1.0],
    )
}

/// Var(X1) = 2, Var(X2) = 1, Cov(X1, X2) = -1 and Z = X1 + X2.
fn counterexample() -> EmbeddedProblem {
    problem(
        3,
        &[1.0, 1.0, 0.0, 1.0, 2.0, -1.0, 0.0, -1.0, 1.0],
        &[1.0, 1.0],
    )
}

fn th(eps: f64, delta: f64) -> Thresholds {
    Thresholds::new(eps, delta).unwrap()
}

fn check_finding(f: &AuditFinding, th: &Thresholds) {
    match f.verdict {
        Verdict::ProxyFound => assert!(f.witness.as_ref().unwrap().is_proxy(th)),
        Verdict::NoProxyUse => assert!(f.witness.is_none()),
        Verdict::PotentialProxyUse => assert!(f.witness.is_some()),
    }
    if let (Some(w), Some(e)) = (&f.witness, f.approx_influence_estimate) {
        assert!(e >= w.influence);
    }
}

#[test]
fn model_equal_to_protected_is_a_proxy() {
    let prob = same_as_protected();
    let t = th(1.0, 1.0);
    for f in [
        detect_exact(&prob, &t).unwrap(),
        detect_approx(&prob, &t).unwrap(),
    ] {
        check_finding(&f, &t);
        assert_eq!(f.verdict, Verdict::ProxyFound);
        assert_close(f.witness.unwrap().alphas[0], 1.0, 1e-8);
        assert_eq!(f.side, Some(Side::Positive));
    }
}

#[test]
fn unreachable_association_gives_no_proxy() {
    let prob = strong_first();
    let t = th(0.9, 0.05);
    let f = detect_exact(&prob, &t).unwrap();
    assert_eq!(f.verdict, Verdict::NoProxyUse);
    assert!(f.witness.is_none());
    assert!(!grid_has_proxy(&prob, &t, &GridSpec::default()).unwrap());
    let f = detect_approx(&prob, &t).unwrap();
    assert_eq!(f.verdict, Verdict::NoProxyUse);
}

#[test]
fn strong_input_is_found() {
    let prob = strong_first();
    let t = th(0.5, 0.4);
    let f = detect_exact(&prob, &t).unwrap();
    check_finding(&f, &t);
    assert_eq!(f.verdict, Verdict::ProxyFound);
    let w = f.witness.unwrap();
    assert!(w.influence >= 0.5 - 1e-6);
    assert!(w.association.unwrap() >= 0.5 - 1e-8);
    assert!(grid_has_proxy(&prob, &t, &GridSpec::default()).unwrap());
    let f = detect_approx(&prob, &t).unwrap();
    check_finding(&f, &t);
    assert_eq!(f.verdict, Verdict::ProxyFound);
}

#[test]
fn orthogonal_protected_has_no_proxy() {
    let prob = problem(
        3,
        &[1.0, 0.0, 0.0, 0.0, 1.0, 0.4, 0.0, 0.4, 1.0],
        &[1.0, -0.5],
    );
    for eps in [0.01, 0.3, 1.0] {
        let f = detect_approx(&prob, &th(eps, 0.05)).unwrap();
        assert_eq!(f.verdict, Verdict::NoProxyUse);
    }
}

#[test]
fn exempt_strong_input_is_excused() {
    let prob = strong_first();
    let t = th(0.5, 0.05).with_epsilon_prime(0.05).unwrap();
    assert_close(raised_epsilon(&prob, &t, 0).unwrap(), 0.86, 1e-9);
    for path in [SearchPath::Exact, SearchPath::Approx] {
        let f = detect_nonexempt(&prob, &t, 0, path).unwrap();
        assert_eq!(f.verdict, Verdict::NoProxyUse, "{path:?}");
        assert_eq!(f.mode, SearchMode::Nonexempt);
    }
}

#[test]
fn counterexample_is_nonexempt() {
    let prob = counterexample();
    let t = th(0.5, 0.5).with_epsilon_prime(0.1).unwrap();
    assert_close(input_association(&prob, 0).unwrap(), 0.5, 1e-12);
    for path in [SearchPath::Exact, SearchPath::Approx] {
        let f = detect_nonexempt(&prob, &t, 0, path).unwrap();
        check_finding(&f, &t);
        assert_eq!(f.verdict, Verdict::ProxyFound, "{path:?}");
        let w = f.witness.unwrap();
        assert!(w.association.unwrap() >= 0.6 - 1e-9);
        assert_eq!(
            exemption_status(&w, &prob, &t, 0).unwrap(),
            ExemptionStatus::Nonexempt
        );
    }
}

#[test]
fn zero_coefficient_exemption_changes_nothing() {
    for seed in 0..10 {
        let base = random_problem(500 + seed, 3);
        let prob = base.without_input(1).unwrap();
        let t = th(0.3, 0.1);
        for path in [SearchPath::Exact, SearchPath::Approx] {
            let plain = match path {
                SearchPath::Exact => detect_exact(&prob, &t).unwrap(),
                SearchPath::Approx => detect_approx(&prob, &t).unwrap(),
            };
            let exempt = detect_nonexempt(&prob, &t, 1, path).unwrap();
            assert_eq!(plain.verdict, exempt.verdict, "seed {seed} {path:?}");
            assert_eq!(plain.witness, exempt.witness, "seed {seed} {path:?}");
        }
    }
}

#[test]
fn thresholds_and_indices_validated() {
    let prob = strong_first();
    let bad = Thresholds {
        epsilon: 0.0,
        ..th(0.5, 0.5)
    };
    assert!(detect_exact(&prob, &bad).is_err());
    assert!(detect_nonexempt(&prob, &th(0.5, 0.5), 7, SearchPath::Approx).is_err());
    assert!(sweep(&prob, &[0.2, 0.1], &th(0.5, 0.5), SweepMode::General).is_err());
}

#[test]
fn sweep_shape() {
    let prob = strong_first();
    let eps = [0.1, 0.3, 0.5, 0.7, 0.81, 0.85, 0.95];
    let rows = sweep(&prob, &eps, &th(0.5, 0.05), SweepMode::General).unwrap();
    assert_eq!(rows.len(), eps.len());
    for w in rows.windows(2) {
        assert!(w[1].exact_influence <= w[0].exact_influence);
    }
    for r in &rows {
        assert!(r.approx_estimate >= r.approx_actual_influence);
        assert!(r.approx_actual_influence >= 0.0);
    }
    let last = rows.last().unwrap();
    assert_eq!(last.exact_influence, 0.0);
    assert_eq!(last.approx_estimate, 0.0);
    assert_eq!(last.approx_actual_influence, 0.0);
}

#[test]
fn sweep_is_monotone_on_random_instances() {
    let eps = [0.05, 0.1, 0.2, 0.3, 0.5, 0.7, 0.9];
    for seed in 0..10 {
        let prob = random_problem(700 + seed, 4);
        let rows = sweep(
            &prob,
            &eps,
            &th(0.5, 0.05),
            SweepMode::Nonexempt { exempt_index: 0 },
        )
        .unwrap();
        for w in rows.windows(2) {
            assert!(w[1].exact_influence <= w[0].exact_influence, "seed {seed}");
        }
    }
}

#[test]
fn approx_is_sound_against_oracle() {
    let spec = GridSpec::default();
    for seed in 0..40 {
        let n = 2 + seed as usize % 3;
        let prob = random_problem(seed, n);
        let t = th(
            [0.1, 0.3, 0.5, 0.8][seed as usize % 4],
            [0.05, 0.2, 0.5][seed as usize % 3],
        );
        let f = detect_approx(&prob, &t).unwrap();
        check_finding(&f, &t);
        if grid_has_proxy(&prob, &t, &spec).unwrap() {
            assert_ne!(f.verdict, Verdict::NoProxyUse, "seed {seed}");
        }
    }
}

#[test]
fn restricted_search_matches_oracle() {
    let spec = GridSpec::default();
    for seed in 0..20 {
        let prob = random_problem(300 + seed, 3);
        let t = th(0.2, 0.1);
        let f = detect_restricted(
            &prob,
            &t,
            &[0],
            SearchPath::Exact,
            &NormMaxOptions::default(),
        )
        .unwrap();
        if let Some(w) = &f.witness {
            assert_eq!(w.alphas[0], 0.0);
        }
        let oracle = grid_has_proxy_restricted(&prob, &t, &spec, &[0]).unwrap();
        if oracle {
            assert_eq!(f.verdict, Verdict::ProxyFound, "seed {seed}");
        }
    }
}

#[test]
fn finding_round_trips_through_json() {
    let prob = strong_first();
    let f = detect_approx(&prob, &th(0.5, 0.4)).unwrap();
    let text = serde_json::to_string(&f).unwrap();
    assert!(text.contains("\"proxy-found\""));
    let back: AuditFinding = serde_json::from_str(&text).unwrap();
    assert_eq!(back, f);
}
