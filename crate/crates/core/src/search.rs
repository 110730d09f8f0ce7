//! Proxy detection: exact (norm maximization), approximate (linear bound),
//! exemption-aware search, and threshold sweeps.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::conic::{solve_linear, solve_norm_max, ConeInstance, NormMaxOptions, Side};
use crate::embedding::EmbeddedProblem;
use crate::error::{Error, Result};
use crate::model::{input_association, Component, Thresholds};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    NoProxyUse,
    PotentialProxyUse,
    ProxyFound,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::NoProxyUse => "no-proxy-use",
            Verdict::PotentialProxyUse => "potential-proxy-use",
            Verdict::ProxyFound => "proxy-found",
        }
    }
}

/// Norm maximization (local search) or the linear overapproximation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SearchPath {
    Exact,
    Approx,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SearchMode {
    General,
    Nonexempt,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditFinding {
    pub verdict: Verdict,
    /// The qualifying component, or the unconfirmed candidate for
    /// `potential-proxy-use`. Absent for `no-proxy-use`.
    pub witness: Option<Component>,
    pub side: Option<Side>,
    /// `(cᵀα)² / Var(Ŷ)` of the linear solution (approximate path only).
    pub approx_influence_estimate: Option<f64>,
    pub path: SearchPath,
    pub mode: SearchMode,
    pub note: Option<String>,
}

const EXACT_NOTE: &str = "exact search is a multi-start local method; \
                          a missed global optimum can hide a proxy";

/// Outcome of one cone solve, evaluated.
#[derive(Debug, Clone)]
struct Candidate {
    side: Side,
    component: Component,
    estimate: Option<f64>,
}

fn exact_candidate(
    prob: &EmbeddedProblem,
    epsilon: f64,
    side: Side,
    fixed: &[usize],
    opts: &NormMaxOptions,
) -> Result<Candidate> {
    let inst = ConeInstance::new(prob, epsilon, side)?.with_fixed_zero(fixed)?;
    let res = solve_norm_max(&inst, opts)?;
    Ok(Candidate {
        side,
        component: Component::evaluate(res.alphas, prob)?,
        estimate: None,
    })
}

fn approx_candidate(
    prob: &EmbeddedProblem,
    epsilon: f64,
    side: Side,
    fixed: &[usize],
) -> Result<Candidate> {
    let inst = ConeInstance::new(prob, epsilon, side)?.with_fixed_zero(fixed)?;
    let res = solve_linear(&inst, prob.c())?;
    let value: f64 = res.alphas.iter().zip(prob.c()).map(|(a, c)| a * c).sum();
    let component = Component::evaluate(res.alphas, prob)?;
    Ok(Candidate {
        side,
        // Never below the actual influence, whatever the rounding.
        estimate: Some((value * value / prob.model_variance()).max(component.influence)),
        component,
    })
}

/// Both sides of one search, positive first.
fn candidates(
    prob: &EmbeddedProblem,
    epsilon: f64,
    fixed: &[usize],
    path: SearchPath,
    opts: &NormMaxOptions,
) -> Result<Vec<Candidate>> {
    if epsilon > 1.0 {
        return Ok(Vec::new());
    }
    Side::BOTH
        .par_iter()
        .map(|&side| match path {
            SearchPath::Exact => exact_candidate(prob, epsilon, side, fixed, opts),
            SearchPath::Approx => approx_candidate(prob, epsilon, side, fixed),
        })
        .collect()
}

fn check_problem(prob: &EmbeddedProblem) -> Result<()> {
    if prob.model_variance() <= 0.0 {
        return Err(Error::DegenerateModel);
    }
    Ok(())
}

/// Picks the verdict from evaluated candidates. `th.epsilon` must be the
/// threshold the candidates were solved at.
fn judge(cands: &[Candidate], th: &Thresholds, path: SearchPath, mode: SearchMode) -> AuditFinding {
    let mut finding = AuditFinding {
        verdict: Verdict::NoProxyUse,
        witness: None,
        side: None,
        approx_influence_estimate: None,
        path,
        mode,
        note: (path == SearchPath::Exact).then(|| EXACT_NOTE.to_string()),
    };
    // Strictly better only, so earlier candidates win ties.
    let best_by = |pred: &dyn Fn(&Candidate) -> bool, key: &dyn Fn(&Candidate) -> f64| {
        cands
            .iter()
            .filter(|c| pred(c))
            .fold(None::<&Candidate>, |b, c| match b {
                Some(b) if key(c) <= key(b) => Some(b),
                _ => Some(c),
            })
    };
    if let Some(c) = best_by(&|c| c.component.is_proxy(th), &|c| c.component.influence) {
        finding.verdict = Verdict::ProxyFound;
        finding.witness = Some(c.component.clone());
        finding.side = Some(c.side);
        finding.approx_influence_estimate = c.estimate;
        return finding;
    }
    let estimate = |c: &Candidate| c.estimate.unwrap_or(0.0);
    let qualifies = |c: &Candidate| estimate(c) >= th.delta - th.compare_tolerance;
    if let Some(c) = best_by(&qualifies, &estimate) {
        finding.verdict = Verdict::PotentialProxyUse;
        finding.witness = Some(c.component.clone());
        finding.side = Some(c.side);
        finding.approx_influence_estimate = c.estimate;
        return finding;
    }
    finding.approx_influence_estimate = cands.iter().filter_map(|c| c.estimate).reduce(f64::max);
    finding
}

/// Searches for an `(ε, δ)`-proxy by maximizing component variance on both
/// cone sides. Default solver options.
pub fn detect_exact(prob: &EmbeddedProblem, th: &Thresholds) -> Result<AuditFinding> {
    detect_exact_with(prob, th, &NormMaxOptions::default())
}

pub fn detect_exact_with(
    prob: &EmbeddedProblem,
    th: &Thresholds,
    opts: &NormMaxOptions,
) -> Result<AuditFinding> {
    check_problem(prob)?;
    let th = th.validated()?;
    let cands = candidates(prob, th.epsilon, &[], SearchPath::Exact, opts)?;
    Ok(judge(&cands, &th, SearchPath::Exact, SearchMode::General))
}

/// Bounds the best influence by `(cᵀα)²/Var(Ŷ)` at the linear optimum.
/// `no-proxy-use` is returned only when that bound is below `δ`, so every
/// proxy is reported as found or potential.
pub fn detect_approx(prob: &EmbeddedProblem, th: &Thresholds) -> Result<AuditFinding> {
    check_problem(prob)?;
    let th = th.validated()?;
    let cands = candidates(
        prob,
        th.epsilon,
        &[],
        SearchPath::Approx,
        &NormMaxOptions::default(),
    )?;
    Ok(judge(&cands, &th, SearchPath::Approx, SearchMode::General))
}

/// Search restricted to components with the listed inputs at zero.
pub fn detect_restricted(
    prob: &EmbeddedProblem,
    th: &Thresholds,
    fixed_zero: &[usize],
    path: SearchPath,
    opts: &NormMaxOptions,
) -> Result<AuditFinding> {
    check_problem(prob)?;
    let th = th.validated()?;
    let cands = candidates(prob, th.epsilon, fixed_zero, path, opts)?;
    Ok(judge(&cands, &th, path, SearchMode::General))
}

/// Threshold used for the unconstrained branch of the exemption search,
/// `max(ε, Asc(X_exempt, Z) + ε')`.
pub fn raised_epsilon(prob: &EmbeddedProblem, th: &Thresholds, exempt_index: usize) -> Result<f64> {
    Ok(th
        .epsilon
        .max(input_association(prob, exempt_index)? + th.epsilon_prime))
}

/// One constrained search: threshold and inputs held at zero.
#[derive(Debug, Clone)]
struct Branch {
    epsilon: f64,
    fixed: Vec<usize>,
}

fn branches(
    prob: &EmbeddedProblem,
    th: &Thresholds,
    mode: SweepMode,
) -> Result<(SearchMode, Vec<Branch>)> {
    Ok(match mode {
        SweepMode::General => (
            SearchMode::General,
            vec![Branch {
                epsilon: th.epsilon,
                fixed: vec![],
            }],
        ),
        // The restricted branch comes first so it wins ties.
        SweepMode::Nonexempt { exempt_index } => (
            SearchMode::Nonexempt,
            vec![
                Branch {
                    epsilon: th.epsilon,
                    fixed: vec![exempt_index],
                },
                Branch {
                    epsilon: raised_epsilon(prob, th, exempt_index)?,
                    fixed: vec![],
                },
            ],
        ),
    })
}

/// Judges each branch at its own threshold and keeps the strongest result.
fn combine(
    branches: &[Branch],
    cands: &[Vec<Candidate>],
    th: &Thresholds,
    path: SearchPath,
    mode: SearchMode,
) -> AuditFinding {
    branches
        .iter()
        .zip(cands)
        .map(|(b, c)| {
            let th_b = Thresholds {
                epsilon: b.epsilon.min(1.0),
                ..*th
            };
            judge(c, &th_b, path, mode)
        })
        .reduce(|a, b| stronger(a, b, th.compare_tolerance))
        .expect("at least one branch")
}

/// Searches for proxies that are not excused by the exempt input: either
/// association above `max(ε, Asc(X_exempt, Z) + ε')`, or a proxy that does
/// not use the exempt input at all.
pub fn detect_nonexempt(
    prob: &EmbeddedProblem,
    th: &Thresholds,
    exempt_index: usize,
    path: SearchPath,
) -> Result<AuditFinding> {
    detect_nonexempt_with(prob, th, exempt_index, path, &NormMaxOptions::default())
}

pub fn detect_nonexempt_with(
    prob: &EmbeddedProblem,
    th: &Thresholds,
    exempt_index: usize,
    path: SearchPath,
    opts: &NormMaxOptions,
) -> Result<AuditFinding> {
    check_problem(prob)?;
    let th = th.validated()?;
    let (mode, branches) = branches(prob, &th, SweepMode::Nonexempt { exempt_index })?;
    let cands = branches
        .iter()
        .map(|b| candidates(prob, b.epsilon, &b.fixed, path, opts))
        .collect::<Result<Vec<_>>>()?;
    Ok(combine(&branches, &cands, &th, path, mode))
}

/// The stronger finding; ties within `tol` go to `a`.
fn stronger(a: AuditFinding, b: AuditFinding, tol: f64) -> AuditFinding {
    if b.verdict != a.verdict {
        return if b.verdict > a.verdict { b } else { a };
    }
    let score = |f: &AuditFinding| match f.verdict {
        Verdict::ProxyFound => f.witness.as_ref().map_or(0.0, |w| w.influence),
        _ => f.approx_influence_estimate.unwrap_or(0.0),
    };
    if score(&b) > score(&a) + tol {
        b
    } else {
        a
    }
}

/// Which searches a sweep runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "mode")]
pub enum SweepMode {
    General,
    Nonexempt { exempt_index: usize },
}

/// One association threshold of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub epsilon: f64,
    /// Best influence found by the exact search.
    pub exact_influence: f64,
    /// `(cᵀα)²/Var(Ŷ)` at the linear optimum.
    pub approx_estimate: f64,
    /// Influence of that linear optimum.
    pub approx_actual_influence: f64,
    pub exact_association: Option<f64>,
    pub approx_association: Option<f64>,
}

/// A sweep row with the findings of both search paths at its threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub row: SweepRow,
    pub exact: AuditFinding,
    pub approx: AuditFinding,
}

struct RowSolve {
    branches: Vec<Branch>,
    exact: Vec<Vec<Candidate>>,
    approx: Vec<Vec<Candidate>>,
}

fn max_by_key<'a>(
    cands: impl Iterator<Item = &'a Candidate>,
    key: impl Fn(&Candidate) -> f64,
) -> Option<&'a Candidate> {
    cands.fold(None, |b, c| match b {
        Some(b) if key(c) <= key(b) => Some(b),
        _ => Some(c),
    })
}

fn solve_row(
    prob: &EmbeddedProblem,
    th: &Thresholds,
    mode: SweepMode,
    opts: &NormMaxOptions,
) -> Result<RowSolve> {
    let (_, branches) = branches(prob, th, mode)?;
    let mut exact = Vec::new();
    let mut approx = Vec::new();
    for b in &branches {
        exact.push(candidates(
            prob,
            b.epsilon,
            &b.fixed,
            SearchPath::Exact,
            opts,
        )?);
        approx.push(candidates(
            prob,
            b.epsilon,
            &b.fixed,
            SearchPath::Approx,
            opts,
        )?);
    }
    Ok(RowSolve {
        branches,
        exact,
        approx,
    })
}

/// Exact and approximate searches at each threshold in `epsilons`, with
/// `th.delta` and `th.epsilon_prime`.
pub fn sweep(
    prob: &EmbeddedProblem,
    epsilons: &[f64],
    th: &Thresholds,
    mode: SweepMode,
) -> Result<Vec<SweepRow>> {
    Ok(
        sweep_with(prob, epsilons, th, mode, &NormMaxOptions::default())?
            .into_iter()
            .map(|p| p.row)
            .collect(),
    )
}

/// As [`sweep`], also returning the findings at every threshold. Rows are
/// solved independently and in parallel. A component found at a higher
/// threshold is also feasible at every lower one, so it is offered to the
/// lower rows as an extra candidate; exact influences are therefore
/// non-increasing in `ε`.
pub fn sweep_with(
    prob: &EmbeddedProblem,
    epsilons: &[f64],
    th: &Thresholds,
    mode: SweepMode,
    opts: &NormMaxOptions,
) -> Result<Vec<SweepPoint>> {
    check_problem(prob)?;
    let ths = epsilons
        .iter()
        .map(|&e| th.with_epsilon(e))
        .collect::<Result<Vec<_>>>()?;
    if epsilons.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidThresholds(
            "sweep thresholds must be ascending".into(),
        ));
    }
    if let SweepMode::Nonexempt { exempt_index } = mode {
        input_association(prob, exempt_index)?;
    }
    let search_mode = match mode {
        SweepMode::General => SearchMode::General,
        SweepMode::Nonexempt { .. } => SearchMode::Nonexempt,
    };
    let mut solved = ths
        .par_iter()
        .map(|t| solve_row(prob, t, mode, opts))
        .collect::<Result<Vec<_>>>()?;

    let mut carry: Vec<Option<Candidate>> = Vec::new();
    for row in solved.iter_mut().rev() {
        carry.resize(row.exact.len(), None);
        for (cands, carried) in row.exact.iter_mut().zip(carry.iter_mut()) {
            let best = max_by_key(cands.iter(), |c| c.component.influence).cloned();
            if let Some(c) = carried.take() {
                cands.push(c);
            }
            *carried = match (best, cands.last()) {
                (Some(b), Some(last)) if last.component.influence > b.component.influence => {
                    Some(last.clone())
                }
                (b, _) => b,
            };
        }
    }

    Ok(solved
        .into_iter()
        .zip(&ths)
        .map(|(row, t)| {
            let exact = max_by_key(row.exact.iter().flatten(), |c| c.component.influence);
            let approx = max_by_key(row.approx.iter().flatten(), |c| c.estimate.unwrap_or(0.0));
            SweepPoint {
                row: SweepRow {
                    epsilon: t.epsilon,
                    exact_influence: exact.map_or(0.0, |c| c.component.influence),
                    approx_estimate: approx.and_then(|c| c.estimate).unwrap_or(0.0),
                    approx_actual_influence: approx.map_or(0.0, |c| c.component.influence),
                    exact_association: exact.and_then(|c| c.component.association),
                    approx_association: approx.and_then(|c| c.component.association),
                },
                exact: combine(&row.branches, &row.exact, t, SearchPath::Exact, search_mode),
                approx: combine(
                    &row.branches,
                    &row.approx,
                    t,
                    SearchPath::Approx,
                    search_mode,
                ),
            }
        })
        .collect())
}

#[cfg(test)]
mod tests;
