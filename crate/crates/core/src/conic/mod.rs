//! Optimization over the components whose association with the protected
//! attribute reaches a threshold:
//!
//! ```text
//! { α : 0 ≤ α ≤ 1,  ‖A'α‖ ≤ s · zᵀA'α / (√ε ‖z‖) }
//! ```
//!
//! Linear objectives are solved to optimality by the interior-point method in
//! [`ipm`]. Maximizing `‖A'α‖²` is nonconvex; [`solve_norm_max`] runs
//! successive linearizations from several starts, each step being a linear
//! solve over the same set.

mod ipm;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedding::EmbeddedProblem;
use crate::error::{Error, Result};

/// Columns with `cᵢ ≤ ZERO_COLUMN · max c` are treated as exact zeros.
const ZERO_COLUMN: f64 = 1e-12;
/// Phase-I margins at or below this (in normalized units) mean the cone
/// meets the box only on its boundary.
const MARGIN_TOLERANCE: f64 = 1e-11;
/// Relative widening of the cone used when it has no interior in the box.
const CONE_RELAXATION: f64 = 5e-10;
/// Required duality gap, relative to `max(1, |objective|)`.
pub const GAP_CONTRACT: f64 = 1e-8;
/// Allowed cone violation, relative to `max(1, ‖A'‖)`.
pub const CONE_CONTRACT: f64 = 1e-8;
/// Allowed box violation.
pub const BOX_CONTRACT: f64 = 1e-9;

/// Which nappe of the association cone: positive or negative correlation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "i8", try_from = "i8")]
pub enum Side {
    Positive,
    Negative,
}

impl Side {
    pub const BOTH: [Side; 2] = [Side::Positive, Side::Negative];

    pub fn sign(self) -> f64 {
        match self {
            Side::Positive => 1.0,
            Side::Negative => -1.0,
        }
    }
}

impl From<Side> for i8 {
    fn from(s: Side) -> i8 {
        match s {
            Side::Positive => 1,
            Side::Negative => -1,
        }
    }
}

impl TryFrom<i8> for Side {
    type Error = String;
    fn try_from(v: i8) -> std::result::Result<Self, String> {
        match v {
            1 => Ok(Side::Positive),
            -1 => Ok(Side::Negative),
            _ => Err(format!("side must be 1 or -1, got {v}")),
        }
    }
}

/// One cone-constrained search: the embedded model, the association
/// threshold, the cone side, and inputs forced to `αᵢ = 0`.
#[derive(Debug, Clone)]
pub struct ConeInstance<'a> {
    problem: &'a EmbeddedProblem,
    epsilon: f64,
    side: Side,
    fixed_zero: Vec<usize>,
}

impl<'a> ConeInstance<'a> {
    pub fn new(problem: &'a EmbeddedProblem, epsilon: f64, side: Side) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon <= 1.0) {
            return Err(Error::InvalidThresholds(format!(
                "epsilon {epsilon} not in (0, 1]"
            )));
        }
        if problem.z().norm_squared() == 0.0 {
            return Err(Error::ConstantProtected);
        }
        Ok(Self {
            problem,
            epsilon,
            side,
            fixed_zero: Vec::new(),
        })
    }

    pub fn with_fixed_zero(mut self, indices: &[usize]) -> Result<Self> {
        for &i in indices {
            if i >= self.problem.len() {
                return Err(Error::IndexOutOfRange {
                    index: i,
                    len: self.problem.len(),
                });
            }
            if !self.fixed_zero.contains(&i) {
                self.fixed_zero.push(i);
            }
        }
        Ok(self)
    }

    pub fn problem(&self) -> &EmbeddedProblem {
        self.problem
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn side(&self) -> Side {
        self.side
    }

    pub fn fixed_zero(&self) -> &[usize] {
        &self.fixed_zero
    }

    /// `max(0, ‖A'α‖ − s·zᵀA'α / (√ε‖z‖))`.
    pub fn cone_violation(&self, alphas: &[f64]) -> f64 {
        let p = self.problem.component_vector(alphas);
        let z = self.problem.z();
        let rhs = self.side.sign() * z.dot(&p) / (self.epsilon.sqrt() * z.norm());
        (p.norm() - rhs).max(0.0)
    }

    /// Largest distance of any `αᵢ` outside `[0, 1]`, or any fixed `αᵢ` from 0.
    pub fn box_violation(&self, alphas: &[f64]) -> f64 {
        let b = alphas
            .iter()
            .map(|&a| (-a).max(a - 1.0).max(0.0))
            .fold(0.0, f64::max);
        self.fixed_zero
            .iter()
            .map(|&i| alphas[i].abs())
            .fold(b, f64::max)
    }

    pub fn cone_tolerance(&self) -> f64 {
        CONE_CONTRACT * self.problem.columns().norm().max(1.0)
    }

    pub fn is_feasible(&self, alphas: &[f64]) -> bool {
        self.box_violation(alphas) <= BOX_CONTRACT
            && self.cone_violation(alphas) <= self.cone_tolerance()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolveStatus {
    /// Convex solve finished within the gap contract.
    Optimal,
    /// Local search stopped at a stationary point.
    Stationary,
    /// Only components with `A'α = 0` are feasible.
    Trivial,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Residuals {
    pub box_violation: f64,
    pub cone_violation: f64,
    /// Only for linear objectives.
    pub duality_gap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveResult {
    pub alphas: Vec<f64>,
    pub objective_value: f64,
    pub status: SolveStatus,
    pub residuals: Residuals,
    /// Interior-point iterations (linear) or linearization steps (norm).
    pub iterations: usize,
}

/// The feasible set reduced to active inputs, normalized, and checked for an
/// interior point. Reused across linear solves on the same instance.
struct PreparedCone<'a> {
    inst: &'a ConeInstance<'a>,
    /// Inputs that enter the cone constraint.
    active: Vec<usize>,
    /// Inputs with zero columns that are free in the box.
    free: Vec<usize>,
    data: Option<ipm::ConeData>,
    /// Strictly feasible point (active coordinates) and its margin.
    interior: Option<(DVector<f64>, f64)>,
}

impl<'a> PreparedCone<'a> {
    fn new(inst: &'a ConeInstance<'a>) -> Self {
        let prob = inst.problem;
        let cmax = prob.c().iter().cloned().fold(0.0, f64::max);
        let (mut active, mut free) = (Vec::new(), Vec::new());
        for i in 0..prob.len() {
            if inst.fixed_zero.contains(&i) {
                continue;
            }
            if cmax > 0.0 && prob.c()[i] > ZERO_COLUMN * cmax {
                active.push(i);
            } else {
                free.push(i);
            }
        }
        let mut prepared = Self {
            inst,
            active,
            free,
            data: None,
            interior: None,
        };
        if prepared.active.is_empty() {
            return prepared;
        }
        let scale = prepared
            .active
            .iter()
            .map(|&i| prob.c()[i])
            .fold(0.0, f64::max);
        let sub = DMatrix::from_fn(prob.z().len(), prepared.active.len(), |r, j| {
            prob.columns()[(r, prepared.active[j])] / scale
        });
        let zhat = prob.z() / prob.z().norm();
        let qr = sub.qr();
        let (q, r) = (qr.q(), qr.r());
        // The cone axis Aᵀẑ lies in the row space of R, so the constraint
        // ‖Rα‖ ≤ vᵀRα with v = s·Qᵀẑ/√ε has a redundant direction. Rotating
        // v onto the first axis leaves the equivalent, smaller cone
        // ‖P⊥Rα‖ ≤ √(‖v‖² − 1)·v̂ᵀRα.
        let v0 = q.transpose() * zhat * inst.side.sign();
        let rot = rotation_to_first_axis(&v0);
        let rr = &rot * &r;
        let head = rr.row(0).transpose();
        let tail = rr.rows(1, rr.nrows() - 1).into_owned();
        let gram = tail.transpose() * &tail;

        for eps in [inst.epsilon, inst.epsilon * (1.0 - CONE_RELAXATION)] {
            let width2 = v0.norm_squared() / eps - 1.0;
            if width2 <= 0.0 {
                continue;
            }
            let data = ipm::ConeData {
                u: &head * width2.sqrt(),
                r: tail.clone(),
                gram: gram.clone(),
            };
            let zero = DVector::zeros(data.k());
            let sol = ipm::solve(&data, &zero, true);
            let k = data.k();
            let margin = sol.x[k];
            if margin > MARGIN_TOLERANCE {
                let point = sol.x.rows(0, k).map(|a| a.clamp(0.0, 1.0));
                let m = data.u.dot(&point) - (&data.r * &point).norm();
                if m > MARGIN_TOLERANCE {
                    prepared.interior = Some((point, m));
                    prepared.data = Some(data);
                    break;
                }
            }
        }
        prepared
    }

    fn is_trivial(&self) -> bool {
        self.data.is_none()
    }

    fn assemble(&self, active_alphas: Option<&DVector<f64>>, objective: &[f64]) -> Vec<f64> {
        let mut alphas = vec![0.0; self.inst.problem.len()];
        if let Some(a) = active_alphas {
            for (j, &i) in self.active.iter().enumerate() {
                alphas[i] = a[j];
            }
        }
        for &i in &self.free {
            if objective[i] > 0.0 {
                alphas[i] = 1.0;
            }
        }
        alphas
    }

    fn finish(
        &self,
        alphas: Vec<f64>,
        objective: &[f64],
        status: SolveStatus,
        gap: Option<f64>,
        iterations: usize,
    ) -> SolveResult {
        let value = alphas.iter().zip(objective).map(|(a, o)| a * o).sum();
        SolveResult {
            residuals: Residuals {
                box_violation: self.inst.box_violation(&alphas),
                cone_violation: self.inst.cone_violation(&alphas),
                duality_gap: gap,
            },
            alphas,
            objective_value: value,
            status,
            iterations,
        }
    }

    fn maximize(&self, objective: &[f64]) -> Result<SolveResult> {
        if objective.len() != self.inst.problem.len() || objective.iter().any(|v| !v.is_finite()) {
            return Err(Error::DimensionMismatch(format!(
                "objective must hold {} finite values",
                self.inst.problem.len()
            )));
        }
        let (Some(data), Some((interior, margin))) = (&self.data, &self.interior) else {
            let alphas = self.assemble(None, objective);
            return Ok(self.finish(alphas, objective, SolveStatus::Trivial, Some(0.0), 0));
        };
        let obj =
            DVector::from_iterator(self.active.len(), self.active.iter().map(|&i| objective[i]));
        let obj_scale = obj.amax();
        if obj_scale == 0.0 {
            let alphas = self.assemble(None, objective);
            return Ok(self.finish(alphas, objective, SolveStatus::Optimal, Some(0.0), 0));
        }
        let sol = ipm::solve(data, &(&obj / obj_scale), false);
        let gap = sol.gap * obj_scale;
        let value = sol.objective * obj_scale;
        let residual = sol.primal_residual.max(sol.dual_residual);
        let mut point = sol.x.map(|a| a.clamp(0.0, 1.0));
        // Pull a slightly infeasible iterate toward the interior point.
        let violation = (&data.r * &point).norm() - data.u.dot(&point);
        if violation > 0.0 {
            let theta = violation / (violation + margin);
            point = point * (1.0 - theta) + interior * theta;
        }
        let alphas = self.assemble(Some(&point), objective);
        if !(sol.converged
            || (gap <= GAP_CONTRACT * value.abs().max(1.0) && residual <= GAP_CONTRACT))
        {
            return Err(Error::NonConvergence {
                iterations: sol.iterations,
                gap,
                residual,
                best_alphas: alphas,
            });
        }
        Ok(self.finish(
            alphas,
            objective,
            SolveStatus::Optimal,
            Some(gap),
            sol.iterations,
        ))
    }
}

/// Orthogonal `H` with `H v = ‖v‖ e₁` (identity for `v = 0`).
fn rotation_to_first_axis(v: &DVector<f64>) -> DMatrix<f64> {
    let n = v.len();
    let norm = v.norm();
    let mut h = DMatrix::identity(n, n);
    if norm == 0.0 {
        return h;
    }
    // Householder reflection; the sign choice avoids cancellation.
    let mut w = v.clone();
    let alpha = if v[0] >= 0.0 { -norm } else { norm };
    w[0] -= alpha;
    let ww = w.norm_squared();
    if ww > 0.0 {
        h -= (&w * w.transpose()) * (2.0 / ww);
    }
    if alpha < 0.0 {
        h *= -1.0;
    }
    h
}

/// Maximizes `objectiveᵀα` over the feasible set.
pub fn solve_linear(inst: &ConeInstance, objective: &[f64]) -> Result<SolveResult> {
    PreparedCone::new(inst).maximize(objective)
}

/// Largest extrapolation factor used by the ascent.
const MAX_REACH: f64 = 64.0;

/// Settings for [`solve_norm_max`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]

pub struct NormMaxOptions {
    pub seed: u64,
    pub random_starts: usize,
    pub max_iterations: usize,
    /// Stop when the relative objective improvement falls below this.
    pub tolerance: f64,
}

impl Default for NormMaxOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            random_starts: 8,
            max_iterations: 100,
            tolerance: 1e-8,
        }
    }
}

struct Ascent {
    alphas: Vec<f64>,
    value: f64,
    steps: usize,
}

fn norm_sq(prob: &EmbeddedProblem, alphas: &[f64]) -> f64 {
    prob.component_vector(alphas).norm_squared()
}

/// Successive linearization from `start`: each step maximizes
/// `2(A'αₖ)ᵀA'α` over the feasible set, which never decreases `‖A'α‖²`.
/// When the iterates crawl along a curved boundary the gradient is taken
/// at a point extrapolated past `αₖ`; a step that fails to improve is
/// retried with the plain gradient, so the value stays monotone.
fn ascend(
    prepared: &PreparedCone,
    start: &[f64],
    start_feasible: bool,
    opts: &NormMaxOptions,
) -> Result<Option<Ascent>> {
    let prob = prepared.inst.problem;
    let gram = prob.columns().transpose() * prob.columns();
    let mut current: Option<Ascent> = start_feasible.then(|| Ascent {
        alphas: start.to_vec(),
        value: norm_sq(prob, start),
        steps: 0,
    });
    let mut point = DVector::from_column_slice(start);
    let mut previous: Option<DVector<f64>> = None;
    let mut reach = 0.0;
    for step in 1..=opts.max_iterations {
        let query = match &previous {
            Some(prev) if reach > 0.0 => &point + (&point - prev) * reach,
            _ => point.clone(),
        };
        let grad = (&gram * query) * 2.0;
        if grad.amax() == 0.0 {
            break;
        }
        let next = match prepared.maximize(grad.as_slice()) {
            Ok(r) => r.alphas,
            Err(e) if current.is_none() => return Err(e),
            Err(_) if reach > 0.0 => {
                reach = 0.0;
                continue;
            }
            Err(_) => break,
        };
        let value = norm_sq(prob, &next);
        let prev = current.as_ref().map(|c| c.value);
        let improved = prev.is_none_or(|p| value > p);
        if improved {
            current = Some(Ascent {
                alphas: next.clone(),
                value,
                steps: step,
            });
        }
        let stalled = prev.is_some_and(|p| value - p <= opts.tolerance * p.max(f64::MIN_POSITIVE));
        if stalled && reach == 0.0 {
            break;
        }
        if stalled {
            // Overshot: retry from the same point with the plain gradient.
            reach = 0.0;
            continue;
        }
        reach = if reach == 0.0 {
            1.0
        } else {
            (2.0 * reach).min(MAX_REACH)
        };
        previous = Some(std::mem::replace(&mut point, DVector::from_vec(next)));
    }
    Ok(current)
}

/// Heuristically maximizes `‖A'α‖²` over the feasible set. The result is
/// feasible and at least as good as every feasible start, but global
/// optimality is not guaranteed.
pub fn solve_norm_max(inst: &ConeInstance, opts: &NormMaxOptions) -> Result<SolveResult> {
    let prob = inst.problem;
    let n = prob.len();
    let prepared = PreparedCone::new(inst);
    let zeros = vec![0.0; n];
    if prepared.is_trivial() {
        return Ok(prepared.finish(zeros.clone(), &zeros, SolveStatus::Trivial, None, 0));
    }

    let mut starts: Vec<(Vec<f64>, bool)> = Vec::new();
    for &i in &prepared.active {
        let mut e = zeros.clone();
        e[i] = 1.0;
        starts.push((e, false));
    }
    let mut ones = zeros.clone();
    for &i in &prepared.active {
        ones[i] = 1.0;
    }
    starts.push((ones, false));
    starts.push((prepared.maximize(prob.c())?.alphas, true));
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    for _ in 0..opts.random_starts {
        let dir: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        starts.push((prepared.maximize(&dir)?.alphas, true));
    }
    for (start, feasible) in starts.iter_mut() {
        // Inputs outside the cone constraint do not change the objective.
        for &i in &prepared.free {
            start[i] = 0.0;
        }
        if !*feasible {
            *feasible = inst.is_feasible(start);
        }
    }

    let outcomes: Vec<Result<Option<Ascent>>> = starts
        .par_iter()
        .map(|(start, feasible)| ascend(&prepared, start, *feasible, opts))
        .collect();
    let mut best: Option<Ascent> = None;
    let mut first_err = None;
    let mut steps = 0;
    for outcome in outcomes {
        match outcome {
            Ok(Some(a)) => {
                steps += a.steps;
                if best.as_ref().is_none_or(|b| a.value > b.value) {
                    best = Some(a);
                }
            }
            Ok(None) => {}
            Err(e) => {
                first_err.get_or_insert(e);
            }
        }
    }
    let Some(best) = best else {
        return Err(first_err.unwrap_or(Error::NonConvergence {
            iterations: 0,
            gap: f64::NAN,
            residual: f64::NAN,
            best_alphas: zeros,
        }));
    };
    let status = if best.value > 0.0 {
        SolveStatus::Stationary
    } else {
        SolveStatus::Trivial
    };
    let mut result = prepared.finish(best.alphas, &zeros, status, None, steps);
    result.objective_value = best.value;
    Ok(result)
}

#[cfg(test)]
mod tests;
