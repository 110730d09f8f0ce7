//! Exhaustive grid search over the component space, used to certify the
//! solvers on small models.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedding::EmbeddedProblem;
use crate::error::{Error, Result};
use crate::model::{Component, Thresholds};

/// Upper bound on grid evaluations per query.
pub const MAX_EVALUATIONS: f64 = 1e8;

/// Grid `{0, h, 2h, .., 1}ⁿ` with `h = 1/round(1/resolution)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub resolution: f64,
    pub max_inputs: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            resolution: 0.02,
            max_inputs: 4,
        }
    }
}

impl GridSpec {
    pub fn with_resolution(resolution: f64) -> Self {
        Self {
            resolution,
            ..Self::default()
        }
    }

    /// Intervals per axis.
    pub fn intervals(&self) -> usize {
        (1.0 / self.resolution).round() as usize
    }

    /// Actual step, `1 / intervals`.
    pub fn step(&self) -> f64 {
        1.0 / self.intervals() as f64
    }

    fn check(&self, n: usize) -> Result<()> {
        if !(self.resolution > 0.0 && self.resolution <= 0.5) {
            return Err(Error::InvalidGrid(format!(
                "resolution {} not in (0, 0.5]",
                self.resolution
            )));
        }
        if n > self.max_inputs {
            return Err(Error::GridTooLarge {
                max: self.max_inputs,
                got: n,
            });
        }
        let evals = ((self.intervals() + 1) as f64).powi(n as i32);
        if evals > MAX_EVALUATIONS {
            return Err(Error::InvalidGrid(format!(
                "{evals:.0} grid points exceed the limit of {MAX_EVALUATIONS:.0}"
            )));
        }
        Ok(())
    }
}

/// Best grid component for one association threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridAnswer {
    pub component: Component,
    /// Bound on how far the grid optimum of `‖A'α‖` can fall short of the
    /// true optimum, `L·h/2` with `L = maxᵢ cᵢ·√n`.
    pub norm_miss_bound: f64,
}

/// Lipschitz constant of `α ↦ ‖A'α‖` over the box, `maxᵢ cᵢ · √n`.
pub fn lipschitz_bound(prob: &EmbeddedProblem) -> f64 {
    let cmax = prob.c().iter().cloned().fold(0.0, f64::max);
    cmax * (prob.len() as f64).sqrt()
}

/// Per-threshold best `(influence, grid index)`.
type Best = Vec<Option<(f64, usize)>>;

fn merge(mut a: Best, b: Best) -> Best {
    for (x, y) in a.iter_mut().zip(b) {
        if let Some((vy, iy)) = y {
            // Larger influence wins, then the lower grid index.
            let replace = match *x {
                None => true,
                Some((vx, ix)) => vy > vx || (vy == vx && iy < ix),
            };
            if replace {
                *x = Some((vy, iy));
            }
        }
    }
    a
}

fn decode(mut index: usize, n: usize, points: usize, step: f64, out: &mut [f64]) {
    for a in out.iter_mut().take(n) {
        *a = (index % points) as f64 * step;
        index /= points;
    }
}

/// Best grid component for each of `epsilons` in one pass, with inputs in
/// `fixed_zero` held at 0. Association comparisons use `tolerance`.
pub fn grid_best_multi(
    prob: &EmbeddedProblem,
    epsilons: &[f64],
    spec: &GridSpec,
    fixed_zero: &[usize],
    tolerance: f64,
) -> Result<Vec<Option<GridAnswer>>> {
    let n = prob.len();
    spec.check(n)?;
    if let Some(&i) = fixed_zero.iter().find(|&&i| i >= n) {
        return Err(Error::IndexOutOfRange { index: i, len: n });
    }
    let var = prob.model_variance();
    if var <= 0.0 {
        return Err(Error::DegenerateModel);
    }
    let points = spec.intervals() + 1;
    let step = spec.step();
    let free: Vec<usize> = (0..n).filter(|i| !fixed_zero.contains(i)).collect();
    let total = points.pow(free.len() as u32);
    let a = prob.columns();
    let z = prob.z();
    let zz = z.norm_squared();
    let dim = z.len();
    let chunk = points.max(64);

    let best = (0..total.div_ceil(chunk))
        .into_par_iter()
        .map(|c| {
            let mut best: Best = vec![None; epsilons.len()];
            let mut coords = vec![0.0; free.len()];
            let mut p = vec![0.0; dim];
            for idx in c * chunk..((c + 1) * chunk).min(total) {
                decode(idx, free.len(), points, step, &mut coords);
                p.iter_mut().for_each(|v| *v = 0.0);
                for (&alpha, &col) in coords.iter().zip(&free) {
                    if alpha != 0.0 {
                        for (r, v) in p.iter_mut().enumerate() {
                            *v += alpha * a[(r, col)];
                        }
                    }
                }
                let pp: f64 = p.iter().map(|v| v * v).sum();
                if pp == 0.0 {
                    continue;
                }
                let pz: f64 = p.iter().zip(z.iter()).map(|(x, y)| x * y).sum();
                let asc = (pz * pz / (pp * zz)).min(1.0);
                let inf = pp / var;
                for (b, &eps) in best.iter_mut().zip(epsilons) {
                    if asc >= eps - tolerance && b.is_none_or(|(v, _)| inf > v) {
                        *b = Some((inf, idx));
                    }
                }
            }
            best
        })
        .reduce(|| vec![None; epsilons.len()], merge);

    let bound = lipschitz_bound(prob) * step / 2.0;
    best.into_iter()
        .map(|b| {
            b.map(|(_, idx)| {
                let mut coords = vec![0.0; free.len()];
                decode(idx, free.len(), points, step, &mut coords);
                let mut alphas = vec![0.0; n];
                for (&v, &i) in coords.iter().zip(&free) {
                    alphas[i] = v;
                }
                Ok(GridAnswer {
                    component: Component::evaluate(alphas, prob)?,
                    norm_miss_bound: bound,
                })
            })
            .transpose()
        })
        .collect()
}

/// Highest-influence grid component with association at least `epsilon`.
pub fn grid_best(
    prob: &EmbeddedProblem,
    epsilon: f64,
    spec: &GridSpec,
) -> Result<Option<GridAnswer>> {
    Ok(grid_best_multi(prob, &[epsilon], spec, &[], 0.0)?.remove(0))
}

/// Whether some grid component is an `(ε, δ)`-proxy.
pub fn grid_has_proxy(prob: &EmbeddedProblem, th: &Thresholds, spec: &GridSpec) -> Result<bool> {
    grid_has_proxy_restricted(prob, th, spec, &[])
}

/// As [`grid_has_proxy`], searching only components with the listed inputs
/// held at zero.
pub fn grid_has_proxy_restricted(
    prob: &EmbeddedProblem,
    th: &Thresholds,
    spec: &GridSpec,
    fixed_zero: &[usize],
) -> Result<bool> {
    let best = grid_best_multi(prob, &[th.epsilon], spec, fixed_zero, th.compare_tolerance)?;
    Ok(best[0].as_ref().is_some_and(|g| g.component.is_proxy(th)))
}
