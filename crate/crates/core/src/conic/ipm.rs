//! Primal–dual interior-point method for
//!
//! ```text
//! minimize   qᵀx
//! subject to 0 ≤ α ≤ 1,  ‖Rα‖ ≤ uᵀα − m
//! ```
//!
//! where `x = α` or `x = (α, m)` (the margin variable `m` is only present in
//! the phase-I problem). In conic form `Gx + s = h` with `s` in the product
//! of `2k` nonnegative rays and one second-order cone. Nesterov–Todd scaling
//! with Mehrotra predictor–corrector steps; the normal equations exploit the
//! box/cone structure so a dense `G` is never formed.

use nalgebra::{DMatrix, DVector};

pub(crate) const MAX_ITERATIONS: usize = 100;
const FEAS_TOL: f64 = 1e-10;
const GAP_TOL: f64 = 1e-10;
const STEP_FRACTION: f64 = 0.99;
const REFINEMENT_STEPS: usize = 10;
/// Relative gap below which Newton systems are solved in augmented form.
const AUGMENTED_SWITCH: f64 = 1e-5;

/// Problem data after reduction and scaling.
#[derive(Debug, Clone)]
pub(crate) struct ConeData {
    /// Scaled cone axis `s·A'ᵀz / (√ε‖z‖)`.
    pub u: DVector<f64>,
    /// Triangular factor with `RᵀR = A'ᵀA'`.
    pub r: DMatrix<f64>,
    /// `A'ᵀA'`.
    pub gram: DMatrix<f64>,
}

impl ConeData {
    pub fn k(&self) -> usize {
        self.u.len()
    }
}

#[derive(Debug, Clone)]
pub(crate) struct IpmSolution {
    pub x: DVector<f64>,
    pub gap: f64,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub iterations: usize,
    pub converged: bool,
    pub objective: f64,
}

/// Slack / dual vector over `[upper box (k), lower box (k), cone (1 + r)]`.
#[derive(Debug, Clone)]
struct Split {
    lp: DVector<f64>,
    soc: DVector<f64>,
}

impl Split {
    fn dot(&self, o: &Split) -> f64 {
        self.lp.dot(&o.lp) + self.soc.dot(&o.soc)
    }

    fn axpy(&mut self, a: f64, o: &Split) {
        self.lp.axpy(a, &o.lp, 1.0);
        self.soc.axpy(a, &o.soc, 1.0);
    }

    fn norm(&self) -> f64 {
        (self.lp.norm_squared() + self.soc.norm_squared()).sqrt()
    }

    fn scaled(&self, a: f64) -> Split {
        Split {
            lp: &self.lp * a,
            soc: &self.soc * a,
        }
    }

    fn add(&self, o: &Split) -> Split {
        Split {
            lp: &self.lp + &o.lp,
            soc: &self.soc + &o.soc,
        }
    }

    fn len(&self) -> usize {
        self.lp.len() + self.soc.len()
    }

    fn flat(&self) -> DVector<f64> {
        DVector::from_iterator(self.len(), self.lp.iter().chain(self.soc.iter()).copied())
    }

    fn unflat(v: &DVector<f64>, like: &Split) -> Split {
        let n = like.lp.len();
        Split {
            lp: v.rows(0, n).into_owned(),
            soc: v.rows(n, like.soc.len()).into_owned(),
        }
    }
}

/// Nesterov–Todd scaling `W` with `W s = W⁻¹ y = λ`.
struct Scaling {
    /// `sqrt(y/s)` on the nonnegative rays.
    d: DVector<f64>,
    beta: f64,
    /// Hyperbolic point `w̄` with `w̄ᵀJw̄ = 1`.
    w: DVector<f64>,
}

/// `v₀² − ‖v̄‖²`, factored to avoid cancellation near the boundary.
fn soc_residual(v: &DVector<f64>) -> f64 {
    let t = v.rows(1, v.len() - 1).norm();
    (v[0] - t) * (v[0] + t)
}

/// `H(w̄) x` for the symmetric hyperbolic rotation with first column `w̄`.
fn hyp_apply(w: &DVector<f64>, x: &DVector<f64>, inverse: bool) -> DVector<f64> {
    let n = x.len();
    let sgn = if inverse { -1.0 } else { 1.0 };
    let w0 = w[0];
    let w1 = w.rows(1, n - 1);
    let x1 = x.rows(1, n - 1);
    let w1x1 = w1.dot(&x1);
    let mut out = DVector::zeros(n);
    out[0] = w0 * x[0] + sgn * w1x1;
    let coef = sgn * x[0] + w1x1 / (1.0 + w0);
    let mut tail = out.rows_mut(1, n - 1);
    tail.copy_from(&x1);
    tail.axpy(coef, &w1, 1.0);
    out
}

impl Scaling {
    fn new(s: &Split, y: &Split) -> Self {
        let d = y.lp.zip_map(&s.lp, |yi, si| (yi / si).sqrt());
        let ns = soc_residual(&s.soc).max(f64::MIN_POSITIVE).sqrt();
        let ny = soc_residual(&y.soc).max(f64::MIN_POSITIVE).sqrt();
        let sb = &s.soc / ns;
        let yb = &y.soc / ny;
        let gamma = ((1.0 + sb.dot(&yb)) / 2.0).sqrt();
        let mut w = DVector::zeros(sb.len());
        w[0] = (yb[0] + sb[0]) / (2.0 * gamma);
        for i in 1..sb.len() {
            w[i] = (yb[i] - sb[i]) / (2.0 * gamma);
        }
        Self {
            d,
            beta: (ny / ns).sqrt(),
            w,
        }
    }

    fn apply(&self, v: &Split) -> Split {
        Split {
            lp: v.lp.component_mul(&self.d),
            soc: hyp_apply(&self.w, &v.soc, false) * self.beta,
        }
    }

    fn apply_inv(&self, v: &Split) -> Split {
        Split {
            lp: v.lp.component_div(&self.d),
            soc: hyp_apply(&self.w, &v.soc, true) / self.beta,
        }
    }

    /// `W⁻²` as a dense matrix.
    fn inverse_squared(&self, like: &Split) -> DMatrix<f64> {
        let n = like.len();
        let mut out = DMatrix::zeros(n, n);
        let mut e = DVector::zeros(n);
        for j in 0..n {
            e[j] = 1.0;
            let col = self.apply_inv(&self.apply_inv(&Split::unflat(&e, like)));
            out.set_column(j, &col.flat());
            e[j] = 0.0;
        }
        out
    }

    /// First column of `H(w̄)² = H(w̄ ∘ w̄)`.
    fn squared_point(&self) -> DVector<f64> {
        hyp_apply(&self.w, &self.w, false)
    }
}

fn jordan(a: &Split, b: &Split) -> Split {
    let n = a.soc.len();
    let mut soc = DVector::zeros(n);
    soc[0] = a.soc.dot(&b.soc);
    for i in 1..n {
        soc[i] = a.soc[0] * b.soc[i] + b.soc[0] * a.soc[i];
    }
    Split {
        lp: a.lp.component_mul(&b.lp),
        soc,
    }
}

/// Solves `λ ∘ x = w` for `x`.
fn jordan_div(lambda: &Split, w: &Split) -> Split {
    let n = lambda.soc.len();
    let l0 = lambda.soc[0];
    let l1 = lambda.soc.rows(1, n - 1);
    let rho = soc_residual(&lambda.soc);
    let x0 = (l0 * w.soc[0] - l1.dot(&w.soc.rows(1, n - 1))) / rho;
    let mut soc = DVector::zeros(n);
    soc[0] = x0;
    for i in 1..n {
        soc[i] = (w.soc[i] - x0 * lambda.soc[i]) / l0;
    }
    Split {
        lp: w.lp.component_div(&lambda.lp),
        soc,
    }
}

fn max_step_lp(x: &DVector<f64>, dx: &DVector<f64>) -> f64 {
    x.iter()
        .zip(dx.iter())
        .filter(|(_, &d)| d < 0.0)
        .map(|(&v, &d)| -v / d)
        .fold(f64::INFINITY, f64::min)
}

/// Largest `t` keeping `x + t·dx` in the second-order cone.
fn max_step_soc(x: &DVector<f64>, dx: &DVector<f64>) -> f64 {
    let n = x.len();
    let a = soc_residual(dx);
    let b = x[0] * dx[0] - x.rows(1, n - 1).dot(&dx.rows(1, n - 1));
    let c = soc_residual(x).max(0.0);
    let mut t = f64::INFINITY;
    if dx[0] < 0.0 {
        t = -x[0] / dx[0];
    }
    if a == 0.0 {
        if b < 0.0 {
            t = t.min(c / (-2.0 * b));
        }
        return t;
    }
    let disc = b * b - a * c;
    if disc < 0.0 {
        return t;
    }
    let sq = disc.sqrt();
    // Stable pair of roots of a t² + 2 b t + c.
    let q = -(b + b.signum() * sq);
    let roots = [q / a, if q != 0.0 { c / q } else { f64::INFINITY }];
    for r in roots {
        if r > 0.0 {
            t = t.min(r);
        }
    }
    t
}

struct Problem<'a> {
    data: &'a ConeData,
    objective: &'a DVector<f64>,
    margin: bool,
}

impl Problem<'_> {
    fn k(&self) -> usize {
        self.data.k()
    }

    fn nvars(&self) -> usize {
        self.k() + usize::from(self.margin)
    }

    fn soc_dim(&self) -> usize {
        1 + self.data.r.nrows()
    }

    /// `q` for minimization.
    fn q(&self) -> DVector<f64> {
        let mut q = DVector::zeros(self.nvars());
        if self.margin {
            q[self.k()] = -1.0;
        } else {
            q.copy_from(&(-self.objective));
        }
        q
    }

    fn h(&self) -> Split {
        let k = self.k();
        let mut lp = DVector::zeros(2 * k);
        lp.rows_mut(0, k).fill(1.0);
        Split {
            lp,
            soc: DVector::zeros(self.soc_dim()),
        }
    }

    fn g(&self, x: &DVector<f64>) -> Split {
        let k = self.k();
        let alpha = x.rows(0, k);
        let mut lp = DVector::zeros(2 * k);
        lp.rows_mut(0, k).copy_from(&alpha);
        lp.rows_mut(k, k).copy_from(&(-alpha));
        let mut soc = DVector::zeros(self.soc_dim());
        soc[0] = -self.data.u.dot(&alpha);
        if self.margin {
            soc[0] += x[k];
        }
        let ra = &self.data.r * alpha;
        soc.rows_mut(1, ra.len()).copy_from(&(-ra));
        Split { lp, soc }
    }

    fn gt(&self, y: &Split) -> DVector<f64> {
        let k = self.k();
        let ys = y.soc.rows(1, y.soc.len() - 1);
        let mut out = DVector::zeros(self.nvars());
        let mut a = out.rows_mut(0, k);
        a.copy_from(&(y.lp.rows(0, k) - y.lp.rows(k, k)));
        a.axpy(-y.soc[0], &self.data.u, 1.0);
        a -= self.data.r.transpose() * ys;
        if self.margin {
            out[k] = y.soc[0];
        }
        out
    }

    /// `G` as a dense matrix.
    fn g_matrix(&self) -> DMatrix<f64> {
        let n = self.nvars();
        let rows = 2 * self.k() + self.soc_dim();
        let mut out = DMatrix::zeros(rows, n);
        let mut e = DVector::zeros(n);
        for j in 0..n {
            e[j] = 1.0;
            out.set_column(j, &self.g(&e).flat());
            e[j] = 0.0;
        }
        out
    }

    /// `Gᵀ W² G`.
    fn normal_matrix(&self, w: &Scaling) -> DMatrix<f64> {
        let k = self.k();
        let n = self.nvars();
        let u = &self.data.u;
        let v = w.squared_point();
        let v0 = v[0];
        let v1 = v.rows(1, v.len() - 1);
        let rv = self.data.r.transpose() * v1;
        let b2 = w.beta * w.beta;
        let mut m = DMatrix::zeros(n, n);
        {
            let mut block = m.view_mut((0, 0), (k, k));
            block.copy_from(&self.data.gram);
            block.ger(v0, u, u, 1.0);
            block.ger(1.0, u, &rv, 1.0);
            block.ger(1.0, &rv, u, 1.0);
            block.ger(1.0 / (1.0 + v0), &rv, &rv, 1.0);
            block *= b2;
            for i in 0..k {
                block[(i, i)] += w.d[i] * w.d[i] + w.d[k + i] * w.d[k + i];
            }
        }
        if self.margin {
            m[(k, k)] = b2 * v0;
            for i in 0..k {
                let c = -b2 * (v0 * u[i] + rv[i]);
                m[(i, k)] = c;
                m[(k, i)] = c;
            }
        }
        m
    }
}

fn solve_spd(m: &DMatrix<f64>, rhs: &DVector<f64>) -> Option<DVector<f64>> {
    if let Some(ch) = m.clone().cholesky() {
        return Some(ch.solve(rhs));
    }
    m.clone().full_piv_lu().solve(rhs)
}

/// Runs the interior-point iteration. With `margin` the phase-I variable `m`
/// is added and maximized instead of `objective`.
///
/// The cheap normal equations are tried first. If they stall, the run is
/// repeated with the augmented system taking over near the optimum.
pub(crate) fn solve(data: &ConeData, objective: &DVector<f64>, margin: bool) -> IpmSolution {
    let first = solve_with(data, objective, margin, 0.0);
    if first.converged {
        return first;
    }
    let second = solve_with(data, objective, margin, AUGMENTED_SWITCH);
    let merit = |c: &IpmSolution| c.primal_residual.max(c.dual_residual).max(c.gap);
    if second.converged || merit(&second) < merit(&first) {
        second
    } else {
        first
    }
}

fn solve_with(
    data: &ConeData,
    objective: &DVector<f64>,
    margin: bool,
    augmented_switch: f64,
) -> IpmSolution {
    let p = Problem {
        data,
        objective,
        margin,
    };
    let k = p.k();
    let q = p.q();
    let h = p.h();
    let h_norm = h.norm().max(1.0);
    let q_norm = q.norm().max(1.0);
    let degree = (2 * k + 1) as f64;

    let mut x = DVector::zeros(p.nvars());
    x.rows_mut(0, k).fill(0.5);
    if margin {
        let a = x.rows(0, k);
        x[k] = data.u.dot(&a) - (&data.r * a).norm() - 1.0;
    }
    let mut s = h.add(&p.g(&x).scaled(-1.0));
    let cone_gap = s.soc[0] - s.soc.rows(1, s.soc.len() - 1).norm();
    if cone_gap < 1.0 {
        s.soc[0] += 1.0 - cone_gap;
    }
    let mut y = Split {
        lp: DVector::from_element(2 * k, 1.0),
        soc: {
            let mut v = DVector::zeros(p.soc_dim());
            v[0] = 1.0;
            v
        },
    };

    let gm = p.g_matrix();
    let nv = p.nvars();
    let mut best: Option<IpmSolution> = None;
    for it in 0..=MAX_ITERATIONS {
        let rp = p.g(&x).add(&s).add(&h.scaled(-1.0));
        let rd = p.gt(&y) + &q;
        let gap = s.dot(&y);
        let pcost = q.dot(&x);
        let dcost = -h.dot(&y);
        let pres = rp.norm() / h_norm;
        let dres = rd.norm() / q_norm;
        let gap_est = gap.max(pcost - dcost).max(0.0);
        let converged =
            pres <= FEAS_TOL && dres <= FEAS_TOL && gap_est <= GAP_TOL * pcost.abs().max(1.0);
        let current = IpmSolution {
            x: x.clone(),
            gap: gap_est,
            primal_residual: pres,
            dual_residual: dres,
            iterations: it,
            converged,
            objective: -pcost,
        };
        let merit = |c: &IpmSolution| {
            let m = c.primal_residual.max(c.dual_residual).max(c.gap);
            if m.is_nan() || c.x.iter().any(|v| !v.is_finite()) {
                f64::INFINITY
            } else {
                m
            }
        };
        if merit(&current) == f64::INFINITY {
            break;
        }
        let better = best.as_ref().is_none_or(|b| merit(&current) <= merit(b));
        if better {
            best = Some(current.clone());
        }
        if converged {
            return current;
        }
        if it == MAX_ITERATIONS {
            break;
        }

        let w = Scaling::new(&s, &y);
        let lambda = w.apply(&s);
        let m = p.normal_matrix(&w);
        let mu = gap / degree;
        // Close to the optimum the normal equations square an already poor
        // conditioning; switch to the augmented system there.
        let kkt = (gap_est <= augmented_switch * pcost.abs().max(1.0)).then(|| {
            let n = nv + gm.nrows();
            let mut k = DMatrix::zeros(n, n);
            k.view_mut((0, nv), (nv, gm.nrows()))
                .copy_from(&gm.transpose());
            k.view_mut((nv, 0), (gm.nrows(), nv)).copy_from(&gm);
            k.view_mut((nv, nv), (gm.nrows(), gm.nrows()))
                .copy_from(&(-w.inverse_squared(&s)));
            let lu = k.clone().full_piv_lu();
            (k, lu)
        });

        let solve_dir = |xi: &Split| -> Option<(DVector<f64>, Split, Split)> {
            let t = rp.add(&w.apply_inv(xi));
            if let Some((k, lu)) = &kkt {
                let mut rhs = DVector::zeros(k.nrows());
                rhs.rows_mut(0, nv).copy_from(&(-&rd));
                rhs.rows_mut(nv, k.nrows() - nv).copy_from(&(-t.flat()));
                let mut sol = lu.solve(&rhs)?;
                for _ in 0..REFINEMENT_STEPS {
                    let err = &rhs - k * &sol;
                    if err.amax() <= f64::EPSILON * rhs.amax() {
                        break;
                    }
                    sol += lu.solve(&err)?;
                }
                if sol.iter().any(|v| !v.is_finite()) {
                    return None;
                }
                let dx = sol.rows(0, nv).into_owned();
                let dy = Split::unflat(&sol.rows(nv, k.nrows() - nv).into_owned(), &s);
                let ds = rp.add(&p.g(&dx)).scaled(-1.0);
                return Some((dx, ds, dy));
            }
            let w2t = w.apply(&w.apply(&t));
            let rhs = -(&rd) - p.gt(&w2t);
            let dx = solve_spd(&m, &rhs)?;
            if dx.iter().any(|v| !v.is_finite()) {
                return None;
            }
            let gdx = p.g(&dx);
            let mut dy = w.apply(&w.apply(&gdx.add(&t)));
            let mut ds = rp.add(&gdx).scaled(-1.0);
            let mut dx = dx;
            // Refine the dual equation: applying W² to large arguments loses
            // digits as the scaling degenerates near the boundary.
            for _ in 0..REFINEMENT_STEPS {
                let err = p.gt(&dy) + &rd;
                if err.amax() <= f64::EPSILON * q_norm {
                    break;
                }
                let ddx = solve_spd(&m, &(-err))?;
                let gddx = p.g(&ddx);
                dx += ddx;
                dy.axpy(1.0, &w.apply(&w.apply(&gddx)));
                ds.axpy(-1.0, &gddx);
            }
            Some((dx, ds, dy))
        };
        let step = |ds: &Split, dy: &Split| -> f64 {
            max_step_lp(&s.lp, &ds.lp)
                .min(max_step_soc(&s.soc, &ds.soc))
                .min(max_step_lp(&y.lp, &dy.lp))
                .min(max_step_soc(&y.soc, &dy.soc))
        };

        let Some((_, ds_a, dy_a)) = solve_dir(&lambda.scaled(-1.0)) else {
            break;
        };
        let alpha_a = step(&ds_a, &dy_a).min(1.0);
        let mut s_a = s.clone();
        s_a.axpy(alpha_a, &ds_a);
        let mut y_a = y.clone();
        y_a.axpy(alpha_a, &dy_a);
        let sigma = (s_a.dot(&y_a) / gap).clamp(0.0, 1.0).powi(3);

        let mut rc = jordan(&lambda, &lambda).scaled(-1.0);
        rc.axpy(-1.0, &jordan(&w.apply(&ds_a), &w.apply_inv(&dy_a)));
        rc.lp.add_scalar_mut(sigma * mu);
        rc.soc[0] += sigma * mu;
        let xi = jordan_div(&lambda, &rc);
        let Some((dx, ds, dy)) = solve_dir(&xi) else {
            break;
        };
        let alpha = (STEP_FRACTION * step(&ds, &dy)).min(1.0);
        // Also stops on a NaN step.
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        if !(alpha > 1e-12) {
            break;
        }
        x.axpy(alpha, &dx, 1.0);
        s.axpy(alpha, &ds);
        y.axpy(alpha, &dy);
    }
    best.expect("at least one iterate")
}
