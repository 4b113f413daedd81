//! Least-distance projection solved inside every controller cycle.
//!
//! Finds the step `w` closest to the negative composite gradient `-g` such
//! that the actuator box holds exactly and the linearized output rows hold up
//! to quadratically penalized slack:
//!
//! ```text
//!     minimize     ‖w + g‖² + ρ‖s‖²
//!     subject to   lb ≤ w ≤ ub
//!                  lo_k − s_k ≤ a_kᵀ w ≤ hi_k + s_k,   s_k ≥ 0
//! ```
//!
//! The solver is a primal active-set method started from a trivially feasible
//! point. Because the Hessian is diagonal and positive definite the minimizer
//! is unique.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub const DEFAULT_RHO: f64 = 1e6;
pub const SLACK_TOLERANCE: f64 = 1e-9;
pub const KKT_TOLERANCE: f64 = 1e-6;

/// One linearized output constraint `lower ≤ coeffs·w ≤ upper`.
/// Missing bounds are simply absent; present bounds must be finite.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputRow {
    pub coeffs: Vec<f64>,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LeastDistanceProblem {
    /// Composite gradient `H(u)ᵀ∇Φ`.
    pub g: Vec<f64>,
    pub alpha: f64,
    /// Bounds on `w` derived from the actuator box, already divided by alpha.
    pub input_lower: Vec<f64>,
    pub input_upper: Vec<f64>,
    /// Rows of `α∇h` with residual bounds relative to the current measurement.
    pub rows: Vec<OutputRow>,
    pub rho: f64,
}

impl LeastDistanceProblem {
    /// Box-only problem with the default penalty.
    pub fn boxed(g: Vec<f64>, alpha: f64, lower: Vec<f64>, upper: Vec<f64>) -> Self {
        Self {
            g,
            alpha,
            input_lower: lower,
            input_upper: upper,
            rows: Vec::new(),
            rho: DEFAULT_RHO,
        }
    }

    pub fn dim(&self) -> usize {
        self.g.len()
    }

    fn check(&self) -> Result<()> {
        let p = self.dim();
        for (context, len) in [
            ("input lower bound", self.input_lower.len()),
            ("input upper bound", self.input_upper.len()),
        ] {
            if len != p {
                return Err(Error::Dimension {
                    context,
                    expected: p,
                    actual: len,
                });
            }
        }
        for row in &self.rows {
            if row.coeffs.len() != p {
                return Err(Error::Dimension {
                    context: "output row",
                    expected: p,
                    actual: row.coeffs.len(),
                });
            }
            let finite = row.lower.is_none_or(f64::is_finite) && row.upper.is_none_or(f64::is_finite);
            if !finite {
                return Err(Error::Precondition("output row bounds must be finite".into()));
            }
        }
        let bad_box = self
            .input_lower
            .iter()
            .zip(&self.input_upper)
            .any(|(l, u)| !(l.is_finite() && u.is_finite() && l <= u));
        if bad_box {
            return Err(Error::Precondition("input box must be finite and ordered".into()));
        }
        if !(self.rho > 0.0) {
            return Err(Error::Precondition("penalty rho must be positive".into()));
        }
        Ok(())
    }

    /// Minimal row violation of `w`, signed: positive above the upper bound,
    /// negative below the lower bound.
    pub fn row_violation(&self, k: usize, w: &[f64]) -> f64 {
        let row = &self.rows[k];
        let v = dot(&row.coeffs, w);
        match (row.lower, row.upper) {
            (_, Some(hi)) if v > hi => v - hi,
            (Some(lo), _) if v < lo => v - lo,
            _ => 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    Optimal,
    OptimalWithSlack,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpResult {
    pub w: Vec<f64>,
    /// Slack per output row.
    pub slack: Vec<f64>,
    pub kkt_residual: f64,
    pub status: QpStatus,
    pub iterations: usize,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Sparse-ish constraint `coeffᵀx ≤ rhs` over the stacked variable (w, s).
#[derive(Debug, Clone)]
struct Constraint {
    terms: Vec<(usize, f64)>,
    rhs: f64,
}

impl Constraint {
    fn eval(&self, x: &[f64]) -> f64 {
        self.terms.iter().map(|&(i, c)| c * x[i]).sum()
    }
}

fn build_constraints(problem: &LeastDistanceProblem) -> Vec<Constraint> {
    let p = problem.dim();
    let mut cons = Vec::with_capacity(2 * p + 3 * problem.rows.len());
    for j in 0..p {
        cons.push(Constraint {
            terms: vec![(j, 1.0)],
            rhs: problem.input_upper[j],
        });
        cons.push(Constraint {
            terms: vec![(j, -1.0)],
            rhs: -problem.input_lower[j],
        });
    }
    for (k, row) in problem.rows.iter().enumerate() {
        let s = p + k;
        let nz: Vec<(usize, f64)> = row
            .coeffs
            .iter()
            .enumerate()
            .filter(|(_, c)| **c != 0.0)
            .map(|(j, &c)| (j, c))
            .collect();
        if let Some(hi) = row.upper {
            let mut terms = nz.clone();
            terms.push((s, -1.0));
            cons.push(Constraint { terms, rhs: hi });
        }
        if let Some(lo) = row.lower {
            let mut terms: Vec<(usize, f64)> = nz.iter().map(|&(j, c)| (j, -c)).collect();
            terms.push((s, -1.0));
            cons.push(Constraint { terms, rhs: -lo });
        }
        cons.push(Constraint {
            terms: vec![(s, -1.0)],
            rhs: 0.0,
        });
    }
    cons
}

pub fn solve_least_distance(problem: &LeastDistanceProblem) -> Result<QpResult> {
    problem.check()?;
    let p = problem.dim();
    let r = problem.rows.len();
    let nx = p + r;

    // ½xᵀGx + cᵀx with G = diag(2, …, 2ρ, …), c = (2g, 0).
    let hess: Vec<f64> = (0..nx)
        .map(|i| if i < p { 2.0 } else { 2.0 * problem.rho })
        .collect();
    let lin: Vec<f64> = (0..nx)
        .map(|i| if i < p { 2.0 * problem.g[i] } else { 0.0 })
        .collect();
    let cons = build_constraints(problem);

    let mut x = vec![0.0; nx];
    for (xj, (lo, hi)) in x.iter_mut().zip(problem.input_lower.iter().zip(&problem.input_upper)) {
        *xj = 0.0f64.clamp(*lo, *hi);
    }
    for k in 0..r {
        x[p + k] = problem.row_violation(k, &x[..p]).abs();
    }

    let mut working: Vec<usize> = Vec::new();
    let max_iter = 50 * (nx + cons.len()).max(10);
    let mut iterations = 0;
    loop {
        if iterations >= max_iter {
            return Err(Error::QpIterationLimit(max_iter));
        }
        iterations += 1;

        let grad: Vec<f64> = (0..nx).map(|i| hess[i] * x[i] + lin[i]).collect();
        let (step, lambda) = equality_step(&hess, &grad, &cons, &working)?;
        let scale = 1.0 + x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let step_norm = step.iter().fold(0.0f64, |m, v| m.max(v.abs()));

        if step_norm <= 1e-13 * scale {
            // Stationary on the working set: check multiplier signs.
            let worst = lambda
                .iter()
                .enumerate()
                .filter(|(_, l)| **l < -1e-12)
                .min_by(|a, b| a.1.total_cmp(b.1));
            match worst {
                None => break,
                Some((pos, _)) => {
                    working.remove(pos);
                    continue;
                }
            }
        }

        let mut t = 1.0;
        let mut blocking = None;
        for (i, c) in cons.iter().enumerate() {
            if working.contains(&i) {
                continue;
            }
            let slope = c.eval(&step);
            if slope > 1e-14 {
                let room = (c.rhs - c.eval(&x)).max(0.0);
                let ti = room / slope;
                if ti < t {
                    t = ti;
                    blocking = Some(i);
                }
            }
        }
        for (xi, si) in x.iter_mut().zip(&step) {
            *xi += t * si;
        }
        if let Some(i) = blocking {
            working.push(i);
        }
    }

    let w: Vec<f64> = x[..p]
        .iter()
        .zip(problem.input_lower.iter().zip(&problem.input_upper))
        .map(|(v, (lo, hi))| v.clamp(*lo, *hi))
        .collect();
    let slack: Vec<f64> = (0..r).map(|k| problem.row_violation(k, &w).abs()).collect();
    let status = if slack.iter().any(|&s| s > SLACK_TOLERANCE) {
        QpStatus::OptimalWithSlack
    } else {
        QpStatus::Optimal
    };
    let mut result = QpResult {
        w,
        slack,
        kkt_residual: 0.0,
        status,
        iterations,
    };
    result.kkt_residual = kkt_check(problem, &result);
    Ok(result)
}

/// Solves the equality-constrained subproblem on the working set:
/// `min ½dᵀGd + gradᵀd  s.t.  A_W d = 0`, returning the step and the multipliers.
fn equality_step(
    hess: &[f64],
    grad: &[f64],
    cons: &[Constraint],
    working: &[usize],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let nx = hess.len();
    let m = working.len();
    let dim = nx + m;
    let mut kkt = DMatrix::zeros(dim, dim);
    let mut rhs = DVector::zeros(dim);
    for i in 0..nx {
        kkt[(i, i)] = hess[i];
        rhs[i] = -grad[i];
    }
    for (row, &ci) in working.iter().enumerate() {
        for &(j, c) in &cons[ci].terms {
            kkt[(nx + row, j)] = c;
            kkt[(j, nx + row)] = c;
        }
    }
    let sol = kkt
        .clone()
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Precondition("degenerate working set in QP".into()))?;
    // One step of iterative refinement against the stiff penalty scaling.
    let resid = &rhs - &kkt * &sol;
    let sol = match kkt.lu().solve(&resid) {
        Some(corr) => sol + corr,
        None => sol,
    };
    let step = sol.rows(0, nx).iter().copied().collect();
    let lambda = sol.rows(nx, m).iter().copied().collect();
    Ok((step, lambda))
}

/// Optimality residual of the softened problem.
///
/// With the slack minimized out analytically the problem becomes
/// `min F(w) = ‖w+g‖² + ρ Σ viol_k(w)²` over the box, a convex C¹ problem. The
/// residual is the natural projected-gradient residual
/// `‖w − clip(w − ∇F(w))‖∞`, plus any box infeasibility. It vanishes exactly at
/// the optimum and covers stationarity and complementary slackness together.
pub fn kkt_check(problem: &LeastDistanceProblem, result: &QpResult) -> f64 {
    let w = &result.w;
    let p = problem.dim();
    if w.len() != p {
        return f64::INFINITY;
    }
    let mut grad: Vec<f64> = w.iter().zip(&problem.g).map(|(wi, gi)| 2.0 * (wi + gi)).collect();
    for (k, row) in problem.rows.iter().enumerate() {
        let v = problem.row_violation(k, w);
        if v != 0.0 {
            for (gj, aj) in grad.iter_mut().zip(&row.coeffs) {
                *gj += 2.0 * problem.rho * v * aj;
            }
        }
    }
    let mut residual = 0.0f64;
    for j in 0..p {
        let (lb, ub) = (problem.input_lower[j], problem.input_upper[j]);
        let infeasible = (lb - w[j]).max(w[j] - ub).max(0.0);
        let projected = (w[j] - grad[j]).clamp(lb, ub);
        residual = residual.max(infeasible).max((w[j] - projected).abs());
    }
    residual
}
