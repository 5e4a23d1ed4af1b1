//! Method of moving asymptotes for `min f(x)` subject to `g_j(x) <= 0` and
//! `0 <= x <= 1`, and the continuation driver that solves a sequence of such
//! problems with warm starts.
//!
//! Each outer iteration replaces `f` and `g_j` by convex separable
//! approximations built around the current point, with asymptotes
//! `L < x < U` that widen while the iterates move monotonically and tighten
//! when they oscillate. The subproblem is solved through its concave dual,
//! maximised with a log-barrier Newton method.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Asymptote and subproblem settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MmaParams {
    pub s_init: f64,
    pub s_incr: f64,
    pub s_decr: f64,
    /// Outer iteration cap per subproblem.
    pub max_iters: usize,
    /// Largest change of a variable in one iteration.
    pub move_limit: f64,
    /// Required KKT accuracy of the convex subproblem.
    pub dual_tol: f64,
    /// Multiplier scale above which the KKT residual is deflated.
    pub s_max: f64,
    /// Smallest allowed distance between an iterate and its asymptotes.
    pub asym_min: f64,
    /// Largest allowed distance between an iterate and its asymptotes.
    pub asym_max: f64,
}

impl Default for MmaParams {
    fn default() -> Self {
        Self {
            s_init: 0.5,
            s_incr: 1.1,
            s_decr: 0.7,
            max_iters: 1000,
            move_limit: 0.5,
            dual_tol: 1e-8,
            s_max: 100.0,
            asym_min: 1e-5,
            asym_max: 1.0,
        }
    }
}

impl MmaParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.s_init > 0.0) {
            return Err(Error::Parameter(format!(
                "s_init must be positive, got {}",
                self.s_init
            )));
        }
        if !(0.0 < self.s_decr && self.s_decr < 1.0 && 1.0 < self.s_incr) {
            return Err(Error::Parameter(format!(
                "need 0 < s_decr < 1 < s_incr, got s_decr = {}, s_incr = {}",
                self.s_decr, self.s_incr
            )));
        }
        if !(self.move_limit > 0.0)
            || !(self.dual_tol > 0.0)
            || !(self.s_max > 0.0)
            || !(self.asym_min > 0.0 && self.asym_min < self.s_init && self.s_init <= self.asym_max)
        {
            return Err(Error::Parameter(
                "move limit, dual tolerance, s_max and asym_min must be positive, asym_min < s_init <= asym_max"
                    .into(),
            ));
        }
        Ok(())
    }
}

/// Function values and gradients at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub objective: f64,
    pub gradient: Vec<f64>,
    /// Constraint values `g_j(x)`; feasible when `<= 0`.
    pub constraints: Vec<f64>,
    pub constraint_gradients: Vec<Vec<f64>>,
}

/// A box-constrained problem on `[0, 1]^n`.
pub trait Problem {
    fn n_vars(&self) -> usize;
    fn n_constraints(&self) -> usize;
    fn evaluate(&mut self, x: &[f64]) -> Result<Evaluation>;
}

/// `||grad_L||_inf / s_d` with `s_d = max(s_max, mean |multiplier|) / s_max`.
pub fn kkt_residual_scaled(grad_lagrangian: &[f64], multipliers: &[f64], s_max: f64) -> f64 {
    let mean_abs = if multipliers.is_empty() {
        0.0
    } else {
        multipliers.iter().map(|m| m.abs()).sum::<f64>() / multipliers.len() as f64
    };
    let s_d = s_max.max(mean_abs) / s_max;
    grad_lagrangian.iter().fold(0.0f64, |a, g| a.max(g.abs())) / s_d
}

/// Scaled first-order optimality error of `x` for the scaled objective.
///
/// The box is handled through the projected gradient
/// `x - clamp(x - grad_L, 0, 1)`; the part of `grad_L` removed by the
/// projection counts as bound multipliers.
fn optimality_error(
    x: &[f64],
    eval: &Evaluation,
    obj_scale: f64,
    lambda: &[f64],
    s_max: f64,
) -> f64 {
    let n = x.len();
    let mut projected = Vec::with_capacity(n);
    let mut multipliers: Vec<f64> = lambda.to_vec();
    for e in 0..n {
        let mut gl = eval.gradient[e] * obj_scale;
        for (j, l) in lambda.iter().enumerate() {
            gl += l * eval.constraint_gradients[j][e];
        }
        let r = x[e] - (x[e] - gl).clamp(0.0, 1.0);
        multipliers.push((gl - r).abs());
        projected.push(r);
    }
    let s_d = {
        let mean =
            multipliers.iter().map(|m| m.abs()).sum::<f64>() / multipliers.len().max(1) as f64;
        s_max.max(mean) / s_max
    };
    let dual = kkt_residual_scaled(&projected, &multipliers, s_max);
    let primal = eval.constraints.iter().fold(0.0f64, |a, &g| a.max(g));
    let comp = eval
        .constraints
        .iter()
        .zip(lambda)
        .fold(0.0f64, |a, (g, l)| a.max((g * l).abs()))
        / s_d;
    dual.max(primal).max(comp)
}

/// One outer iteration of a solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Unscaled objective at the iterate.
    pub objective: f64,
    pub max_constraint: f64,
    pub kkt: f64,
    /// `max |x_k - x_{k-1}|`.
    pub step: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MmaResult {
    pub x: Vec<f64>,
    pub objective: f64,
    pub multipliers: Vec<f64>,
    pub converged: bool,
    /// Number of problem evaluations performed.
    pub evaluations: usize,
    pub history: Vec<IterationRecord>,
    /// Asymptotes `(lower, upper)` used at each iteration, for inspection.
    #[serde(skip)]
    pub asymptotes: Vec<(Vec<f64>, Vec<f64>)>,
}

/// Convex separable approximation around one iterate.
struct Subproblem {
    low: Vec<f64>,
    upp: Vec<f64>,
    alpha: Vec<f64>,
    beta: Vec<f64>,
    p0: Vec<f64>,
    q0: Vec<f64>,
    /// `m x n`, row-major by constraint.
    p: Vec<Vec<f64>>,
    q: Vec<Vec<f64>>,
    b: Vec<f64>,
}

impl Subproblem {
    fn m(&self) -> usize {
        self.b.len()
    }

    fn coefficients(&self, i: usize, lambda: &[f64]) -> (f64, f64) {
        let mut pl = self.p0[i];
        let mut ql = self.q0[i];
        for (j, l) in lambda.iter().enumerate() {
            pl += l * self.p[j][i];
            ql += l * self.q[j][i];
        }
        (pl, ql)
    }

    /// Minimiser of the Lagrangian over the box for fixed multipliers.
    fn primal(&self, lambda: &[f64]) -> Vec<f64> {
        (0..self.low.len())
            .map(|i| {
                let (pl, ql) = self.coefficients(i, lambda);
                let (sp, sq) = (pl.sqrt(), ql.sqrt());
                let x = (sp * self.low[i] + sq * self.upp[i]) / (sp + sq);
                x.clamp(self.alpha[i], self.beta[i])
            })
            .collect()
    }

    fn objective_at(&self, x: &[f64]) -> f64 {
        (0..x.len())
            .map(|i| self.p0[i] / (self.upp[i] - x[i]) + self.q0[i] / (x[i] - self.low[i]))
            .sum()
    }

    /// Approximated constraint values `g~_j(x)`.
    fn constraints_at(&self, x: &[f64]) -> Vec<f64> {
        (0..self.m())
            .map(|j| {
                (0..x.len())
                    .map(|i| {
                        self.p[j][i] / (self.upp[i] - x[i]) + self.q[j][i] / (x[i] - self.low[i])
                    })
                    .sum::<f64>()
                    - self.b[j]
            })
            .collect()
    }

    fn dual_value(&self, lambda: &[f64], x: &[f64]) -> f64 {
        let g = self.constraints_at(x);
        self.objective_at(x) + lambda.iter().zip(&g).map(|(l, g)| l * g).sum::<f64>()
    }

    /// Dual Hessian (negative semidefinite) at `lambda` with primal `x`.
    fn dual_hessian(&self, lambda: &[f64], x: &[f64]) -> DMatrix<f64> {
        let m = self.m();
        let mut h = DMatrix::zeros(m, m);
        for i in 0..x.len() {
            if x[i] <= self.alpha[i] || x[i] >= self.beta[i] {
                continue;
            }
            let (pl, ql) = self.coefficients(i, lambda);
            let (u, l) = (self.upp[i] - x[i], x[i] - self.low[i]);
            let curvature = 2.0 * pl / (u * u * u) + 2.0 * ql / (l * l * l);
            let psi: Vec<f64> = (0..m)
                .map(|j| self.p[j][i] / (u * u) - self.q[j][i] / (l * l))
                .collect();
            for a in 0..m {
                for c in 0..m {
                    h[(a, c)] -= psi[a] * psi[c] / curvature;
                }
            }
        }
        h
    }

    fn kkt_error(&self, lambda: &[f64], g: &[f64]) -> f64 {
        lambda
            .iter()
            .zip(g)
            .fold(0.0f64, |a, (l, g)| a.max(g.max(0.0)).max((l * g).abs()))
    }

    /// One constraint: `g~(x(lambda))` is continuous and non-increasing in
    /// `lambda`, so its root is bracketed and bisected.
    fn solve_single(
        &self,
        dual_tol: f64,
    ) -> std::result::Result<(Vec<f64>, Vec<f64>, f64), String> {
        let g_at = |l: f64| {
            let x = self.primal(&[l]);
            let g = self.constraints_at(&x)[0];
            (x, g)
        };
        let (x0, g0) = g_at(0.0);
        if g0 <= 0.0 {
            return Ok((x0, vec![0.0], 0.0));
        }
        let (mut lo, mut hi) = (0.0, 1.0);
        let (mut x_hi, mut g_hi) = g_at(hi);
        while g_hi > 0.0 {
            lo = hi;
            hi *= 2.0;
            if hi > 1e15 {
                return Err("dual multipliers diverged; subproblem is infeasible".into());
            }
            (x_hi, g_hi) = g_at(hi);
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            let (x, g) = g_at(mid);
            if g > 0.0 {
                lo = mid;
            } else {
                (hi, x_hi, g_hi) = (mid, x, g);
            }
            if hi * g_hi.abs() <= 1e-3 * dual_tol {
                break;
            }
        }
        let err = self.kkt_error(&[hi], &[g_hi]);
        if !(err <= dual_tol) {
            return Err(format!(
                "subproblem KKT error {err:.3e} above {dual_tol:.1e}"
            ));
        }
        Ok((x_hi, vec![hi], err))
    }

    /// Maximises the dual over `lambda >= 0`; returns the primal point, the
    /// multipliers and the subproblem KKT error.
    fn solve(&self, dual_tol: f64) -> std::result::Result<(Vec<f64>, Vec<f64>, f64), String> {
        let m = self.m();
        if m == 0 {
            return Ok((self.primal(&[]), Vec::new(), 0.0));
        }
        if m == 1 {
            return self.solve_single(dual_tol);
        }
        let mut lambda = vec![1.0; m];
        let mut mu = 1.0;
        let barrier = |lam: &[f64], x: &[f64], mu: f64| {
            self.dual_value(lam, x) + mu * lam.iter().map(|l| l.ln()).sum::<f64>()
        };
        let mu_final = dual_tol * 1e-3;
        for _ in 0..200 {
            for _ in 0..100 {
                let x = self.primal(&lambda);
                let g = self.constraints_at(&x);
                let grad: Vec<f64> = (0..m).map(|j| g[j] + mu / lambda[j]).collect();
                let gnorm = grad.iter().fold(0.0f64, |a, v| a.max(v.abs()));
                if gnorm <= 1e-2 * mu {
                    break;
                }
                let mut hess = self.dual_hessian(&lambda, &x);
                for j in 0..m {
                    hess[(j, j)] -= mu / (lambda[j] * lambda[j]);
                }
                let rhs = DVector::from_iterator(m, grad.iter().map(|g| -g));
                let dir = match (-&hess).cholesky() {
                    Some(ch) => -ch.solve(&rhs),
                    None => return Err("dual Hessian is not negative definite".into()),
                };
                // stay strictly inside lambda > 0
                let mut t: f64 = 1.0;
                for j in 0..m {
                    if dir[j] < 0.0 {
                        t = t.min(-0.99 * lambda[j] / dir[j]);
                    }
                }
                let phi0 = barrier(&lambda, &x, mu);
                let slope: f64 = (0..m).map(|j| grad[j] * dir[j]).sum();
                let mut accepted = false;
                for _ in 0..60 {
                    let trial: Vec<f64> = (0..m).map(|j| lambda[j] + t * dir[j]).collect();
                    let xt = self.primal(&trial);
                    if barrier(&trial, &xt, mu) >= phi0 + 1e-4 * t * slope {
                        lambda = trial;
                        accepted = true;
                        break;
                    }
                    t *= 0.5;
                }
                if !accepted {
                    break;
                }
                if lambda.iter().any(|l| !(l.is_finite()) || *l > 1e15) {
                    return Err("dual multipliers diverged; subproblem is infeasible".into());
                }
            }
            if mu <= mu_final {
                break;
            }
            mu = (mu * 0.1).max(mu_final);
        }
        let x = self.primal(&lambda);
        let g = self.constraints_at(&x);
        let err = self.kkt_error(&lambda, &g);
        if !(err <= dual_tol) {
            return Err(format!(
                "subproblem KKT error {err:.3e} above {dual_tol:.1e}"
            ));
        }
        Ok((x, lambda, err))
    }
}

fn build_subproblem(
    x: &[f64],
    low: &[f64],
    upp: &[f64],
    eval: &Evaluation,
    obj_scale: f64,
    move_limit: f64,
) -> Subproblem {
    const ALBEFA: f64 = 0.1;
    const RAA0: f64 = 1e-5;
    let n = x.len();
    let m = eval.constraints.len();
    let mut sub = Subproblem {
        low: low.to_vec(),
        upp: upp.to_vec(),
        alpha: vec![0.0; n],
        beta: vec![0.0; n],
        p0: vec![0.0; n],
        q0: vec![0.0; n],
        p: vec![vec![0.0; n]; m],
        q: vec![vec![0.0; n]; m],
        b: vec![0.0; m],
    };
    for i in 0..n {
        sub.alpha[i] = 0f64
            .max(low[i] + ALBEFA * (x[i] - low[i]))
            .max(x[i] - move_limit);
        sub.beta[i] = 1f64
            .min(upp[i] - ALBEFA * (upp[i] - x[i]))
            .min(x[i] + move_limit);
        let ux2 = (upp[i] - x[i]).powi(2);
        let xl2 = (x[i] - low[i]).powi(2);
        let df = eval.gradient[i] * obj_scale;
        sub.p0[i] = (1.001 * df.max(0.0) + 0.001 * (-df).max(0.0) + RAA0) * ux2;
        sub.q0[i] = (0.001 * df.max(0.0) + 1.001 * (-df).max(0.0) + RAA0) * xl2;
        for j in 0..m {
            let dg = eval.constraint_gradients[j][i];
            sub.p[j][i] = dg.max(0.0) * ux2;
            sub.q[j][i] = (-dg).max(0.0) * xl2;
        }
    }
    for j in 0..m {
        sub.b[j] = (0..n)
            .map(|i| sub.p[j][i] / (upp[i] - x[i]) + sub.q[j][i] / (x[i] - low[i]))
            .sum::<f64>()
            - eval.constraints[j];
    }
    sub
}

fn check_evaluation(eval: &Evaluation, n: usize, m: usize) -> Result<()> {
    let ok = eval.gradient.len() == n
        && eval.constraints.len() == m
        && eval.constraint_gradients.len() == m
        && eval.constraint_gradients.iter().all(|g| g.len() == n);
    if !ok {
        return Err(Error::Dimension(
            "evaluation does not match the problem size".into(),
        ));
    }
    if !eval.objective.is_finite() || eval.gradient.iter().any(|g| !g.is_finite()) {
        return Err(Error::Parameter(
            "objective or gradient is not finite".into(),
        ));
    }
    Ok(())
}

/// Runs MMA from `x0` until the scaled KKT error drops to `tol` or
/// `params.max_iters` subproblems have been solved.
///
/// The objective is divided by `|f(x0)|`; constraints are used unscaled.
pub fn mma_solve<P: Problem + ?Sized>(
    problem: &mut P,
    x0: &[f64],
    params: &MmaParams,
    tol: f64,
) -> Result<MmaResult> {
    params.validate()?;
    let n = problem.n_vars();
    let m = problem.n_constraints();
    if x0.len() != n {
        return Err(Error::Dimension(format!(
            "x0 has {} entries, problem has {n}",
            x0.len()
        )));
    }
    if x0.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::Parameter("x0 must lie in [0, 1]".into()));
    }

    let mut x = x0.to_vec();
    let mut eval = problem.evaluate(&x)?;
    check_evaluation(&eval, n, m)?;
    let obj_scale = if eval.objective.abs() > 0.0 {
        1.0 / eval.objective.abs()
    } else {
        1.0
    };

    let mut lambda = vec![0.0; m];
    let mut prev: Option<Vec<f64>> = None;
    let mut prev2: Option<Vec<f64>> = None;
    let mut low = vec![0.0; n];
    let mut upp = vec![1.0; n];
    let mut history = Vec::new();
    let mut asymptotes = Vec::new();
    let mut evaluations = 1;
    let mut converged = false;
    let mut step = 0.0;

    for iteration in 0.. {
        let kkt = optimality_error(&x, &eval, obj_scale, &lambda, params.s_max);
        history.push(IterationRecord {
            iteration,
            objective: eval.objective,
            max_constraint: eval
                .constraints
                .iter()
                .cloned()
                .fold(f64::NEG_INFINITY, f64::max),
            kkt,
            step,
        });
        if kkt <= tol {
            converged = true;
            break;
        }
        if iteration >= params.max_iters {
            break;
        }

        match (&prev, &prev2) {
            (Some(x1), Some(x2)) => {
                for i in 0..n {
                    let trend = (x[i] - x1[i]) * (x1[i] - x2[i]);
                    let gamma = if trend > 0.0 {
                        params.s_incr
                    } else if trend < 0.0 {
                        params.s_decr
                    } else {
                        1.0
                    };
                    low[i] = x[i] - gamma * (x1[i] - low[i]);
                    upp[i] = x[i] + gamma * (upp[i] - x1[i]);
                    low[i] = low[i].clamp(x[i] - params.asym_max, x[i] - params.asym_min);
                    upp[i] = upp[i].clamp(x[i] + params.asym_min, x[i] + params.asym_max);
                }
            }
            _ => {
                for i in 0..n {
                    low[i] = x[i] - params.s_init;
                    upp[i] = x[i] + params.s_init;
                }
            }
        }
        asymptotes.push((low.clone(), upp.clone()));

        let sub = build_subproblem(&x, &low, &upp, &eval, obj_scale, params.move_limit);
        let (x_new, lam, _) = sub
            .solve(params.dual_tol)
            .map_err(|message| Error::Optimizer {
                iteration,
                message,
                snapshot: x.clone(),
            })?;

        step = x_new
            .iter()
            .zip(&x)
            .fold(0.0f64, |a, (u, v)| a.max((u - v).abs()));
        prev2 = prev.take();
        prev = Some(std::mem::replace(&mut x, x_new));
        lambda = lam;
        eval = problem.evaluate(&x)?;
        check_evaluation(&eval, n, m)?;
        evaluations += 1;
    }

    Ok(MmaResult {
        objective: eval.objective,
        x,
        multipliers: lambda,
        converged,
        evaluations,
        history,
        asymptotes,
    })
}

/// One `(p, beta)` subproblem of a continuation run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stage {
    pub penalty: f64,
    pub beta: f64,
    pub tol: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuationSchedule {
    pub stages: Vec<Stage>,
}

/// Ranges describing a two-phase continuation: penalty first at `beta = 0`,
/// then projection at the final penalty.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScheduleSpec {
    pub penalty_start: f64,
    pub penalty_end: f64,
    pub penalty_step: f64,
    pub beta_start: f64,
    pub beta_end: f64,
    pub beta_step: f64,
    pub tol_start: f64,
    pub tol_end: f64,
}

impl Default for ScheduleSpec {
    fn default() -> Self {
        Self {
            penalty_start: 1.0,
            penalty_end: 6.0,
            penalty_step: 0.5,
            beta_start: 0.0,
            beta_end: 20.0,
            beta_step: 4.0,
            tol_start: 1e-3,
            tol_end: 1e-4,
        }
    }
}

fn inclusive_range(start: f64, end: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0) || end < start {
        return Err(Error::Parameter(format!(
            "invalid continuation range {start}..={end} step {step}"
        )));
    }
    let count = ((end - start) / step + 1e-9).floor() as usize + 1;
    Ok((0..count).map(|k| start + k as f64 * step).collect())
}

impl ContinuationSchedule {
    /// `p = 1, 1.5, .., 6` then `beta = 0, 4, .., 20` at `p = 6`, with one
    /// geometric tolerance sequence from `1e-3` to `1e-4` across all stages.
    pub fn standard() -> Self {
        Self::from_spec(&ScheduleSpec::default()).expect("default schedule is valid")
    }

    pub fn single(penalty: f64, beta: f64, tol: f64) -> Self {
        Self {
            stages: vec![Stage { penalty, beta, tol }],
        }
    }

    pub fn from_spec(spec: &ScheduleSpec) -> Result<Self> {
        let penalties = inclusive_range(spec.penalty_start, spec.penalty_end, spec.penalty_step)?;
        let betas = inclusive_range(spec.beta_start, spec.beta_end, spec.beta_step)?;
        let mut pairs: Vec<(f64, f64)> = penalties.iter().map(|&p| (p, spec.beta_start)).collect();
        pairs.extend(betas.iter().map(|&b| (spec.penalty_end, b)));
        let tols = geometric(spec.tol_start, spec.tol_end, pairs.len())?;
        let schedule = Self {
            stages: pairs
                .into_iter()
                .zip(tols)
                .map(|((penalty, beta), tol)| Stage { penalty, beta, tol })
                .collect(),
        };
        schedule.validate()?;
        Ok(schedule)
    }

    pub fn validate(&self) -> Result<()> {
        if self.stages.is_empty() {
            return Err(Error::Parameter("continuation schedule is empty".into()));
        }
        for w in self.stages.windows(2) {
            let (a, b) = (w[0], w[1]);
            let ordered = b.penalty > a.penalty && b.beta == a.beta
                || b.penalty == a.penalty && b.beta >= a.beta;
            if !ordered {
                return Err(Error::Parameter(format!(
                    "schedule must raise p first, then beta: ({}, {}) -> ({}, {})",
                    a.penalty, a.beta, b.penalty, b.beta
                )));
            }
            if !(b.tol <= a.tol) {
                return Err(Error::Parameter(
                    "stage tolerances must not increase".into(),
                ));
            }
        }
        if self
            .stages
            .iter()
            .any(|s| !(s.tol > 0.0) || s.penalty < 1.0 || s.beta < 0.0)
        {
            return Err(Error::Parameter(
                "stages need tol > 0, p >= 1 and beta >= 0".into(),
            ));
        }
        Ok(())
    }
}

fn geometric(start: f64, end: f64, count: usize) -> Result<Vec<f64>> {
    if !(start > 0.0 && end > 0.0 && end <= start) {
        return Err(Error::Parameter(format!(
            "tolerances must be positive and non-increasing, got {start} -> {end}"
        )));
    }
    if count == 1 {
        return Ok(vec![start]);
    }
    let ratio = (end / start).powf(1.0 / (count - 1) as f64);
    Ok((0..count)
        .map(|k| {
            if k + 1 == count {
                end
            } else {
                start * ratio.powi(k as i32)
            }
        })
        .collect())
}

/// A problem whose penalty and projection sharpness can be changed between
/// stages.
pub trait ContinuationProblem: Problem {
    fn set_stage(&mut self, penalty: f64, beta: f64) -> Result<()>;

    /// Cumulative linear solves performed so far.
    fn solve_count(&self) -> usize {
        0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: usize,
    pub penalty: f64,
    pub beta: f64,
    pub tol: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
    pub objective: f64,
    pub kkt: f64,
    pub solves: usize,
    pub wall_time_s: f64,
    pub history: Vec<IterationRecord>,
}

/// Solves every stage in order, warm-starting each from the previous
/// solution.
pub fn continuation_run<P: ContinuationProblem + ?Sized>(
    problem: &mut P,
    schedule: &ContinuationSchedule,
    params: &MmaParams,
    x0: &[f64],
) -> Result<(Vec<f64>, Vec<StageRecord>)> {
    schedule.validate()?;
    let mut x = x0.to_vec();
    let mut records = Vec::with_capacity(schedule.stages.len());
    for (k, stage) in schedule.stages.iter().enumerate() {
        let wrap = |source: Error| Error::Stage {
            stage: k,
            penalty: stage.penalty,
            beta: stage.beta,
            source: Box::new(source),
        };
        let start = Instant::now();
        let solves_before = problem.solve_count();
        problem.set_stage(stage.penalty, stage.beta).map_err(wrap)?;
        let result = mma_solve(problem, &x, params, stage.tol).map_err(wrap)?;
        let last = result
            .history
            .last()
            .expect("history holds the start point");
        records.push(StageRecord {
            stage: k,
            penalty: stage.penalty,
            beta: stage.beta,
            tol: stage.tol,
            iterations: result.history.len() - 1,
            evaluations: result.evaluations,
            converged: result.converged,
            objective: result.objective,
            kkt: last.kkt,
            solves: problem.solve_count() - solves_before,
            wall_time_s: start.elapsed().as_secs_f64(),
            history: result.history,
        });
        x = result.x;
    }
    Ok((x, records))
}
