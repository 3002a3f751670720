//! Augmented-Lagrangian solver with a regularised Newton inner loop.
//!
//! Equalities c(z) = 0 get first-order multiplier updates; inequalities
//! g(z) >= 0 enter through the squared-hinge (Rockafellar) term, so the
//! merit is
//!
//!   L_A = f + lambda'c + rho/2 |c|^2 + 1/(2 rho) sum(max(0, mu - rho g)^2 - mu^2).
//!
//! The inner Hessian is assembled in banded-plus-border form by the problem
//! and factorised with a Levenberg shift, falling back to a modified
//! Cholesky when it is not positive definite. By default the inner loop
//! starts with Gauss-Newton curvature for the constraints: minimising the
//! augmented Lagrangian with exact curvature far from feasibility follows
//! negative-curvature directions, which on collocated flight problems leads
//! into trajectories that chatter between knots.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::banded::BorderedBanded;
use super::nlp::SparseRows;
use crate::error::{CodesignError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverSettings {
    pub kkt_tol: f64,
    pub feas_tol: f64,
    pub max_outer: usize,
    pub max_inner: usize,
    pub penalty_growth: f64,
    pub initial_penalty: f64,
    pub max_penalty: f64,
    /// Half-width of the band on |q|^2 around one.
    pub quat_tol: f64,
    /// Number of leading outer iterations whose inner Hessian omits the
    /// constraint curvature (Gauss-Newton); exact curvature afterwards.
    pub gauss_newton_outer: usize,
    /// Wall-clock budget in seconds; zero disables it.
    pub time_limit: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            kkt_tol: 1e-6,
            feas_tol: 1e-6,
            max_outer: 40,
            max_inner: 150,
            penalty_growth: 10.0,
            initial_penalty: 100.0,
            max_penalty: 1e6,
            quat_tol: 1e-6,
            gauss_newton_outer: 2,
            time_limit: 0.0,
        }
    }
}

impl SolverSettings {
    pub fn validate(&self) -> Result<()> {
        let ok = self.kkt_tol > 0.0
            && self.feas_tol > 0.0
            && self.quat_tol > 0.0
            && self.penalty_growth > 1.0
            && self.initial_penalty > 0.0
            && self.max_penalty >= self.initial_penalty
            && self.max_outer > 0
            && self.max_inner > 0
            && self.time_limit >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(CodesignError::Config("solver tolerances, penalties and iteration limits must be positive".into()))
        }
    }
}

pub struct Values {
    pub f: f64,
    pub c: Vec<f64>,
    pub g: Vec<f64>,
}

pub struct Derivatives {
    pub values: Values,
    pub grad: Vec<f64>,
    pub jc: SparseRows,
    pub jg: SparseRows,
}

/// Smooth NLP: min f(z) s.t. c(z) = 0, g(z) >= 0, with a Hessian that fits
/// a banded block followed by a dense border.
pub trait Problem {
    fn dim(&self) -> usize;
    /// (banded block size, half-bandwidth); the remaining variables form
    /// the border.
    fn structure(&self) -> (usize, usize);
    fn values(&self, z: &[f64]) -> Values;
    fn derivatives(&self, z: &[f64]) -> Derivatives;
    /// Adds the Hessian of f + sum a_i c_i + sum b_j g_j to `h`.
    fn add_hessian(&self, z: &[f64], a: &[f64], b: &[f64], exact: bool, h: &mut BorderedBanded);
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveStatus {
    Converged,
    MaxIterations,
    TimeLimit,
    NonFinite,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub status: SolveStatus,
    pub outer_iterations: usize,
    pub inner_iterations: usize,
    pub max_violation: f64,
    pub stationarity: f64,
    pub cost: f64,
    pub penalty: f64,
    pub seconds: f64,
}

impl ConvergenceReport {
    pub fn converged(&self) -> bool {
        self.status == SolveStatus::Converged
    }
}

struct Merit<'a> {
    lambda: &'a [f64],
    mu: &'a [f64],
    rho: f64,
}

impl Merit<'_> {
    fn value(&self, v: &Values) -> f64 {
        let mut s = v.f;
        for (c, l) in v.c.iter().zip(self.lambda) {
            s += l * c + 0.5 * self.rho * c * c;
        }
        for (g, m) in v.g.iter().zip(self.mu) {
            let h = (m - self.rho * g).max(0.0);
            s += (h * h - m * m) / (2.0 * self.rho);
        }
        s
    }

    /// Equality weights lambda + rho c and inequality weights max(0, mu - rho g).
    fn weights(&self, v: &Values) -> (Vec<f64>, Vec<f64>) {
        let y = v.c.iter().zip(self.lambda).map(|(c, l)| l + self.rho * c).collect();
        let nu = v.g.iter().zip(self.mu).map(|(g, m)| (m - self.rho * g).max(0.0)).collect();
        (y, nu)
    }

    fn gradient(&self, d: &Derivatives) -> Vec<f64> {
        let (y, nu) = self.weights(&d.values);
        let mut grad = d.grad.clone();
        d.jc.add_transpose_times(&y, 1.0, &mut grad);
        d.jg.add_transpose_times(&nu, -1.0, &mut grad);
        grad
    }
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Max of |c| and the positive part of -g.
pub fn violation(v: &Values) -> f64 {
    v.c.iter().map(|c| c.abs()).chain(v.g.iter().map(|g| (-g).max(0.0))).fold(0.0, f64::max)
}

fn all_finite(v: &Values) -> bool {
    v.f.is_finite() && v.c.iter().chain(&v.g).all(|x| x.is_finite())
}

/// Solves the NLP from `z0`, returning the final iterate and a report.
pub fn solve_nlp<P: Problem>(p: &P, z0: &[f64], s: &SolverSettings) -> Result<(Vec<f64>, ConvergenceReport)> {
    s.validate()?;
    let start = Instant::now();
    let n = p.dim();
    if z0.len() != n {
        return Err(CodesignError::Contract(format!("initial point has length {} (expected {n})", z0.len())));
    }
    let (n_band, bw) = p.structure();
    let mut hess = BorderedBanded::new(n_band, bw, n - n_band);
    let mut z = z0.to_vec();
    let v0 = p.values(&z);
    if !all_finite(&v0) {
        return Err(CodesignError::NonFinite("initial point of the NLP"));
    }
    let mut lambda = vec![0.0; v0.c.len()];
    let mut mu = vec![0.0; v0.g.len()];
    let mut rho = s.initial_penalty;
    let mut omega = 1e-2_f64.max(s.kkt_tol);
    let mut prev_v = f64::INFINITY;
    let mut inner_total = 0;
    let mut shift = 0.0_f64;
    let mut report = ConvergenceReport {
        status: SolveStatus::MaxIterations,
        outer_iterations: 0,
        inner_iterations: 0,
        max_violation: violation(&v0),
        stationarity: f64::INFINITY,
        cost: v0.f,
        penalty: rho,
        seconds: 0.0,
    };
    let over_time = |t: &Instant| s.time_limit > 0.0 && t.elapsed().as_secs_f64() > s.time_limit;

    for outer in 0..s.max_outer {
        report.outer_iterations = outer + 1;
        let merit = Merit { lambda: &lambda, mu: &mu, rho };
        let mut d = p.derivatives(&z);
        let mut grad = merit.gradient(&d);
        for _ in 0..s.max_inner {
            if inf_norm(&grad) <= omega {
                break;
            }
            if over_time(&start) {
                break;
            }
            inner_total += 1;
            let (y, nu) = merit.weights(&d.values);
            hess.clear();
            let neg_nu: Vec<f64> = nu.iter().map(|v| -v).collect();
            p.add_hessian(&z, &y, &neg_nu, outer >= s.gauss_newton_outer, &mut hess);
            for r in 0..d.jc.rows() {
                let (idx, val) = d.jc.row(r);
                hess.add_outer(idx, val, rho);
            }
            for r in 0..d.jg.rows() {
                if nu[r] > 0.0 {
                    let (idx, val) = d.jg.row(r);
                    hess.add_outer(idx, val, rho);
                }
            }
            let l0 = merit.value(&d.values);
            let neg: Vec<f64> = grad.iter().map(|g| -g).collect();
            let noise = 1e-13 * l0.abs().max(1.0);
            let mut accepted = false;
            for _attempt in 0..30 {
                // exact Newton when the shifted matrix is already positive
                // definite; the modified factor only as a fallback
                let fact = match hess.factor(shift) {
                    Some(f) => f,
                    None => hess.factor_modified(shift).0,
                };
                let step = fact.solve(&neg);
                let slope: f64 = step.iter().zip(&grad).map(|(a, b)| a * b).sum();
                if !(slope < 0.0) {
                    shift = (shift * 4.0).max(1e-6);
                    continue;
                }
                let mut alpha = 1.0;
                let mut trial = vec![0.0; n];
                while alpha >= 1.0 / 64.0 {
                    for i in 0..n {
                        trial[i] = z[i] + alpha * step[i];
                    }
                    let tv = p.values(&trial);
                    if all_finite(&tv) {
                        let lt = merit.value(&tv);
                        if lt <= l0 + 1e-4 * alpha * slope || (alpha == 1.0 && (lt - l0).abs() <= noise) {
                            accepted = true;
                            break;
                        }
                    }
                    alpha *= 0.5;
                }
                if accepted {
                    z = trial;
                    if alpha == 1.0 {
                        shift /= 4.0;
                        if shift < 1e-8 {
                            shift = 0.0;
                        }
                    }
                    break;
                }
                shift = (shift * 4.0).max(1e-4);
                if shift > 1e15 {
                    break;
                }
            }
            if !accepted {
                break;
            }
            d = p.derivatives(&z);
            grad = merit.gradient(&d);
        }
        report.inner_iterations = inner_total;
        let vals = &d.values;
        if !all_finite(vals) {
            report.status = SolveStatus::NonFinite;
            break;
        }
        let compl = vals
            .c
            .iter()
            .map(|c| c.abs())
            .chain(vals.g.iter().zip(&mu).map(|(g, m)| g.min(m / rho).abs()))
            .fold(0.0, f64::max);
        let (y, nu) = merit.weights(vals);
        report.max_violation = violation(vals);
        report.stationarity = inf_norm(&grad) / multiplier_scale(&y, &nu);
        report.cost = vals.f;
        report.penalty = rho;
        lambda = y;
        mu = nu;
        log::debug!(
            "alm outer {outer}: f {:.6e} viol {:.3e} stat {:.3e} rho {rho:.1e} inner {inner_total}",
            vals.f,
            report.max_violation,
            report.stationarity
        );
        if report.max_violation <= s.feas_tol && report.stationarity <= s.kkt_tol && compl <= s.feas_tol {
            report.status = SolveStatus::Converged;
            break;
        }
        if over_time(&start) {
            report.status = SolveStatus::TimeLimit;
            break;
        }
        // grow the penalty only when an accurately solved subproblem still
        // failed to reduce infeasibility enough, or infeasibility grew;
        // past feasibility a larger penalty only amplifies round-off in c
        if compl > s.feas_tol && compl > 0.25 * prev_v && (inf_norm(&grad) <= omega || compl > prev_v) {
            rho = (rho * s.penalty_growth).min(s.max_penalty);
        }
        prev_v = compl;
        omega = (omega * 0.1).max(0.5 * s.kkt_tol);
    }
    report.seconds = start.elapsed().as_secs_f64();
    Ok((z, report))
}

/// Scale for the stationarity test: large multipliers loosen it, in the
/// manner of interior-point codes.
fn multiplier_scale(y: &[f64], nu: &[f64]) -> f64 {
    let sum: f64 = y.iter().chain(nu).map(|v| v.abs()).sum();
    let m = (y.len() + nu.len()).max(1) as f64;
    (sum / m).max(100.0) / 100.0
}

/// Convenience wrapper solving a transcribed trajectory problem.
pub fn solve(
    problem: &super::NlpProblem<'_>,
    guess: &super::Trajectory,
    settings: &SolverSettings,
) -> Result<(super::Trajectory, ConvergenceReport)> {
    let z0 = problem.pack(guess)?;
    let (z, report) = solve_nlp(problem, &z0, settings)?;
    Ok((problem.unpack(&z)?, report))
}
