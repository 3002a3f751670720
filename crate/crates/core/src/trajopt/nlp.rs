//! Transcription of the collocation problem into a structured NLP.
//!
//! Decision layout: for each knot k the 13 state entries then the 4 inputs
//! (17 per knot), and t_f last. Equalities are the trapezoidal defects,
//! the full initial state and the terminal position, attitude and velocity.
//! Terminal attitude is pinned through the vector part of
//! conj(q_target) * q_N; the norm of q_N is left to the quaternion band,
//! because under the trapezoidal rule the knot norms obey
//! |q_k|^2 (1 + h^2 |w_k|^2 / 16) = const, and pinning all four components
//! would force |w_N| = |w_0| through a constraint with vanishing gradient.
//! Inequalities (all as g >= 0) are, per knot, the thrust and deflection
//! boxes, the quaternion norm band and one clearance per obstacle; per
//! interval, the two-sided deflection rate limits; and the t_f bounds.

use nalgebra::{DMatrix, Vector3};

use super::banded::BorderedBanded;
use super::solver::{Derivatives, Problem, SolverSettings, Values};
use super::{Mission, Trajectory};
use crate::autodiff::Dual;
use crate::dynamics::{derivative, Vehicle, INPUT_DIM, STATE_DIM};
use crate::error::{CodesignError, Result};

pub const KNOT_DIM: usize = STATE_DIM + INPUT_DIM;
const BOX_ROWS: usize = 8;
const QUAT_ROWS: usize = 2;
const RATE_ROWS: usize = 6;
/// Knot variables on which the dynamics depend nonlinearly (attitude,
/// velocities and deflections; position is absent and thrust is linear).
const CURVED: [usize; 13] = [3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 14, 15, 16];

/// Compressed sparse rows.
#[derive(Clone, Debug)]
pub struct SparseRows {
    ptr: Vec<usize>,
    idx: Vec<usize>,
    val: Vec<f64>,
}

impl Default for SparseRows {
    fn default() -> Self {
        Self { ptr: vec![0], idx: Vec::new(), val: Vec::new() }
    }
}

impl SparseRows {
    pub fn push(&mut self, idx: &[usize], val: &[f64]) {
        self.idx.extend_from_slice(idx);
        self.val.extend_from_slice(val);
        self.ptr.push(self.idx.len());
    }

    pub fn rows(&self) -> usize {
        self.ptr.len() - 1
    }

    pub fn row(&self, r: usize) -> (&[usize], &[f64]) {
        let (a, b) = (self.ptr[r], self.ptr[r + 1]);
        (&self.idx[a..b], &self.val[a..b])
    }

    /// out += scale * J' w
    pub fn add_transpose_times(&self, w: &[f64], scale: f64, out: &mut [f64]) {
        for (r, wr) in w.iter().enumerate() {
            if *wr == 0.0 {
                continue;
            }
            let (idx, val) = self.row(r);
            for (i, v) in idx.iter().zip(val) {
                out[*i] += scale * wr * v;
            }
        }
    }

    pub fn to_dense(&self, cols: usize) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.rows(), cols);
        for r in 0..self.rows() {
            let (idx, val) = self.row(r);
            for (i, v) in idx.iter().zip(val) {
                m[(r, *i)] += v;
            }
        }
        m
    }
}

/// Residual summary of a candidate decision vector.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Residuals {
    pub max_defect: f64,
    pub max_boundary: f64,
    /// Largest componentwise terminal error, with the quaternion compared
    /// in all four components (so it includes the norm slack of the band).
    pub terminal_error: f64,
    /// Smallest obstacle clearance over all knots (infinite without obstacles).
    pub min_clearance: f64,
    /// Smallest inequality value of any kind.
    pub min_inequality: f64,
    /// Largest | |q|^2 - 1 | over the knots.
    pub quat_norm_error: f64,
}

pub struct NlpProblem<'a> {
    vehicle: &'a Vehicle,
    mission: Mission,
    n: usize,
    eps_q: f64,
    span: f64,
    x0: [f64; STATE_DIM],
}

struct KnotJac {
    f: [f64; STATE_DIM],
    jac: [[f64; KNOT_DIM]; STATE_DIM],
}

impl<'a> NlpProblem<'a> {
    /// Builds the NLP for `mission` on `vehicle`; the mission is validated
    /// against the vehicle's wing span.
    pub fn new(mission: &Mission, vehicle: &'a Vehicle, settings: &SolverSettings) -> Result<Self> {
        settings.validate()?;
        let span = vehicle.model.design.span;
        mission.validate(span)?;
        Ok(Self {
            vehicle,
            mission: mission.clone(),
            n: mission.knots,
            eps_q: settings.quat_tol,
            span,
            x0: mission.initial_state().to_array(),
        })
    }

    pub fn mission(&self) -> &Mission {
        &self.mission
    }

    pub fn knots(&self) -> usize {
        self.n
    }

    pub fn tf_index(&self) -> usize {
        KNOT_DIM * self.n
    }

    pub fn n_defects(&self) -> usize {
        STATE_DIM * (self.n - 1)
    }

    pub fn n_eq(&self) -> usize {
        self.n_defects() + STATE_DIM + 9
    }

    pub fn n_rate(&self) -> usize {
        RATE_ROWS * (self.n - 1)
    }

    fn per_knot_ineq(&self) -> usize {
        BOX_ROWS + QUAT_ROWS + self.mission.obstacles.len()
    }

    pub fn n_ineq(&self) -> usize {
        self.per_knot_ineq() * self.n + self.n_rate() + 2
    }

    pub fn pack(&self, traj: &Trajectory) -> Result<Vec<f64>> {
        if traj.len() != self.n {
            return Err(CodesignError::Contract(format!(
                "trajectory has {} knots but the problem has {}",
                traj.len(),
                self.n
            )));
        }
        let mut z = Vec::with_capacity(self.dim());
        for k in 0..self.n {
            z.extend_from_slice(&traj.states[k]);
            z.extend_from_slice(&traj.inputs[k]);
        }
        z.push(traj.tf);
        Ok(z)
    }

    pub fn unpack(&self, z: &[f64]) -> Result<Trajectory> {
        let states = (0..self.n).map(|k| z[k * KNOT_DIM..k * KNOT_DIM + STATE_DIM].try_into().unwrap()).collect();
        let inputs = (0..self.n)
            .map(|k| z[k * KNOT_DIM + STATE_DIM..(k + 1) * KNOT_DIM].try_into().unwrap())
            .collect();
        Ok(Trajectory::new(z[self.tf_index()], states, inputs)?.with_rates(self.vehicle))
    }

    fn knot(&self, z: &[f64], k: usize) -> ([f64; STATE_DIM], [f64; INPUT_DIM]) {
        let b = k * KNOT_DIM;
        (z[b..b + STATE_DIM].try_into().unwrap(), z[b + STATE_DIM..b + KNOT_DIM].try_into().unwrap())
    }

    fn knot_rate(&self, z: &[f64], k: usize) -> [f64; STATE_DIM] {
        let (x, u) = self.knot(z, k);
        derivative(&x, &u, self.vehicle, &Vector3::zeros())
    }

    fn knot_jac(&self, zk: &[f64]) -> KnotJac {
        let x: [Dual<KNOT_DIM>; STATE_DIM] = std::array::from_fn(|i| Dual::variable(zk[i], i));
        let u: [Dual<KNOT_DIM>; INPUT_DIM] =
            std::array::from_fn(|i| Dual::variable(zk[STATE_DIM + i], STATE_DIM + i));
        let f = derivative(&x, &u, self.vehicle, &Vector3::zeros());
        KnotJac { f: f.map(|d| d.re), jac: f.map(|d| d.eps) }
    }

    /// Gradient of w'f(z_k) with respect to the knot variables.
    fn weighted_rate_gradient(&self, zk: &[f64], w: &[f64]) -> [f64; KNOT_DIM] {
        let j = self.knot_jac(zk);
        let mut g = [0.0; KNOT_DIM];
        for i in 0..STATE_DIM {
            for c in 0..KNOT_DIM {
                g[c] += w[i] * j.jac[i][c];
            }
        }
        g
    }

    pub fn objective(&self, z: &[f64]) -> f64 {
        let w = &self.mission.weights;
        let tf = z[self.tf_index()];
        let h = tf / (self.n - 1) as f64;
        let mut e = 0.0;
        for k in 0..self.n {
            let (x, u) = self.knot(z, k);
            let s = (x[7] * x[7] + x[8] * x[8] + x[9] * x[9]).sqrt();
            e += w.power(u[0], s, &[u[1], u[2], u[3]]);
        }
        w.omega1 * tf + w.omega2 * e * h
    }

    pub fn objective_gradient(&self, z: &[f64]) -> Vec<f64> {
        let w = &self.mission.weights;
        let tf = z[self.tf_index()];
        let nm1 = (self.n - 1) as f64;
        let h = tf / nm1;
        let mut g = vec![0.0; self.dim()];
        let mut e = 0.0;
        for k in 0..self.n {
            let (x, u) = self.knot(z, k);
            let b = k * KNOT_DIM;
            let s = (x[7] * x[7] + x[8] * x[8] + x[9] * x[9]).sqrt();
            e += w.power(u[0], s, &[u[1], u[2], u[3]]);
            g[b + 13] = w.omega2 * h * s / w.eta_p;
            if s > 0.0 {
                for i in 0..3 {
                    g[b + 7 + i] = w.omega2 * h * u[0] * x[7 + i] / (s * w.eta_p);
                }
            }
            for i in 0..3 {
                g[b + 14 + i] = 2.0 * w.omega2 * h * w.k_s * u[1 + i];
            }
        }
        g[self.tf_index()] = w.omega1 + w.omega2 * e / nm1;
        g
    }

    fn equalities_from(&self, z: &[f64], rates: &[[f64; STATE_DIM]]) -> Vec<f64> {
        let h = z[self.tf_index()] / (self.n - 1) as f64;
        let mut c = Vec::with_capacity(self.n_eq());
        for k in 0..self.n - 1 {
            let (a, b) = (k * KNOT_DIM, (k + 1) * KNOT_DIM);
            for i in 0..STATE_DIM {
                c.push(z[b + i] - z[a + i] - 0.5 * h * (rates[k][i] + rates[k + 1][i]));
            }
        }
        for i in 0..STATE_DIM {
            c.push(z[i] - self.x0[i]);
        }
        let last = (self.n - 1) * KNOT_DIM;
        let m = &self.mission;
        for i in 0..3 {
            c.push(z[last + i] - m.terminal_position[i]);
        }
        for row in attitude_rows(&m.terminal_attitude) {
            c.push((0..4).map(|j| row[j] * z[last + 3 + j]).sum());
        }
        for i in 0..3 {
            c.push(z[last + 7 + i] - m.terminal_velocity[i]);
        }
        c
    }

    /// Largest terminal error over position, all four quaternion components
    /// and velocity.
    fn terminal_error(&self, z: &[f64]) -> f64 {
        let last = (self.n - 1) * KNOT_DIM;
        let m = &self.mission;
        m.terminal_position
            .iter()
            .chain(&m.terminal_attitude)
            .chain(&m.terminal_velocity)
            .enumerate()
            .fold(0.0, |e, (i, t)| e.max((z[last + i] - t).abs()))
    }

    fn inequalities(&self, z: &[f64]) -> Vec<f64> {
        let lim = &self.mission.limits;
        let tf = z[self.tf_index()];
        let h = tf / (self.n - 1) as f64;
        let mut g = Vec::with_capacity(self.n_ineq());
        for k in 0..self.n {
            let (x, u) = self.knot(z, k);
            g.push(u[0] - lim.thrust_min);
            g.push(lim.thrust_max - u[0]);
            for i in 0..3 {
                g.push(u[1 + i] - lim.delta_min[i]);
                g.push(lim.delta_max[i] - u[1 + i]);
            }
            let qn = x[3] * x[3] + x[4] * x[4] + x[5] * x[5] + x[6] * x[6];
            g.push(qn - (1.0 - self.eps_q));
            g.push((1.0 + self.eps_q) - qn);
            for o in &self.mission.obstacles {
                g.push(super::obstacle_clearance(&[x[0], x[1], x[2]], o, self.span));
            }
        }
        for k in 0..self.n - 1 {
            let (a, b) = (k * KNOT_DIM + 14, (k + 1) * KNOT_DIM + 14);
            for i in 0..3 {
                let d = z[b + i] - z[a + i];
                g.push(lim.rate_max * h - d);
                g.push(lim.rate_max * h + d);
            }
        }
        g.push(tf - self.mission.tf_min);
        g.push(self.mission.tf_max - tf);
        g
    }

    fn inequality_jacobian(&self, z: &[f64]) -> SparseRows {
        let lim = &self.mission.limits;
        let nm1 = (self.n - 1) as f64;
        let tfi = self.tf_index();
        let mut j = SparseRows::default();
        for k in 0..self.n {
            let b = k * KNOT_DIM;
            j.push(&[b + 13], &[1.0]);
            j.push(&[b + 13], &[-1.0]);
            for i in 0..3 {
                j.push(&[b + 14 + i], &[1.0]);
                j.push(&[b + 14 + i], &[-1.0]);
            }
            let q: Vec<f64> = z[b + 3..b + 7].iter().map(|v| 2.0 * v).collect();
            j.push(&[b + 3, b + 4, b + 5, b + 6], &q);
            j.push(&[b + 3, b + 4, b + 5, b + 6], &q.iter().map(|v| -v).collect::<Vec<_>>());
            for o in &self.mission.obstacles {
                let (dx, dy) = (z[b] - o.center[0], z[b + 1] - o.center[1]);
                let d = (dx * dx + dy * dy).sqrt().max(1e-12);
                j.push(&[b, b + 1], &[dx / d, dy / d]);
            }
        }
        for k in 0..self.n - 1 {
            let (a, b) = (k * KNOT_DIM + 14, (k + 1) * KNOT_DIM + 14);
            for i in 0..3 {
                j.push(&[a + i, b + i, tfi], &[1.0, -1.0, lim.rate_max / nm1]);
                j.push(&[a + i, b + i, tfi], &[-1.0, 1.0, lim.rate_max / nm1]);
            }
        }
        j.push(&[tfi], &[1.0]);
        j.push(&[tfi], &[-1.0]);
        j
    }

    /// Dense constraint Jacobians (equalities, inequalities).
    pub fn jacobians_dense(&self, z: &[f64]) -> (DMatrix<f64>, DMatrix<f64>) {
        let d = self.derivatives(z);
        (d.jc.to_dense(self.dim()), d.jg.to_dense(self.dim()))
    }

    pub fn equality_values(&self, z: &[f64]) -> Vec<f64> {
        self.values(z).c
    }

    pub fn inequality_values(&self, z: &[f64]) -> Vec<f64> {
        self.inequalities(z)
    }

    pub fn residuals(&self, z: &[f64]) -> Residuals {
        let c = self.equality_values(z);
        let nd = self.n_defects();
        let g = self.inequalities(z);
        let per = self.per_knot_ineq();
        let n_obs = self.mission.obstacles.len();
        let mut min_clear = f64::INFINITY;
        for k in 0..self.n {
            for j in 0..n_obs {
                min_clear = min_clear.min(g[k * per + BOX_ROWS + QUAT_ROWS + j]);
            }
        }
        let quat_norm_error = (0..self.n)
            .map(|k| {
                let b = k * KNOT_DIM;
                (z[b + 3..b + 7].iter().map(|v| v * v).sum::<f64>() - 1.0).abs()
            })
            .fold(0.0, f64::max);
        Residuals {
            max_defect: c[..nd].iter().fold(0.0, |m, v| m.max(v.abs())),
            max_boundary: c[nd..].iter().fold(0.0, |m, v| m.max(v.abs())),
            terminal_error: self.terminal_error(z),
            min_clearance: min_clear,
            min_inequality: g.iter().copied().fold(f64::INFINITY, f64::min),
            quat_norm_error,
        }
    }
}

/// Rows of the linear map q -> vec(conj(t) * q).
fn attitude_rows(t: &[f64; 4]) -> [[f64; 4]; 3] {
    let [w, x, y, z] = *t;
    [[-x, w, z, -y], [-y, -z, w, x], [-z, y, -x, w]]
}

/// Builds the NLP for a mission on a vehicle.
pub fn transcribe<'a>(mission: &Mission, vehicle: &'a Vehicle, settings: &SolverSettings) -> Result<NlpProblem<'a>> {
    NlpProblem::new(mission, vehicle, settings)
}

impl Problem for NlpProblem<'_> {
    fn dim(&self) -> usize {
        KNOT_DIM * self.n + 1
    }

    fn structure(&self) -> (usize, usize) {
        (KNOT_DIM * self.n, 2 * KNOT_DIM - 1)
    }

    fn values(&self, z: &[f64]) -> Values {
        let rates: Vec<_> = (0..self.n).map(|k| self.knot_rate(z, k)).collect();
        Values { f: self.objective(z), c: self.equalities_from(z, &rates), g: self.inequalities(z) }
    }

    fn derivatives(&self, z: &[f64]) -> Derivatives {
        let jacs: Vec<KnotJac> = (0..self.n).map(|k| self.knot_jac(&z[k * KNOT_DIM..(k + 1) * KNOT_DIM])).collect();
        let rates: Vec<_> = jacs.iter().map(|j| j.f).collect();
        let c = self.equalities_from(z, &rates);
        let tfi = self.tf_index();
        let nm1 = (self.n - 1) as f64;
        let h = z[tfi] / nm1;
        let mut jc = SparseRows::default();
        let mut idx = Vec::with_capacity(2 * KNOT_DIM + 1);
        let mut val = Vec::with_capacity(2 * KNOT_DIM + 1);
        for k in 0..self.n - 1 {
            let (a, b) = (k * KNOT_DIM, (k + 1) * KNOT_DIM);
            for i in 0..STATE_DIM {
                idx.clear();
                val.clear();
                for col in 0..KNOT_DIM {
                    let d = if col == i { 1.0 } else { 0.0 };
                    let v0 = -d - 0.5 * h * jacs[k].jac[i][col];
                    if v0 != 0.0 {
                        idx.push(a + col);
                        val.push(v0);
                    }
                }
                for col in 0..KNOT_DIM {
                    let d = if col == i { 1.0 } else { 0.0 };
                    let v1 = d - 0.5 * h * jacs[k + 1].jac[i][col];
                    if v1 != 0.0 {
                        idx.push(b + col);
                        val.push(v1);
                    }
                }
                idx.push(tfi);
                val.push(-(rates[k][i] + rates[k + 1][i]) / (2.0 * nm1));
                jc.push(&idx, &val);
            }
        }
        for i in 0..STATE_DIM {
            jc.push(&[i], &[1.0]);
        }
        let last = (self.n - 1) * KNOT_DIM;
        for i in 0..3 {
            jc.push(&[last + i], &[1.0]);
        }
        let qi = [last + 3, last + 4, last + 5, last + 6];
        for row in attitude_rows(&self.mission.terminal_attitude) {
            jc.push(&qi, &row);
        }
        for i in 7..10 {
            jc.push(&[last + i], &[1.0]);
        }
        Derivatives {
            values: Values { f: self.objective(z), c, g: self.inequalities(z) },
            grad: self.objective_gradient(z),
            jc,
            jg: self.inequality_jacobian(z),
        }
    }

    fn add_hessian(&self, z: &[f64], a: &[f64], b: &[f64], exact: bool, hm: &mut BorderedBanded) {
        let w = &self.mission.weights;
        let tfi = self.tf_index();
        let nm1 = (self.n - 1) as f64;
        let h = z[tfi] / nm1;
        for k in 0..self.n {
            let base = k * KNOT_DIM;
            let (x, u) = self.knot(z, k);
            // objective
            let s = (x[7] * x[7] + x[8] * x[8] + x[9] * x[9]).sqrt();
            let c2 = w.omega2;
            hm.add(base + 13, tfi, c2 * s / (w.eta_p * nm1));
            if s > 0.0 {
                let vh = [x[7] / s, x[8] / s, x[9] / s];
                for i in 0..3 {
                    hm.add(base + 13, base + 7 + i, c2 * h * vh[i] / w.eta_p);
                    hm.add(base + 7 + i, tfi, c2 * u[0] * vh[i] / (w.eta_p * nm1));
                    for j in 0..=i {
                        let id = if i == j { 1.0 } else { 0.0 };
                        hm.add(base + 7 + i, base + 7 + j, c2 * h * u[0] / (w.eta_p * s) * (id - vh[i] * vh[j]));
                    }
                }
            }
            for i in 0..3 {
                hm.add(base + 14 + i, base + 14 + i, 2.0 * c2 * h * w.k_s);
                hm.add(base + 14 + i, tfi, 2.0 * c2 * w.k_s * u[1 + i] / nm1);
            }
            // quaternion band and obstacles
            let per = self.per_knot_ineq();
            let gb = k * per + BOX_ROWS;
            let qcoef = 2.0 * (b[gb] - b[gb + 1]);
            if qcoef != 0.0 {
                for i in 3..7 {
                    hm.add(base + i, base + i, qcoef);
                }
            }
            for (j, o) in self.mission.obstacles.iter().enumerate() {
                let bj = b[gb + QUAT_ROWS + j];
                if bj == 0.0 {
                    continue;
                }
                let (dx, dy) = (x[0] - o.center[0], x[1] - o.center[1]);
                let d = (dx * dx + dy * dy).sqrt().max(1e-9);
                let (nx, ny) = (dx / d, dy / d);
                hm.add(base, base, bj * (1.0 - nx * nx) / d);
                hm.add(base + 1, base, -bj * nx * ny / d);
                hm.add(base + 1, base + 1, bj * (1.0 - ny * ny) / d);
            }
            if !exact {
                continue;
            }
            // defect curvature: -(h/2) Hess(W'f(z_k)) with W the weights of
            // the defects adjacent to knot k, plus the t_f cross term
            let mut wk = [0.0; STATE_DIM];
            for i in 0..STATE_DIM {
                if k > 0 {
                    wk[i] += a[(k - 1) * STATE_DIM + i];
                }
                if k < self.n - 1 {
                    wk[i] += a[k * STATE_DIM + i];
                }
            }
            if wk.iter().all(|v| *v == 0.0) {
                continue;
            }
            let zk = &z[base..base + KNOT_DIM];
            let g0 = self.weighted_rate_gradient(zk, &wk);
            for (c, gc) in g0.iter().enumerate() {
                hm.add(base + c, tfi, -gc / (2.0 * nm1));
            }
            let mut cols = [[0.0; KNOT_DIM]; KNOT_DIM];
            let mut zp = [0.0; KNOT_DIM];
            zp.copy_from_slice(zk);
            for &j in &CURVED {
                let e = 1e-7 * zk[j].abs().max(1.0);
                zp[j] = zk[j] + e;
                let gp = self.weighted_rate_gradient(&zp, &wk);
                zp[j] = zk[j];
                for c in 0..KNOT_DIM {
                    cols[j][c] = (gp[c] - g0[c]) / e;
                }
            }
            for (pi, &i) in CURVED.iter().enumerate() {
                for &j in &CURVED[..=pi] {
                    let hij = 0.5 * (cols[i][j] + cols[j][i]);
                    hm.add(base + i, base + j, -0.5 * h * hij);
                }
            }
        }
    }
}
