//! Time-varying LQR tracking on a 12-dimensional error state.
//!
//! The attitude error is the multiplicative chart theta = 2 sgn(w) vec(q~)
//! with q~ = conj(q_ref) (x) q. Gains are recomputed about the actual state
//! at every control epoch by linearising the nominal model there and solving
//! the continuous algebraic Riccati equation.

use nalgebra::{DMatrix, Quaternion, SMatrix, SVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::dynamics::{
    derivative, quat_conj, quat_mul, ActuatorLimits, ControlInput, State, Vehicle, INPUT_DIM,
    STATE_DIM,
};
use crate::error::{CodesignError, Result};

pub const ERROR_DIM: usize = 12;

pub type ErrorVector = SVector<f64, ERROR_DIM>;
pub type StateMatrix = SMatrix<f64, ERROR_DIM, ERROR_DIM>;
pub type InputMatrix = SMatrix<f64, ERROR_DIM, INPUT_DIM>;
pub type GainMatrix = SMatrix<f64, INPUT_DIM, ERROR_DIM>;

/// Controller settings as they appear in run configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LqrConfig {
    pub q_diag: [f64; ERROR_DIM],
    pub r_diag: [f64; INPUT_DIM],
    /// Re-linearisation and command update period (s).
    pub control_period: f64,
    /// Physics integration step (s).
    pub physics_dt: f64,
}

impl Default for LqrConfig {
    fn default() -> Self {
        Self {
            q_diag: [10.0, 10.0, 10.0, 5.0, 5.0, 5.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0],
            r_diag: [0.1, 1.0, 1.0, 1.0],
            control_period: 0.02,
            physics_dt: 0.002,
        }
    }
}

impl LqrConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.physics_dt > 0.0 && self.control_period >= self.physics_dt) {
            return Err(CodesignError::Config("need 0 < physics_dt <= control_period".into()));
        }
        let ratio = self.control_period / self.physics_dt;
        if (ratio - ratio.round()).abs() > 1e-9 {
            return Err(CodesignError::Config("control_period must be a multiple of physics_dt".into()));
        }
        self.weights().map(|_| ())
    }

    /// Physics steps per control epoch.
    pub fn substeps(&self) -> usize {
        (self.control_period / self.physics_dt).round() as usize
    }

    pub fn weights(&self) -> Result<LqrWeights> {
        LqrWeights::new(
            StateMatrix::from_diagonal(&ErrorVector::from(self.q_diag)),
            SMatrix::<f64, INPUT_DIM, INPUT_DIM>::from_diagonal(&SVector::from(self.r_diag)),
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LqrWeights {
    pub q: StateMatrix,
    pub r: SMatrix<f64, INPUT_DIM, INPUT_DIM>,
}

impl LqrWeights {
    pub fn new(q: StateMatrix, r: SMatrix<f64, INPUT_DIM, INPUT_DIM>) -> Result<Self> {
        if (q - q.transpose()).amax() > 1e-12 || (r - r.transpose()).amax() > 1e-12 {
            return Err(CodesignError::Config("LQR weights must be symmetric".into()));
        }
        if q.symmetric_eigenvalues().min() < -1e-12 {
            return Err(CodesignError::Config("Q must be positive semidefinite".into()));
        }
        if r.cholesky().is_none() {
            return Err(CodesignError::Config("R must be positive definite".into()));
        }
        Ok(Self { q, r })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ErrorState {
    pub p: Vector3<f64>,
    pub theta: Vector3<f64>,
    pub v: Vector3<f64>,
    pub omega: Vector3<f64>,
}

impl ErrorState {
    pub fn to_vector(&self) -> ErrorVector {
        let mut e = ErrorVector::zeros();
        e.fixed_rows_mut::<3>(0).copy_from(&self.p);
        e.fixed_rows_mut::<3>(3).copy_from(&self.theta);
        e.fixed_rows_mut::<3>(6).copy_from(&self.v);
        e.fixed_rows_mut::<3>(9).copy_from(&self.omega);
        e
    }
}

fn sgn(x: f64) -> f64 {
    if x < 0.0 {
        -1.0
    } else {
        1.0
    }
}

/// Attitude chart of `q` about `q_ref`: 2 sgn(w) vec(conj(q_ref) q).
pub fn attitude_error(q: &[f64; 4], q_ref: &[f64; 4]) -> Vector3<f64> {
    let e = quat_mul(&quat_conj(q_ref), q);
    Vector3::new(e[1], e[2], e[3]) * (2.0 * sgn(e[0]))
}

pub fn error_state(x: &State, x_ref: &State) -> ErrorState {
    ErrorState {
        p: x.p - x_ref.p,
        theta: attitude_error(&x.quat_array(), &x_ref.quat_array()),
        v: x.v - x_ref.v,
        omega: x.omega - x_ref.omega,
    }
}

/// Inverse of the chart: the state whose error about `x` is `e`. The
/// attitude part needs |theta| <= 2.
pub fn retract(x: &State, e: &ErrorVector) -> State {
    let half = Vector3::new(e[3], e[4], e[5]) * 0.5;
    let w = (1.0 - half.norm_squared()).max(0.0).sqrt();
    let q = quat_mul(&x.quat_array(), &[w, half.x, half.y, half.z]);
    State::new(
        x.p + Vector3::new(e[0], e[1], e[2]),
        Quaternion::new(q[0], q[1], q[2], q[3]),
        x.v + Vector3::new(e[6], e[7], e[8]),
        x.omega + Vector3::new(e[9], e[10], e[11]),
    )
}

/// Rate of the error coordinates of `y` about the frozen point `x`, given
/// both state derivatives.
fn error_rate(
    x: &[f64; STATE_DIM],
    fx: &[f64; STATE_DIM],
    y: &[f64; STATE_DIM],
    fy: &[f64; STATE_DIM],
) -> ErrorVector {
    let q = [x[3], x[4], x[5], x[6]];
    let qy = [y[3], y[4], y[5], y[6]];
    let qd = [fx[3], fx[4], fx[5], fx[6]];
    let qyd = [fy[3], fy[4], fy[5], fy[6]];
    let s = 2.0 * sgn(quat_mul(&quat_conj(&q), &qy)[0]);
    let a = quat_mul(&quat_conj(&q), &qyd);
    let b = quat_mul(&quat_conj(&qd), &qy);
    let mut r = ErrorVector::zeros();
    for i in 0..3 {
        r[i] = fy[i] - fx[i];
        r[3 + i] = s * (a[1 + i] + b[1 + i]);
        r[6 + i] = fy[7 + i] - fx[7 + i];
        r[9 + i] = fy[10 + i] - fx[10 + i];
    }
    r
}

/// Error-state Jacobians (A, B) of the still-air dynamics at (x, u), by
/// central differences through the multiplicative chart at x.
pub fn linearize(x: &State, u: &ControlInput, vehicle: &Vehicle) -> Result<(StateMatrix, InputMatrix)> {
    let zero = Vector3::zeros();
    let xa = x.to_array();
    let ua = u.to_array();
    let fx = derivative(&xa, &ua, vehicle, &zero);
    let mut a = StateMatrix::zeros();
    let mut b = InputMatrix::zeros();
    let scale = |v: f64| 1e-6 * v.abs().max(1.0);
    for j in 0..ERROR_DIM {
        let base = match j {
            0..=2 => xa[j],
            3..=5 => 0.0,
            _ => xa[j + 1],
        };
        let h = scale(base);
        let mut col = ErrorVector::zeros();
        for sign in [1.0, -1.0] {
            let mut e = ErrorVector::zeros();
            e[j] = sign * h;
            let y = retract(x, &e).to_array();
            let fy = derivative(&y, &ua, vehicle, &zero);
            col += error_rate(&xa, &fx, &y, &fy) * sign;
        }
        a.set_column(j, &(col / (2.0 * h)));
    }
    for j in 0..INPUT_DIM {
        let h = scale(ua[j]);
        let mut col = ErrorVector::zeros();
        for sign in [1.0, -1.0] {
            let mut up = ua;
            up[j] += sign * h;
            let fy = derivative(&xa, &up, vehicle, &zero);
            col += error_rate(&xa, &fx, &xa, &fy) * sign;
        }
        b.set_column(j, &(col / (2.0 * h)));
    }
    if a.iter().chain(b.iter()).all(|v| v.is_finite()) {
        Ok((a, b))
    } else {
        Err(CodesignError::Linearisation("non-finite Jacobian entry".into()))
    }
}

/// Stabilising solution of A'P + PA - P B R^-1 B' P + Q = 0.
#[derive(Clone, Debug, PartialEq)]
pub struct CareSolution {
    pub p: DMatrix<f64>,
    pub k: DMatrix<f64>,
    pub residual: f64,
}

pub fn care_residual(a: &DMatrix<f64>, b: &DMatrix<f64>, q: &DMatrix<f64>, r_inv: &DMatrix<f64>, p: &DMatrix<f64>) -> f64 {
    let g = b * r_inv * b.transpose();
    (a.transpose() * p + p * a - p * g * p + q).norm()
}

fn spectral_abscissa(m: &DMatrix<f64>) -> f64 {
    m.complex_eigenvalues().iter().map(|l| l.re).fold(f64::NEG_INFINITY, f64::max)
}

/// Solves A'X + XA = -M for X by the Kronecker form restricted to
/// symmetric X (M symmetric).
fn lyapunov(a: &DMatrix<f64>, m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let n = a.nrows();
    let idx = |i: usize, j: usize| {
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        i * n - i * (i + 1) / 2 + j
    };
    let nu = n * (n + 1) / 2;
    let mut lhs = DMatrix::<f64>::zeros(nu, nu);
    let mut rhs = nalgebra::DVector::<f64>::zeros(nu);
    for i in 0..n {
        for j in i..n {
            let row = idx(i, j);
            // (A'X + XA)_ij = sum_k a_ki x_kj + x_ik a_kj
            for k in 0..n {
                lhs[(row, idx(k, j))] += a[(k, i)];
                lhs[(row, idx(i, k))] += a[(k, j)];
            }
            rhs[row] = -m[(i, j)];
        }
    }
    let sol = lhs.lu().solve(&rhs)?;
    let mut x = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            x[(i, j)] = sol[idx(i, j)];
        }
    }
    Some(x)
}

/// Stabilising Riccati solution from the matrix sign function of the
/// Hamiltonian, with determinant scaling.
fn care_sign(a: &DMatrix<f64>, g: &DMatrix<f64>, q: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let n = a.nrows();
    let mut z = DMatrix::zeros(2 * n, 2 * n);
    z.view_mut((0, 0), (n, n)).copy_from(a);
    z.view_mut((0, n), (n, n)).copy_from(&(-g));
    z.view_mut((n, 0), (n, n)).copy_from(&(-q));
    z.view_mut((n, n), (n, n)).copy_from(&(-a.transpose()));
    for _ in 0..100 {
        let lu = z.clone().lu();
        let det = lu.determinant().abs();
        let zi = lu.try_inverse()?;
        let c = if det > 0.0 && det.is_finite() { det.powf(1.0 / (2 * n) as f64) } else { 1.0 };
        let next = (&z / c + zi * c) * 0.5;
        let change = (&next - &z).norm() / next.norm().max(1.0);
        z = next;
        if change < 1e-13 {
            break;
        }
    }
    if !z.iter().all(|v| v.is_finite()) {
        return None;
    }
    let mut lhs = DMatrix::zeros(2 * n, n);
    let mut rhs = DMatrix::zeros(2 * n, n);
    lhs.view_mut((0, 0), (n, n)).copy_from(&z.view((0, n), (n, n)));
    lhs.view_mut((n, 0), (n, n)).copy_from(&(z.view((n, n), (n, n)) + DMatrix::identity(n, n)));
    rhs.view_mut((0, 0), (n, n)).copy_from(&(-(z.view((0, 0), (n, n)) + DMatrix::identity(n, n))));
    rhs.view_mut((n, 0), (n, n)).copy_from(&(-z.view((n, 0), (n, n))));
    let p = lhs.svd(true, true).solve(&rhs, 1e-14).ok()?;
    Some((&p + p.transpose()) * 0.5)
}

/// Continuous algebraic Riccati equation by Newton-Kleinman iteration.
/// `warm` is a gain to start from when it stabilises (A, B); otherwise the
/// start comes from the sign-function solution.
pub fn solve_care_with(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    warm: Option<&DMatrix<f64>>,
) -> Result<CareSolution> {
    let n = a.nrows();
    let m = b.ncols();
    if a.ncols() != n || b.nrows() != n || q.shape() != (n, n) || r.shape() != (m, m) {
        return Err(CodesignError::Contract("CARE dimension mismatch".into()));
    }
    let r_inv = r
        .clone()
        .cholesky()
        .ok_or_else(|| CodesignError::GainSynthesis("R is not positive definite".into()))?
        .inverse();
    let g = b * &r_inv * b.transpose();
    let stable = |k: &DMatrix<f64>| spectral_abscissa(&(a - b * k)) < 0.0;
    let mut k = match warm {
        Some(k0) if k0.shape() == (m, n) && stable(k0) => k0.clone(),
        _ => {
            let p0 = care_sign(a, &g, q)
                .ok_or_else(|| CodesignError::GainSynthesis("Hamiltonian sign iteration failed".into()))?;
            &r_inv * b.transpose() * p0
        }
    };
    if !stable(&k) {
        return Err(CodesignError::GainSynthesis("no stabilising initial gain".into()));
    }
    let mut p = DMatrix::zeros(n, n);
    for _ in 0..50 {
        let ac = a - b * &k;
        let rhs = q + k.transpose() * r * &k;
        p = lyapunov(&ac, &rhs).ok_or_else(|| CodesignError::GainSynthesis("singular Lyapunov system".into()))?;
        p = (&p + p.transpose()) * 0.5;
        let k_next = &r_inv * b.transpose() * &p;
        let step = (&k_next - &k).norm();
        k = k_next;
        if step <= 1e-13 * (1.0 + k.norm()) {
            break;
        }
    }
    let residual = care_residual(a, b, q, &r_inv, &p);
    if !(residual <= 1e-8 * (1.0 + p.norm())) {
        return Err(CodesignError::GainSynthesis(format!("Riccati residual {residual:.3e} above tolerance")));
    }
    if !stable(&k) {
        return Err(CodesignError::GainSynthesis("closed loop is not stable".into()));
    }
    Ok(CareSolution { p, k, residual })
}

pub fn solve_care(a: &DMatrix<f64>, b: &DMatrix<f64>, q: &DMatrix<f64>, r: &DMatrix<f64>) -> Result<CareSolution> {
    solve_care_with(a, b, q, r, None)
}

#[derive(Clone, Debug, PartialEq)]
pub struct GainResult {
    pub k: GainMatrix,
    pub p: StateMatrix,
    pub a: StateMatrix,
    pub b: InputMatrix,
}

/// Linearises the nominal model at (x, u) and synthesises the LQR gain.
pub fn synthesize(
    x: &State,
    u: &ControlInput,
    vehicle: &Vehicle,
    weights: &LqrWeights,
    warm: Option<&GainMatrix>,
) -> Result<GainResult> {
    let (a, b) = linearize(x, u, vehicle)?;
    let dyn_of = |m: &dyn Fn(usize, usize) -> f64, r, c| DMatrix::from_fn(r, c, |i, j| m(i, j));
    let ad = dyn_of(&|i, j| a[(i, j)], ERROR_DIM, ERROR_DIM);
    let bd = dyn_of(&|i, j| b[(i, j)], ERROR_DIM, INPUT_DIM);
    let qd = dyn_of(&|i, j| weights.q[(i, j)], ERROR_DIM, ERROR_DIM);
    let rd = dyn_of(&|i, j| weights.r[(i, j)], INPUT_DIM, INPUT_DIM);
    let warm_d = warm.map(|k| dyn_of(&|i, j| k[(i, j)], INPUT_DIM, ERROR_DIM));
    let sol = solve_care_with(&ad, &bd, &qd, &rd, warm_d.as_ref())?;
    Ok(GainResult {
        k: GainMatrix::from_fn(|i, j| sol.k[(i, j)]),
        p: StateMatrix::from_fn(|i, j| sol.p[(i, j)]),
        a,
        b,
    })
}

/// u = u* - K e(x, x*), saturated.
pub fn control(
    x: &State,
    x_ref: &State,
    u_ref: &ControlInput,
    k: &GainMatrix,
    limits: &ActuatorLimits,
) -> ControlInput {
    let du = k * error_state(x, x_ref).to_vector();
    let mut u = u_ref.to_array();
    for i in 0..INPUT_DIM {
        u[i] -= du[i];
    }
    limits.saturate(&ControlInput::from_slice(&u))
}
