//! Rigid-body flight dynamics with quaternion kinematics.
//!
//! Conventions: the world frame is z-up with gravity (0, 0, -g); body axes
//! are x forward, y to port, z up. Quaternions are scalar-first Hamilton
//! quaternions rotating body vectors into the world frame, so the
//! world-to-body rotation used in the equations of motion is its transpose.

use nalgebra::{Matrix3, Quaternion, SVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::aero::{aero_wrench, AeroConfig, Environment, StallParams};
use crate::airframe::PhysicalModel;
use crate::autodiff::Real;
use crate::error::{CodesignError, Result};

pub const STATE_DIM: usize = 13;
pub const INPUT_DIM: usize = 4;

pub type StateVector = SVector<f64, STATE_DIM>;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct State {
    pub p: Vector3<f64>,
    pub q: Quaternion<f64>,
    pub v: Vector3<f64>,
    pub omega: Vector3<f64>,
}

impl State {
    pub fn new(p: Vector3<f64>, q: Quaternion<f64>, v: Vector3<f64>, omega: Vector3<f64>) -> Self {
        Self { p, q, v, omega }
    }

    /// Layout: p (3), q scalar-first (4), v_b (3), omega_b (3).
    pub fn to_array(&self) -> [f64; STATE_DIM] {
        [
            self.p.x, self.p.y, self.p.z, self.q.w, self.q.i, self.q.j, self.q.k, self.v.x, self.v.y,
            self.v.z, self.omega.x, self.omega.y, self.omega.z,
        ]
    }

    pub fn from_slice(x: &[f64]) -> Self {
        Self {
            p: Vector3::new(x[0], x[1], x[2]),
            q: Quaternion::new(x[3], x[4], x[5], x[6]),
            v: Vector3::new(x[7], x[8], x[9]),
            omega: Vector3::new(x[10], x[11], x[12]),
        }
    }

    pub fn to_vector(&self) -> StateVector {
        StateVector::from(self.to_array())
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }

    pub fn quat_array(&self) -> [f64; 4] {
        [self.q.w, self.q.i, self.q.j, self.q.k]
    }

    pub fn normalized(mut self) -> Self {
        self.q = self.q.normalize();
        self
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlInput {
    /// Thrust along body +x (N).
    pub thrust: f64,
    /// Elevator, aileron, rudder deflections (rad).
    pub delta: [f64; 3],
}

impl ControlInput {
    pub fn new(thrust: f64, delta: [f64; 3]) -> Self {
        Self { thrust, delta }
    }

    pub fn zero() -> Self {
        Self::new(0.0, [0.0; 3])
    }

    pub fn to_array(&self) -> [f64; INPUT_DIM] {
        [self.thrust, self.delta[0], self.delta[1], self.delta[2]]
    }

    pub fn from_slice(u: &[f64]) -> Self {
        Self::new(u[0], [u[1], u[2], u[3]])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ActuatorLimits {
    pub thrust_min: f64,
    pub thrust_max: f64,
    pub delta_min: [f64; 3],
    pub delta_max: [f64; 3],
    /// Surface rate limit (rad/s), shared by all channels.
    pub rate_max: f64,
}

impl Default for ActuatorLimits {
    fn default() -> Self {
        let d = 25f64.to_radians();
        Self {
            thrust_min: 0.0,
            thrust_max: 5.0,
            delta_min: [-d; 3],
            delta_max: [d; 3],
            rate_max: 8.0,
        }
    }
}

impl ActuatorLimits {
    pub fn with_thrust_max(thrust_max: f64) -> Self {
        Self { thrust_max, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.thrust_min < self.thrust_max
            && (0..3).all(|i| self.delta_min[i] < self.delta_max[i])
            && self.rate_max > 0.0;
        if ok {
            Ok(())
        } else {
            Err(CodesignError::Config("actuator limits must satisfy min < max and rate_max > 0".into()))
        }
    }

    pub fn saturate(&self, u: &ControlInput) -> ControlInput {
        let mut out = *u;
        out.thrust = u.thrust.clamp(self.thrust_min, self.thrust_max);
        for i in 0..3 {
            out.delta[i] = u.delta[i].clamp(self.delta_min[i], self.delta_max[i]);
        }
        out
    }
}

/// Airframe plus the aerodynamic and environment constants needed to evaluate
/// the equations of motion.
#[derive(Clone, Debug)]
pub struct Vehicle {
    pub model: PhysicalModel,
    pub env: Environment,
    pub stall: StallParams,
    pub aero: AeroConfig,
}

impl Vehicle {
    pub fn new(model: PhysicalModel, env: Environment, stall: StallParams, aero: AeroConfig) -> Self {
        Self { model, env, stall, aero }
    }
}

/// Body-to-world rotation matrix of a (not necessarily unit) quaternion.
pub fn rotation_matrix<T: Real>(q: &[T; 4]) -> Matrix3<T> {
    let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
    let (w, x, y, z) = (q[0] / n, q[1] / n, q[2] / n, q[3] / n);
    let one = T::one();
    let two = T::cst(2.0);
    Matrix3::new(
        one - two * (y * y + z * z),
        two * (x * y - w * z),
        two * (x * z + w * y),
        two * (x * y + w * z),
        one - two * (x * x + z * z),
        two * (y * z - w * x),
        two * (x * z - w * y),
        two * (y * z + w * x),
        one - two * (x * x + y * y),
    )
}

/// Hamilton product a (x) b, scalar-first.
pub fn quat_mul<T: Real>(a: &[T; 4], b: &[T; 4]) -> [T; 4] {
    [
        a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3],
        a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2],
        a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1],
        a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0],
    ]
}

pub fn quat_conj<T: Real>(q: &[T; 4]) -> [T; 4] {
    [q[0], -q[1], -q[2], -q[3]]
}

/// Spherical interpolation between unit quaternions along the shorter arc.
pub fn slerp(a: &Quaternion<f64>, b: &Quaternion<f64>, t: f64) -> Quaternion<f64> {
    let mut b = *b;
    let mut dot = a.dot(&b);
    if dot < 0.0 {
        b = -b;
        dot = -dot;
    }
    if dot > 1.0 - 1e-12 {
        return (a * (1.0 - t) + b * t).normalize();
    }
    let theta = dot.min(1.0).acos();
    let s = theta.sin();
    (a * ((1.0 - t) * theta).sin() / s + b * (t * theta).sin() / s).normalize()
}

/// World vector expressed in body axes.
pub fn quat_rotate_inv(q: &[f64; 4], v: &Vector3<f64>) -> Vector3<f64> {
    rotation_matrix(q).transpose() * v
}

/// State derivative for a given body wrench: kinematics plus Newton-Euler
/// in body axes (M nu_dot = -C(nu) nu + G(q) + F).
pub fn rigid_body_rates<T: Real>(
    x: &[T; STATE_DIM],
    force_body: &Vector3<T>,
    moment_body: &Vector3<T>,
    mass: f64,
    inertia: &Matrix3<f64>,
    inertia_inv: &Matrix3<f64>,
    g: f64,
) -> [T; STATE_DIM] {
    let q = [x[3], x[4], x[5], x[6]];
    let v = Vector3::new(x[7], x[8], x[9]);
    let w = Vector3::new(x[10], x[11], x[12]);
    let rot = rotation_matrix(&q);
    let p_dot = rot * v;
    let q_dot = quat_mul(&q, &[T::zero(), w.x, w.y, w.z]);
    let gravity_body = rot.transpose() * Vector3::new(T::zero(), T::zero(), T::cst(-g));
    let v_dot = -w.cross(&v) + gravity_body + force_body / T::cst(mass);
    let i_t = inertia.map(T::cst);
    let h = i_t * w;
    let w_dot = inertia_inv.map(T::cst) * (moment_body - w.cross(&h));
    let half = 0.5;
    [
        p_dot.x,
        p_dot.y,
        p_dot.z,
        q_dot[0] * half,
        q_dot[1] * half,
        q_dot[2] * half,
        q_dot[3] * half,
        v_dot.x,
        v_dot.y,
        v_dot.z,
        w_dot.x,
        w_dot.y,
        w_dot.z,
    ]
}

/// Full state derivative, generic over the scalar so the same code yields
/// exact Jacobians under dual numbers.
pub fn derivative<T: Real>(
    x: &[T; STATE_DIM],
    u: &[T; INPUT_DIM],
    vehicle: &Vehicle,
    wind_inertial: &Vector3<f64>,
) -> [T; STATE_DIM] {
    let q = [x[3], x[4], x[5], x[6]];
    let v = Vector3::new(x[7], x[8], x[9]);
    let w = Vector3::new(x[10], x[11], x[12]);
    let rot = rotation_matrix(&q);
    let wind_body = rot.transpose() * wind_inertial.map(T::cst);
    let (mut f, m) = aero_wrench(
        &v,
        &w,
        &[u[1], u[2], u[3]],
        &wind_body,
        &vehicle.model,
        &vehicle.env,
        &vehicle.stall,
        &vehicle.aero,
    );
    f.x += u[0];
    let model = &vehicle.model;
    rigid_body_rates(x, &f, &m, model.mass, &model.inertia, &model.inertia_inv, vehicle.env.g)
}

/// Checked f64 state derivative.
pub fn state_derivative(
    x: &State,
    u: &ControlInput,
    vehicle: &Vehicle,
    wind_inertial: &Vector3<f64>,
) -> Result<StateVector> {
    let xa = x.to_array();
    let ua = u.to_array();
    if !xa.iter().chain(ua.iter()).all(|v| v.is_finite()) || !wind_inertial.iter().all(|v| v.is_finite()) {
        return Err(CodesignError::NonFinite("state derivative input"));
    }
    Ok(StateVector::from(derivative(&xa, &ua, vehicle, wind_inertial)))
}

/// Classical fourth-order Runge-Kutta step of `f` over `dt`.
pub fn rk4<F>(x: &StateVector, dt: f64, mut f: F) -> StateVector
where
    F: FnMut(&StateVector) -> StateVector,
{
    let k1 = f(x);
    let k2 = f(&(x + k1 * (0.5 * dt)));
    let k3 = f(&(x + k2 * (0.5 * dt)));
    let k4 = f(&(x + k3 * dt));
    x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0)
}

/// Renormalises the quaternion block of a state vector in place.
pub fn renormalize(x: &mut StateVector) {
    let n = (x[3] * x[3] + x[4] * x[4] + x[5] * x[5] + x[6] * x[6]).sqrt();
    for i in 3..7 {
        x[i] /= n;
    }
}

/// One RK4 step with zero-order-hold input and wind, quaternion renormalised.
pub fn integrate_step(
    x: &State,
    u: &ControlInput,
    dt: f64,
    vehicle: &Vehicle,
    wind_inertial: &Vector3<f64>,
) -> Result<State> {
    if !(dt > 0.0) {
        return Err(CodesignError::Contract("integration step must be positive".into()));
    }
    if !x.is_finite() {
        return Err(CodesignError::Divergence("non-finite state".into()));
    }
    let ua = u.to_array();
    let mut next = rk4(&x.to_vector(), dt, |s| {
        let sa: [f64; STATE_DIM] = (*s).into();
        StateVector::from(derivative(&sa, &ua, vehicle, wind_inertial))
    });
    renormalize(&mut next);
    let out = State::from_slice(next.as_slice());
    if out.is_finite() {
        Ok(out)
    } else {
        Err(CodesignError::Divergence("non-finite state after step".into()))
    }
}

/// Rate-limits the surfaces toward the command, then applies position limits;
/// thrust responds instantaneously.
pub fn apply_actuator_dynamics(
    commanded: &ControlInput,
    previous: &ControlInput,
    dt: f64,
    limits: &ActuatorLimits,
) -> ControlInput {
    let step = limits.rate_max * dt;
    let mut out = ControlInput::new(
        commanded.thrust.clamp(limits.thrust_min, limits.thrust_max),
        previous.delta,
    );
    for i in 0..3 {
        let d = (commanded.delta[i] - previous.delta[i]).clamp(-step, step);
        out.delta[i] = (previous.delta[i] + d).clamp(limits.delta_min[i], limits.delta_max[i]);
    }
    out
}
