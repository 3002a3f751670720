//! Minimum time-energy trajectory optimisation by trapezoidal direct
//! collocation.

mod banded;
mod nlp;
mod solver;

pub use banded::{BorderedBanded, Factorization};
pub use nlp::{transcribe, NlpProblem, Residuals, SparseRows, KNOT_DIM};
pub use solver::{
    solve, solve_nlp, ConvergenceReport, Derivatives, Problem, SolveStatus, SolverSettings, Values,
};

use std::io::{BufRead, Write};

use nalgebra::{Quaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::autodiff::Real;
use crate::dynamics::{
    derivative, quat_conj, quat_mul, slerp, ActuatorLimits, State, Vehicle, INPUT_DIM, STATE_DIM,
};
use crate::error::{CodesignError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Obstacle {
    /// Cylinder axis point; the cylinder extends infinitely along z.
    pub center: [f64; 3],
    pub radius: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CostWeights {
    pub omega1: f64,
    pub omega2: f64,
    pub eta_p: f64,
    /// W/rad^2
    pub k_s: f64,
}

impl Default for CostWeights {
    fn default() -> Self {
        Self { omega1: 0.1, omega2: 1.0, eta_p: 0.5, k_s: 0.1 }
    }
}

impl CostWeights {
    pub fn validate(&self) -> Result<()> {
        let ok = self.omega1 >= 0.0
            && self.omega2 >= 0.0
            && self.k_s >= 0.0
            && self.eta_p > 0.0
            && self.eta_p <= 1.0;
        if ok {
            Ok(())
        } else {
            Err(CodesignError::Config("cost weights must be >= 0 with eta_p in (0, 1]".into()))
        }
    }

    /// Instantaneous power-like integrand: T V / eta_p + k_s |delta|^2.
    pub fn power(&self, thrust: f64, airspeed: f64, delta: &[f64; 3]) -> f64 {
        thrust * airspeed / self.eta_p + self.k_s * delta.iter().map(|d| d * d).sum::<f64>()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Mission {
    pub name: String,
    pub initial_position: [f64; 3],
    pub initial_attitude: [f64; 4],
    pub initial_velocity: [f64; 3],
    pub initial_rate: [f64; 3],
    pub terminal_position: [f64; 3],
    pub terminal_attitude: [f64; 4],
    pub terminal_velocity: [f64; 3],
    pub obstacles: Vec<Obstacle>,
    pub gate_radius: f64,
    pub limits: ActuatorLimits,
    pub weights: CostWeights,
    pub knots: usize,
    pub tf_min: f64,
    pub tf_max: f64,
}

impl Default for Mission {
    fn default() -> Self {
        Self::cruise(60.0)
    }
}

impl Mission {
    fn base(name: &str, goal: [f64; 3], q_goal: [f64; 4], knots: usize) -> Self {
        Self {
            name: name.into(),
            initial_position: [0.0; 3],
            initial_attitude: [1.0, 0.0, 0.0, 0.0],
            initial_velocity: [10.0, 0.0, 0.0],
            initial_rate: [0.0; 3],
            terminal_position: goal,
            terminal_attitude: q_goal,
            terminal_velocity: [10.0, 0.0, 0.0],
            obstacles: Vec::new(),
            gate_radius: 1.0,
            limits: ActuatorLimits::default(),
            weights: CostWeights::default(),
            knots,
            tf_min: 0.5,
            tf_max: 30.0,
        }
    }

    /// Straight level flight over `distance` metres with no obstacles.
    pub fn cruise(distance: f64) -> Self {
        Self::base("cruise", [distance, 0.0, 0.0], [1.0, 0.0, 0.0, 0.0], 30)
    }

    /// Two infinite cylinders of radius 4 m on the straight line to the goal.
    pub fn obstacle_avoidance() -> Self {
        let mut m = Self::base("obstacle_avoidance", [60.0, 0.0, 0.0], [1.0, 0.0, 0.0, 0.0], 60);
        m.obstacles = vec![
            Obstacle { center: [20.0, 0.0, 0.0], radius: 4.0 },
            Obstacle { center: [40.0, 0.0, 0.0], radius: 4.0 },
        ];
        m
    }

    /// Obstacle course scaled down for quick runs: a single cylinder at
    /// 20 m and the goal at 40 m.
    pub fn short_obstacle_avoidance() -> Self {
        let mut m = Self::base("short_obstacle_avoidance", [40.0, 0.0, 0.0], [1.0, 0.0, 0.0, 0.0], 30);
        m.obstacles = vec![Obstacle { center: [20.0, 0.0, 0.0], radius: 4.0 }];
        m
    }

    pub fn vertical_reversal() -> Self {
        let mut m = Self::base("vertical_reversal", [0.0, 0.0, 40.0], [0.0, 0.0, 1.0, 0.0], 50);
        m.limits = ActuatorLimits::with_thrust_max(10.0);
        m
    }

    pub fn hairpin() -> Self {
        let mut m = Self::base("hairpin", [0.0, 0.0, 0.0], [0.0, 0.0, 0.0, 1.0], 80);
        m.limits = ActuatorLimits::with_thrust_max(10.0);
        m
    }

    pub fn initial_state(&self) -> State {
        let [w, i, j, k] = self.initial_attitude;
        State::new(
            Vector3::from(self.initial_position),
            Quaternion::new(w, i, j, k),
            Vector3::from(self.initial_velocity),
            Vector3::from(self.initial_rate),
        )
    }

    /// Checks structural consistency; `span` is the candidate wing span used
    /// to inflate obstacles.
    pub fn validate(&self, span: f64) -> Result<()> {
        let err = |m: String| Err(CodesignError::Mission(m));
        if self.knots < 10 {
            return err(format!("knot count {} below 10", self.knots));
        }
        if !(self.tf_min > 0.0 && self.tf_min < self.tf_max) {
            return err("t_f bounds must satisfy 0 < min < max".into());
        }
        if !(self.gate_radius > 0.0) {
            return err("gate radius must be positive".into());
        }
        for (name, q) in [("initial", self.initial_attitude), ("terminal", self.terminal_attitude)] {
            let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
            if (n - 1.0).abs() > 1e-9 {
                return err(format!("{name} attitude is not a unit quaternion (norm {n})"));
            }
        }
        let finite = self
            .initial_position
            .iter()
            .chain(&self.initial_velocity)
            .chain(&self.initial_rate)
            .chain(&self.terminal_position)
            .chain(&self.terminal_velocity)
            .all(|v| v.is_finite());
        if !finite {
            return err("non-finite boundary condition".into());
        }
        self.limits.validate()?;
        self.weights.validate()?;
        for (j, o) in self.obstacles.iter().enumerate() {
            if !(o.radius > 0.0) || !o.center.iter().all(|v| v.is_finite()) {
                return err(format!("obstacle {j} is malformed"));
            }
            for (name, p) in [("start", self.initial_position), ("goal", self.terminal_position)] {
                if obstacle_clearance(&p, o, span) <= 0.0 {
                    return err(format!("{name} lies inside obstacle {j}"));
                }
            }
        }
        Ok(())
    }
}

/// Knot-sampled trajectory. `rates` holds the state derivatives at the knots
/// when known, which lets `sample` use the collocation interpolant.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub t: Vec<f64>,
    pub states: Vec<[f64; STATE_DIM]>,
    pub inputs: Vec<[f64; INPUT_DIM]>,
    pub tf: f64,
    pub rates: Vec<[f64; STATE_DIM]>,
}

impl Trajectory {
    pub fn new(
        tf: f64,
        states: Vec<[f64; STATE_DIM]>,
        inputs: Vec<[f64; INPUT_DIM]>,
    ) -> Result<Self> {
        let n = states.len();
        if n < 2 || inputs.len() != n {
            return Err(CodesignError::Contract(format!(
                "trajectory needs matching state/input lengths >= 2 (got {n} and {})",
                inputs.len()
            )));
        }
        if !(tf > 0.0) {
            return Err(CodesignError::Contract("terminal time must be positive".into()));
        }
        let t = (0..n).map(|k| tf * k as f64 / (n - 1) as f64).collect();
        Ok(Self { t, states, inputs, tf, rates: Vec::new() })
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn dt(&self) -> f64 {
        self.tf / (self.len() - 1) as f64
    }

    pub fn state(&self, k: usize) -> State {
        State::from_slice(&self.states[k])
    }

    pub fn with_rates(mut self, vehicle: &Vehicle) -> Self {
        let zero = Vector3::zeros();
        self.rates = self
            .states
            .iter()
            .zip(&self.inputs)
            .map(|(x, u)| derivative(x, u, vehicle, &zero))
            .collect();
        self
    }

    fn interval(&self, t: f64) -> (usize, f64) {
        let h = self.dt();
        let t = t.clamp(0.0, self.tf);
        let k = ((t / h).floor() as usize).min(self.len() - 2);
        (k, t - k as f64 * h)
    }

    /// Reference state and input at time `t` (clamped to [0, t_f]). Inputs
    /// are linear between knots; states use the quadratic trapezoidal
    /// interpolant when knot rates are present and linear otherwise. The
    /// quaternion is renormalised.
    pub fn sample(&self, t: f64) -> ([f64; STATE_DIM], [f64; INPUT_DIM]) {
        let (k, s) = self.interval(t);
        let h = self.dt();
        let a = s / h;
        let mut x = [0.0; STATE_DIM];
        let (x0, x1) = (&self.states[k], &self.states[k + 1]);
        if self.rates.len() == self.len() {
            let (f0, f1) = (&self.rates[k], &self.rates[k + 1]);
            for i in 0..STATE_DIM {
                x[i] = x0[i] + f0[i] * s + (f1[i] - f0[i]) * s * s / (2.0 * h);
            }
        } else {
            for i in 0..STATE_DIM {
                x[i] = x0[i] + (x1[i] - x0[i]) * a;
            }
        }
        let n = x[3..7].iter().map(|v| v * v).sum::<f64>().sqrt();
        x[3..7].iter_mut().for_each(|v| *v /= n);
        let (u0, u1) = (&self.inputs[k], &self.inputs[k + 1]);
        let mut u = [0.0; INPUT_DIM];
        for i in 0..INPUT_DIM {
            u[i] = u0[i] + (u1[i] - u0[i]) * a;
        }
        (x, u)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(
            w,
            "t,px,py,pz,qw,qx,qy,qz,vx,vy,vz,wx,wy,wz,thrust,delta_e,delta_a,delta_r"
        )?;
        for k in 0..self.len() {
            let mut line = format!("{}", self.t[k]);
            for v in self.states[k].iter().chain(&self.inputs[k]) {
                line.push(',');
                line.push_str(&v.to_string());
            }
            writeln!(w, "{line}")?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut states = Vec::new();
        let mut inputs = Vec::new();
        let mut last_t = 0.0;
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') || trimmed.starts_with('t') {
                continue;
            }
            let vals: std::result::Result<Vec<f64>, _> = line.split(',').map(|s| s.trim().parse()).collect();
            let vals = vals.map_err(|e| CodesignError::Config(format!("trajectory csv line {}: {e}", i + 1)))?;
            if vals.len() != 1 + STATE_DIM + INPUT_DIM {
                return Err(CodesignError::Config(format!("trajectory csv line {} has {} columns", i + 1, vals.len())));
            }
            last_t = vals[0];
            states.push(vals[1..1 + STATE_DIM].try_into().unwrap());
            inputs.push(vals[1 + STATE_DIM..].try_into().unwrap());
        }
        Self::new(last_t, states, inputs)
    }
}

/// J = omega1 t_f + omega2 sum_k (T_k V_k / eta_p + k_s |delta_k|^2) dt with
/// V_k the body-frame airspeed in still air.
pub fn cost(traj: &Trajectory, w: &CostWeights) -> f64 {
    let dt = traj.dt();
    let energy: f64 = traj
        .states
        .iter()
        .zip(&traj.inputs)
        .map(|(x, u)| {
            let v = (x[7] * x[7] + x[8] * x[8] + x[9] * x[9]).sqrt();
            w.power(u[0], v, &[u[1], u[2], u[3]]) * dt
        })
        .sum();
    w.omega1 * traj.tf + w.omega2 * energy
}

/// Trapezoidal defect x_{k+1} - x_k - dt/2 (f_k + f_{k+1}).
pub fn trapezoid_defect<T: Real>(xk: &[T], xk1: &[T], fk: &[T], fk1: &[T], dt: T) -> Vec<T> {
    let half = dt * 0.5;
    (0..xk.len()).map(|i| xk1[i] - xk[i] - half * (fk[i] + fk1[i])).collect()
}

/// Collocation defect of the vehicle dynamics in still air.
pub fn defect(
    vehicle: &Vehicle,
    xk: &[f64; STATE_DIM],
    xk1: &[f64; STATE_DIM],
    uk: &[f64; INPUT_DIM],
    uk1: &[f64; INPUT_DIM],
    dt: f64,
) -> [f64; STATE_DIM] {
    let zero = Vector3::zeros();
    let fk = derivative(xk, uk, vehicle, &zero);
    let fk1 = derivative(xk1, uk1, vehicle, &zero);
    trapezoid_defect(xk, xk1, &fk, &fk1, dt).try_into().unwrap()
}

/// Horizontal distance to the cylinder surface inflated by half the span.
pub fn obstacle_clearance(p: &[f64; 3], obstacle: &Obstacle, span: f64) -> f64 {
    let dx = p[0] - obstacle.center[0];
    let dy = p[1] - obstacle.center[1];
    (dx * dx + dy * dy).sqrt() - (obstacle.radius + 0.5 * span)
}

/// Body-axis rotation vector taking `a` to `b` (log map of conj(a) b).
fn relative_rotation(a: &Quaternion<f64>, b: &Quaternion<f64>) -> Vector3<f64> {
    let qa = [a.w, a.i, a.j, a.k];
    let mut qb = [b.w, b.i, b.j, b.k];
    if qa.iter().zip(&qb).map(|(x, y)| x * y).sum::<f64>() < 0.0 {
        qb.iter_mut().for_each(|v| *v = -*v);
    }
    let r = quat_mul(&quat_conj(&qa), &qb);
    let vn = (r[1] * r[1] + r[2] * r[2] + r[3] * r[3]).sqrt();
    if vn < 1e-15 {
        return Vector3::zeros();
    }
    let angle = 2.0 * vn.atan2(r[0]);
    Vector3::new(r[1], r[2], r[3]) * (angle / vn)
}

/// Straight-line guess bent around obstacles. Knots falling inside an
/// inflated cylinder are pushed sideways onto its rim (alternating port and
/// starboard when they sit on the axis) and the path is smoothed; knots are
/// then respaced uniformly in arc length. Attitude follows the slerp from
/// the initial to the terminal quaternion, the body velocity is constant at
/// the initial speed, the thrust balances cruise drag and deflections are
/// zero.
pub fn initial_guess(mission: &Mission, vehicle: &Vehicle) -> Trajectory {
    let n = mission.knots.max(2);
    let p0 = Vector3::from(mission.initial_position);
    let p1 = Vector3::from(mission.terminal_position);
    let span = vehicle.model.design.span;
    let margin = 0.5;
    let dense = 4 * n;
    let mut path: Vec<Vector3<f64>> =
        (0..dense).map(|i| p0 + (p1 - p0) * (i as f64 / (dense - 1) as f64)).collect();
    if !mission.obstacles.is_empty() {
        for _ in 0..30 {
            push_out(&mut path, &mission.obstacles, span, margin);
            let prev = path.clone();
            for i in 1..dense - 1 {
                path[i] = (prev[i - 1] + prev[i] * 2.0 + prev[i + 1]) * 0.25;
            }
        }
        push_out(&mut path, &mission.obstacles, span, margin);
    }
    let mut arc = vec![0.0; dense];
    for i in 1..dense {
        arc[i] = arc[i - 1] + (path[i] - path[i - 1]).norm();
    }
    let length = arc[dense - 1];
    let positions: Vec<Vector3<f64>> = (0..n)
        .map(|k| {
            let s = length * k as f64 / (n - 1) as f64;
            let i = arc.partition_point(|&a| a < s).clamp(1, dense - 1);
            let seg = arc[i] - arc[i - 1];
            let a = if seg > 0.0 { (s - arc[i - 1]) / seg } else { 0.0 };
            path[i - 1] + (path[i] - path[i - 1]) * a
        })
        .collect();

    let speed = Vector3::from(mission.initial_velocity).norm().max(1.0);
    let tf = (length / speed).clamp(mission.tf_min, mission.tf_max);
    let x0 = mission.initial_state();
    let [w, i, j, k] = mission.terminal_attitude;
    let q_goal = Quaternion::new(w, i, j, k);
    let rate = relative_rotation(&x0.q, &q_goal) / tf;
    let thrust = cruise_thrust(vehicle, speed).clamp(mission.limits.thrust_min, mission.limits.thrust_max);

    let mut states = Vec::with_capacity(n);
    let mut inputs = Vec::with_capacity(n);
    for (kk, p) in positions.iter().enumerate() {
        let s = kk as f64 / (n - 1) as f64;
        let q = slerp(&x0.q, &q_goal, s);
        states.push([
            p.x, p.y, p.z, q.w, q.i, q.j, q.k, speed, 0.0, 0.0, rate.x, rate.y, rate.z,
        ]);
        inputs.push([thrust, 0.0, 0.0, 0.0]);
    }
    states[0] = x0.to_array();
    Trajectory::new(tf, states, inputs).expect("guess has consistent layout")
}

fn push_out(path: &mut [Vector3<f64>], obstacles: &[Obstacle], span: f64, margin: f64) {
    let last = path.len() - 1;
    for p in path[1..last].iter_mut() {
        for (j, o) in obstacles.iter().enumerate() {
            let r = o.radius + 0.5 * span + margin;
            let (dx, dy) = (p.x - o.center[0], p.y - o.center[1]);
            if dx * dx + dy * dy < r * r {
                let side = if dy.abs() > 1e-6 {
                    dy.signum()
                } else if j % 2 == 0 {
                    1.0
                } else {
                    -1.0
                };
                p.y = o.center[1] + side * (r * r - dx * dx).max(0.0).sqrt();
            }
        }
    }
}

/// Validates the mission, solves the NLP from the default guess and returns
/// the trajectory with its knot rates attached.
pub fn plan(mission: &Mission, vehicle: &Vehicle, settings: &SolverSettings) -> Result<(Trajectory, ConvergenceReport)> {
    let problem = transcribe(mission, vehicle, settings)?;
    let guess = initial_guess(mission, vehicle);
    let (traj, report) = solve(&problem, &guess, settings)?;
    Ok((traj.with_rates(vehicle), report))
}

/// Thrust cancelling the body-x aerodynamic force in level flight at `speed`.
pub fn cruise_thrust(vehicle: &Vehicle, speed: f64) -> f64 {
    let x = [0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, speed, 0.0, 0.0, 0.0, 0.0, 0.0];
    let f = derivative(&x, &[0.0; INPUT_DIM], vehicle, &Vector3::zeros());
    (-f[7] * vehicle.model.mass).max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aero::{AeroConfig, Environment, StallParams};
    use crate::airframe::{map_design, AirframeConfig, DesignParams};
    use approx::assert_relative_eq;

    fn vehicle() -> Vehicle {
        let model = map_design(&DesignParams::new(1.0, 0.2, 0.3), &AirframeConfig::default()).unwrap();
        Vehicle::new(model, Environment::default(), StallParams::default(), AeroConfig::default())
    }

    fn straight(n: usize, tf: f64, inputs: [f64; 4]) -> Trajectory {
        let states = (0..n)
            .map(|k| {
                let mut x = [0.0; 13];
                x[0] = k as f64;
                x[3] = 1.0;
                x[7] = 10.0;
                x
            })
            .collect();
        Trajectory::new(tf, states, vec![inputs; n]).unwrap()
    }

    #[test]
    fn zero_inputs_cost_is_time_term() {
        let w = CostWeights::default();
        let tr = straight(11, 4.0, [0.0; 4]);
        assert_relative_eq!(cost(&tr, &w), w.omega1 * 4.0, max_relative = 1e-15);
    }

    #[test]
    fn single_knot_energy_contribution() {
        // 5 N at 10 m/s with eta 0.5 over 0.1 s is 10 J.
        let w = CostWeights { omega1: 0.0, omega2: 1.0, eta_p: 0.5, k_s: 0.1 };
        let mut tr = straight(11, 1.0, [0.0; 4]);
        tr.inputs[3][0] = 5.0;
        assert_relative_eq!(cost(&tr, &w), 10.0, max_relative = 1e-12);
        let w2 = CostWeights { omega2: 2.0, ..w };
        assert_eq!(cost(&tr, &w2), 2.0 * cost(&tr, &w));
    }

    #[test]
    fn scalar_trapezoid_defect() {
        // x' = -x: zero defect iff x1 = (1 - h/2)/(1 + h/2) x0
        let h = 0.3;
        let x1 = (1.0 - h / 2.0) / (1.0 + h / 2.0);
        let z = trapezoid_defect(&[1.0], &[x1], &[-1.0], &[-x1], h);
        assert!(z[0].abs() < 1e-15);
        let z = trapezoid_defect(&[1.0], &[x1 + 0.1], &[-1.0], &[-x1 - 0.1], h);
        assert!(z[0].abs() > 1e-3);
    }

    #[test]
    fn defect_antisymmetric_under_reversal() {
        let (a, b, fa, fb) = ([1.0, 2.0], [1.5, -0.5], [0.3, 0.1], [-0.2, 0.7]);
        let fw = trapezoid_defect(&a, &b, &fa, &fb, 0.2);
        let bw = trapezoid_defect(&b, &a, &fb, &fa, -0.2);
        for i in 0..2 {
            assert_relative_eq!(fw[i], -bw[i], epsilon = 1e-15);
        }
    }

    #[test]
    fn equilibrium_defect_vanishes() {
        let x = [1.0; 3];
        let z = trapezoid_defect(&x, &x, &[0.0; 3], &[0.0; 3], 0.5);
        assert!(z.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn clearance_examples() {
        let o = Obstacle { center: [20.0, 0.0, 0.0], radius: 4.0 };
        assert_relative_eq!(obstacle_clearance(&[20.0, 4.5, 0.0], &o, 1.0), 0.0, epsilon = 1e-15);
        assert_eq!(
            obstacle_clearance(&[23.0, 1.0, -5.0], &o, 1.0),
            obstacle_clearance(&[23.0, 1.0, 17.0], &o, 1.0)
        );
        assert_eq!(obstacle_clearance(&[20.0, 0.0, 0.0], &o, 1.0), -4.5);
    }

    #[test]
    fn straight_guess_time_is_path_over_speed() {
        let v = vehicle();
        let g = initial_guess(&Mission::cruise(60.0), &v);
        assert_relative_eq!(g.tf, 6.0, max_relative = 1e-12);
        assert_relative_eq!(g.states.last().unwrap()[0], 60.0, max_relative = 1e-12);
        assert!(g.inputs[0][0] > 0.0);
    }

    #[test]
    fn coincident_start_goal_gives_constant_positions() {
        let v = vehicle();
        let mut m = Mission::cruise(0.0);
        m.terminal_position = [0.0; 3];
        let g = initial_guess(&m, &v);
        assert!(g.states.iter().all(|x| x[..3] == [0.0; 3]));
        assert_eq!(g.tf, m.tf_min);
    }

    #[test]
    fn reversal_guess_midpoint_is_half_rotation() {
        let v = vehicle();
        let mut m = Mission::vertical_reversal();
        m.knots = 11;
        let g = initial_guess(&m, &v);
        let q = &g.states[5][3..7];
        let h = std::f64::consts::FRAC_PI_4;
        assert_relative_eq!(q[0], h.cos(), epsilon = 1e-12);
        assert_relative_eq!(q[2], h.sin(), epsilon = 1e-12);
    }

    #[test]
    fn obstacle_guess_is_clear() {
        let v = vehicle();
        let m = Mission::obstacle_avoidance();
        let g = initial_guess(&m, &v);
        for x in &g.states {
            for o in &m.obstacles {
                assert!(obstacle_clearance(&[x[0], x[1], x[2]], o, 1.0) > 0.0);
            }
        }
    }

    #[test]
    fn terminal_inside_obstacle_is_rejected() {
        let mut m = Mission::obstacle_avoidance();
        m.terminal_position = [40.0, 1.0, 0.0];
        assert!(matches!(m.validate(1.0), Err(CodesignError::Mission(_))));
        assert!(Mission::obstacle_avoidance().validate(1.0).is_ok());
        let mut few = Mission::cruise(60.0);
        few.knots = 5;
        assert!(few.validate(1.0).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let tr = straight(5, 2.0, [1.0, 0.1, -0.2, 0.3]);
        let mut buf = Vec::new();
        tr.write_csv(&mut buf).unwrap();
        let back = Trajectory::read_csv(std::io::Cursor::new(buf)).unwrap();
        assert_eq!(back.states, tr.states);
        assert_eq!(back.inputs, tr.inputs);
        assert_eq!(back.tf, tr.tf);
    }

    #[test]
    fn sample_hits_knots() {
        let v = vehicle();
        let tr = initial_guess(&Mission::cruise(60.0), &v).with_rates(&v);
        let (x, u) = tr.sample(tr.t[7]);
        for i in 0..13 {
            assert_relative_eq!(x[i], tr.states[7][i], epsilon = 1e-9);
        }
        assert_eq!(u, tr.inputs[7]);
    }
}
