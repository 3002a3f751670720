//! Monte Carlo robustness evaluation of a candidate design.
//!
//! A design is planned once on its nominal model. Each simulation then
//! draws a perturbed airframe and a turbulence realisation from its own
//! random stream and flies the plan with the TV-LQR tracker, which always
//! linearises the nominal model.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aero::{AeroConfig, Environment, StallParams};
use crate::airframe::{clamp_design, map_design_within, AirframeConfig, DesignBounds, DesignParams};
use crate::dynamics::{
    apply_actuator_dynamics, integrate_step, quat_rotate_inv, ControlInput, State, Vehicle, INPUT_DIM,
    STATE_DIM,
};
use crate::error::{CodesignError, Result};
use crate::trajopt::{self, obstacle_clearance, ConvergenceReport, Mission, SolverSettings, Trajectory};
use crate::turbulence::{Turbulence, TurbulenceConfig};
use crate::tvlqr::{control, synthesize, GainMatrix, LqrConfig, LqrWeights};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseConfig {
    /// Relative standard deviation of each design parameter.
    pub sigma: f64,
    pub wind_enabled: bool,
    pub n_sim: usize,
    pub base_seed: u64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self { sigma: 0.1, wind_enabled: true, n_sim: 100, base_seed: 0 }
    }
}

impl NoiseConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma >= 0.0) || self.n_sim == 0 {
            return Err(CodesignError::Config("noise needs sigma >= 0 and n_sim >= 1".into()));
        }
        Ok(())
    }
}

/// Weights of the per-simulation loss.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub w_track: f64,
    pub w_fail: f64,
    /// Hard stop: a simulation whose position error exceeds this is
    /// treated as diverged (m).
    pub divergence_distance: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { w_track: 10.0, w_fail: 100.0, divergence_distance: 50.0 }
    }
}

impl LossWeights {
    /// Cost assigned to a design whose plan failed.
    pub fn j_fail(&self) -> f64 {
        10.0 * self.w_fail
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.w_track >= 0.0 && self.w_fail > 0.0 && self.divergence_distance > 0.0) {
            return Err(CodesignError::Config("loss weights must be non-negative with w_fail > 0".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FailureReason {
    None,
    Diverged,
    GainSynthesis,
    Clearance,
    GateMiss,
}

impl FailureReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::None => "none",
            Self::Diverged => "diverged",
            Self::GainSynthesis => "gain-synthesis",
            Self::Clearance => "clearance",
            Self::GateMiss => "gate-miss",
        }
    }
}

/// One closed-loop flight, sampled at the control rate.
#[derive(Clone, Debug, PartialEq)]
pub struct SimLog {
    pub design: DesignParams,
    pub t: Vec<f64>,
    pub states: Vec<[f64; STATE_DIM]>,
    pub reference: Vec<[f64; STATE_DIM]>,
    pub inputs: Vec<[f64; INPUT_DIM]>,
    pub terminal_position: [f64; 3],
    pub min_clearance: f64,
    pub success: bool,
    /// Mean over samples of |p - p*|^2.
    pub mean_sq_error: f64,
    /// Time-energy cost of the flown inputs.
    pub cost: f64,
    pub reason: FailureReason,
}

impl SimLog {
    pub fn rmse(&self) -> f64 {
        self.mean_sq_error.sqrt()
    }

    pub fn loss(&self, w: &LossWeights) -> f64 {
        let fail = if self.success { 0.0 } else { w.w_fail };
        self.cost + w.w_track * self.mean_sq_error + fail
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnsembleResult {
    pub j_r: f64,
    pub rmse: f64,
    pub eta: f64,
    pub logs: Vec<SimLog>,
    /// Nominal plan; `None` when planning failed.
    pub reference: Option<Trajectory>,
    pub plan_report: Option<ConvergenceReport>,
}

/// d_p = d + delta with delta_j ~ N(0, (sigma d_j)^2), clamped to the box.
pub fn perturb_design<R: Rng + ?Sized>(d: &DesignParams, sigma: f64, bounds: &DesignBounds, rng: &mut R) -> DesignParams {
    let v = d.to_array();
    let p = v.map(|x| {
        let z: f64 = rng.sample(StandardNormal);
        x + sigma * x * z
    });
    clamp_design(DesignParams::from_slice(&p), bounds)
}

/// (RMSE over all samples of all simulations, success fraction).
pub fn metrics(logs: &[SimLog]) -> (f64, f64) {
    assert!(!logs.is_empty(), "metrics need at least one simulation");
    let n = logs.len() as f64;
    let ms = logs.iter().map(|l| l.mean_sq_error).sum::<f64>() / n;
    let eta = logs.iter().filter(|l| l.success).count() as f64 / n;
    (ms.sqrt(), eta)
}

fn min_clearance(p: &Vector3<f64>, mission: &Mission, span: f64) -> f64 {
    mission
        .obstacles
        .iter()
        .map(|o| obstacle_clearance(&[p.x, p.y, p.z], o, span))
        .fold(f64::INFINITY, f64::min)
}

/// Flies `traj` on `perturbed` from `x0` with gains synthesised on
/// `nominal`. Gains are refreshed every control period; the feedback law
/// itself runs at the physics rate. Wind is drawn from `rng` when `wind`
/// is given.
#[allow(clippy::too_many_arguments)]
pub fn simulate_closed_loop<R: Rng + ?Sized>(
    traj: &Trajectory,
    nominal: &Vehicle,
    perturbed: &Vehicle,
    mission: &Mission,
    lqr: &LqrConfig,
    weights: &LqrWeights,
    loss: &LossWeights,
    wind: Option<&TurbulenceConfig>,
    x0: &State,
    rng: &mut R,
) -> Result<SimLog> {
    lqr.validate()?;
    let dt = lqr.physics_dt;
    let substeps = lqr.substeps();
    let steps = (traj.tf / dt).round().max(1.0) as usize;
    let mut turbulence = wind.map(|c| Turbulence::new(c, dt)).transpose()?;
    let limits = &mission.limits;
    let span = perturbed.model.design.span;
    let cw = &mission.weights;

    let mut log = SimLog {
        design: perturbed.model.design,
        t: Vec::new(),
        states: Vec::new(),
        reference: Vec::new(),
        inputs: Vec::new(),
        terminal_position: [0.0; 3],
        min_clearance: min_clearance(&x0.p, mission, span),
        success: false,
        mean_sq_error: 0.0,
        cost: 0.0,
        reason: FailureReason::None,
    };
    let mut x = *x0;
    let (_, u0) = traj.sample(0.0);
    let mut applied = ControlInput::from_slice(&u0);
    let mut command = applied;
    let mut gain: Option<GainMatrix> = None;
    let mut energy = 0.0;
    let mut sq_sum = 0.0;

    let record = |log: &mut SimLog, t: f64, x: &State, u: &ControlInput, sq_sum: &mut f64| {
        let (xr, _) = traj.sample(t);
        let e = x.p - Vector3::new(xr[0], xr[1], xr[2]);
        *sq_sum += e.norm_squared();
        log.t.push(t);
        log.states.push(x.to_array());
        log.reference.push(xr);
        log.inputs.push(u.to_array());
        e.norm()
    };

    for step in 0..steps {
        let t = step as f64 * dt;
        let (xr, ur) = traj.sample(t);
        let x_ref = State::from_slice(&xr);
        if step % substeps == 0 {
            match synthesize(&x, &applied, nominal, weights, gain.as_ref()) {
                Ok(g) => gain = Some(g.k),
                Err(_) => {
                    log.reason = FailureReason::GainSynthesis;
                    break;
                }
            }
        }
        let k = gain.as_ref().expect("gain synthesised at step 0");
        command = control(&x, &x_ref, &ControlInput::from_slice(&ur), k, limits);
        if step % substeps == 0 {
            let err = record(&mut log, t, &x, &command, &mut sq_sum);
            if err > loss.divergence_distance {
                log.reason = FailureReason::Diverged;
                break;
            }
        }
        let w = match turbulence.as_mut() {
            Some(tb) => tb.step(rng),
            None => Vector3::zeros(),
        };
        applied = apply_actuator_dynamics(&command, &applied, dt, limits);
        let air = x.v - quat_rotate_inv(&x.quat_array(), &w);
        energy += cw.power(applied.thrust, air.norm(), &applied.delta) * dt;
        x = match integrate_step(&x, &applied, dt, perturbed, &w) {
            Ok(next) => next,
            Err(_) => {
                log.reason = FailureReason::Diverged;
                break;
            }
        };
        log.min_clearance = log.min_clearance.min(min_clearance(&x.p, mission, span));
    }
    if log.reason == FailureReason::None {
        record(&mut log, steps as f64 * dt, &x, &command, &mut sq_sum);
    }
    log.terminal_position = [x.p.x, x.p.y, x.p.z];
    log.mean_sq_error = sq_sum / log.t.len().max(1) as f64;
    log.cost = cw.omega1 * traj.tf + cw.omega2 * energy;
    if log.reason == FailureReason::None {
        let goal = Vector3::from(mission.terminal_position);
        if log.min_clearance < 0.0 {
            log.reason = FailureReason::Clearance;
        } else if (x.p - goal).norm() > mission.gate_radius {
            log.reason = FailureReason::GateMiss;
        } else {
            log.success = true;
        }
    }
    Ok(log)
}

/// Fixed physical and numerical context shared by all candidate designs.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluator {
    pub mission: Mission,
    pub airframe: AirframeConfig,
    pub bounds: DesignBounds,
    pub env: Environment,
    pub stall: StallParams,
    pub aero: AeroConfig,
    pub solver: SolverSettings,
    pub lqr: LqrConfig,
    pub turbulence: TurbulenceConfig,
    pub noise: NoiseConfig,
    pub loss: LossWeights,
}

impl Evaluator {
    pub fn validate(&self) -> Result<()> {
        self.airframe.validate()?;
        self.bounds.validate()?;
        self.solver.validate()?;
        self.lqr.validate()?;
        self.turbulence.validate()?;
        self.noise.validate()?;
        self.loss.validate()
    }

    pub fn vehicle(&self, d: &DesignParams) -> Result<Vehicle> {
        let model = map_design_within(d, &self.airframe, &self.bounds)?;
        Ok(Vehicle::new(model, self.env, self.stall, self.aero))
    }

    /// Nominal plan for `d`; `Ok(None)` when the solver did not converge.
    pub fn plan(&self, d: &DesignParams) -> Result<(Option<Trajectory>, ConvergenceReport)> {
        let vehicle = self.vehicle(d)?;
        let (traj, report) = trajopt::plan(&self.mission, &vehicle, &self.solver)?;
        Ok((report.converged().then_some(traj), report))
    }

    /// Open-loop objective J_n: the planned trajectory's cost, or J_fail.
    pub fn nominal_cost(&self, d: &DesignParams) -> Result<f64> {
        let (traj, _) = self.plan(d)?;
        Ok(match traj {
            Some(t) => trajopt::cost(&t, &self.mission.weights),
            None => self.loss.j_fail(),
        })
    }

    /// Seed of simulation `i`.
    pub fn sim_seed(&self, i: usize) -> u64 {
        self.noise.base_seed ^ i as u64
    }

    /// Runs the ensemble about an existing nominal plan.
    pub fn run_ensemble(&self, d: &DesignParams, traj: &Trajectory) -> Result<Vec<SimLog>> {
        let nominal = self.vehicle(d)?;
        let weights = self.lqr.weights()?;
        let x0 = self.mission.initial_state();
        let wind = self.noise.wind_enabled.then_some(&self.turbulence);
        (0..self.noise.n_sim)
            .into_par_iter()
            .map(|i| {
                let mut rng = ChaCha8Rng::seed_from_u64(self.sim_seed(i));
                let dp = perturb_design(d, self.noise.sigma, &self.bounds, &mut rng);
                let perturbed = self.vehicle(&dp)?;
                simulate_closed_loop(
                    traj, &nominal, &perturbed, &self.mission, &self.lqr, &weights, &self.loss, wind, &x0,
                    &mut rng,
                )
            })
            .collect()
    }

    /// Robust objective J_r with RMSE and success rate.
    pub fn evaluate(&self, d: &DesignParams) -> Result<EnsembleResult> {
        let (traj, report) = self.plan(d)?;
        let Some(traj) = traj else {
            return Ok(EnsembleResult {
                j_r: self.loss.j_fail(),
                rmse: f64::INFINITY,
                eta: 0.0,
                logs: Vec::new(),
                reference: None,
                plan_report: Some(report),
            });
        };
        let logs = self.run_ensemble(d, &traj)?;
        Ok(self.aggregate(logs, traj, report))
    }

    pub fn aggregate(&self, logs: Vec<SimLog>, traj: Trajectory, report: ConvergenceReport) -> EnsembleResult {
        let (rmse, eta) = metrics(&logs);
        let j_r = logs.iter().map(|l| l.loss(&self.loss)).sum::<f64>() / logs.len() as f64;
        EnsembleResult { j_r, rmse, eta, logs, reference: Some(traj), plan_report: Some(report) }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn log(sq: f64, success: bool) -> SimLog {
        SimLog {
            design: DesignParams::new(1.0, 0.2, 0.3),
            t: vec![0.0],
            states: vec![[0.0; STATE_DIM]],
            reference: vec![[0.0; STATE_DIM]],
            inputs: vec![[0.0; INPUT_DIM]],
            terminal_position: [0.0; 3],
            min_clearance: 1.0,
            success,
            mean_sq_error: sq,
            cost: 5.0,
            reason: if success { FailureReason::None } else { FailureReason::GateMiss },
        }
    }

    #[test]
    fn zero_sigma_leaves_design_unchanged() {
        let d = DesignParams::new(0.8, 0.2, 0.3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        assert_eq!(perturb_design(&d, 0.0, &DesignBounds::default(), &mut rng), d);
    }

    #[test]
    fn perturbation_spread_matches_sigma() {
        let d = DesignParams::new(0.5, 0.2, 0.25);
        let wide = DesignBounds { lower: [1e-3; 3], upper: [10.0; 3] };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 100_000;
        let mut s = [0.0; 3];
        let mut s2 = [0.0; 3];
        for _ in 0..n {
            let p = perturb_design(&d, 0.1, &wide, &mut rng).to_array();
            for j in 0..3 {
                s[j] += p[j];
                s2[j] += p[j] * p[j];
            }
        }
        for (j, v) in d.to_array().iter().enumerate() {
            let mean = s[j] / n as f64;
            let std = (s2[j] / n as f64 - mean * mean).sqrt();
            assert!((std / (0.1 * v) - 1.0).abs() < 0.02, "axis {j}: {std}");
        }
    }

    #[test]
    fn perturbation_clamps_into_box() {
        let b = DesignBounds::default();
        let d = DesignParams::from_slice(&b.upper);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..200 {
            assert!(b.contains(&perturb_design(&d, 0.5, &b, &mut rng)));
        }
    }

    #[test]
    fn metrics_examples() {
        // constant offset (0.3, 0.4, 0) gives |e|^2 = 0.25
        let (rmse, eta) = metrics(&[log(0.25, true)]);
        assert!((rmse - 0.5).abs() < 1e-15 && eta == 1.0);
        let (rmse, eta) = metrics(&[log(0.0, true), log(1.0, false)]);
        assert!((rmse - 0.5f64.sqrt()).abs() < 1e-15 && eta == 0.5);
        assert_eq!(metrics(&vec![log(0.0, true); 3]).0, 0.0);
    }

    #[test]
    fn failure_strictly_increases_loss() {
        let w = LossWeights::default();
        assert!(log(0.1, false).loss(&w) > log(0.1, true).loss(&w));
    }
}
