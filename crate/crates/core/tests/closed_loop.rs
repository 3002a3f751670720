use std::sync::OnceLock;

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use uav_codesign::aero::{AeroConfig, Environment, StallParams};
use uav_codesign::airframe::{AirframeConfig, DesignBounds, DesignParams};
use uav_codesign::dynamics::Vehicle;
use uav_codesign::ensemble::{
    metrics, simulate_closed_loop, Evaluator, FailureReason, LossWeights, NoiseConfig, SimLog,
};
use uav_codesign::trajopt::{self, Mission, SolverSettings, Trajectory};
use uav_codesign::turbulence::TurbulenceConfig;
use uav_codesign::tvlqr::LqrConfig;

/// A design with a small positive static margin whose trim elevator leaves
/// authority in both directions.
const DESIGN: [f64; 3] = [0.8, 0.3, 0.4];

fn evaluator(mission: Mission, n_sim: usize, sigma: f64, wind: bool) -> Evaluator {
    Evaluator {
        mission,
        airframe: AirframeConfig::default(),
        bounds: DesignBounds::default(),
        env: Environment::default(),
        stall: StallParams::default(),
        aero: AeroConfig::default(),
        solver: SolverSettings { quat_tol: 1e-2, ..Default::default() },
        lqr: LqrConfig::default(),
        turbulence: TurbulenceConfig::default(),
        noise: NoiseConfig { sigma, wind_enabled: wind, n_sim, base_seed: 17 },
        loss: LossWeights::default(),
    }
}

fn cruise_plan() -> &'static (Evaluator, Trajectory) {
    static PLAN: OnceLock<(Evaluator, Trajectory)> = OnceLock::new();
    PLAN.get_or_init(|| {
        let ev = evaluator(Mission::cruise(60.0), 1, 0.0, false);
        let (traj, report) = ev.plan(&DesignParams::from_slice(&DESIGN)).unwrap();
        assert!(report.converged(), "{report:?}");
        (ev, traj.unwrap())
    })
}

fn fly(ev: &Evaluator, traj: &Trajectory, nominal: &Vehicle, actual: &Vehicle, offset: Vector3<f64>) -> SimLog {
    let mut x0 = ev.mission.initial_state();
    x0.p += offset;
    let w = ev.lqr.weights().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    simulate_closed_loop(traj, nominal, actual, &ev.mission, &ev.lqr, &w, &ev.loss, None, &x0, &mut rng).unwrap()
}

fn position_error(log: &SimLog, k: usize) -> f64 {
    let (x, r) = (&log.states[k], &log.reference[k]);
    ((x[0] - r[0]).powi(2) + (x[1] - r[1]).powi(2) + (x[2] - r[2]).powi(2)).sqrt()
}

#[test]
fn cruise_tracking_on_nominal_model() {
    let (ev, traj) = cruise_plan();
    let v = ev.vehicle(&DesignParams::from_slice(&DESIGN)).unwrap();
    let log = fly(ev, traj, &v, &v, Vector3::zeros());
    assert!(log.success, "{:?}", log.reason);
    assert!(log.rmse() < 0.15, "rmse {}", log.rmse());
    assert!((traj.tf - 6.0).abs() < 1.0, "t_f {}", traj.tf);
}

#[test]
fn initial_offset_decays_within_five_seconds() {
    let (ev, traj) = cruise_plan();
    let v = ev.vehicle(&DesignParams::from_slice(&DESIGN)).unwrap();
    for offset in [Vector3::new(0.0, 0.5, 0.0), Vector3::new(0.0, 0.0, 0.5), Vector3::new(0.0, -0.3, 0.4)] {
        let log = fly(ev, traj, &v, &v, offset);
        assert_eq!(log.reason, FailureReason::None);
        let k5 = log.t.iter().position(|t| *t >= 5.0 - 1e-9).unwrap();
        let e5 = position_error(&log, k5);
        assert!(e5 < 0.1, "offset {offset:?}: error {e5} at 5 s");
        assert!((k5..log.t.len()).all(|k| position_error(&log, k) < 0.1));
    }
}

#[test]
fn heavier_airframe_tracks_no_better() {
    let (ev, traj) = cruise_plan();
    let v = ev.vehicle(&DesignParams::from_slice(&DESIGN)).unwrap();
    let mut heavy = v.clone();
    heavy.model.mass *= 1.5;
    let base = fly(ev, traj, &v, &v, Vector3::zeros());
    let stressed = fly(ev, traj, &v, &heavy, Vector3::zeros());
    assert!(stressed.rmse() >= base.rmse(), "{} < {}", stressed.rmse(), base.rmse());
    assert!(stressed.rmse().is_finite());
}

#[test]
fn single_noise_free_run_equals_robust_objective() {
    let (ev, traj) = cruise_plan();
    let d = DesignParams::from_slice(&DESIGN);
    let r = ev.evaluate(&d).unwrap();
    let v = ev.vehicle(&d).unwrap();
    let single = fly(ev, traj, &v, &v, Vector3::zeros());
    assert_eq!(r.j_r, single.loss(&ev.loss));
    assert_eq!(r.logs.len(), 1);
    assert_eq!(r.eta, 1.0);
}

#[test]
fn noise_free_ensemble_members_are_identical() {
    let (ev, traj) = cruise_plan();
    let ev4 = Evaluator { noise: NoiseConfig { n_sim: 4, ..ev.noise }, ..ev.clone() };
    let d = DesignParams::from_slice(&DESIGN);
    let logs = ev4.run_ensemble(&d, traj).unwrap();
    assert!(logs.windows(2).all(|w| w[0] == w[1]));
    let (_, eta) = metrics(&logs);
    assert!(eta == 0.0 || eta == 1.0);
}

#[test]
fn ensemble_is_deterministic_and_eta_counts_successes() {
    let (ev, traj) = cruise_plan();
    let noisy = Evaluator { noise: NoiseConfig { sigma: 0.05, wind_enabled: true, n_sim: 6, base_seed: 3 }, ..ev.clone() };
    let d = DesignParams::from_slice(&DESIGN);
    let a = noisy.run_ensemble(&d, traj).unwrap();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let b = pool.install(|| noisy.run_ensemble(&d, traj).unwrap());
    assert_eq!(a, b);
    let (_, eta) = metrics(&a);
    assert_eq!(eta, a.iter().filter(|l| l.success).count() as f64 / a.len() as f64);
    for l in &a {
        assert_eq!(l.success, l.reason == FailureReason::None);
    }
}

#[test]
fn obstacle_contact_fails_regardless_of_terminal_state() {
    let (ev, traj) = cruise_plan();
    let mut mission = ev.mission.clone();
    // on the flown path, far from the goal
    mission.obstacles.push(trajopt::Obstacle { center: [30.0, 6.0, 0.0], radius: 5.8 });
    let v = ev.vehicle(&DesignParams::from_slice(&DESIGN)).unwrap();
    let w = ev.lqr.weights().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let x0 = mission.initial_state();
    let log =
        simulate_closed_loop(traj, &v, &v, &mission, &ev.lqr, &w, &ev.loss, None, &x0, &mut rng).unwrap();
    assert!(!log.success);
    assert_eq!(log.reason, FailureReason::Clearance);
    assert!((Vector3::from(log.terminal_position) - Vector3::from(mission.terminal_position)).norm() < 1.0);
}
