//! Strip-theory aerodynamics with sigmoid blending between attached flow and
//! a flat-plate post-stall model.

use std::f64::consts::PI;

use nalgebra::{Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::airframe::{PhysicalModel, SurfacePlane};
use crate::autodiff::Real;
use crate::dynamics::{quat_rotate_inv, ControlInput, State};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StallParams {
    /// Stall angle (rad).
    pub alpha_s: f64,
    /// Blending sharpness (1/rad).
    pub k: f64,
}

impl Default for StallParams {
    fn default() -> Self {
        Self {
            alpha_s: 15f64.to_radians(),
            k: 50.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Environment {
    pub rho: f64,
    pub g: f64,
}

impl Default for Environment {
    fn default() -> Self {
        Self { rho: 1.225, g: 9.81 }
    }
}

/// Section-model constants.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AeroConfig {
    pub cd0: f64,
    /// Attached-flow pitching moment of cambered (horizontal) sections.
    pub cm0: f64,
    pub oswald: f64,
    /// Flat-plate normal-force coefficient at 90 degrees.
    pub cd90: f64,
}

impl Default for AeroConfig {
    fn default() -> Self {
        Self {
            cd0: 0.02,
            cm0: -0.02,
            oswald: 0.9,
            cd90: 1.98,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SectionCoefficients<T> {
    pub cl: T,
    pub cd: T,
    pub cm: T,
}

/// Loads per unit span in the strip's wind axes.
///
/// Horizontal surfaces use (drag, span, lift) ordering, vertical surfaces map
/// the normal force to the second (lateral) axis.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SectionLoads {
    pub force: Vector3<f64>,
    pub moment: Vector3<f64>,
}

/// sigma(alpha) = 1/2 [1 + tanh(k (alpha_s - |alpha|))]
pub fn blend<T: Real>(alpha: T, p: &StallParams) -> T {
    ((-alpha.abs() + p.alpha_s) * p.k).tanh() * 0.5 + 0.5
}

/// Attached-flow lift slope with the low aspect-ratio correction.
pub fn attached_lift_slope(aspect_ratio: f64) -> f64 {
    2.0 * PI / (1.0 + 2.0 / aspect_ratio)
}

/// Blended section coefficients at geometric angle `alpha` with local flap
/// deflection `delta_local` (effective angle alpha + tau delta).
pub fn section_coefficients<T: Real>(
    alpha: T,
    delta_local: T,
    aspect_ratio: f64,
    flap_effectiveness: f64,
    stall: &StallParams,
    cfg: &AeroConfig,
    cm0: f64,
) -> SectionCoefficients<T> {
    let alpha_eff = alpha + delta_local * flap_effectiveness;
    let sigma = blend(alpha_eff, stall);
    let cl_att = alpha_eff * attached_lift_slope(aspect_ratio);
    let cd_att = cl_att * cl_att / (PI * cfg.oswald * aspect_ratio) + cfg.cd0;
    let (s, c) = (alpha_eff.sin(), alpha_eff.cos());
    let cl_ps = s * c * cfg.cd90;
    let cd_ps = s * s * cfg.cd90;
    let one_minus = -sigma + 1.0;
    SectionCoefficients {
        cl: sigma * cl_att + one_minus * cl_ps,
        cd: sigma * cd_att + one_minus * cd_ps,
        cm: sigma * cm0,
    }
}

/// Section loads from coefficients at in-plane airspeed `v_inf`.
pub fn section_loads(
    coeffs: &SectionCoefficients<f64>,
    v_inf: f64,
    chord: f64,
    env: &Environment,
    plane: SurfacePlane,
) -> SectionLoads {
    let q = 0.5 * env.rho * v_inf * v_inf;
    let d = q * chord * coeffs.cd;
    let l = q * chord * coeffs.cl;
    let m = q * chord * chord * coeffs.cm;
    match plane {
        SurfacePlane::Horizontal => SectionLoads {
            force: Vector3::new(d, 0.0, l),
            moment: Vector3::new(0.0, m, 0.0),
        },
        SurfacePlane::Vertical => SectionLoads {
            force: Vector3::new(d, l, 0.0),
            moment: Vector3::new(0.0, 0.0, -m),
        },
    }
}

/// Aerodynamic force and moment about the CG in body axes.
///
/// `wind_body` is the air velocity expressed in body axes. A strip whose
/// in-plane airspeed is below 1e-9 m/s contributes nothing.
pub fn aero_wrench<T: Real>(
    v_b: &Vector3<T>,
    omega_b: &Vector3<T>,
    delta: &[T; 3],
    wind_body: &Vector3<T>,
    model: &PhysicalModel,
    env: &Environment,
    stall: &StallParams,
    cfg: &AeroConfig,
) -> (Vector3<T>, Vector3<T>) {
    let mut force = Vector3::<T>::zeros();
    let mut moment = Vector3::<T>::zeros();
    let tau = model.flap_effectiveness;
    for surface in &model.surfaces {
        let cm0 = match surface.plane {
            SurfacePlane::Horizontal => cfg.cm0,
            SurfacePlane::Vertical => 0.0,
        };
        for strip in &surface.strips {
            let r = strip.position.map(T::cst);
            let v_rel = v_b + omega_b.cross(&r) - wind_body;
            let xs = strip.rotation.column(0).into_owned().map(T::cst);
            let zs = strip.rotation.column(2).into_owned().map(T::cst);
            let u = v_rel.dot(&xs);
            let w = v_rel.dot(&zs);
            let v2 = u * u + w * w;
            if v2.val() < 1e-18 {
                continue;
            }
            let speed = v2.sqrt();
            let alpha = (-w).atan2(u);
            let dl = strip.channel.local_deflection(delta);
            let c = section_coefficients(alpha, dl, surface.aspect_ratio, tau, stall, cfg, cm0);
            // q c w (C_L lhat + C_D dhat) with lhat, dhat scaled by V
            let k = speed * (0.5 * env.rho * strip.chord * strip.weight);
            let f = (xs * (-w) + zs * u) * (k * c.cl) - (xs * u + zs * w) * (k * c.cd);
            let span_axis = strip.rotation.column(0).cross(&strip.rotation.column(2)).map(T::cst);
            let m = span_axis * (v2 * (0.5 * env.rho * strip.chord * strip.chord * strip.weight) * c.cm);
            moment += r.cross(&f) + m;
            force += f;
        }
    }
    (force, moment)
}

/// Total aerodynamic wrench (force, moment) in body axes for a full state.
pub fn total_wrench(
    x: &State,
    u: &ControlInput,
    model: &PhysicalModel,
    wind_inertial: &Vector3<f64>,
    env: &Environment,
    stall: &StallParams,
    cfg: &AeroConfig,
) -> Vector6<f64> {
    let q = x.q.normalize();
    let wind_body = quat_rotate_inv(&[q.w, q.i, q.j, q.k], wind_inertial);
    let (f, m) = aero_wrench(&x.v, &x.omega, &u.delta, &wind_body, model, env, stall, cfg);
    Vector6::new(f.x, f.y, f.z, m.x, m.y, m.z)
}
