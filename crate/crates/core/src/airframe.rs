//! Design parameters to physical airframe mapping.
//!
//! Geometry is laid out in a nose frame (X aft from the fuselage nose, Y to
//! port, Z up) and then expressed in body axes about the centre of gravity
//! (x forward, y to port, z up).

use std::f64::consts::PI;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{CodesignError, Result};

/// Wing span, chord and leading-edge station aft of the nose, in metres.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DesignParams {
    pub span: f64,
    pub chord: f64,
    pub position: f64,
}

impl DesignParams {
    pub const NAMES: [&'static str; 3] = ["span", "chord", "position"];

    pub fn new(span: f64, chord: f64, position: f64) -> Self {
        Self { span, chord, position }
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.span, self.chord, self.position]
    }

    pub fn from_slice(v: &[f64]) -> Self {
        Self::new(v[0], v[1], v[2])
    }

    pub fn aspect_ratio(&self) -> f64 {
        self.span / self.chord
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DesignBounds {
    pub lower: [f64; 3],
    pub upper: [f64; 3],
}

impl Default for DesignBounds {
    fn default() -> Self {
        Self {
            lower: [0.05, 0.05, 0.05],
            upper: [1.0, 0.5, 0.5],
        }
    }
}

impl DesignBounds {
    pub fn validate(&self) -> Result<()> {
        for i in 0..3 {
            if !(self.lower[i] < self.upper[i]) || self.lower[i] <= 0.0 {
                return Err(CodesignError::Config(format!(
                    "design bounds for {} must satisfy 0 < lower < upper",
                    DesignParams::NAMES[i]
                )));
            }
        }
        Ok(())
    }

    pub fn contains(&self, d: &DesignParams) -> bool {
        d.to_array()
            .iter()
            .enumerate()
            .all(|(i, v)| *v >= self.lower[i] && *v <= self.upper[i])
    }

    pub fn width(&self) -> [f64; 3] {
        [0, 1, 2].map(|i| self.upper[i] - self.lower[i])
    }

    pub fn centre(&self) -> DesignParams {
        let c = [0, 1, 2].map(|i| 0.5 * (self.lower[i] + self.upper[i]));
        DesignParams::from_slice(&c)
    }
}

/// Elementwise clamp of a design into the box.
pub fn clamp_design(d: DesignParams, bounds: &DesignBounds) -> DesignParams {
    let v = d.to_array();
    let c = [0, 1, 2].map(|i| v[i].clamp(bounds.lower[i], bounds.upper[i]));
    DesignParams::from_slice(&c)
}

/// Fixed airframe properties that are not co-design variables.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AirframeConfig {
    pub fuselage_radius: f64,
    pub fuselage_length: f64,
    pub payload_mass: f64,
    pub htail_span: f64,
    pub htail_chord: f64,
    pub vtail_span: f64,
    pub vtail_chord: f64,
    /// Quarter-chord station of both tail surfaces, aft of the nose.
    pub tail_quarter_chord: f64,
    pub flap_chord_fraction: f64,
    /// Areal density of all lifting surfaces (kg/m^2).
    pub surface_density: f64,
    /// Linear density of the fuselage shell (kg/m).
    pub fuselage_density: f64,
    pub strips_per_surface: usize,
    /// Span efficiency used for the lift-curve slopes in the neutral point estimate.
    pub oswald: f64,
}

impl Default for AirframeConfig {
    fn default() -> Self {
        Self {
            fuselage_radius: 0.05,
            fuselage_length: 0.8,
            payload_mass: 0.35,
            htail_span: 0.3,
            htail_chord: 0.1,
            vtail_span: 0.3,
            vtail_chord: 0.1,
            tail_quarter_chord: 0.72,
            flap_chord_fraction: 0.3,
            surface_density: 0.6,
            fuselage_density: 0.25 / 0.8,
            strips_per_surface: 6,
            oswald: 0.9,
        }
    }
}

impl AirframeConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("fuselage_radius", self.fuselage_radius),
            ("fuselage_length", self.fuselage_length),
            ("htail_span", self.htail_span),
            ("htail_chord", self.htail_chord),
            ("vtail_span", self.vtail_span),
            ("vtail_chord", self.vtail_chord),
            ("tail_quarter_chord", self.tail_quarter_chord),
            ("oswald", self.oswald),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(CodesignError::Config(format!("airframe.{name} must be positive")));
            }
        }
        let non_negative = [
            ("payload_mass", self.payload_mass),
            ("surface_density", self.surface_density),
            ("fuselage_density", self.fuselage_density),
        ];
        for (name, v) in non_negative {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(CodesignError::Config(format!("airframe.{name} must be non-negative")));
            }
        }
        if !(self.flap_chord_fraction > 0.0 && self.flap_chord_fraction < 1.0) {
            return Err(CodesignError::Config(
                "airframe.flap_chord_fraction must lie in (0, 1)".into(),
            ));
        }
        if self.strips_per_surface == 0 {
            return Err(CodesignError::Config("airframe.strips_per_surface must be >= 1".into()));
        }
        Ok(())
    }

    /// Thin-airfoil flap effectiveness for the configured chord fraction.
    pub fn flap_effectiveness(&self) -> f64 {
        flap_effectiveness(self.flap_chord_fraction)
    }
}

/// tau = 1 - (theta_f - sin theta_f) / pi with cos theta_f = 2 c_f/c - 1.
pub fn flap_effectiveness(chord_fraction: f64) -> f64 {
    let theta = (2.0 * chord_fraction - 1.0).clamp(-1.0, 1.0).acos();
    1.0 - (theta - theta.sin()) / PI
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SurfaceKind {
    Wing,
    HorizontalTail,
    VerticalTail,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SurfacePlane {
    Horizontal,
    Vertical,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ControlChannel {
    None,
    Elevator,
    AileronLeft,
    AileronRight,
    Rudder,
}

impl ControlChannel {
    /// Local deflection of a strip on this channel for commands (elevator, aileron, rudder).
    pub fn local_deflection<T: Copy + std::ops::Neg<Output = T> + num_traits::Zero>(
        self,
        delta: &[T; 3],
    ) -> T {
        match self {
            ControlChannel::None => T::zero(),
            ControlChannel::Elevator => delta[0],
            ControlChannel::AileronLeft => delta[1],
            ControlChannel::AileronRight => -delta[1],
            ControlChannel::Rudder => delta[2],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Strip {
    /// Spanwise integration weight (m).
    pub weight: f64,
    pub chord: f64,
    /// Aerodynamic centre relative to the CG, body axes (m).
    pub position: Vector3<f64>,
    /// Columns are the strip chordwise, spanwise and normal axes in body axes.
    pub rotation: Matrix3<f64>,
    pub channel: ControlChannel,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LiftingSurface {
    pub kind: SurfaceKind,
    pub plane: SurfacePlane,
    pub span: f64,
    pub chord: f64,
    pub aspect_ratio: f64,
    pub strips: Vec<Strip>,
}

impl LiftingSurface {
    pub fn area(&self) -> f64 {
        self.span * self.chord
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhysicalModel {
    pub design: DesignParams,
    pub mass: f64,
    pub inertia: Matrix3<f64>,
    /// Zero when the inertia is singular (massless structure).
    pub inertia_inv: Matrix3<f64>,
    /// CG in the nose frame (m).
    pub cg: Vector3<f64>,
    pub x_cg: f64,
    pub x_np: f64,
    pub aspect_ratio: f64,
    pub flap_effectiveness: f64,
    pub surfaces: Vec<LiftingSurface>,
}

impl PhysicalModel {
    pub fn static_margin(&self) -> f64 {
        static_margin(self)
    }

    pub fn wing(&self) -> &LiftingSurface {
        self.surfaces
            .iter()
            .find(|s| s.kind == SurfaceKind::Wing)
            .expect("model always carries a wing")
    }
}

/// K_n = x_np - x_cg, positive when the neutral point lies aft of the CG.
pub fn static_margin(model: &PhysicalModel) -> f64 {
    model.x_np - model.x_cg
}

/// One surface's contribution to the longitudinal neutral point.
#[derive(Clone, Copy, Debug)]
pub struct LongitudinalSurface {
    pub lift_slope: f64,
    pub area: f64,
    /// Aerodynamic centre aft of the nose (m).
    pub x_ac: f64,
}

/// Finite-wing lift-curve slope a0 / (1 + a0 / (pi e AR)) with a0 = 2 pi.
pub fn finite_lift_slope(aspect_ratio: f64, oswald: f64) -> f64 {
    let a0 = 2.0 * PI;
    a0 / (1.0 + a0 / (PI * oswald * aspect_ratio))
}

/// Slope-and-area weighted mean of the aerodynamic centres.
pub fn neutral_point(surfaces: &[LongitudinalSurface]) -> f64 {
    let (num, den) = surfaces.iter().fold((0.0, 0.0), |(n, d), s| {
        let w = s.lift_slope * s.area;
        (n + w * s.x_ac, d + w)
    });
    num / den
}

/// Point mass or rigid component in the nose frame.
#[derive(Clone, Copy, Debug)]
pub struct MassComponent {
    pub mass: f64,
    pub centre: Vector3<f64>,
    /// Inertia about the component's own centre, nose-frame axes.
    pub inertia: Matrix3<f64>,
}

fn thin_plate(mass: f64, centre: Vector3<f64>, len_x: f64, len_y: f64, len_z: f64) -> MassComponent {
    let k = mass / 12.0;
    let inertia = Matrix3::from_diagonal(&Vector3::new(
        k * (len_y * len_y + len_z * len_z),
        k * (len_x * len_x + len_z * len_z),
        k * (len_x * len_x + len_y * len_y),
    ));
    MassComponent { mass, centre, inertia }
}

fn shift(d: Vector3<f64>) -> Matrix3<f64> {
    Matrix3::identity() * d.norm_squared() - d * d.transpose()
}

/// Composite inertia of `components` about `point` via parallel-axis transfer.
pub fn inertia_about(components: &[MassComponent], point: &Vector3<f64>) -> Matrix3<f64> {
    components.iter().fold(Matrix3::zeros(), |acc, c| {
        acc + c.inertia + shift(c.centre - point) * c.mass
    })
}

/// Transfers an inertia known about `point` to the CG of a body of mass `mass`.
pub fn transfer_to_cg(
    inertia_point: &Matrix3<f64>,
    mass: f64,
    point: &Vector3<f64>,
    cg: &Vector3<f64>,
) -> Matrix3<f64> {
    inertia_point - shift(cg - point) * mass
}

/// Mass components of the structure (wing, tails, fuselage), payload excluded.
pub fn structural_components(d: &DesignParams, cfg: &AirframeConfig) -> Vec<MassComponent> {
    let rho = cfg.surface_density;
    let wing = thin_plate(
        rho * d.span * d.chord,
        Vector3::new(d.position + 0.5 * d.chord, 0.0, 0.0),
        d.chord,
        d.span,
        0.0,
    );
    let tail_le_h = cfg.tail_quarter_chord - 0.25 * cfg.htail_chord;
    let htail = thin_plate(
        rho * cfg.htail_span * cfg.htail_chord,
        Vector3::new(tail_le_h + 0.5 * cfg.htail_chord, 0.0, 0.0),
        cfg.htail_chord,
        cfg.htail_span,
        0.0,
    );
    let tail_le_v = cfg.tail_quarter_chord - 0.25 * cfg.vtail_chord;
    let vtail = thin_plate(
        rho * cfg.vtail_span * cfg.vtail_chord,
        Vector3::new(
            tail_le_v + 0.5 * cfg.vtail_chord,
            0.0,
            cfg.fuselage_radius + 0.5 * cfg.vtail_span,
        ),
        cfg.vtail_chord,
        0.0,
        cfg.vtail_span,
    );
    let m_f = cfg.fuselage_density * cfg.fuselage_length;
    let (r, l) = (cfg.fuselage_radius, cfg.fuselage_length);
    // thin-walled cylinder along X
    let fuselage = MassComponent {
        mass: m_f,
        centre: Vector3::new(0.5 * l, 0.0, 0.0),
        inertia: Matrix3::from_diagonal(&Vector3::new(
            m_f * r * r,
            m_f * (0.5 * r * r + l * l / 12.0),
            m_f * (0.5 * r * r + l * l / 12.0),
        )),
    };
    vec![wing, htail, vtail, fuselage]
}

fn nose_to_body(cg: &Vector3<f64>, p: &Vector3<f64>) -> Vector3<f64> {
    Vector3::new(cg.x - p.x, p.y, p.z - cg.z)
}

fn horizontal_strips(
    span: f64,
    chord: f64,
    x_ac: f64,
    z: f64,
    n: usize,
    cg: &Vector3<f64>,
    channel: impl Fn(f64) -> ControlChannel,
) -> Vec<Strip> {
    let w = span / n as f64;
    (0..n)
        .map(|i| {
            let y = -0.5 * span + (i as f64 + 0.5) * w;
            Strip {
                weight: w,
                chord,
                position: nose_to_body(cg, &Vector3::new(x_ac, y, z)),
                rotation: Matrix3::identity(),
                channel: channel(y),
            }
        })
        .collect()
}

/// Builds the physical model for a design.
pub fn map_design(d: &DesignParams, cfg: &AirframeConfig) -> Result<PhysicalModel> {
    map_design_within(d, cfg, &DesignBounds::default())
}

pub fn map_design_within(
    d: &DesignParams,
    cfg: &AirframeConfig,
    bounds: &DesignBounds,
) -> Result<PhysicalModel> {
    let v = d.to_array();
    for i in 0..3 {
        if !(v[i] >= bounds.lower[i] && v[i] <= bounds.upper[i]) {
            return Err(CodesignError::BoundsViolation {
                name: DesignParams::NAMES[i],
                value: v[i],
                lower: bounds.lower[i],
                upper: bounds.upper[i],
            });
        }
    }
    cfg.validate()?;

    let structure = structural_components(d, cfg);
    let m_struct: f64 = structure.iter().map(|c| c.mass).sum();
    let cg = if m_struct > 0.0 {
        structure
            .iter()
            .fold(Vector3::zeros(), |acc, c| acc + c.centre * c.mass)
            / m_struct
    } else {
        Vector3::new(0.5 * cfg.fuselage_length, 0.0, 0.0)
    };
    // the payload sits at the CG, so it adds mass but no inertia about it
    let mass = m_struct + cfg.payload_mass;
    let inertia_nose = inertia_about(&structure, &cg);
    // nose frame (X aft, Y port, Z up) to body (x fwd, y port, z up): flip X
    let flip = Matrix3::from_diagonal(&Vector3::new(-1.0, 1.0, 1.0));
    let mut inertia = flip * inertia_nose * flip;
    inertia = 0.5 * (inertia + inertia.transpose());
    let inertia_inv = inertia.try_inverse().unwrap_or_else(Matrix3::zeros);

    let n = cfg.strips_per_surface;
    let wing_x_ac = d.position + 0.25 * d.chord;
    let wing = LiftingSurface {
        kind: SurfaceKind::Wing,
        plane: SurfacePlane::Horizontal,
        span: d.span,
        chord: d.chord,
        aspect_ratio: d.span / d.chord,
        strips: horizontal_strips(d.span, d.chord, wing_x_ac, 0.0, n, &cg, |y| {
            if y > 0.0 {
                ControlChannel::AileronLeft
            } else {
                ControlChannel::AileronRight
            }
        }),
    };
    let htail = LiftingSurface {
        kind: SurfaceKind::HorizontalTail,
        plane: SurfacePlane::Horizontal,
        span: cfg.htail_span,
        chord: cfg.htail_chord,
        aspect_ratio: cfg.htail_span / cfg.htail_chord,
        strips: horizontal_strips(
            cfg.htail_span,
            cfg.htail_chord,
            cfg.tail_quarter_chord,
            0.0,
            n,
            &cg,
            |_| ControlChannel::Elevator,
        ),
    };
    // vertical strips: chordwise = x, spanwise = -z, normal = +y
    let vrot = Matrix3::from_columns(&[Vector3::x(), -Vector3::z(), Vector3::y()]);
    let wv = cfg.vtail_span / n as f64;
    let vtail = LiftingSurface {
        kind: SurfaceKind::VerticalTail,
        plane: SurfacePlane::Vertical,
        span: cfg.vtail_span,
        chord: cfg.vtail_chord,
        aspect_ratio: cfg.vtail_span / cfg.vtail_chord,
        strips: (0..n)
            .map(|i| {
                let z = cfg.fuselage_radius + (i as f64 + 0.5) * wv;
                Strip {
                    weight: wv,
                    chord: cfg.vtail_chord,
                    position: nose_to_body(&cg, &Vector3::new(cfg.tail_quarter_chord, 0.0, z)),
                    rotation: vrot,
                    channel: ControlChannel::Rudder,
                }
            })
            .collect(),
    };

    let x_np = neutral_point(&[
        LongitudinalSurface {
            lift_slope: finite_lift_slope(wing.aspect_ratio, cfg.oswald),
            area: wing.area(),
            x_ac: wing_x_ac,
        },
        LongitudinalSurface {
            lift_slope: finite_lift_slope(htail.aspect_ratio, cfg.oswald),
            area: htail.area(),
            x_ac: cfg.tail_quarter_chord,
        },
    ]);

    Ok(PhysicalModel {
        design: *d,
        mass,
        inertia,
        inertia_inv,
        cg,
        x_cg: cg.x,
        x_np,
        aspect_ratio: d.span / d.chord,
        flap_effectiveness: cfg.flap_effectiveness(),
        surfaces: vec![wing, htail, vtail],
    })
}
