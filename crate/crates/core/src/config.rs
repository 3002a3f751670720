//! Run configuration: a single TOML document holding every module's
//! settings plus the mission and scenario selectors.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::aero::{AeroConfig, Environment, StallParams};
use crate::airframe::{AirframeConfig, DesignBounds, DesignParams};
use crate::cmaes::CmaesConfig;
use crate::ensemble::{Evaluator, LossWeights, NoiseConfig};
use crate::error::{CodesignError, Result};
use crate::trajopt::{Mission, SolverSettings};
use crate::turbulence::TurbulenceConfig;
use crate::tvlqr::LqrConfig;

/// Offset mixed into the global seed for post-optimisation analysis, so the
/// evaluation noise is independent of the noise seen during the search.
pub const ANALYSIS_SEED_MASK: u64 = 0x5eed_0000_0000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MissionKind {
    ObstacleAvoidance,
    ShortObstacleAvoidance,
    VerticalReversal,
    HorizontalHairpin,
    Cruise,
    Custom,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    Nominal,
    Uc5,
    Uc10,
    Wind,
    Uc5Wind,
    Uc10Wind,
}

impl Scenario {
    pub const ALL: [Scenario; 6] =
        [Scenario::Nominal, Scenario::Uc5, Scenario::Uc10, Scenario::Wind, Scenario::Uc5Wind, Scenario::Uc10Wind];

    /// Relative parametric uncertainty and whether gusts are injected.
    pub fn noise(self) -> (f64, bool) {
        match self {
            Scenario::Nominal => (0.0, false),
            Scenario::Uc5 => (0.05, false),
            Scenario::Uc10 => (0.10, false),
            Scenario::Wind => (0.0, true),
            Scenario::Uc5Wind => (0.05, true),
            Scenario::Uc10Wind => (0.10, true),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Scenario::Nominal => "nominal",
            Scenario::Uc5 => "uc5",
            Scenario::Uc10 => "uc10",
            Scenario::Wind => "wind",
            Scenario::Uc5Wind => "uc5_wind",
            Scenario::Uc10Wind => "uc10_wind",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| CodesignError::Config(format!("unknown scenario '{s}'")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    Desk,
    Paper,
}

impl Preset {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Preset::Desk),
            "paper" => Ok(Preset::Paper),
            _ => Err(CodesignError::Config(format!("unknown preset '{s}' (expected desk or paper)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub mission: MissionKind,
    /// Used only when `mission = "custom"`.
    pub custom_mission: Option<Mission>,
    pub scenario: Scenario,
    pub seed: u64,
    /// Worker threads; 0 uses every available core.
    pub workers: usize,
    pub out_dir: String,
    /// Design flown by `plan`.
    pub design: Option<[f64; 3]>,
    /// Designs evaluated by `analyze` when no co-design artifacts are given.
    pub designs: Vec<[f64; 3]>,
    pub airframe: AirframeConfig,
    pub bounds: DesignBounds,
    pub environment: Environment,
    pub stall: StallParams,
    pub aero: AeroConfig,
    pub solver: SolverSettings,
    pub lqr: LqrConfig,
    pub turbulence: TurbulenceConfig,
    /// Only `n_sim` is read from here; the scenario sets the noise level
    /// and each command sets the seed.
    pub noise: NoiseConfig,
    pub loss: LossWeights,
    pub cmaes: CmaesConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            mission: MissionKind::ObstacleAvoidance,
            custom_mission: None,
            scenario: Scenario::Nominal,
            seed: 0,
            workers: 0,
            out_dir: "runs".into(),
            design: None,
            designs: Vec::new(),
            airframe: AirframeConfig::default(),
            bounds: DesignBounds::default(),
            environment: Environment::default(),
            stall: StallParams::default(),
            aero: AeroConfig::default(),
            solver: SolverSettings::default(),
            lqr: LqrConfig::default(),
            turbulence: TurbulenceConfig::default(),
            noise: NoiseConfig::default(),
            loss: LossWeights::default(),
            cmaes: CmaesConfig::default(),
        }
    }
}

impl RunConfig {
    /// Scaled-down settings that finish on a workstation.
    pub fn desk() -> Self {
        let mut c = Self { mission: MissionKind::ShortObstacleAvoidance, ..Self::default() };
        c.solver.quat_tol = 1e-2;
        c.solver.max_outer = 25;
        c.noise.n_sim = 20;
        c.cmaes.n_pop = 8;
        c.cmaes.n_gen = 15;
        c
    }

    /// Full-size settings.
    pub fn paper() -> Self {
        let mut c = Self::default();
        c.solver.quat_tol = 1e-2;
        c.noise.n_sim = 100;
        c.cmaes.n_pop = 32;
        c.cmaes.n_gen = 100;
        c
    }

    pub fn preset(p: Preset) -> Self {
        match p {
            Preset::Desk => Self::desk(),
            Preset::Paper => Self::paper(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let c: Self = toml::from_str(text).map_err(|e| CodesignError::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| CodesignError::Config(e.to_string()))
    }

    pub fn resolve_mission(&self) -> Result<Mission> {
        Ok(match self.mission {
            MissionKind::ObstacleAvoidance => Mission::obstacle_avoidance(),
            MissionKind::ShortObstacleAvoidance => Mission::short_obstacle_avoidance(),
            MissionKind::VerticalReversal => Mission::vertical_reversal(),
            MissionKind::HorizontalHairpin => Mission::hairpin(),
            MissionKind::Cruise => Mission::cruise(60.0),
            MissionKind::Custom => self
                .custom_mission
                .clone()
                .ok_or_else(|| CodesignError::Config("mission = \"custom\" needs a [custom_mission] table".into()))?,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.resolve_mission()?;
        self.evaluator(self.scenario, self.seed)?.validate()?;
        self.cmaes.validate()?;
        for d in self.design.iter().chain(&self.designs) {
            if !self.bounds.contains(&DesignParams::from_slice(d)) {
                return Err(CodesignError::Config(format!("design {d:?} lies outside the design bounds")));
            }
        }
        Ok(())
    }

    /// Evaluator for `scenario` whose ensemble seeds derive from `base_seed`.
    pub fn evaluator(&self, scenario: Scenario, base_seed: u64) -> Result<Evaluator> {
        let (sigma, wind) = scenario.noise();
        Ok(Evaluator {
            mission: self.resolve_mission()?,
            airframe: self.airframe.clone(),
            bounds: self.bounds,
            env: self.environment,
            stall: self.stall,
            aero: self.aero,
            solver: self.solver,
            lqr: self.lqr.clone(),
            turbulence: self.turbulence,
            noise: NoiseConfig { sigma, wind_enabled: wind, base_seed, ..self.noise },
            loss: self.loss,
        })
    }

    /// Copy without the execution-only settings (worker count, output
    /// directory), which never change results.
    pub fn canonical(&self) -> Self {
        let d = Self::default();
        Self { workers: d.workers, out_dir: d.out_dir, ..self.clone() }
    }

    /// Hex SHA-256 of the canonical TOML form.
    pub fn hash(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(self.canonical().to_toml()?.as_bytes())))
    }

    /// Short identifier of a command run on this configuration.
    pub fn run_id(&self, command: &str) -> Result<String> {
        let mut h = Sha256::new();
        h.update(command.as_bytes());
        h.update([0]);
        h.update(self.hash()?.as_bytes());
        Ok(hex::encode(h.finalize())[..12].to_string())
    }
}
