//! The four run modes and their on-disk artifacts.
//!
//! Each command writes into `<out>/<command>-<run id>/`. Every file starts
//! with the configuration hash and run identifier, and nothing time- or
//! host-dependent is recorded, so identical inputs give identical bytes.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::airframe::{DesignParams, PhysicalModel};
use crate::cmaes::{self, GenerationRecord};
use crate::config::{RunConfig, Scenario, ANALYSIS_SEED_MASK};
use crate::ensemble::{EnsembleResult, Evaluator, SimLog};
use crate::error::{CodesignError, Result};
use crate::trajopt::{self, ConvergenceReport, SolveStatus, Trajectory};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub design: [f64; 3],
    pub mass: f64,
    pub aspect_ratio: f64,
    pub static_margin: f64,
}

impl ModelSummary {
    pub fn new(m: &PhysicalModel) -> Self {
        Self {
            design: m.design.to_array(),
            mass: m.mass,
            aspect_ratio: m.aspect_ratio,
            static_margin: m.static_margin(),
        }
    }
}

/// Solver report without the wall-clock time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanReport {
    pub status: SolveStatus,
    pub outer_iterations: usize,
    pub inner_iterations: usize,
    pub max_violation: f64,
    pub stationarity: f64,
    pub cost: f64,
}

impl From<&ConvergenceReport> for PlanReport {
    fn from(r: &ConvergenceReport) -> Self {
        Self {
            status: r.status,
            outer_iterations: r.outer_iterations,
            inner_iterations: r.inner_iterations,
            max_violation: r.max_violation,
            stationarity: r.stationarity,
            cost: r.cost,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub command: String,
    pub run_id: String,
    pub config_hash: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanSummary {
    pub header: Header,
    pub mission: String,
    pub model: ModelSummary,
    pub report: PlanReport,
    pub tf: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSummary {
    pub scenario: Scenario,
    pub n_sim: usize,
    pub j_r: f64,
    pub rmse: f64,
    pub eta: f64,
    pub failures: BTreeMap<String, usize>,
}

impl EnsembleSummary {
    pub fn new(scenario: Scenario, r: &EnsembleResult) -> Self {
        let mut failures = BTreeMap::new();
        for l in r.logs.iter().filter(|l| !l.success) {
            *failures.entry(l.reason.as_str().to_string()).or_insert(0) += 1;
        }
        Self { scenario, n_sim: r.logs.len(), j_r: r.j_r, rmse: r.rmse, eta: r.eta, failures }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CodesignSummary {
    pub header: Header,
    pub mission: String,
    pub scenario: Scenario,
    /// "nominal" (open-loop cost) or "robust" (ensemble cost).
    pub objective: String,
    pub best_cost: f64,
    pub generations: usize,
    pub evaluations: usize,
    pub model: ModelSummary,
    /// Ensemble of the best design under the co-design scenario; absent for
    /// the open-loop objective.
    pub evaluation: Option<EnsembleSummary>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalysisRow {
    pub label: String,
    pub model: ModelSummary,
    pub scenario: Scenario,
    pub plan_status: Option<SolveStatus>,
    pub j_r: f64,
    pub rmse: f64,
    pub eta: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalysisSummary {
    pub header: Header,
    pub mission: String,
    pub base_seed: u64,
    pub rows: Vec<AnalysisRow>,
}

/// A design to analyse and the name it is reported under.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelledDesign {
    pub label: String,
    pub design: DesignParams,
}

struct RunDir {
    dir: PathBuf,
    header: Header,
}

impl RunDir {
    /// `inputs` describes anything besides the config that determines the
    /// results; it enters the run ID only.
    fn create(cfg: &RunConfig, command: &str, inputs: &str, out: &Path) -> Result<Self> {
        let header = Header {
            command: command.into(),
            run_id: cfg.run_id(&format!("{command}{inputs}"))?,
            config_hash: cfg.hash()?,
        };
        let dir = out.join(format!("{command}-{}", header.run_id));
        fs::create_dir_all(&dir)?;
        let run = Self { dir, header };
        let body = format!("{}{}", run.toml_banner(), cfg.canonical().to_toml()?);
        run.write("config.toml", &body)?;
        Ok(run)
    }

    fn toml_banner(&self) -> String {
        format!("# run_id = {}\n# config_hash = {}\n", self.header.run_id, self.header.config_hash)
    }

    fn write(&self, name: &str, body: &str) -> Result<()> {
        let mut f = fs::File::create(self.dir.join(name))?;
        f.write_all(body.as_bytes())?;
        Ok(())
    }

    fn write_toml<T: Serialize>(&self, name: &str, value: &T) -> Result<()> {
        let body = toml::to_string(value).map_err(|e| CodesignError::Config(e.to_string()))?;
        self.write(name, &format!("{}{body}", self.toml_banner()))
    }

    fn write_csv(&self, name: &str, body: &str) -> Result<()> {
        self.write(name, &format!("{}{body}", self.toml_banner()))
    }

    fn write_trajectory(&self, name: &str, traj: &Trajectory) -> Result<()> {
        let mut buf = Vec::new();
        traj.write_csv(&mut buf)?;
        self.write_csv(name, &String::from_utf8(buf).expect("ascii csv"))
    }
}

pub fn read_toml<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    toml::from_str(&text).map_err(|e| CodesignError::Config(format!("{}: {e}", path.display())))
}

fn objective_name(scenario: Scenario) -> &'static str {
    if scenario == Scenario::Nominal {
        "nominal"
    } else {
        "robust"
    }
}

fn sims_csv(logs: &[SimLog]) -> String {
    let mut s = String::from("sim,t,px,py,pz,px_ref,py_ref,pz_ref,thrust,delta_e,delta_a,delta_r\n");
    for (i, l) in logs.iter().enumerate() {
        for k in 0..l.t.len() {
            let (x, r, u) = (&l.states[k], &l.reference[k], &l.inputs[k]);
            let _ = writeln!(
                s,
                "{i},{},{},{},{},{},{},{},{},{},{},{}",
                l.t[k], x[0], x[1], x[2], r[0], r[1], r[2], u[0], u[1], u[2], u[3]
            );
        }
    }
    s
}

fn outcomes_csv(logs: &[SimLog]) -> String {
    let mut s = String::from("sim,span,chord,position,success,reason,rmse,min_clearance,cost\n");
    for (i, l) in logs.iter().enumerate() {
        let d = l.design.to_array();
        let _ = writeln!(
            s,
            "{i},{},{},{},{},{},{},{},{}",
            d[0], d[1], d[2], l.success as u8, l.reason.as_str(), l.rmse(), l.min_clearance, l.cost
        );
    }
    s
}

/// Solves the nominal problem for the configured design.
pub fn plan(cfg: &RunConfig, out: &Path) -> Result<(PathBuf, PlanSummary)> {
    let design = cfg
        .design
        .map(|d| DesignParams::from_slice(&d))
        .ok_or_else(|| CodesignError::Config("plan needs a design (config `design` or --design)".into()))?;
    let ev = cfg.evaluator(cfg.scenario, cfg.seed)?;
    let vehicle = ev.vehicle(&design)?;
    ev.mission.validate(design.span)?;
    let run = RunDir::create(cfg, "plan", "", out)?;
    let (traj, report) = trajopt::plan(&ev.mission, &vehicle, &ev.solver)?;
    let converged = report.converged();
    let summary = PlanSummary {
        header: run.header.clone(),
        mission: ev.mission.name.clone(),
        model: ModelSummary::new(&vehicle.model),
        report: PlanReport::from(&report),
        tf: converged.then_some(traj.tf),
    };
    run.write_trajectory(if converged { "trajectory.csv" } else { "last_iterate.csv" }, &traj)?;
    run.write_toml("summary.toml", &summary)?;
    if !converged {
        return Err(CodesignError::Solver(format!(
            "planning stopped with {:?} at violation {:.3e}; report in {}",
            report.status,
            report.max_violation,
            run.dir.display()
        )));
    }
    Ok((run.dir, summary))
}

/// CMA-ES over the design box with the open-loop or the ensemble objective.
pub fn codesign(cfg: &RunConfig, out: &Path) -> Result<(PathBuf, CodesignSummary)> {
    let ev = cfg.evaluator(cfg.scenario, cfg.seed)?;
    ev.mission.validate(cfg.bounds.upper[0])?;
    let run = RunDir::create(cfg, "codesign", "", out)?;
    let robust = cfg.scenario != Scenario::Nominal;
    let objective = |d: &[f64]| -> Result<f64> {
        let d = DesignParams::from_slice(d);
        if robust {
            Ok(ev.evaluate(&d)?.j_r)
        } else {
            ev.nominal_cost(&d)
        }
    };
    let cma = crate::cmaes::CmaesConfig { seed: cfg.seed, ..cfg.cmaes.clone() };
    let outcome = cmaes::run(&cma, &cfg.bounds.lower, &cfg.bounds.upper, objective)?;
    run.write_csv("history.csv", &history_csv(&outcome.history))?;

    let best = DesignParams::from_slice(&outcome.best);
    let vehicle = ev.vehicle(&best)?;
    let evaluation = if robust {
        let r = ev.evaluate(&best)?;
        if let Some(t) = &r.reference {
            run.write_trajectory("trajectory.csv", t)?;
        }
        Some(EnsembleSummary::new(cfg.scenario, &r))
    } else {
        if let (Some(t), _) = ev.plan(&best)? {
            run.write_trajectory("trajectory.csv", &t)?;
        }
        None
    };
    let last = outcome.history.last().expect("non-empty history");
    let summary = CodesignSummary {
        header: run.header.clone(),
        mission: ev.mission.name.clone(),
        scenario: cfg.scenario,
        objective: objective_name(cfg.scenario).into(),
        best_cost: outcome.best_cost,
        generations: last.generation,
        evaluations: last.evaluations,
        model: ModelSummary::new(&vehicle.model),
        evaluation,
    };
    run.write_toml("summary.toml", &summary)?;
    Ok((run.dir, summary))
}

pub fn history_csv(history: &[GenerationRecord]) -> String {
    let mut s = String::from("generation,evaluations,best_cost,best_so_far,sigma,mean_span,mean_chord,mean_position\n");
    for h in history {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            h.generation, h.evaluations, h.best_cost, h.best_so_far, h.sigma, h.mean[0], h.mean[1], h.mean[2]
        );
    }
    s
}

/// Best designs recorded by earlier co-design runs, labelled by objective.
pub fn designs_from_runs(dirs: &[PathBuf]) -> Result<Vec<LabelledDesign>> {
    dirs.iter()
        .map(|d| {
            let s: CodesignSummary = read_toml(&d.join("summary.toml"))?;
            Ok(LabelledDesign {
                label: format!("{}:{}", s.objective, s.scenario.as_str()),
                design: DesignParams::from_slice(&s.model.design),
            })
        })
        .collect()
}

/// Plans each design on its nominal model and flies the ensemble under each
/// scenario. Seeds are offset from the co-design seed.
pub fn analyze(
    cfg: &RunConfig,
    designs: &[LabelledDesign],
    scenarios: &[Scenario],
    out: &Path,
) -> Result<(PathBuf, AnalysisSummary)> {
    if designs.is_empty() {
        return Err(CodesignError::Config("analyze needs at least one design".into()));
    }
    let base_seed = cfg.seed ^ ANALYSIS_SEED_MASK;
    let probe = cfg.evaluator(cfg.scenario, base_seed)?;
    for d in designs {
        probe.vehicle(&d.design)?;
    }
    let mut inputs = String::new();
    for d in designs {
        let _ = write!(inputs, "\n{} {:?}", d.label, d.design.to_array());
    }
    for sc in scenarios {
        let _ = write!(inputs, "\n{}", sc.as_str());
    }
    let run = RunDir::create(cfg, "analyze", &inputs, out)?;
    let mut rows = Vec::new();
    for (i, d) in designs.iter().enumerate() {
        let vehicle = probe.vehicle(&d.design)?;
        let (traj, report) = probe.plan(&d.design)?;
        if let Some(t) = &traj {
            run.write_trajectory(&format!("design{i}_trajectory.csv"), t)?;
        }
        for &sc in scenarios {
            let ev: Evaluator = cfg.evaluator(sc, base_seed)?;
            let row = match &traj {
                Some(t) => {
                    let logs = ev.run_ensemble(&d.design, t)?;
                    run.write_csv(&format!("design{i}_{}_outcomes.csv", sc.as_str()), &outcomes_csv(&logs))?;
                    run.write_csv(&format!("design{i}_{}_sims.csv", sc.as_str()), &sims_csv(&logs))?;
                    let r = ev.aggregate(logs, t.clone(), report.clone());
                    AnalysisRow {
                        label: d.label.clone(),
                        model: ModelSummary::new(&vehicle.model),
                        scenario: sc,
                        plan_status: Some(report.status),
                        j_r: r.j_r,
                        rmse: r.rmse,
                        eta: r.eta,
                    }
                }
                None => AnalysisRow {
                    label: d.label.clone(),
                    model: ModelSummary::new(&vehicle.model),
                    scenario: sc,
                    plan_status: Some(report.status),
                    j_r: ev.loss.j_fail(),
                    rmse: f64::INFINITY,
                    eta: 0.0,
                },
            };
            log::info!("{} {}: rmse {:.3} eta {:.2}", row.label, sc.as_str(), row.rmse, row.eta);
            rows.push(row);
        }
    }
    let summary =
        AnalysisSummary { header: run.header.clone(), mission: probe.mission.name.clone(), base_seed, rows };
    run.write_csv("table.csv", &table_csv(&summary.rows))?;
    run.write_toml("summary.toml", &summary)?;
    Ok((run.dir, summary))
}

pub fn table_csv(rows: &[AnalysisRow]) -> String {
    let mut s = String::from("label,span,chord,position,mass,aspect_ratio,static_margin,scenario,rmse,eta,j_r\n");
    for r in rows {
        let m = &r.model;
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.label,
            m.design[0],
            m.design[1],
            m.design[2],
            m.mass,
            m.aspect_ratio,
            m.static_margin,
            r.scenario.as_str(),
            r.rmse,
            r.eta,
            r.j_r
        );
    }
    s
}

/// Markdown table of an analysis run.
pub fn markdown_table(rows: &[AnalysisRow]) -> String {
    let mut s = String::from(
        "| design | b_w (m) | c_w (m) | x_w (m) | AR | K_n (m) | scenario | RMSE (m) | success |\n\
         |---|---|---|---|---|---|---|---|---|\n",
    );
    for r in rows {
        let m = &r.model;
        let _ = writeln!(
            s,
            "| {} | {:.3} | {:.3} | {:.3} | {:.2} | {:.3} | {} | {:.3} | {:.0}% |",
            r.label,
            m.design[0],
            m.design[1],
            m.design[2],
            m.aspect_ratio,
            m.static_margin,
            r.scenario.as_str(),
            r.rmse,
            100.0 * r.eta
        );
    }
    s
}

/// Collects plot-ready CSVs from finished runs into `out`.
pub fn report(runs: &[PathBuf], out: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out)?;
    let mut written = Vec::new();
    let mut table = Vec::new();
    let mut convergence = String::from("run,generation,evaluations,best_cost,best_so_far,sigma\n");
    for dir in runs {
        let header: toml::Table = read_toml(&dir.join("summary.toml"))?;
        let command = header
            .get("header")
            .and_then(|h| h.get("command"))
            .and_then(|c| c.as_str())
            .ok_or_else(|| CodesignError::Config(format!("{} is not a run directory", dir.display())))?
            .to_string();
        match command.as_str() {
            "codesign" => {
                let s: CodesignSummary = read_toml(&dir.join("summary.toml"))?;
                let text = fs::read_to_string(dir.join("history.csv"))?;
                for line in text.lines().filter(|l| !l.starts_with('#')).skip(1) {
                    let f: Vec<&str> = line.split(',').collect();
                    let _ = writeln!(convergence, "{},{},{},{},{},{}", s.header.run_id, f[0], f[1], f[2], f[3], f[4]);
                }
            }
            "analyze" => {
                let s: AnalysisSummary = read_toml(&dir.join("summary.toml"))?;
                table.extend(s.rows);
                for entry in fs::read_dir(dir)? {
                    let p = entry?.path();
                    let name = p.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
                    if name.ends_with("_sims.csv") {
                        let dest = out.join(format!("ensemble_{}_{name}", s.header.run_id));
                        fs::copy(&p, &dest)?;
                        written.push(dest);
                    }
                }
            }
            _ => {}
        }
    }
    let conv = out.join("convergence.csv");
    fs::write(&conv, convergence)?;
    written.push(conv);
    if !table.is_empty() {
        let t = out.join("table.csv");
        fs::write(&t, table_csv(&table))?;
        written.push(t);
        let md = out.join("table.md");
        fs::write(&md, markdown_table(&table))?;
        written.push(md);
    }
    written.sort();
    Ok(written)
}
