use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use uav_codesign::airframe::DesignParams;
use uav_codesign::config::{Preset, RunConfig, Scenario};
use uav_codesign::experiment::{self, LabelledDesign};
use uav_codesign::CodesignError;

#[derive(Parser)]
#[command(name = "uav-codesign", version, about = "Robust co-design of fixed-wing UAV airframes and trajectories")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML run configuration; settings absent from the file keep the preset values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Base settings the config file is layered on.
    #[arg(long, default_value = "desk")]
    preset: String,
    /// nominal | uc5 | uc10 | wind | uc5_wind | uc10_wind
    #[arg(long)]
    scenario: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (0 = all cores).
    #[arg(long, env = "UAV_CODESIGN_WORKERS")]
    workers: Option<usize>,
    /// Output directory for run artifacts.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the trajectory problem for one design.
    Plan {
        #[command(flatten)]
        common: Common,
        /// span,chord,position in metres
        #[arg(long, value_delimiter = ',')]
        design: Option<Vec<f64>>,
    },
    /// Search the design box; the nominal scenario uses the open-loop cost.
    Codesign {
        #[command(flatten)]
        common: Common,
    },
    /// Evaluate designs from co-design runs (or the config) over scenarios.
    Analyze {
        #[command(flatten)]
        common: Common,
        /// Co-design run directories whose best designs are evaluated.
        #[arg(long = "from")]
        from: Vec<PathBuf>,
        /// Extra scenarios to evaluate besides --scenario.
        #[arg(long = "also")]
        also: Vec<String>,
    },
    /// Gather plot-ready CSVs from finished runs.
    Report {
        /// Run directories produced by codesign or analyze.
        runs: Vec<PathBuf>,
        #[arg(long, default_value = "report")]
        out: PathBuf,
    },
}

fn exit_code(e: &CodesignError) -> u8 {
    match e {
        CodesignError::Config(_) | CodesignError::Mission(_) | CodesignError::BoundsViolation { .. } => 2,
        CodesignError::Contract(_) => 4,
        CodesignError::Io(_) => 1,
        _ => 3,
    }
}

fn load(common: &Common) -> Result<RunConfig, CodesignError> {
    let mut cfg = RunConfig::preset(Preset::parse(&common.preset)?);
    if let Some(path) = &common.config {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CodesignError::Config(format!("{}: {e}", path.display())))?;
        let overlay: toml::Table = toml::from_str(&text).map_err(|e| CodesignError::Config(e.to_string()))?;
        let mut base: toml::Table = toml::from_str(&cfg.to_toml()?).expect("serialised config parses");
        merge(&mut base, overlay);
        cfg = RunConfig::from_toml(&toml::to_string(&base).expect("table serialises"))?;
    }
    if let Some(s) = &common.scenario {
        cfg.scenario = Scenario::parse(s)?;
    }
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(w) = common.workers {
        cfg.workers = w;
    }
    if let Some(o) = &common.out {
        cfg.out_dir = o.display().to_string();
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Recursive table merge; values in `top` win.
fn merge(base: &mut toml::Table, top: toml::Table) {
    for (k, v) in top {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(t)) => merge(b, t),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn with_pool<T>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T, CodesignError>
where
    T: Send,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| CodesignError::Config(format!("worker pool: {e}")))?;
    Ok(pool.install(f))
}

fn run(cli: Cli) -> Result<(), CodesignError> {
    match cli.command {
        Command::Plan { common, design } => {
            let mut cfg = load(&common)?;
            if let Some(d) = design {
                if d.len() != 3 {
                    return Err(CodesignError::Config("--design takes span,chord,position".into()));
                }
                cfg.design = Some([d[0], d[1], d[2]]);
                cfg.validate()?;
            }
            let out = PathBuf::from(&cfg.out_dir);
            let (dir, s) = with_pool(cfg.workers, || experiment::plan(&cfg, &out))??;
            println!(
                "plan {} converged: t_f {:.3} s, cost {:.4}, violation {:.2e} -> {}",
                s.header.run_id,
                s.tf.unwrap_or(f64::NAN),
                s.report.cost,
                s.report.max_violation,
                dir.display()
            );
        }
        Command::Codesign { common } => {
            let cfg = load(&common)?;
            let out = PathBuf::from(&cfg.out_dir);
            let (dir, s) = with_pool(cfg.workers, || experiment::codesign(&cfg, &out))??;
            let d = s.model.design;
            println!(
                "codesign {} ({} objective, {}): best d = ({:.4}, {:.4}, {:.4}), J = {:.4}, K_n = {:.4} m -> {}",
                s.header.run_id,
                s.objective,
                s.scenario.as_str(),
                d[0],
                d[1],
                d[2],
                s.best_cost,
                s.model.static_margin,
                dir.display()
            );
        }
        Command::Analyze { common, from, also } => {
            let cfg = load(&common)?;
            let mut designs = experiment::designs_from_runs(&from)?;
            designs.extend(cfg.designs.iter().enumerate().map(|(i, d)| LabelledDesign {
                label: format!("config{i}"),
                design: DesignParams::from_slice(d),
            }));
            let mut scenarios = vec![cfg.scenario];
            for s in &also {
                let s = Scenario::parse(s)?;
                if !scenarios.contains(&s) {
                    scenarios.push(s);
                }
            }
            let out = PathBuf::from(&cfg.out_dir);
            let (dir, s) = with_pool(cfg.workers, || experiment::analyze(&cfg, &designs, &scenarios, &out))??;
            print!("{}", experiment::markdown_table(&s.rows));
            println!("analyze {} -> {}", s.header.run_id, dir.display());
        }
        Command::Report { runs, out } => {
            for p in experiment::report(&runs, &out)? {
                println!("{}", p.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
