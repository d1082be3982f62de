//! The `jumppath` command line.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::committor::{solve_committor_regularized_with, solve_committor_with};
use crate::doob::doob_transform;
use crate::elimination::{SolverKind, SolverOptions};
use crate::error::{Error, Result};
use crate::finite_horizon::{
    cutoff_convergence_study, deterministic_value, evolve_controlled_density, hje_residual,
    solve_bke, CutoffReport, TerminalCost, TimeGrid,
};
use crate::kernel::{validate_kernel, Distribution, KernelReport, ScalarField, StateSet};
use crate::model_io::{self, Model, Real};
use crate::pipeline::{run_pipeline, PipelineConfig};
use crate::sim::{estimate_ensemble, EnsembleStats, PathRecord, StopRule};

pub const THREADS_ENV: &str = "JUMPPATH_THREADS";

#[derive(Debug, Parser)]
#[command(
    name = "jumppath",
    version,
    about = "Transition paths of finite-state jump processes"
)]
pub struct Cli {
    /// Master seed for every random stream; overrides a pipeline config's seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for path sampling; JUMPPATH_THREADS takes precedence.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Output file (a directory for `pipeline`); stdout when omitted.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve the committor boundary value problem.
    Committor(CommittorArgs),
    /// Build the Doob-transformed kernel from a committor.
    Control(ControlArgs),
    /// Solve the finite-horizon backward equation and evolve the optimal density.
    FiniteHorizon(HorizonArgs),
    /// Sample an ensemble of paths.
    Simulate(SimulateArgs),
    /// Run the full transition-path pipeline from a config file.
    Pipeline(PipelineArgs),
    /// Check a model file and report its rates.
    Validate(ValidateArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SolverArg {
    Auto,
    Direct,
    Iterative,
}

#[derive(Debug, Args)]
pub struct CommittorArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Use the boundary value e^{-N} on A.
    #[arg(long, value_name = "N")]
    pub regularize: Option<u32>,
    #[arg(long, value_enum, default_value = "auto")]
    pub solver: SolverArg,
}

#[derive(Debug, Args)]
pub struct ControlArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub h: PathBuf,
    /// Absorbing states: `A`, `B` or state indices, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "A,B")]
    pub absorbing: Vec<String>,
}

#[derive(Debug, Args)]
pub struct HorizonArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Terminal cost file; `"inf"` or `null` entries are `+∞`.
    #[arg(long)]
    pub terminal: PathBuf,
    #[arg(long = "T", value_name = "T")]
    pub horizon: f64,
    #[arg(long, default_value_t = 400)]
    pub steps: usize,
    #[arg(long, value_delimiter = ',')]
    pub cutoff_list: Vec<f64>,
    /// Initial law file.
    #[arg(long, conflicts_with = "start")]
    pub mu: Option<PathBuf>,
    /// Point-mass initial law.
    #[arg(long)]
    pub start: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Control file written by `control`.
    #[arg(long)]
    pub control: Option<PathBuf>,
    #[arg(long)]
    pub start: usize,
    /// Stop on the model's sets, given as `A,B`.
    #[arg(long, value_delimiter = ',')]
    pub stop_sets: Vec<String>,
    #[arg(long)]
    pub horizon: Option<f64>,
    #[arg(long, default_value_t = crate::sim::DEFAULT_MAX_JUMPS)]
    pub max_jumps: usize,
    #[arg(long = "n", default_value_t = 10_000)]
    pub n_paths: usize,
    /// CSV dump of every path.
    #[arg(long)]
    pub paths: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PipelineArgs {
    #[arg(long)]
    pub config: PathBuf,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[arg(long)]
    pub model: PathBuf,
}

/// Thread count from `JUMPPATH_THREADS`, else the flag.
pub fn thread_count(flag: Option<usize>) -> Result<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .map(Some)
            .map_err(|_| Error::Config(format!("{THREADS_ENV}={v} is not a thread count"))),
        Err(_) => Ok(flag),
    }
}

/// Parses `A`, `B` or integer tokens into a state set.
pub fn parse_state_tokens(tokens: &[String], model: &Model) -> Result<StateSet> {
    let n = model.kernel.n_states();
    let mut mask = vec![false; n];
    for t in tokens {
        match t.trim() {
            "A" => model.a.members().iter().for_each(|&x| mask[x] = true),
            "B" => model.b.members().iter().for_each(|&x| mask[x] = true),
            s => {
                let x: usize = s.parse().map_err(|_| {
                    Error::Config(format!("`{s}` is neither A, B nor a state index"))
                })?;
                if x >= n {
                    return Err(Error::StateOutOfRange {
                        state: x,
                        n_states: n,
                    });
                }
                mask[x] = true;
            }
        }
    }
    Ok(StateSet::from_mask(mask))
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => model_io::write(p, text),
        None => {
            std::io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

#[derive(Serialize)]
struct CommittorOutput {
    h: Vec<f64>,
    residual: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    n: Option<u32>,
}

#[derive(Serialize)]
struct HorizonOutput {
    nodes: Vec<f64>,
    h: Vec<ScalarField>,
    psi0: Vec<Real>,
    value: f64,
    action: f64,
    terminal_cost: f64,
    evolved_cost: f64,
    mass_defect: f64,
    hje_residual: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    cutoff: Option<CutoffReport>,
}

#[derive(Serialize)]
struct ValidateOutput {
    #[serde(flatten)]
    report: KernelReport,
    a: Vec<usize>,
    b: Vec<usize>,
}

/// Runs a parsed command line and returns the process exit code.
pub fn run(cli: Cli) -> Result<i32> {
    if let Some(n) = thread_count(cli.threads)? {
        // a pool built earlier in the same process stays in place
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
    let out = cli.out.as_deref();
    match cli.command {
        Command::Committor(args) => committor(args, out),
        Command::Control(args) => control(args, out),
        Command::FiniteHorizon(args) => finite_horizon(args, out),
        Command::Simulate(args) => simulate(args, cli.seed.unwrap_or(0), out),
        Command::Pipeline(args) => pipeline(args, cli.seed, out),
        Command::Validate(args) => validate(args, out),
    }
}

fn committor(args: CommittorArgs, out: Option<&Path>) -> Result<i32> {
    let m = model_io::load_model(&args.model)?;
    let opts = SolverOptions {
        kind: match args.solver {
            SolverArg::Auto => SolverKind::Auto,
            SolverArg::Direct => SolverKind::Direct,
            SolverArg::Iterative => SolverKind::Iterative,
        },
        ..Default::default()
    };
    let sol = match args.regularize {
        Some(n) => solve_committor_regularized_with(&m.kernel, &m.a, &m.b, n, &opts)?,
        None => solve_committor_with(&m.kernel, &m.a, &m.b, &opts)?,
    };
    let body = CommittorOutput {
        h: sol.h.0,
        residual: sol.residual,
        n: sol.regularization_n,
    };
    emit(out, &model_io::to_pretty(&body))?;
    Ok(0)
}

fn control(args: ControlArgs, out: Option<&Path>) -> Result<i32> {
    let m = model_io::load_model(&args.model)?;
    let h = ScalarField(model_io::load_vector(&args.h, "h")?);
    let absorbing = parse_state_tokens(&args.absorbing, &m)?;
    let (spec, controlled) = doob_transform(&m.kernel, &h, &absorbing)?;
    emit(out, &model_io::emit_control(&m, &spec, &controlled)?)?;
    Ok(0)
}

fn finite_horizon(args: HorizonArgs, out: Option<&Path>) -> Result<i32> {
    let m = model_io::load_model(&args.model)?;
    let k = &m.kernel;
    let f = TerminalCost::new(model_io::load_vector(&args.terminal, "f")?)?;
    let grid = TimeGrid::new(args.horizon, args.steps)?;
    let mu = match (&args.mu, args.start) {
        (Some(p), _) => Distribution::new(model_io::load_vector(p, "mu")?)?,
        (None, Some(x)) => Distribution::dirac(k.n_states(), x)?,
        (None, None) => return Err(Error::Config("finite-horizon needs --mu or --start".into())),
    };
    let sol = solve_bke(k, &f, grid)?;
    let value = deterministic_value(&sol, &mu)?;
    let traj = evolve_controlled_density(k, &sol, &mu)?;
    let terminal_cost = f.expectation(traj.terminal());
    let mass_defect = traj
        .p
        .iter()
        .map(|p| (p.iter().sum::<f64>() - 1.0).abs())
        .fold(0.0, f64::max);
    let cutoff = if args.cutoff_list.is_empty() {
        None
    } else {
        Some(cutoff_convergence_study(
            k,
            &f,
            grid,
            &args.cutoff_list,
            &mu,
        )?)
    };
    let body = HorizonOutput {
        nodes: grid.nodes(),
        psi0: sol
            .psi0()
            .iter()
            .map(|&v| {
                if v.is_finite() {
                    Real::Number(v)
                } else {
                    Real::exact(v)
                }
            })
            .collect(),
        hje_residual: hje_residual(k, &sol)?,
        h: sol.h,
        value,
        action: traj.action,
        terminal_cost,
        evolved_cost: terminal_cost + traj.action,
        mass_defect,
        cutoff,
    };
    emit(out, &model_io::to_pretty(&body))?;
    Ok(0)
}

fn simulate(args: SimulateArgs, seed: u64, out: Option<&Path>) -> Result<i32> {
    let m = model_io::load_model(&args.model)?;
    let k = &m.kernel;
    let spec = match &args.control {
        Some(p) => Some(model_io::load_control(p, k)?.0),
        None => None,
    };
    let mut stop = match args.stop_sets.as_slice() {
        [] => match args.horizon {
            Some(t) => StopRule::horizon(t),
            None => return Err(Error::InvalidStopRule),
        },
        [a, b] if a.trim() == "A" && b.trim() == "B" => {
            crate::kernel::check_transition_sets(k, &m.a, &m.b)?;
            let rule = StopRule::sets(m.a.clone(), m.b.clone());
            match args.horizon {
                Some(t) => rule.with_horizon(t),
                None => rule,
            }
        }
        other => {
            return Err(Error::Config(format!(
                "--stop-sets expects `A,B`, got `{}`",
                other.join(",")
            )));
        }
    };
    stop.max_jumps = args.max_jumps;
    let ens = estimate_ensemble(k, spec.as_ref(), args.start, &stop, args.n_paths, seed)?;
    if let Some(p) = &args.paths {
        write_paths_csv(p, &ens.paths)?;
    }
    emit(out, &model_io::to_pretty::<EnsembleStats>(&ens.stats))?;
    Ok(0)
}

/// Writes `path_id, jump_index, time, state` rows; index 0 is the start.
pub fn write_paths_csv(path: &Path, paths: &[PathRecord]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let csv_err = |e: csv::Error| Error::Io(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["path_id", "jump_index", "time", "state"])
        .map_err(csv_err)?;
    for (id, p) in paths.iter().enumerate() {
        w.serialize((id, 0usize, 0.0f64, p.start))
            .map_err(csv_err)?;
        for (j, (&t, &s)) in p.jump_times.iter().zip(&p.states).enumerate() {
            w.serialize((id, j + 1, t, s)).map_err(csv_err)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn pipeline(args: PipelineArgs, seed: Option<u64>, out: Option<&Path>) -> Result<i32> {
    let mut cfg = PipelineConfig::load(&args.config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let dir = out
        .map(Path::to_path_buf)
        .or_else(|| cfg.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("."));
    let report = run_pipeline(&cfg)?;
    report.write(&dir)?;
    for c in &report.stats.checks {
        println!(
            "{:<26} {}  value={:.3e} tol={:.3e}",
            c.name,
            if c.pass { "PASS" } else { "FAIL" },
            c.value,
            c.tolerance
        );
    }
    Ok(report.exit_code())
}

fn validate(args: ValidateArgs, out: Option<&Path>) -> Result<i32> {
    let m = model_io::load_model(&args.model)?;
    let body = ValidateOutput {
        report: validate_kernel(&m.kernel),
        a: m.a.members().to_vec(),
        b: m.b.members().to_vec(),
    };
    emit(out, &model_io::to_pretty(&body))?;
    Ok(0)
}
