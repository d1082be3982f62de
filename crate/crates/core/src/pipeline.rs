//! End-to-end transition-path run: committor, Doob control, reference and
//! controlled ensembles, and every identity check on the result.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::committor::{
    self, hitting_distribution, regularization_defect, solve_committor, solve_committor_regularized,
};
use crate::doob::{self, doob_transform, transition_path_control, ControlSummary};
use crate::error::{Error, Result};
use crate::finite_horizon::{
    blended_control_cost, deterministic_value, evolve_controlled_density, hje_residual, solve_bke,
    TerminalCost, TimeGrid,
};
use crate::kernel::{check_transition_sets, Distribution, PairField, ScalarField, StateSet};
use crate::model_io::{self, Model, Real};
use crate::sim::{
    estimate_ensemble, martingale_test_many, reweighting_check, value_identity_gap, EnsembleStats,
    MartingaleReport, ReweightReport, StopRule,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    /// Per-path value identity.
    #[serde(default = "default_value_tol")]
    pub value_identity: f64,
    /// Width of the Monte-Carlo acceptance band in standard errors.
    #[serde(default = "default_n_sigma")]
    pub n_sigma: f64,
    /// Reduced-problem identity against the exact exit law.
    #[serde(default = "default_reduced_tol")]
    pub reduced_problem: f64,
}

fn default_value_tol() -> f64 {
    1e-12
}

fn default_n_sigma() -> f64 {
    3.0
}

fn default_reduced_tol() -> f64 {
    1e-10
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            value_identity: default_value_tol(),
            n_sigma: default_n_sigma(),
            reduced_problem: default_reduced_tol(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HorizonConfig {
    /// Terminal cost per state; `"inf"` or `null` for `+∞`.
    pub terminal: Vec<Real>,
    pub horizon: f64,
    pub steps: usize,
    /// Initial law; defaults to a point mass at the pipeline start state.
    #[serde(default)]
    pub mu: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    /// Model file, relative to the config file.
    pub model: PathBuf,
    /// Overrides the sets stored in the model.
    #[serde(rename = "A", default)]
    pub a: Option<Vec<usize>>,
    #[serde(rename = "B", default)]
    pub b: Option<Vec<usize>>,
    pub start: usize,
    #[serde(default = "default_regularization")]
    pub regularization: Vec<u32>,
    #[serde(default = "default_n")]
    pub n_reference: usize,
    #[serde(default = "default_n")]
    pub n_controlled: usize,
    #[serde(default = "default_checkpoints")]
    pub checkpoints: Vec<f64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub horizon: Option<HorizonConfig>,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
}

fn default_regularization() -> Vec<u32> {
    vec![2, 5, 10]
}

fn default_n() -> usize {
    10_000
}

fn default_checkpoints() -> Vec<f64> {
    vec![0.25, 0.5, 1.0]
}

impl PipelineConfig {
    /// Reads a config and resolves its model path against the file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut cfg: PipelineConfig = serde_json::from_str(&model_io::read(path)?)?;
        if cfg.model.is_relative() {
            if let Some(dir) = path.parent() {
                cfg.model = dir.join(&cfg.model);
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let t = &self.tolerances;
        for (name, v) in [
            ("value_identity", t.value_identity),
            ("n_sigma", t.n_sigma),
            ("reduced_problem", t.reduced_problem),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!(
                    "tolerance {name} must be positive, got {v}"
                )));
            }
        }
        if self.n_reference < 2 || self.n_controlled < 2 {
            return Err(Error::Config("ensemble sizes must be at least 2".into()));
        }
        if self.checkpoints.is_empty()
            || self
                .checkpoints
                .iter()
                .any(|t| !(t.is_finite() && *t > 0.0))
        {
            return Err(Error::Config(
                "checkpoints must be positive and finite".into(),
            ));
        }
        if !self.model.exists() {
            return Err(Error::Config(format!(
                "model file {} does not exist",
                self.model.display()
            )));
        }
        Ok(())
    }

    fn sets(&self, model: &Model) -> Result<(StateSet, StateSet)> {
        let n = model.kernel.n_states();
        let pick = |over: &Option<Vec<usize>>, stored: &StateSet| match over {
            Some(v) => StateSet::new(n, v.iter().copied()),
            None => Ok(stored.clone()),
        };
        Ok((pick(&self.a, &model.a)?, pick(&self.b, &model.b)?))
    }
}

/// One identity check with the tolerance it was judged against.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    /// Observed deviation.
    pub value: f64,
    pub tolerance: f64,
}

impl Check {
    fn new(name: &str, value: f64, tolerance: f64) -> Self {
        Self {
            name: name.to_string(),
            pass: value <= tolerance,
            value,
            tolerance,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CommittorSummary {
    pub h: ScalarField,
    pub residual: f64,
    pub value_at_start: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegularizedLevel {
    pub n: u32,
    pub h_start: f64,
    pub gamma_start: f64,
    /// `γ̄(x) − γ̄ⁿ(x) = log(1 + (hⁿ − h)(x)/h(x))`, from the defect solve.
    pub gap: f64,
    /// `e^{-n}(1 − h(x))/h(x)`.
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReducedProblem {
    /// Exit law of the reference process from the start state.
    pub exit_law: Vec<(usize, f64)>,
    /// `ν(η) ∝ h(η) R(η)`.
    pub tilted_law: Vec<(usize, f64)>,
    /// `Σ ν f + Ent(ν | R)` at the tilted law.
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HorizonSummary {
    pub value: f64,
    pub evolved_cost: f64,
    pub mass_defect: f64,
    pub hje_residual: f64,
    pub perturbed_margins: Vec<(f64, f64)>,
}

/// Everything the pipeline computed, without the wall-clock timestamp.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunStats {
    pub version: String,
    pub seed: u64,
    pub start: usize,
    pub committor: CommittorSummary,
    pub control: ControlSummary,
    pub reference: EnsembleStats,
    pub controlled: EnsembleStats,
    pub reweighting: Option<ReweightReport>,
    pub martingale_reference: Vec<MartingaleReport>,
    pub martingale_controlled: Vec<MartingaleReport>,
    pub regularized: Vec<RegularizedLevel>,
    pub reduced_problem: ReducedProblem,
    pub horizon: Option<HorizonSummary>,
    pub checks: Vec<Check>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    #[serde(flatten)]
    pub stats: RunStats,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
}

impl RunReport {
    pub fn all_passed(&self) -> bool {
        self.stats.checks.iter().all(|c| c.pass)
    }

    /// Process exit status: 0 when every check passed, 2 otherwise.
    pub fn exit_code(&self) -> i32 {
        if self.all_passed() {
            0
        } else {
            2
        }
    }

    /// Writes `stats.json` (deterministic for a fixed seed) and
    /// `report.json` (adds the timestamp) into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        model_io::write(dir.join("stats.json"), &model_io::to_pretty(&self.stats))?;
        model_io::write(dir.join("report.json"), &model_io::to_pretty(self))
    }
}

pub fn run_pipeline(cfg: &PipelineConfig) -> Result<RunReport> {
    cfg.validate()?;
    let model = model_io::load_model(&cfg.model)?;
    let k = &model.kernel;
    let (a, b) = cfg.sets(&model)?;
    check_transition_sets(k, &a, &b)?;
    k.check_state(cfg.start)?;
    let x = cfg.start;
    let sigma = cfg.tolerances.n_sigma;
    let mut checks = Vec::new();

    let sol = solve_committor(k, &a, &b)?;
    let (spec, controlled) = transition_path_control(k, &sol)?;
    let stop = StopRule::sets(a.clone(), b.clone());

    let reference = estimate_ensemble(k, None, x, &stop, cfg.n_reference, cfg.seed)?;
    let dynkin = committor::dynkin_check(k, &sol, x, &reference.paths)?;
    checks.push(Check::new("dynkin", dynkin.gap, sigma * dynkin.std_error));

    let ctrl = estimate_ensemble(
        k,
        Some(&spec),
        x,
        &stop,
        cfg.n_controlled,
        cfg.seed.wrapping_add(1),
    )?;
    checks.push(Check::new("a_avoidance", ctrl.stats.n_hit_a as f64, 0.0));
    let value_gap = ctrl
        .paths
        .iter()
        .map(|p| value_identity_gap(&sol.h, p))
        .fold(0.0, f64::max);
    checks.push(Check::new(
        "value_identity",
        value_gap,
        cfg.tolerances.value_identity,
    ));

    // bounded control from the smallest regularization level
    let reweighting = match cfg.regularization.iter().min() {
        Some(&n) => {
            let reg = solve_committor_regularized(k, &a, &b, n)?;
            let (reg_spec, _) = doob_transform(k, &reg.h, &a.union(&b))?;
            let g = ScalarField::from(
                (0..k.n_states())
                    .map(|y| f64::from(b.contains(y)))
                    .collect::<Vec<_>>(),
            );
            let r = reweighting_check(
                k,
                &reg_spec,
                &g,
                x,
                &stop,
                cfg.n_reference,
                cfg.seed.wrapping_add(2),
            )?;
            checks.push(Check::new(
                "reweighting",
                (r.reference.mean - r.controlled.mean).abs(),
                sigma * r.combined_se,
            ));
            checks.push(Check::new(
                "z_normalization",
                (r.z_mean.mean - 1.0).abs(),
                sigma * r.z_mean.se,
            ));
            Some(r)
        }
        None => None,
    };

    let phis = |kk: &crate::kernel::RateKernel| {
        vec![
            PairField::constant(kk, 1.0),
            PairField::from_fn(kk, |x, y, _| if y > x { 1.0 } else { -0.5 }),
            PairField::from_fn(kk, |_, y, _| sol.h[y]),
        ]
    };
    let sets = Some((a.clone(), b.clone()));
    let martingale_reference = martingale_test_many(
        k,
        &phis(k),
        x,
        &cfg.checkpoints,
        sets.clone(),
        cfg.n_reference,
        cfg.seed.wrapping_add(4),
    )?;
    let martingale_controlled = martingale_test_many(
        &controlled,
        &phis(&controlled),
        x,
        &cfg.checkpoints,
        sets,
        cfg.n_controlled,
        cfg.seed.wrapping_add(5),
    )?;
    let worst = martingale_reference
        .iter()
        .chain(&martingale_controlled)
        .flat_map(|r| &r.checkpoints)
        .map(|c| {
            if c.estimate.se > 0.0 {
                c.estimate.mean.abs() / c.estimate.se
            } else if c.estimate.mean == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        })
        .fold(0.0, f64::max);
    checks.push(Check::new("martingale", worst, sigma));

    let mut ns = cfg.regularization.clone();
    ns.sort_unstable();
    ns.dedup();
    let mut regularized = Vec::with_capacity(ns.len());
    for &n in &ns {
        let reg = solve_committor_regularized(k, &a, &b, n)?;
        let defect = regularization_defect(k, &a, &b, n)?;
        let h = sol.h[x];
        regularized.push(RegularizedLevel {
            n,
            h_start: reg.h[x],
            gamma_start: -reg.h[x].ln(),
            gap: (defect[x] / h).ln_1p(),
            bound: if h > 0.0 {
                (-(n as f64)).exp() * (1.0 - h) / h
            } else {
                f64::INFINITY
            },
        });
    }
    let gamma = -sol.h[x].ln();
    let mut violation: f64 = 0.0;
    for w in regularized.windows(2) {
        violation = violation.max(w[0].gamma_start - w[1].gamma_start);
    }
    for l in &regularized {
        // γ̄ⁿ ≤ γ̄ and γ̄ − γ̄ⁿ ≤ bound
        violation = violation.max(l.gamma_start - gamma).max(l.gap - l.bound);
    }
    checks.push(Check::new(
        "regularized_monotonicity",
        violation.max(0.0),
        1e-12,
    ));

    let reduced_problem = reduced_problem(&model, &a, &b, &sol.h, x)?;
    checks.push(Check::new(
        "reduced_problem",
        (reduced_problem.objective - gamma).abs(),
        cfg.tolerances.reduced_problem,
    ));

    let horizon = match &cfg.horizon {
        Some(hc) => Some(horizon_summary(&model, hc, x, &mut checks)?),
        None => None,
    };

    let stats = RunStats {
        version: env!("CARGO_PKG_VERSION").to_string(),
        seed: cfg.seed,
        start: x,
        committor: CommittorSummary {
            h: sol.h.clone(),
            residual: sol.residual,
            value_at_start: gamma,
        },
        control: doob::summarize(k, &spec, &controlled, &a),
        reference: reference.stats,
        controlled: ctrl.stats,
        reweighting,
        martingale_reference,
        martingale_controlled,
        regularized,
        reduced_problem,
        horizon,
        checks,
    };
    let timestamp = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    Ok(RunReport { stats, timestamp })
}

/// Evaluates `Σ ν f_AB + Ent(ν | R)` at the `h`-tilted exit law, which
/// should equal `−log h(x)`.
fn reduced_problem(
    model: &Model,
    a: &StateSet,
    b: &StateSet,
    h: &[f64],
    x: usize,
) -> Result<ReducedProblem> {
    let exit_law = hitting_distribution(&model.kernel, a, b, x)?;
    let mass: f64 = exit_law.iter().map(|&(eta, r)| r * h[eta]).sum();
    let tilted_law: Vec<(usize, f64)> = exit_law
        .iter()
        .map(|&(eta, r)| (eta, r * h[eta] / mass))
        .collect();
    let mut objective = 0.0;
    for (&(eta, r), &(_, nu)) in exit_law.iter().zip(&tilted_law) {
        if nu > 0.0 {
            objective += nu * (-h[eta].ln() + (nu / r).ln());
        }
    }
    Ok(ReducedProblem {
        exit_law,
        tilted_law,
        objective,
    })
}

fn horizon_summary(
    model: &Model,
    hc: &HorizonConfig,
    x: usize,
    checks: &mut Vec<Check>,
) -> Result<HorizonSummary> {
    let k = &model.kernel;
    let terminal = hc
        .terminal
        .iter()
        .enumerate()
        .map(|(i, r)| r.value(&format!("terminal[{i}]")))
        .collect::<Result<Vec<_>>>()?;
    let f = TerminalCost::new(terminal)?;
    let grid = TimeGrid::new(hc.horizon, hc.steps)?;
    let mu = match &hc.mu {
        Some(w) => Distribution::new(w.clone())?,
        None => Distribution::dirac(k.n_states(), x)?,
    };
    let sol = solve_bke(k, &f, grid)?;
    let value = deterministic_value(&sol, &mu)?;
    let traj = evolve_controlled_density(k, &sol, &mu)?;
    let evolved_cost = f.expectation(traj.terminal()) + traj.action;
    let mass_defect = traj
        .p
        .iter()
        .map(|p| (p.iter().sum::<f64>() - 1.0).abs())
        .fold(0.0, f64::max);
    let residual = hje_residual(k, &sol)?;
    let mut perturbed_margins = Vec::new();
    for eps in [0.1, 0.5, 1.0] {
        let run = blended_control_cost(k, &sol, &mu, eps)?;
        perturbed_margins.push((eps, run.total - value));
    }
    checks.push(Check::new(
        "horizon_duality",
        (evolved_cost - value).abs(),
        5e-4,
    ));
    checks.push(Check::new("horizon_mass", mass_defect, 1e-9));
    let worst_margin = perturbed_margins
        .iter()
        .map(|m| m.1)
        .fold(f64::INFINITY, f64::min);
    checks.push(Check {
        name: "horizon_perturbed".into(),
        pass: worst_margin > 0.0,
        value: worst_margin,
        tolerance: 0.0,
    });
    Ok(HorizonSummary {
        value,
        evolved_cost,
        mass_defect,
        hje_residual: residual,
        perturbed_margins,
    })
}
