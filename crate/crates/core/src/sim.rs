//! Exact path sampling and Monte-Carlo identity checks.
//!
//! Paths are drawn with the exponential-clock construction: hold at `x` for
//! an `Exp(λ(x))` time, then jump to `y` with probability `L(x, y)/λ(x)`.
//! Each path owns a ChaCha stream keyed by `(master seed, path index)`, so
//! ensembles are reproducible regardless of how they are scheduled.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::doob::ControlSpec;
use crate::error::{Error, Result};
use crate::finite_horizon::ent;
use crate::kernel::{PairField, RateKernel, ScalarField, StateSet};

pub const DEFAULT_MAX_JUMPS: usize = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StopReason {
    HitA,
    HitB,
    HorizonT,
    MaxJumps,
}

/// When to stop a path: first entrance into `A ∪ B`, a fixed horizon, or
/// a jump cap, whichever comes first.
#[derive(Debug, Clone, PartialEq)]
pub struct StopRule {
    pub sets: Option<(StateSet, StateSet)>,
    pub horizon: Option<f64>,
    pub max_jumps: usize,
}

impl StopRule {
    pub fn sets(a: StateSet, b: StateSet) -> Self {
        Self {
            sets: Some((a, b)),
            horizon: None,
            max_jumps: DEFAULT_MAX_JUMPS,
        }
    }

    pub fn horizon(t: f64) -> Self {
        Self {
            sets: None,
            horizon: Some(t),
            max_jumps: DEFAULT_MAX_JUMPS,
        }
    }

    pub fn with_horizon(mut self, t: f64) -> Self {
        self.horizon = Some(t);
        self
    }

    pub fn with_max_jumps(mut self, n: usize) -> Self {
        self.max_jumps = n;
        self
    }

    fn check(&self) -> Result<()> {
        if let Some(t) = self.horizon {
            if !(t.is_finite() && t >= 0.0) {
                return Err(Error::InvalidStopRule);
            }
        }
        if self.sets.is_none() && self.horizon.is_none() && self.max_jumps == usize::MAX {
            return Err(Error::InvalidStopRule);
        }
        Ok(())
    }

    fn set_hit(&self, x: usize) -> Option<StopReason> {
        let (a, b) = self.sets.as_ref()?;
        if a.contains(x) {
            Some(StopReason::HitA)
        } else if b.contains(x) {
            Some(StopReason::HitB)
        } else {
            None
        }
    }
}

/// One sampled càdlàg trajectory up to its stopping time.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathRecord {
    pub start: usize,
    /// Jump times, strictly increasing.
    pub jump_times: Vec<f64>,
    /// State entered at each jump.
    pub states: Vec<usize>,
    pub stop_reason: StopReason,
    pub tau: f64,
    /// Accumulated log Girsanov weight; zero when not tracked.
    pub log_z: f64,
    pub seed: u64,
    pub stream: u64,
}

impl PathRecord {
    pub fn final_state(&self) -> usize {
        self.states.last().copied().unwrap_or(self.start)
    }

    pub fn n_jumps(&self) -> usize {
        self.states.len()
    }

    /// State occupied just before jump `i`.
    pub fn from_state(&self, i: usize) -> usize {
        if i == 0 {
            self.start
        } else {
            self.states[i - 1]
        }
    }

    /// `(state, entered, left)` holding intervals covering `[0, τ]`.
    pub fn segments(&self) -> impl Iterator<Item = (usize, f64, f64)> + '_ {
        (0..=self.states.len()).map(move |i| {
            let state = self.from_state(i);
            let t0 = if i == 0 { 0.0 } else { self.jump_times[i - 1] };
            let t1 = if i < self.states.len() {
                self.jump_times[i]
            } else {
                self.tau
            };
            (state, t0, t1)
        })
    }

    /// State occupied at time `t ≤ τ`.
    pub fn state_at(&self, t: f64) -> usize {
        let n = self.jump_times.partition_point(|&s| s <= t);
        self.from_state(n)
    }
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Samples a path from `x0` on stream 0 of `seed`.
pub fn sample_path(k: &RateKernel, x0: usize, stop: &StopRule, seed: u64) -> Result<PathRecord> {
    sample_path_stream(k, x0, stop, seed, 0)
}

pub fn sample_path_stream(
    k: &RateKernel,
    x0: usize,
    stop: &StopRule,
    seed: u64,
    stream: u64,
) -> Result<PathRecord> {
    k.check_state(x0)?;
    stop.check()?;
    let mut rng = stream_rng(seed, stream);
    let mut rec = PathRecord {
        start: x0,
        jump_times: Vec::new(),
        states: Vec::new(),
        stop_reason: StopReason::MaxJumps,
        tau: 0.0,
        log_z: 0.0,
        seed,
        stream,
    };
    let mut x = x0;
    let mut t = 0.0;
    loop {
        if let Some(r) = stop.set_hit(x) {
            rec.stop_reason = r;
            rec.tau = t;
            return Ok(rec);
        }
        if rec.states.len() >= stop.max_jumps {
            rec.stop_reason = StopReason::MaxJumps;
            rec.tau = t;
            return Ok(rec);
        }
        let (ys, rs) = k.row(x);
        let lambda: f64 = rs.iter().sum();
        if lambda == 0.0 {
            if let Some(horizon) = stop.horizon {
                // nothing more happens; only an error if the sets were the goal
                if stop.sets.is_none() {
                    rec.stop_reason = StopReason::HorizonT;
                    rec.tau = horizon;
                    return Ok(rec);
                }
            }
            return Err(Error::StuckAbsorbing { state: x, time: t });
        }
        // 1 − U lies in (0, 1]
        let u: f64 = 1.0 - rng.random::<f64>();
        let hold = -u.ln() / lambda;
        if let Some(horizon) = stop.horizon {
            if t + hold > horizon {
                rec.stop_reason = StopReason::HorizonT;
                rec.tau = horizon;
                return Ok(rec);
            }
        }
        t += hold;
        let mut pick = rng.random::<f64>() * lambda;
        let mut next = ys[ys.len() - 1];
        for (&y, &r) in ys.iter().zip(rs) {
            if pick < r {
                next = y;
                break;
            }
            pick -= r;
        }
        if let Some(&last) = rec.jump_times.last() {
            if t <= last {
                // a zero holding time would break the strict ordering
                t = f64::from_bits(last.to_bits() + 1);
            }
        }
        rec.jump_times.push(t);
        rec.states.push(next);
        x = next;
    }
}

/// Per-state tables derived from a homogeneous velocity.
struct WeightTable {
    log_v: Vec<f64>,
    compensator: Vec<f64>,
    entropy: Vec<f64>,
}

impl WeightTable {
    fn new(base: &RateKernel, v: &PairField) -> Result<Self> {
        v.check_aligned(base)?;
        let log_v = v.values().iter().map(|x| x.ln()).collect();
        let compensator = (0..base.n_states())
            .map(|x| {
                base.row_range(x)
                    .map(|e| (v[e] - 1.0) * base.rate_at(e))
                    .sum()
            })
            .collect();
        let entropy = (0..base.n_states())
            .map(|x| base.row_range(x).map(|e| ent(v[e]) * base.rate_at(e)).sum())
            .collect();
        Ok(Self {
            log_v,
            compensator,
            entropy,
        })
    }

    fn log_weight(&self, base: &RateKernel, path: &PathRecord) -> Result<f64> {
        let mut jumps = 0.0;
        for (i, &y) in path.states.iter().enumerate() {
            let x = path.from_state(i);
            let e = base
                .entry_index(x, y)
                .ok_or(Error::UnsupportedJump { from: x, to: y })?;
            if self.log_v[e] == f64::NEG_INFINITY {
                return Ok(f64::NEG_INFINITY);
            }
            jumps += self.log_v[e];
        }
        let comp: f64 = path
            .segments()
            .map(|(x, t0, t1)| (t1 - t0) * self.compensator[x])
            .sum();
        Ok(jumps - comp)
    }

    fn running_cost(&self, path: &PathRecord) -> f64 {
        path.segments()
            .map(|(x, t0, t1)| {
                if t1 > t0 {
                    (t1 - t0) * self.entropy[x]
                } else {
                    0.0
                }
            })
            .sum()
    }
}

/// `log Z_τ = Σ_jumps log v(X_{s−}, X_s) − ∫_0^τ Σ_y (v(X_s, y) − 1) L(X_s, y) ds`.
///
/// A jump across a pair with `v = 0` yields `−∞`, returned as the value.
pub fn girsanov_log_weight(
    path: &PathRecord,
    spec: &ControlSpec,
    base: &RateKernel,
) -> Result<f64> {
    let v = spec
        .homogeneous()
        .ok_or_else(|| Error::InvalidField("Girsanov weight of a time-dependent control".into()))?;
    WeightTable::new(base, v)?.log_weight(base, path)
}

/// Sample mean and its standard error (sample variance, `n − 1`).
pub fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let rough = values.iter().sum::<f64>() / n as f64;
    let mean = if rough.is_finite() {
        rough + values.iter().map(|v| v - rough).sum::<f64>() / n as f64
    } else {
        rough
    };
    if n < 2 {
        return (mean, f64::INFINITY);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub mean: f64,
    pub se: f64,
}

impl Estimate {
    pub fn of(values: &[f64]) -> Self {
        let (mean, se) = mean_and_se(values);
        Self { mean, se }
    }

    /// `|mean − target| ≤ 3 se`.
    pub fn within_3se(&self, target: f64) -> bool {
        (self.mean - target).abs() <= 3.0 * self.se
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnsembleStats {
    pub n_paths: usize,
    pub n_hit_a: usize,
    pub n_hit_b: usize,
    pub n_horizon: usize,
    pub n_max_jumps: usize,
    pub hit_b_fraction: Estimate,
    /// Over paths that did not hit the jump cap.
    pub tau: Estimate,
    pub exp_tau: Estimate,
    /// Top 1% of `e^τ` samples carry more than half of the total.
    pub exp_tau_unstable: bool,
    pub log_z: Estimate,
    pub running_cost: Estimate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    pub stats: EnsembleStats,
    pub paths: Vec<PathRecord>,
}

/// Samples `n_paths` paths under `spec` (or the reference kernel when
/// `None`) and aggregates them in path-index order.
pub fn estimate_ensemble(
    k: &RateKernel,
    spec: Option<&ControlSpec>,
    x0: usize,
    stop: &StopRule,
    n_paths: usize,
    seed: u64,
) -> Result<Ensemble> {
    if n_paths < 2 {
        return Err(Error::TooFewPaths {
            needed: 2,
            got: n_paths,
        });
    }
    k.check_state(x0)?;
    let (kernel, table) = match spec {
        Some(s) => {
            if s.excluded.contains(x0) {
                return Err(Error::ExcludedStart(x0));
            }
            let v = s.homogeneous().ok_or_else(|| {
                Error::InvalidField("ensemble under a time-dependent control".into())
            })?;
            (k.scaled(v)?, Some(WeightTable::new(k, v)?))
        }
        None => (k.clone(), None),
    };
    let paths = (0..n_paths as u64)
        .into_par_iter()
        .map(|i| {
            let mut p = sample_path_stream(&kernel, x0, stop, seed, i)?;
            if let Some(t) = &table {
                p.log_z = t.log_weight(k, &p)?;
            }
            Ok(p)
        })
        .collect::<Result<Vec<_>>>()?;
    let running: Vec<f64> = match &table {
        Some(t) => paths.iter().map(|p| t.running_cost(p)).collect(),
        None => vec![0.0; paths.len()],
    };
    Ok(Ensemble {
        stats: summarize(&paths, &running),
        paths,
    })
}

fn summarize(paths: &[PathRecord], running: &[f64]) -> EnsembleStats {
    let count = |r: StopReason| paths.iter().filter(|p| p.stop_reason == r).count();
    let hit: Vec<f64> = paths
        .iter()
        .map(|p| {
            if p.stop_reason == StopReason::HitB {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    let taus: Vec<f64> = paths
        .iter()
        .filter(|p| p.stop_reason != StopReason::MaxJumps)
        .map(|p| p.tau)
        .collect();
    let exp_taus: Vec<f64> = taus.iter().map(|t| t.exp()).collect();
    let log_z: Vec<f64> = paths.iter().map(|p| p.log_z).collect();
    EnsembleStats {
        n_paths: paths.len(),
        n_hit_a: count(StopReason::HitA),
        n_hit_b: count(StopReason::HitB),
        n_horizon: count(StopReason::HorizonT),
        n_max_jumps: count(StopReason::MaxJumps),
        hit_b_fraction: Estimate::of(&hit),
        tau: Estimate::of(&taus),
        exp_tau: Estimate::of(&exp_taus),
        exp_tau_unstable: heavy_tail(&exp_taus),
        log_z: Estimate::of(&log_z),
        running_cost: Estimate::of(running),
    }
}

fn heavy_tail(samples: &[f64]) -> bool {
    if samples.is_empty() {
        return false;
    }
    let total: f64 = samples.iter().sum();
    if !total.is_finite() {
        return true;
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let top = (samples.len() as f64 * 0.01).ceil() as usize;
    sorted[..top].iter().sum::<f64>() > 0.5 * total
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReweightReport {
    /// `E_ref[Z_τ g(X_τ)]`.
    pub reference: Estimate,
    /// `E_ctrl[g(X_τ)]`.
    pub controlled: Estimate,
    pub combined_se: f64,
    pub agree: bool,
    /// `E_ref[Z_τ]`.
    pub z_mean: Estimate,
    pub z_normalized: bool,
}

/// Cross-checks the change of measure with two independent ensembles.
pub fn reweighting_check(
    k: &RateKernel,
    spec: &ControlSpec,
    g: &ScalarField,
    x0: usize,
    stop: &StopRule,
    n_paths: usize,
    seed: u64,
) -> Result<ReweightReport> {
    k.check_len(g.len())?;
    let (lo, hi) = spec.bounds(k);
    if lo.is_nan() || lo <= 0.0 || !hi.is_finite() {
        return Err(Error::UnboundedControl(format!(
            "velocity range [{lo}, {hi}]"
        )));
    }
    let v = spec
        .homogeneous()
        .ok_or_else(|| Error::InvalidField("reweighting with a time-dependent control".into()))?;
    let table = WeightTable::new(k, v)?;
    let reference = estimate_ensemble(k, None, x0, stop, n_paths, seed)?;
    let z: Vec<f64> = reference
        .paths
        .iter()
        .map(|p| table.log_weight(k, p).map(f64::exp))
        .collect::<Result<_>>()?;
    let weighted: Vec<f64> = reference
        .paths
        .iter()
        .zip(&z)
        .map(|(p, z)| z * g[p.final_state()])
        .collect();
    let controlled = estimate_ensemble(k, Some(spec), x0, stop, n_paths, seed.wrapping_add(1))?;
    let plain: Vec<f64> = controlled
        .paths
        .iter()
        .map(|p| g[p.final_state()])
        .collect();
    let reference = Estimate::of(&weighted);
    let controlled = Estimate::of(&plain);
    let combined_se = (reference.se.powi(2) + controlled.se.powi(2)).sqrt();
    let z_mean = Estimate::of(&z);
    Ok(ReweightReport {
        agree: (reference.mean - controlled.mean).abs() <= 3.0 * combined_se,
        reference,
        controlled,
        combined_se,
        z_normalized: z_mean.within_3se(1.0),
        z_mean,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MartingaleCheckpoint {
    pub t: f64,
    pub estimate: Estimate,
    pub within_3se: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MartingaleReport {
    pub n_paths: usize,
    pub checkpoints: Vec<MartingaleCheckpoint>,
}

impl MartingaleReport {
    pub fn passed(&self) -> bool {
        self.checkpoints.iter().all(|c| c.within_3se)
    }
}

/// `N_t^φ = Σ_{jumps ≤ t} φ(X_{s−}, X_s) − ∫_0^{t∧τ} Σ_y φ(X_s, y) L(X_s, y) ds`.
pub fn compensated_sum(k: &RateKernel, phi: &PairField, path: &PathRecord, t: f64) -> Result<f64> {
    let mut jumps = 0.0;
    for (i, (&s, &y)) in path.jump_times.iter().zip(&path.states).enumerate() {
        if s > t {
            break;
        }
        let x = path.from_state(i);
        let e = k
            .entry_index(x, y)
            .ok_or(Error::UnsupportedJump { from: x, to: y })?;
        jumps += phi[e];
    }
    let mut comp = 0.0;
    for (x, t0, t1) in path.segments() {
        if t0 >= t {
            break;
        }
        let dt = t1.min(t) - t0;
        if dt > 0.0 {
            comp += dt * k.row_range(x).map(|e| phi[e] * k.rate_at(e)).sum::<f64>();
        }
    }
    Ok(jumps - comp)
}

/// Zero-mean checks of the compensated sums of several `φ` on a shared
/// ensemble. Paths stop at `max(checkpoints)` or on `sets`, in which case
/// the stopped martingale `N_{t∧τ}` is tested.
pub fn martingale_test_many(
    k: &RateKernel,
    phis: &[PairField],
    x0: usize,
    checkpoints: &[f64],
    sets: Option<(StateSet, StateSet)>,
    n_paths: usize,
    seed: u64,
) -> Result<Vec<MartingaleReport>> {
    for phi in phis {
        phi.check_aligned(k)?;
        if phi.values().iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidField("phi must be bounded".into()));
        }
    }
    let horizon = checkpoints.iter().copied().fold(0.0, f64::max);
    let stop = StopRule {
        sets,
        horizon: Some(horizon),
        max_jumps: DEFAULT_MAX_JUMPS,
    };
    let ens = estimate_ensemble(k, None, x0, &stop, n_paths, seed)?;
    phis.iter()
        .map(|phi| {
            let cps = checkpoints
                .iter()
                .map(|&t| {
                    let vals = ens
                        .paths
                        .iter()
                        .map(|p| compensated_sum(k, phi, p, t))
                        .collect::<Result<Vec<_>>>()?;
                    let estimate = Estimate::of(&vals);
                    Ok(MartingaleCheckpoint {
                        t,
                        within_3se: estimate.within_3se(0.0),
                        estimate,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(MartingaleReport {
                n_paths,
                checkpoints: cps,
            })
        })
        .collect()
}

pub fn martingale_test(
    k: &RateKernel,
    phi: &PairField,
    x0: usize,
    checkpoints: &[f64],
    sets: Option<(StateSet, StateSet)>,
    n_paths: usize,
    seed: u64,
) -> Result<MartingaleReport> {
    Ok(martingale_test_many(
        k,
        std::slice::from_ref(phi),
        x0,
        checkpoints,
        sets,
        n_paths,
        seed,
    )?
    .remove(0))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DynkinReport {
    pub start: usize,
    pub n_paths: usize,
    /// Empirical mean of `h(X_τ)`.
    pub mean: f64,
    pub std_error: f64,
    pub h_start: f64,
    pub gap: f64,
    pub within_3se: bool,
}

/// Empirical `E[h(X_τ)]` against `h(x)` over paths stopped on `A ∪ B`.
pub fn dynkin_from_paths(h: &[f64], x: usize, paths: &[PathRecord]) -> Result<DynkinReport> {
    let values: Vec<f64> = paths
        .iter()
        .filter(|p| matches!(p.stop_reason, StopReason::HitA | StopReason::HitB))
        .map(|p| h[p.final_state()])
        .collect();
    if values.is_empty() {
        return Err(Error::NoPaths);
    }
    let (mean, std_error) = mean_and_se(&values);
    let gap = (mean - h[x]).abs();
    Ok(DynkinReport {
        start: x,
        n_paths: values.len(),
        mean,
        std_error,
        h_start: h[x],
        gap,
        within_3se: gap == 0.0 || gap <= 3.0 * std_error,
    })
}

/// Samples reference paths from `x0` to `A ∪ B` and runs the Dynkin check.
pub fn dynkin_mc(
    k: &RateKernel,
    h: &ScalarField,
    x0: usize,
    a: &StateSet,
    b: &StateSet,
    n_paths: usize,
    seed: u64,
) -> Result<DynkinReport> {
    k.check_len(h.len())?;
    let stop = StopRule::sets(a.clone(), b.clone());
    let ens = estimate_ensemble(k, None, x0, &stop, n_paths, seed)?;
    dynkin_from_paths(h, x0, &ens.paths)
}

/// `|f_AB(X_τ) + log Z_τ + log h(x)|` for one controlled path, with
/// `f_AB = −log h`.
pub fn value_identity_gap(h: &[f64], path: &PathRecord) -> f64 {
    let terminal = -h[path.final_state()].ln();
    (terminal + path.log_z + h[path.start].ln()).abs()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::doob::doob_transform;

    fn m2() -> RateKernel {
        RateKernel::from_triplets(2, &[(0, 1, 1.0), (1, 0, 1.0)]).unwrap()
    }

    fn m3() -> RateKernel {
        RateKernel::from_triplets(3, &[(0, 1, 1.0), (1, 0, 1.0), (1, 2, 2.0), (2, 1, 1.0)]).unwrap()
    }

    fn set(n: usize, s: &[usize]) -> StateSet {
        StateSet::new(n, s.iter().copied()).unwrap()
    }

    #[test]
    fn start_in_b_stops_immediately() {
        let stop = StopRule::sets(set(3, &[0]), set(3, &[2]));
        let p = sample_path(&m3(), 2, &stop, 1).unwrap();
        assert_eq!(p.stop_reason, StopReason::HitB);
        assert_eq!(p.tau, 0.0);
        assert!(p.states.is_empty());
    }

    #[test]
    fn paths_are_reproducible_and_well_formed() {
        let stop = StopRule::horizon(20.0);
        let a = sample_path_stream(&m3(), 1, &stop, 9, 3).unwrap();
        let b = sample_path_stream(&m3(), 1, &stop, 9, 3).unwrap();
        assert_eq!(a, b);
        let c = sample_path_stream(&m3(), 1, &stop, 9, 4).unwrap();
        assert_ne!(a, c);
        assert!(a.jump_times.windows(2).all(|w| w[0] < w[1]));
        assert!((0..a.n_jumps()).all(|i| a.from_state(i) != a.states[i]));
        assert_eq!(a.stop_reason, StopReason::HorizonT);
    }

    #[test]
    fn controlled_m3_single_jump() {
        let k = m3();
        let (spec, c) = doob_transform(
            &k,
            &ScalarField(vec![0.0, 2.0 / 3.0, 1.0]),
            &set(3, &[0, 2]),
        )
        .unwrap();
        let stop = StopRule::sets(set(3, &[0]), set(3, &[2]));
        for s in 0..20 {
            let p = sample_path(&c, 1, &stop, s).unwrap();
            assert_eq!(p.states, vec![2]);
            assert_eq!(p.stop_reason, StopReason::HitB);
            let lz = girsanov_log_weight(&p, &spec, &k).unwrap();
            assert!((lz - 1.5f64.ln()).abs() < 1e-14);
        }
        // a reference path that enters A has zero weight
        let mut into_a = sample_path(&c, 1, &stop, 0).unwrap();
        into_a.states = vec![0];
        assert_eq!(
            girsanov_log_weight(&into_a, &spec, &k).unwrap(),
            f64::NEG_INFINITY
        );
    }

    #[test]
    fn unit_velocity_has_zero_weight() {
        let k = m3();
        let (spec, _) =
            doob_transform(&k, &ScalarField::constant(3, 1.0), &StateSet::empty(3)).unwrap();
        let p = sample_path(&k, 0, &StopRule::horizon(5.0), 3).unwrap();
        assert_eq!(girsanov_log_weight(&p, &spec, &k).unwrap(), 0.0);
    }

    #[test]
    fn poisson_jump_count() {
        // M2 jumps at rate 1 from either state: the count by T is Poisson(T)
        let t = 3.0;
        let ens = estimate_ensemble(&m2(), None, 0, &StopRule::horizon(t), 100_000, 7).unwrap();
        let counts: Vec<f64> = ens.paths.iter().map(|p| p.n_jumps() as f64).collect();
        let est = Estimate::of(&counts);
        assert!(est.within_3se(t), "{est:?}");
    }

    #[test]
    fn stuck_absorbing() {
        let k = RateKernel::from_triplets(3, &[(0, 1, 1.0)]).unwrap();
        let stop = StopRule::sets(set(3, &[2]), set(3, &[2]).complement().complement());
        let stop = StopRule {
            sets: Some((set(3, &[2]), set(3, &[0]))),
            ..stop
        };
        // starts at 0 ∈ B, fine; from 1 it is stuck
        assert!(sample_path(&k, 0, &stop, 0).is_ok());
        assert!(matches!(
            sample_path(&k, 1, &stop, 0),
            Err(Error::StuckAbsorbing { state: 1, .. })
        ));
    }

    #[test]
    fn max_jumps_flagged() {
        let p = sample_path(&m2(), 0, &StopRule::horizon(1e9).with_max_jumps(10), 0).unwrap();
        assert_eq!(p.stop_reason, StopReason::MaxJumps);
        assert_eq!(p.n_jumps(), 10);
    }

    #[test]
    fn zero_phi_is_zero() {
        let k = m2();
        let phi = PairField::constant(&k, 0.0);
        let r = martingale_test(&k, &phi, 0, &[0.5, 1.0], None, 10, 1).unwrap();
        assert!(r.checkpoints.iter().all(|c| c.estimate.mean == 0.0));
    }

    #[test]
    fn dynkin_inside_boundary_is_exact() {
        let k = m3();
        let h = ScalarField(vec![0.0, 2.0 / 3.0, 1.0]);
        let r = dynkin_mc(&k, &h, 2, &set(3, &[0]), &set(3, &[2]), 10, 1).unwrap();
        assert_eq!(r.gap, 0.0);
        assert_eq!(r.std_error, 0.0);
        assert!(r.within_3se);
        assert_eq!(dynkin_from_paths(&h, 1, &[]), Err(Error::NoPaths));
    }

    #[test]
    fn heavy_tail_flag() {
        let mut v = vec![1.0; 99];
        v.push(1e6);
        assert!(heavy_tail(&v));
        assert!(!heavy_tail(&[1.0; 100]));
    }
}
