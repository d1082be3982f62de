//! Finite-horizon control of the density-flux pair.
//!
//! The backward Kolmogorov equation `∂_t h + Lh = 0`, `h_T = e^{-f}`, is
//! solved on a uniform grid; `ψ = log h` is the Cole–Hopf potential and
//! solves `∂_t ψ + H(x, ∇̄ψ) = 0`. The optimal flux is
//! `q_t(x, y) = (h_t(y)/h_t(x)) p_t(x) L(x, y)` and the value of the problem
//! started from `μ` is `−Σ ψ_0 μ`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::kernel::{Distribution, PairField, RateKernel, ScalarField};
use crate::propagate;

/// Explicit steps require `Δt · c_L` at most this.
pub const STABILITY_BOUND: f64 = 0.5;

/// Halvings of the final interval when the running cost blows up at `T`.
const TERMINAL_REFINEMENTS: usize = 40;

/// Uniform grid `t_i = i T / n_steps` on `[0, T]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TimeGrid {
    horizon: f64,
    n_steps: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, n_steps: usize) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::InvalidGrid(format!(
                "horizon {horizon} must be positive"
            )));
        }
        if n_steps == 0 {
            return Err(Error::InvalidGrid("n_steps must be positive".into()));
        }
        Ok(Self { horizon, n_steps })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.n_steps as f64
    }

    pub fn node(&self, i: usize) -> f64 {
        if i == self.n_steps {
            self.horizon
        } else {
            i as f64 * self.dt()
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..=self.n_steps).map(|i| self.node(i)).collect()
    }

    fn check_stability(&self, k: &RateKernel) -> Result<()> {
        let ratio = self.dt() * k.total_intensity();
        if ratio > STABILITY_BOUND {
            return Err(Error::StepTooLarge(ratio));
        }
        Ok(())
    }
}

/// Terminal cost with values in `[0, +∞]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TerminalCost(Vec<f64>);

impl TerminalCost {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(v) = values
            .iter()
            .find(|v| v.is_nan() || **v < 0.0 || **v == f64::NEG_INFINITY)
        {
            return Err(Error::InvalidField(format!(
                "terminal cost value {v} not in [0, +inf]"
            )));
        }
        if values.iter().all(|v| v.is_infinite()) {
            return Err(Error::ImproperTerminal);
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    /// `f ∧ n`.
    pub fn cut_off(&self, n: f64) -> TerminalCost {
        TerminalCost(self.0.iter().map(|&v| v.min(n)).collect())
    }

    pub fn max_finite(&self) -> f64 {
        self.0
            .iter()
            .copied()
            .filter(|v| v.is_finite())
            .fold(0.0, f64::max)
    }

    /// `∫ f dp`, with the convention `0 · ∞ = 0`.
    pub fn expectation(&self, p: &[f64]) -> f64 {
        self.0
            .iter()
            .zip(p)
            .map(|(&f, &w)| if w == 0.0 { 0.0 } else { f * w })
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackwardSolution {
    pub grid: TimeGrid,
    /// `h_{t_i}` for `i = 0..=n_steps`.
    pub h: Vec<ScalarField>,
    /// `ψ = log h`; `−∞` only where `h` vanishes.
    pub psi: Vec<Vec<f64>>,
    pub terminal: TerminalCost,
}

impl BackwardSolution {
    pub fn psi0(&self) -> &[f64] {
        &self.psi[0]
    }

    /// `(node, state)` pairs with `t < T` where `h` is exactly zero.
    pub fn vanishing_before_horizon(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (i, h) in self.h.iter().enumerate().take(self.grid.n_steps()) {
            out.extend(
                h.iter()
                    .enumerate()
                    .filter(|(_, v)| **v == 0.0)
                    .map(|(x, _)| (i, x)),
            );
        }
        out
    }
}

/// Solves the backward Kolmogorov equation with `h_T = e^{-f}`.
pub fn solve_bke(k: &RateKernel, f: &TerminalCost, grid: TimeGrid) -> Result<BackwardSolution> {
    k.check_len(f.values().len())?;
    grid.check_stability(k)?;
    let n = grid.n_steps();
    let mut h = vec![ScalarField(Vec::new()); n + 1];
    h[n] = ScalarField(f.values().iter().map(|&v| (-v).exp()).collect());
    for i in (0..n).rev() {
        h[i] = ScalarField(propagate::backward(k, &h[i + 1], grid.dt()));
    }
    let psi = h
        .iter()
        .map(|hi| {
            hi.iter()
                .map(|&v| if v > 0.0 { v.ln() } else { f64::NEG_INFINITY })
                .collect()
        })
        .collect();
    Ok(BackwardSolution {
        grid,
        h,
        psi,
        terminal: f.clone(),
    })
}

/// `H(x, ξ) = Σ_y (e^{ξ(x, y)} − 1) L(x, y)`.
pub fn local_hamiltonian(k: &RateKernel, x: usize, xi: &PairField) -> Result<f64> {
    k.check_state(x)?;
    xi.check_aligned(k)?;
    Ok(k.row_range(x)
        .map(|e| (xi[e].exp() - 1.0) * k.rate_at(e))
        .sum())
}

/// `𝓗(p, ξ) = Σ_x p(x) H(x, ξ)`.
pub fn global_hamiltonian(k: &RateKernel, p: &[f64], xi: &PairField) -> Result<f64> {
    k.check_len(p.len())?;
    let mut total = 0.0;
    for (x, &w) in p.iter().enumerate() {
        if w != 0.0 {
            total += w * local_hamiltonian(k, x, xi)?;
        }
    }
    Ok(total)
}

/// `ent(s) = s log s − s + 1`, with `ent(0) = 1`.
pub fn ent(s: f64) -> f64 {
    if s == 0.0 {
        1.0
    } else if s.is_infinite() {
        f64::INFINITY
    } else {
        s * s.ln() - s + 1.0
    }
}

/// Relative entropy `Ent(q | p ⊗ L)`; `+∞` when `q` charges a pair where
/// `p(x) L(x, y) = 0`.
pub fn lagrangian(k: &RateKernel, p: &[f64], q: &PairField) -> Result<f64> {
    k.check_len(p.len())?;
    q.check_aligned(k)?;
    let mut total = 0.0;
    for (e, (x, _, r)) in k.entries().enumerate() {
        let base = p[x] * r;
        let flux = q[e];
        if flux < 0.0 {
            return Err(Error::InvalidField(format!(
                "negative flux {flux} at entry {e}"
            )));
        }
        if base == 0.0 {
            if flux > 0.0 {
                return Ok(f64::INFINITY);
            }
            continue;
        }
        total += ent(flux / base) * base;
    }
    Ok(total)
}

/// `⟨ξ, q⟩ − 𝓗(p, ξ)`, allowing `ξ = −∞` on pairs where `q = 0`.
pub fn dual_objective(k: &RateKernel, p: &[f64], q: &PairField, xi: &PairField) -> Result<f64> {
    k.check_len(p.len())?;
    q.check_aligned(k)?;
    xi.check_aligned(k)?;
    let mut total = 0.0;
    for (e, (x, _, r)) in k.entries().enumerate() {
        let pairing = if q[e] == 0.0 { 0.0 } else { xi[e] * q[e] };
        total += pairing - p[x] * r * (xi[e].exp() - 1.0);
    }
    Ok(total)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DualityReport {
    pub lagrangian: f64,
    pub dual_at_optimum: f64,
    /// `|𝓛 − D(ξ*)|`.
    pub optimum_gap: f64,
    pub n_samples: usize,
    pub max_sampled_dual: f64,
    /// `min (𝓛 − D(ξ))` over the samples.
    pub min_margin: f64,
    /// Every sample satisfies `D(ξ) ≤ 𝓛 + 1e-10`.
    pub all_below: bool,
    /// Every perturbed-optimum sample is strictly below `𝓛`.
    pub perturbed_strictly_below: bool,
}

impl DualityReport {
    pub fn passed(&self) -> bool {
        self.all_below && self.perturbed_strictly_below && self.optimum_gap <= 1e-10
    }
}

/// Samples bounded `ξ` and checks the Fenchel inequality behind `𝓛 = sup_ξ D(ξ)`
/// together with equality at `ξ* = log(q / p ⊗ L)`.
pub fn duality_gap_check(
    k: &RateKernel,
    p: &[f64],
    q: &PairField,
    n_samples: usize,
    seed: u64,
) -> Result<DualityReport> {
    let lag = lagrangian(k, p, q)?;
    if !lag.is_finite() {
        return Err(Error::InvalidField("lagrangian is infinite".into()));
    }
    let xi_star = PairField::from_fn(k, |x, y, r| {
        let e = k.entry_index(x, y).unwrap();
        let base = p[x] * r;
        if base == 0.0 {
            0.0
        } else if q[e] == 0.0 {
            f64::NEG_INFINITY
        } else {
            (q[e] / base).ln()
        }
    });
    let dual_at_optimum = dual_objective(k, p, q, &xi_star)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_sampled_dual = f64::NEG_INFINITY;
    let mut min_margin = f64::INFINITY;
    let mut perturbed_strictly_below = true;
    let charged = (0..k.n_states()).any(|x| p[x] > 0.0 && !k.row_range(x).is_empty());
    for s in 0..n_samples {
        let perturbed = s % 2 == 0;
        let xi = if perturbed {
            let vals = xi_star
                .values()
                .iter()
                .map(|&v| {
                    let base = if v.is_finite() { v } else { -5.0 };
                    base + rng.random_range(-1.0..1.0)
                })
                .collect();
            PairField::from_values(k, vals)?
        } else {
            let vals = (0..k.n_entries())
                .map(|_| rng.random_range(-3.0..3.0))
                .collect();
            PairField::from_values(k, vals)?
        };
        let d = dual_objective(k, p, q, &xi)?;
        max_sampled_dual = max_sampled_dual.max(d);
        min_margin = min_margin.min(lag - d);
        if perturbed && charged && d.partial_cmp(&lag) != Some(std::cmp::Ordering::Less) {
            perturbed_strictly_below = false;
        }
    }
    Ok(DualityReport {
        lagrangian: lag,
        dual_at_optimum,
        optimum_gap: (lag - dual_at_optimum).abs(),
        n_samples,
        max_sampled_dual,
        min_margin,
        all_below: min_margin >= -1e-10,
        perturbed_strictly_below,
    })
}

/// `max |Δψ/Δt + H(x, ∇̄ψ_{t_i})|` over nodes `t_i < T` and states, using a
/// forward difference in time. Entries touching `ψ = −∞` are skipped.
pub fn hje_residual(k: &RateKernel, sol: &BackwardSolution) -> Result<f64> {
    let dt = sol.grid.dt();
    let mut worst: f64 = 0.0;
    for i in 0..sol.grid.n_steps() {
        let (h, psi, psi_next) = (&sol.h[i], &sol.psi[i], &sol.psi[i + 1]);
        for x in 0..k.n_states() {
            if !psi[x].is_finite() || !psi_next[x].is_finite() {
                continue;
            }
            let (ys, rs) = k.row(x);
            let ham: f64 = ys
                .iter()
                .zip(rs)
                .map(|(&y, &r)| (h[y] / h[x] - 1.0) * r)
                .sum();
            worst = worst.max(((psi_next[x] - psi[x]) / dt + ham).abs());
        }
    }
    Ok(worst)
}

/// Time-discretized optimal density-flux pair.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityFluxTrajectory {
    pub grid: TimeGrid,
    /// `p_{t_i}` for `i = 0..=n_steps`.
    pub p: Vec<Distribution>,
    /// `q_{t_i}` for `i = 0..n_steps`, supported on the kernel's pairs.
    pub q: Vec<PairField>,
    /// `∫_0^T 𝓛(p_t, q_t) dt`.
    pub action: f64,
}

impl DensityFluxTrajectory {
    pub fn terminal(&self) -> &Distribution {
        &self.p[self.grid.n_steps()]
    }
}

/// One exact Doob step: `p'(y) = h'(y) Σ_x (p(x)/h(x)) P_s(x, y)`.
fn doob_step(
    k: &RateKernel,
    p: &[f64],
    h: &[f64],
    h_next: &[f64],
    s: f64,
    node: usize,
) -> Result<Vec<f64>> {
    let mut ratio = vec![0.0; p.len()];
    for x in 0..p.len() {
        if p[x] > 0.0 {
            if h[x] <= 0.0 {
                return Err(Error::VanishingPotential { state: x, node });
            }
            ratio[x] = p[x] / h[x];
        }
    }
    let r = propagate::forward(k, &ratio, s);
    Ok(r.iter().zip(h_next).map(|(a, b)| a * b).collect())
}

/// Running cost `Σ_x p(x) Σ_y ent(h(y)/h(x)) L(x, y)` of the Doob flux.
fn doob_running_cost(k: &RateKernel, p: &[f64], h: &[f64]) -> f64 {
    let mut total = 0.0;
    for (x, &w) in p.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        let (ys, rs) = k.row(x);
        for (&y, &r) in ys.iter().zip(rs) {
            total += w * r * ent(h[y] / h[x]);
        }
    }
    total
}

fn doob_flux(k: &RateKernel, p: &[f64], h: &[f64]) -> PairField {
    PairField::from_fn(k, |x, y, r| {
        if p[x] == 0.0 {
            0.0
        } else {
            p[x] * r * h[y] / h[x]
        }
    })
}

/// Integrates the controlled continuity equation forward from `μ` and
/// accumulates the entropy action by composite Simpson quadrature.
pub fn evolve_controlled_density(
    k: &RateKernel,
    sol: &BackwardSolution,
    mu: &Distribution,
) -> Result<DensityFluxTrajectory> {
    k.check_len(mu.len())?;
    let grid = sol.grid;
    grid.check_stability(k)?;
    let n = grid.n_steps();
    let dt = grid.dt();
    let mut p: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    p.push(mu.to_vec());
    let mut q = Vec::with_capacity(n);
    let mut action = 0.0;
    for i in 0..n {
        let (h0, h1) = (&sol.h[i], &sol.h[i + 1]);
        let next = doob_step(k, &p[i], h0, h1, dt, i)?;
        q.push(doob_flux(k, &p[i], h0));
        let left = doob_running_cost(k, &p[i], h0);
        if i + 1 < n || !terminal_singular(k, &p[i], h0, h1, dt) {
            let h_mid = propagate::backward(k, h1, dt / 2.0);
            let p_mid = doob_step(k, &p[i], h0, &h_mid, dt / 2.0, i)?;
            let mid = doob_running_cost(k, &p_mid, &h_mid);
            let right = doob_running_cost(k, &next, h1);
            action += dt / 6.0 * (left + 4.0 * mid + right);
        } else {
            action += singular_final_interval(k, &p[i], h0, h1, dt, i)?;
        }
        p.push(next);
    }
    let p = p
        .into_iter()
        .map(|w| {
            let mass: f64 = w.iter().sum();
            Distribution::new(w)
                .map_err(|_| Error::InvalidDistribution(format!("mass drifted to {mass}")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DensityFluxTrajectory { grid, p, q, action })
}

/// The last interval is singular when some state with `h_T = 0` is still
/// charged just before `T` and has an edge into `{h_T > 0}`: the running
/// cost then diverges logarithmically at `T`.
fn terminal_singular(k: &RateKernel, p: &[f64], h: &[f64], h_next: &[f64], dt: f64) -> bool {
    let ratio: Vec<f64> = p
        .iter()
        .zip(h)
        .map(|(&a, &b)| if a > 0.0 { a / b } else { 0.0 })
        .collect();
    let r = propagate::forward(k, &ratio, dt);
    (0..k.n_states())
        .any(|x| h_next[x] == 0.0 && r[x] > 0.0 && k.row(x).0.iter().any(|&y| h_next[y] > 0.0))
}

/// Simpson on dyadic sub-intervals `[T − 2s, T − s]` of the last step.
fn singular_final_interval(
    k: &RateKernel,
    p: &[f64],
    h: &[f64],
    h_terminal: &[f64],
    dt: f64,
    node: usize,
) -> Result<f64> {
    // state at time t_{n-1} + u
    let eval = |u: f64| -> Result<f64> {
        let ht = propagate::backward(k, h_terminal, dt - u);
        let pt = doob_step(k, p, h, &ht, u, node)?;
        Ok(doob_running_cost(k, &pt, &ht))
    };
    let mut total = 0.0;
    let mut lo = 0.0;
    let mut left = doob_running_cost(k, p, h);
    let mut width = dt;
    for _ in 0..TERMINAL_REFINEMENTS {
        let hi = lo + width / 2.0;
        let mid = eval((lo + hi) / 2.0)?;
        let right = eval(hi)?;
        total += (hi - lo) / 6.0 * (left + 4.0 * mid + right);
        lo = hi;
        left = right;
        width /= 2.0;
    }
    Ok(total)
}

/// `γ_det(μ) = −Σ_x ψ_0(x) μ(x)`.
pub fn deterministic_value(sol: &BackwardSolution, mu: &Distribution) -> Result<f64> {
    let psi0 = sol.psi0();
    if psi0.len() != mu.len() {
        return Err(Error::DimensionMismatch {
            expected: psi0.len(),
            got: mu.len(),
        });
    }
    let mut v = 0.0;
    for (x, (&w, &s)) in mu.iter().zip(psi0).enumerate() {
        if w == 0.0 {
            continue;
        }
        if !s.is_finite() {
            return Err(Error::InfiniteValue(x));
        }
        v -= w * s;
    }
    Ok(v)
}

/// Velocities `h(y)/h(x)` at the midpoint of every grid interval.
pub fn midpoint_velocities(k: &RateKernel, sol: &BackwardSolution) -> Result<Vec<PairField>> {
    let dt = sol.grid.dt();
    (0..sol.grid.n_steps())
        .map(|i| {
            let hm = propagate::backward(k, &sol.h[i + 1], dt / 2.0);
            if let Some(x) = hm.iter().position(|&v| v <= 0.0) {
                return Err(Error::VanishingPotential { state: x, node: i });
            }
            Ok(PairField::from_fn(k, |x, y, _| hm[y] / hm[x]))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PiecewiseRun {
    pub p: Vec<Vec<f64>>,
    pub action: f64,
    pub terminal_cost: f64,
    pub total: f64,
}

/// Evolves `μ` under a velocity that is constant on each grid interval and
/// returns the exact cost `∫ f dp_T + ∫ 𝓛(p_t, v_t p_t ⊗ L) dt` of that
/// admissible pair.
pub fn evolve_piecewise_control(
    k: &RateKernel,
    grid: TimeGrid,
    velocities: &[PairField],
    mu: &Distribution,
    f: &TerminalCost,
) -> Result<PiecewiseRun> {
    k.check_len(mu.len())?;
    k.check_len(f.values().len())?;
    if velocities.len() != grid.n_steps() {
        return Err(Error::DimensionMismatch {
            expected: grid.n_steps(),
            got: velocities.len(),
        });
    }
    let mut p = vec![mu.to_vec()];
    let mut action = 0.0;
    for v in velocities {
        let controlled = k.scaled(v)?;
        let (next, occ) =
            propagate::forward_with_occupation(&controlled, p.last().unwrap(), grid.dt());
        // entropy rate per state, piecewise constant on the interval
        for (x, &o) in occ.iter().enumerate() {
            if o == 0.0 {
                continue;
            }
            let rate: f64 = k.row_range(x).map(|e| ent(v[e]) * k.rate_at(e)).sum();
            action += o * rate;
        }
        p.push(next);
    }
    let terminal_cost = f.expectation(p.last().unwrap());
    Ok(PiecewiseRun {
        p,
        action,
        terminal_cost,
        total: action + terminal_cost,
    })
}

/// Cost of the control `(1 − ε) v* + ε` built from the midpoint optimal
/// velocities; `ε = 1` is the uncontrolled reference.
pub fn blended_control_cost(
    k: &RateKernel,
    sol: &BackwardSolution,
    mu: &Distribution,
    blend: f64,
) -> Result<PiecewiseRun> {
    let vs = midpoint_velocities(k, sol)?
        .into_iter()
        .map(|v| {
            let vals = v
                .values()
                .iter()
                .map(|&x| (1.0 - blend) * x + blend)
                .collect();
            PairField::from_values(k, vals)
        })
        .collect::<Result<Vec<_>>>()?;
    evolve_piecewise_control(k, sol.grid, &vs, mu, &sol.terminal)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CutoffLevel {
    pub n: f64,
    /// `‖h_t − h_tⁿ‖∞` per node.
    pub gaps: Vec<f64>,
    /// `e^{-n} e^{(T − t) c_L}` per node.
    pub bounds: Vec<f64>,
    pub bound_holds: bool,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CutoffReport {
    pub levels: Vec<CutoffLevel>,
    pub exact_value: f64,
    /// `h ≤ h^{n'} ≤ hⁿ` for `n < n'` at every node.
    pub monotone_h: bool,
    /// `sup_t ‖h_t − h_tⁿ‖` is non-increasing along the list.
    pub monotone_gaps: bool,
    /// `γⁿ_det(μ)` non-decreasing in `n` and bounded by `γ_det(μ)`.
    pub monotone_values: bool,
}

impl CutoffReport {
    pub fn passed(&self) -> bool {
        self.monotone_h
            && self.monotone_gaps
            && self.monotone_values
            && self.levels.iter().all(|l| l.bound_holds)
    }
}

/// Solves the BKE for `fⁿ = f ∧ n` at each `n` and compares with `f`.
pub fn cutoff_convergence_study(
    k: &RateKernel,
    f: &TerminalCost,
    grid: TimeGrid,
    n_list: &[f64],
    mu: &Distribution,
) -> Result<CutoffReport> {
    let exact = solve_bke(k, f, grid)?;
    let exact_value = deterministic_value(&exact, mu)?;
    let c_l = k.total_intensity();
    let mut ns = n_list.to_vec();
    ns.sort_by(f64::total_cmp);
    let mut levels = Vec::with_capacity(ns.len());
    let mut sols = Vec::with_capacity(ns.len());
    for &n in &ns {
        let sol = solve_bke(k, &f.cut_off(n), grid)?;
        // hⁿ − h propagated on its own; subtracting the two solves would
        // lose everything below one ulp of h
        let mut d: Vec<f64> = f
            .values()
            .iter()
            .map(|&v| if v <= n { 0.0 } else { (-n).exp() - (-v).exp() })
            .collect();
        let mut gaps = vec![0.0; grid.n_steps() + 1];
        for i in (0..=grid.n_steps()).rev() {
            if i < grid.n_steps() {
                d = propagate::backward(k, &d, grid.dt());
            }
            gaps[i] = d.iter().fold(0.0, |m: f64, v| m.max(v.abs()));
        }
        let bounds: Vec<f64> = (0..=grid.n_steps())
            .map(|i| (-n).exp() * ((grid.horizon() - grid.node(i)) * c_l).exp())
            .collect();
        let bound_holds = gaps
            .iter()
            .zip(&bounds)
            .all(|(g, b)| *g <= *b * (1.0 + 1e-12));
        levels.push(CutoffLevel {
            n,
            gaps,
            bounds,
            bound_holds,
            value: deterministic_value(&sol, mu)?,
        });
        sols.push(sol);
    }
    let mut monotone_h = true;
    for (j, sol) in sols.iter().enumerate() {
        let lower = if j + 1 < sols.len() {
            &sols[j + 1].h
        } else {
            &exact.h
        };
        for (hn, hl) in sol.h.iter().zip(lower) {
            if hn
                .iter()
                .zip(hl.iter())
                .any(|(a, b)| *a < b - 4.0 * f64::EPSILON * b.abs())
            {
                monotone_h = false;
            }
        }
    }
    let sup = |l: &CutoffLevel| l.gaps.iter().copied().fold(0.0, f64::max);
    let monotone_gaps = levels.windows(2).all(|w| sup(&w[1]) <= sup(&w[0]));
    let monotone_values = levels.windows(2).all(|w| w[0].value <= w[1].value)
        && levels.iter().all(|l| l.value <= exact_value);
    Ok(CutoffReport {
        levels,
        exact_value,
        monotone_h,
        monotone_gaps,
        monotone_values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m2() -> RateKernel {
        RateKernel::from_triplets(2, &[(0, 1, 1.0), (1, 0, 1.0)]).unwrap()
    }

    fn m3() -> RateKernel {
        RateKernel::from_triplets(3, &[(0, 1, 1.0), (1, 0, 1.0), (1, 2, 2.0), (2, 1, 1.0)]).unwrap()
    }

    /// Eigen-decomposition of the two-state generator (eigenvalues 0, −2).
    fn m2_h(m: f64, s: f64) -> [f64; 2] {
        let em = (-m).exp();
        let e = (-2.0 * s).exp();
        [
            0.5 * (1.0 + em) - 0.5 * (1.0 - em) * e,
            0.5 * (1.0 + em) + 0.5 * (1.0 - em) * e,
        ]
    }

    #[test]
    fn zero_cost_is_trivial() {
        let k = m3();
        let grid = TimeGrid::new(1.0, 20).unwrap();
        let f = TerminalCost::new(vec![0.0; 3]).unwrap();
        let sol = solve_bke(&k, &f, grid).unwrap();
        for (h, psi) in sol.h.iter().zip(&sol.psi) {
            assert!(h.iter().all(|&v| (v - 1.0).abs() < 1e-15));
            assert!(psi.iter().all(|&v| v.abs() < 1e-15));
        }
        assert!(hje_residual(&k, &sol).unwrap() < 1e-12);
        let mu = Distribution::new(vec![0.2, 0.3, 0.5]).unwrap();
        let traj = evolve_controlled_density(&k, &sol, &mu).unwrap();
        assert!(traj.action.abs() < 1e-12);
        assert!(deterministic_value(&sol, &mu).unwrap().abs() < 1e-14);
    }

    #[test]
    fn m2_bounded_matches_eigen_oracle() {
        let (t, m) = (2.0, 1.5);
        let grid = TimeGrid::new(t, 100).unwrap();
        let sol = solve_bke(&m2(), &TerminalCost::new(vec![m, 0.0]).unwrap(), grid).unwrap();
        for i in 0..=100 {
            let want = m2_h(m, t - grid.node(i));
            assert!((sol.h[i][0] - want[0]).abs() < 1e-13);
            assert!((sol.h[i][1] - want[1]).abs() < 1e-13);
        }
        let mu = Distribution::dirac(2, 0).unwrap();
        let v = deterministic_value(&sol, &mu).unwrap();
        assert!((v + m2_h(m, t)[0].ln()).abs() < 1e-13);
        assert!(v <= m);
    }

    #[test]
    fn m2_infinite_cost_positivity() {
        let t = 1.0;
        let grid = TimeGrid::new(t, 50).unwrap();
        let sol = solve_bke(
            &m2(),
            &TerminalCost::new(vec![f64::INFINITY, 0.0]).unwrap(),
            grid,
        )
        .unwrap();
        assert_eq!(sol.h[50][0], 0.0);
        assert_eq!(sol.psi[50][0], f64::NEG_INFINITY);
        for i in 0..50 {
            let s = t - grid.node(i);
            let want = 0.5 * (1.0 - (-2.0 * s).exp());
            assert!(sol.h[i][0] > 0.0);
            assert!((sol.h[i][0] - want).abs() < 1e-14);
        }
        assert!(sol.vanishing_before_horizon().is_empty());
    }

    #[test]
    fn step_guard_and_improper() {
        let grid = TimeGrid::new(1.0, 1).unwrap();
        let f = TerminalCost::new(vec![0.0, 0.0, 0.0]).unwrap();
        assert!(matches!(
            solve_bke(&m3(), &f, grid),
            Err(Error::StepTooLarge(_))
        ));
        assert_eq!(
            TerminalCost::new(vec![f64::INFINITY; 2]),
            Err(Error::ImproperTerminal)
        );
        assert!(TerminalCost::new(vec![-1.0, 0.0]).is_err());
    }

    #[test]
    fn hamiltonian_examples() {
        let k = m3();
        let zero = PairField::constant(&k, 0.0);
        assert_eq!(local_hamiltonian(&k, 1, &zero).unwrap(), 0.0);
        let xi = PairField::from_fn(&k, |x, y, _| if (x, y) == (1, 0) { 2f64.ln() } else { 0.0 });
        assert!((local_hamiltonian(&k, 1, &xi).unwrap() - 1.0).abs() < 1e-15);
        let minus_inf = PairField::constant(&k, f64::NEG_INFINITY);
        assert_eq!(local_hamiltonian(&k, 1, &minus_inf).unwrap(), -3.0);
    }

    #[test]
    fn lagrangian_examples() {
        let k = m2();
        let p = [1.0, 0.0];
        let ref_flux = PairField::from_fn(&k, |x, _, r| p[x] * r);
        assert_eq!(lagrangian(&k, &p, &ref_flux).unwrap(), 0.0);
        let q = PairField::from_fn(&k, |x, _, _| if x == 0 { 2.0 } else { 0.0 });
        let want = 2.0 * 2f64.ln() - 1.0;
        assert!((lagrangian(&k, &p, &q).unwrap() - want).abs() < 1e-15);
        let bad = PairField::from_fn(&k, |x, _, _| if x == 1 { 0.5 } else { 1.0 });
        assert_eq!(lagrangian(&k, &p, &bad).unwrap(), f64::INFINITY);
        let r = duality_gap_check(&k, &p, &q, 50, 7).unwrap();
        assert!(r.passed(), "{r:?}");
        let r = duality_gap_check(&k, &p, &ref_flux, 10, 7).unwrap();
        assert!(r.optimum_gap == 0.0 && r.dual_at_optimum == 0.0);
    }

    #[test]
    fn absorbing_start_stays_put() {
        let k = RateKernel::from_triplets(2, &[(0, 1, 1.0)]).unwrap();
        let grid = TimeGrid::new(1.0, 10).unwrap();
        let sol = solve_bke(&k, &TerminalCost::new(vec![0.0, 0.0]).unwrap(), grid).unwrap();
        let traj =
            evolve_controlled_density(&k, &sol, &Distribution::dirac(2, 1).unwrap()).unwrap();
        for p in &traj.p {
            assert_eq!(p.weights(), &[0.0, 1.0]);
        }
        assert_eq!(traj.action, 0.0);
    }

    #[test]
    fn m2_flux_matches_closed_form_ratio() {
        let t = 1.0;
        let grid = TimeGrid::new(t, 40).unwrap();
        let k = m2();
        let sol = solve_bke(
            &k,
            &TerminalCost::new(vec![f64::INFINITY, 0.0]).unwrap(),
            grid,
        )
        .unwrap();
        let traj =
            evolve_controlled_density(&k, &sol, &Distribution::dirac(2, 1).unwrap()).unwrap();
        let e_ba = k.entry_index(1, 0).unwrap();
        for i in 0..40 {
            let s = t - grid.node(i);
            let ha = 0.5 * (1.0 - (-2.0 * s).exp());
            let hb = 0.5 * (1.0 + (-2.0 * s).exp());
            let want = ha / hb * traj.p[i][1];
            assert!((traj.q[i][e_ba] - want).abs() < 1e-13);
            assert!((traj.p[i].iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        assert!(traj.terminal()[0] == 0.0);
    }

    #[test]
    fn cutoff_inactive_when_bounded() {
        let grid = TimeGrid::new(1.0, 20).unwrap();
        let f = TerminalCost::new(vec![2.0, 0.0]).unwrap();
        let mu = Distribution::dirac(2, 0).unwrap();
        let r = cutoff_convergence_study(&m2(), &f, grid, &[3.0, 5.0], &mu).unwrap();
        for l in &r.levels {
            assert!(l.gaps.iter().all(|&g| g == 0.0));
        }
        assert!(r.passed());
    }
}
