//! Doob h-transforms of a reference kernel.
//!
//! Given `h ≥ 0`, the controlled kernel is `L_h(x, y) = (h(y)/h(x)) L(x, y)`.
//! With the committor this is the optimal transition-path kernel: it never
//! enters `A` and reaches `B` almost surely.

use serde::Serialize;

use crate::committor::CommittorSolution;
use crate::error::{Error, Result};
use crate::finite_horizon::{self, ent, BackwardSolution, PiecewiseRun, TimeGrid};
use crate::kernel::{Distribution, PairField, RateKernel, ScalarField, StateSet};

/// Velocity field over the reference kernel's pairs.
#[derive(Debug, Clone, PartialEq)]
pub enum Velocity {
    Homogeneous(PairField),
    /// One velocity per grid interval, evaluated at the interval midpoint.
    TimeGrid {
        grid: TimeGrid,
        per_interval: Vec<PairField>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlSpec {
    pub velocity: Velocity,
    /// The field the velocity was built from.
    pub source_field: ScalarField,
    /// States where the control stops; their outgoing velocity is zero.
    pub absorbing: StateSet,
    /// Non-absorbing states where the source field vanishes. The control is
    /// undefined there and simulations refuse to start from them.
    pub excluded: StateSet,
}

impl ControlSpec {
    pub fn homogeneous(&self) -> Option<&PairField> {
        match &self.velocity {
            Velocity::Homogeneous(v) => Some(v),
            Velocity::TimeGrid { .. } => None,
        }
    }

    /// `(min, max)` of the velocity over pairs leaving non-absorbing,
    /// non-excluded states.
    pub fn bounds(&self, k: &RateKernel) -> (f64, f64) {
        let fields: Vec<&PairField> = match &self.velocity {
            Velocity::Homogeneous(v) => vec![v],
            Velocity::TimeGrid { per_interval, .. } => per_interval.iter().collect(),
        };
        let mut lo = f64::INFINITY;
        let mut hi: f64 = 0.0;
        for v in fields {
            for x in 0..k.n_states() {
                if self.absorbing.contains(x) || self.excluded.contains(x) {
                    continue;
                }
                for e in k.row_range(x) {
                    lo = lo.min(v[e]);
                    hi = hi.max(v[e]);
                }
            }
        }
        (lo, hi)
    }
}

fn check_field(k: &RateKernel, h: &[f64]) -> Result<()> {
    k.check_len(h.len())?;
    for (x, &v) in h.iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::InvalidField(format!("h({x}) = {v}")));
        }
        if v < 0.0 {
            return Err(Error::NegativeField(x));
        }
    }
    Ok(())
}

fn transform(
    k: &RateKernel,
    h: &ScalarField,
    absorbing: &StateSet,
    excluded: StateSet,
) -> Result<(ControlSpec, RateKernel)> {
    let v = PairField::from_fn(k, |x, y, _| {
        if absorbing.contains(x) || excluded.contains(x) {
            0.0
        } else {
            h[y] / h[x]
        }
    });
    let controlled = k.scaled(&v)?;
    let spec = ControlSpec {
        velocity: Velocity::Homogeneous(v),
        source_field: h.clone(),
        absorbing: absorbing.clone(),
        excluded,
    };
    Ok((spec, controlled))
}

/// Builds `v = h(y)/h(x)` and the controlled kernel `v · L`, with every
/// rate out of `absorbing` removed.
pub fn doob_transform(
    k: &RateKernel,
    h: &ScalarField,
    absorbing: &StateSet,
) -> Result<(ControlSpec, RateKernel)> {
    check_field(k, h)?;
    k.check_len(absorbing.n_states())?;
    if let Some(x) = (0..k.n_states()).find(|&x| h[x] == 0.0 && !absorbing.contains(x)) {
        return Err(Error::ZeroDivisor(x));
    }
    transform(k, h, absorbing, StateSet::empty(k.n_states()))
}

/// Optimal transition-path control from a committor: absorbing on `A ∪ B`,
/// with states outside `A` where `h = 0` excluded rather than rejected.
pub fn transition_path_control(
    k: &RateKernel,
    sol: &CommittorSolution,
) -> Result<(ControlSpec, RateKernel)> {
    check_field(k, &sol.h)?;
    let absorbing = sol.a.union(&sol.b);
    let excluded = StateSet::from_mask(
        (0..k.n_states())
            .map(|x| sol.h[x] == 0.0 && !absorbing.contains(x))
            .collect(),
    );
    transform(k, &sol.h, &absorbing, excluded)
}

/// `max |(Lh)(x)|` over `interior`. Zero licenses `Z_t = h(X_t)/h(X_0)`.
pub fn harmonicity_certificate(k: &RateKernel, h: &[f64], interior: &StateSet) -> Result<f64> {
    k.check_len(interior.n_states())?;
    let lh = k.apply_generator(h)?;
    Ok(interior
        .members()
        .iter()
        .map(|&x| lh[x].abs())
        .fold(0.0, f64::max))
}

/// Instantaneous entropy cost `Σ_y ent(v(x, y)) L(x, y)` of a homogeneous control.
pub fn entropy_rate(k: &RateKernel, spec: &ControlSpec, x: usize) -> Result<f64> {
    k.check_state(x)?;
    if spec.absorbing.contains(x) || spec.excluded.contains(x) {
        return Err(Error::AbsorbingState(x));
    }
    let v = spec
        .homogeneous()
        .ok_or_else(|| Error::InvalidField("entropy rate of a time-dependent control".into()))?;
    v.check_aligned(k)?;
    Ok(k.row_range(x).map(|e| ent(v[e]) * k.rate_at(e)).sum())
}

/// Time-grid control `h_t(y)/h_t(x)` taken at interval midpoints.
pub fn finite_horizon_control(k: &RateKernel, sol: &BackwardSolution) -> Result<ControlSpec> {
    let per_interval = finite_horizon::midpoint_velocities(k, sol)?;
    Ok(ControlSpec {
        velocity: Velocity::TimeGrid {
            grid: sol.grid,
            per_interval,
        },
        source_field: sol.h[0].clone(),
        absorbing: StateSet::empty(k.n_states()),
        excluded: StateSet::empty(k.n_states()),
    })
}

/// Forward evolution of `μ` under a time-grid control, with its exact cost
/// against the terminal cost of `sol`.
pub fn evolve_with_control(
    k: &RateKernel,
    spec: &ControlSpec,
    mu: &Distribution,
    sol: &BackwardSolution,
) -> Result<PiecewiseRun> {
    match &spec.velocity {
        Velocity::TimeGrid { grid, per_interval } => {
            finite_horizon::evolve_piecewise_control(k, *grid, per_interval, mu, &sol.terminal)
        }
        Velocity::Homogeneous(v) => {
            let per_interval = vec![v.clone(); sol.grid.n_steps()];
            finite_horizon::evolve_piecewise_control(k, sol.grid, &per_interval, mu, &sol.terminal)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ControlSummary {
    pub n_entries: usize,
    pub total_intensity: f64,
    pub min_velocity: f64,
    pub max_velocity: f64,
    pub absorbing: Vec<usize>,
    pub excluded: Vec<usize>,
    /// Controlled rates into `A`; zero for the transition-path control.
    pub rate_into_a: f64,
}

pub fn summarize(
    k: &RateKernel,
    spec: &ControlSpec,
    controlled: &RateKernel,
    a: &StateSet,
) -> ControlSummary {
    let (lo, hi) = spec.bounds(k);
    ControlSummary {
        n_entries: controlled.n_entries(),
        total_intensity: controlled.total_intensity(),
        min_velocity: lo,
        max_velocity: hi,
        absorbing: spec.absorbing.members().to_vec(),
        excluded: spec.excluded.members().to_vec(),
        rate_into_a: controlled
            .entries()
            .filter(|&(_, y, _)| a.contains(y))
            .map(|t| t.2)
            .sum(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::committor::{solve_committor, solve_committor_regularized};

    fn m3() -> RateKernel {
        RateKernel::from_triplets(3, &[(0, 1, 1.0), (1, 0, 1.0), (1, 2, 2.0), (2, 1, 1.0)]).unwrap()
    }

    fn m4() -> RateKernel {
        RateKernel::from_triplets(
            4,
            &[
                (0, 1, 1.0),
                (1, 0, 1.0),
                (1, 2, 1.0),
                (2, 1, 1.0),
                (2, 3, 1.0),
                (3, 2, 1.0),
            ],
        )
        .unwrap()
    }

    fn set(n: usize, s: &[usize]) -> StateSet {
        StateSet::new(n, s.iter().copied()).unwrap()
    }

    #[test]
    fn identity_transform() {
        let k = m3();
        let (spec, c) =
            doob_transform(&k, &ScalarField::constant(3, 1.0), &StateSet::empty(3)).unwrap();
        assert_eq!(c, k);
        assert!(spec
            .homogeneous()
            .unwrap()
            .values()
            .iter()
            .all(|&v| v == 1.0));
        for x in 0..3 {
            assert_eq!(entropy_rate(&k, &spec, x).unwrap(), 0.0);
        }
    }

    #[test]
    fn m3_transition_kernel() {
        let k = m3();
        let h = ScalarField(vec![0.0, 2.0 / 3.0, 1.0]);
        let (spec, c) = doob_transform(&k, &h, &set(3, &[0, 2])).unwrap();
        assert_eq!(c.rate(1, 0), 0.0);
        assert!((c.rate(1, 2) - 3.0).abs() < 1e-15);
        assert_eq!(c.exit_rate(0), 0.0);
        assert_eq!(c.exit_rate(2), 0.0);
        // ent(0)·1 + ent(3/2)·2 = 3 log(3/2)
        let r = entropy_rate(&k, &spec, 1).unwrap();
        assert!((r - 3.0 * 1.5f64.ln()).abs() < 1e-14);
        assert_eq!(entropy_rate(&k, &spec, 0), Err(Error::AbsorbingState(0)));
    }

    #[test]
    fn m4_transition_kernel() {
        let k = m4();
        let h = ScalarField(vec![0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0]);
        let (_, c) = doob_transform(&k, &h, &set(4, &[0, 3])).unwrap();
        assert!((c.rate(1, 2) - 2.0).abs() < 1e-15);
        assert_eq!(c.rate(1, 0), 0.0);
        assert!((c.rate(2, 3) - 1.5).abs() < 1e-15);
        assert!((c.rate(2, 1) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn zero_divisor_and_negative() {
        let k = m3();
        let h = ScalarField(vec![0.0, 2.0 / 3.0, 1.0]);
        assert_eq!(
            doob_transform(&k, &h, &StateSet::empty(3)).unwrap_err(),
            Error::ZeroDivisor(0)
        );
        let h = ScalarField(vec![-0.1, 0.5, 1.0]);
        assert_eq!(
            doob_transform(&k, &h, &set(3, &[0])).unwrap_err(),
            Error::NegativeField(0)
        );
    }

    #[test]
    fn harmonicity_examples() {
        let k = m3();
        let interior = set(3, &[1]);
        let a = set(3, &[0]);
        let b = set(3, &[2]);
        let sol = solve_committor(&k, &a, &b).unwrap();
        assert!(harmonicity_certificate(&k, &sol.h, &interior).unwrap() < 1e-10);
        assert_eq!(
            harmonicity_certificate(&k, &[1.0; 3], &interior).unwrap(),
            0.0
        );
        let r = harmonicity_certificate(&k, &[0.0, 0.5, 1.0], &interior).unwrap();
        assert!((r - 0.5).abs() < 1e-15);
    }

    #[test]
    fn pockets_are_excluded() {
        // state 3 can only fall into A = {0}
        let k = RateKernel::from_triplets(
            4,
            &[
                (0, 1, 1.0),
                (1, 0, 1.0),
                (1, 2, 1.0),
                (2, 1, 1.0),
                (3, 0, 1.0),
            ],
        )
        .unwrap();
        let sol = solve_committor(&k, &set(4, &[0]), &set(4, &[2])).unwrap();
        assert_eq!(sol.h[3], 0.0);
        let (spec, c) = transition_path_control(&k, &sol).unwrap();
        assert_eq!(spec.excluded.members(), &[3]);
        assert_eq!(c.exit_rate(3), 0.0);
    }

    #[test]
    fn regularized_kernels_converge() {
        let k = m4();
        let (a, b) = (set(4, &[0]), set(4, &[3]));
        let exact = solve_committor(&k, &a, &b).unwrap();
        let (_, ck) = transition_path_control(&k, &exact).unwrap();
        let mut prev = f64::INFINITY;
        for n in [2u32, 5, 10, 20] {
            let reg = solve_committor_regularized(&k, &a, &b, n).unwrap();
            let (_, rk) = doob_transform(&k, &reg.h, &a.union(&b)).unwrap();
            let dist = (0..4)
                .flat_map(|x| (0..4).map(move |y| (x, y)))
                .map(|(x, y)| (rk.rate(x, y) - ck.rate(x, y)).abs())
                .fold(0.0, f64::max);
            assert!(dist < prev);
            prev = dist;
        }
        assert!(prev < 1e-7);
    }
}
