//! Committor boundary value problems.
//!
//! `h_AB` solves `(Lh)(x) = 0` off `A ∪ B` with `h = 1` on `B` and `h = 0`
//! on `A`; the regularized variant puts `e^{-n}` on `A` instead, which keeps
//! `h ≥ e^{-n}` and the Doob velocities `h(y)/h(x)` bounded by `e^n`.

use crate::elimination::{self, SolverOptions};
use crate::error::{Error, Result};
use crate::kernel::{check_transition_sets, RateKernel, ScalarField, StateSet};
pub use crate::sim::DynkinReport;
use crate::sim::PathRecord;

/// Overshoot of `[lo, hi]` below this is treated as rounding and clamped.
pub const CLAMP_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct CommittorSolution {
    pub h: ScalarField,
    pub a: StateSet,
    pub b: StateSet,
    pub regularization_n: Option<u32>,
    /// `max |(Lh)(x)|` over interior states.
    pub residual: f64,
}

impl CommittorSolution {
    pub fn interior(&self) -> StateSet {
        self.a.union(&self.b).complement()
    }

    /// `γ̄(x) = −log h(x)`, `+∞` where `h` vanishes.
    pub fn value_function(&self) -> Vec<f64> {
        self.h.iter().map(|&v| -v.ln()).collect()
    }

    /// Terminal cost `f_AB = −log h` restricted to the boundary.
    pub fn terminal_cost(&self, x: usize) -> f64 {
        -self.h[x].ln()
    }
}

pub fn solve_committor(k: &RateKernel, a: &StateSet, b: &StateSet) -> Result<CommittorSolution> {
    solve_committor_with(k, a, b, &SolverOptions::default())
}

pub fn solve_committor_with(
    k: &RateKernel,
    a: &StateSet,
    b: &StateSet,
    opts: &SolverOptions,
) -> Result<CommittorSolution> {
    solve_bvp(k, a, b, 0.0, None, opts)
}

/// Committor with boundary value `e^{-n}` on `A`.
pub fn solve_committor_regularized(
    k: &RateKernel,
    a: &StateSet,
    b: &StateSet,
    n: u32,
) -> Result<CommittorSolution> {
    solve_committor_regularized_with(k, a, b, n, &SolverOptions::default())
}

pub fn solve_committor_regularized_with(
    k: &RateKernel,
    a: &StateSet,
    b: &StateSet,
    n: u32,
    opts: &SolverOptions,
) -> Result<CommittorSolution> {
    solve_bvp(k, a, b, (-(n as f64)).exp(), Some(n), opts)
}

fn solve_bvp(
    k: &RateKernel,
    a: &StateSet,
    b: &StateSet,
    value_on_a: f64,
    regularization_n: Option<u32>,
    opts: &SolverOptions,
) -> Result<CommittorSolution> {
    check_transition_sets(k, a, b)?;
    let boundary_mask = a.union(b);
    let reach = k.can_reach(boundary_mask.mask());
    if let Some(x) = (0..k.n_states()).find(|&x| !reach[x]) {
        return Err(Error::UnreachableBoundary(x));
    }
    let boundary: Vec<Option<f64>> = (0..k.n_states())
        .map(|x| {
            if b.contains(x) {
                Some(1.0)
            } else if a.contains(x) {
                Some(value_on_a)
            } else {
                None
            }
        })
        .collect();
    let mut h = elimination::solve_dirichlet(k, &boundary, opts)?;

    let (lo, hi) = (value_on_a.min(1.0), value_on_a.max(1.0));
    for v in h.iter_mut() {
        let over = (lo - *v).max(*v - hi);
        if over > CLAMP_TOL || v.is_nan() {
            return Err(Error::MaximumPrinciple(over));
        }
        *v = v.clamp(lo, hi);
    }
    let lh = k.apply_generator(&h)?;
    let residual = (0..k.n_states())
        .filter(|&x| boundary[x].is_none())
        .map(|x| lh[x].abs())
        .fold(0.0, f64::max);
    Ok(CommittorSolution {
        h: ScalarField(h),
        a: a.clone(),
        b: b.clone(),
        regularization_n,
        residual,
    })
}

/// `hⁿ − h`, solved directly as the BVP with `e^{-n}` on `A` and `0` on `B`
/// so that it stays accurate far below the rounding level of `h`.
pub fn regularization_defect(
    k: &RateKernel,
    a: &StateSet,
    b: &StateSet,
    n: u32,
) -> Result<ScalarField> {
    check_transition_sets(k, a, b)?;
    let boundary_set = a.union(b);
    let reach = k.can_reach(boundary_set.mask());
    if let Some(z) = (0..k.n_states()).find(|&z| !reach[z]) {
        return Err(Error::UnreachableBoundary(z));
    }
    let e = (-(n as f64)).exp();
    let bvals: Vec<Option<f64>> = (0..k.n_states())
        .map(|z| {
            boundary_set
                .contains(z)
                .then(|| if a.contains(z) { e } else { 0.0 })
        })
        .collect();
    let d = elimination::solve_dirichlet(k, &bvals, &SolverOptions::default())?;
    Ok(ScalarField(
        d.into_iter().map(|v| v.clamp(0.0, e)).collect(),
    ))
}

/// Exit law `P_x(X_τ = η)` over boundary states `η ∈ A ∪ B`.
pub fn hitting_distribution(
    k: &RateKernel,
    a: &StateSet,
    b: &StateSet,
    x: usize,
) -> Result<Vec<(usize, f64)>> {
    check_transition_sets(k, a, b)?;
    k.check_state(x)?;
    let boundary_set = a.union(b);
    if boundary_set.contains(x) {
        return Ok(vec![(x, 1.0)]);
    }
    let reach = k.can_reach(boundary_set.mask());
    if let Some(z) = (0..k.n_states()).find(|&z| !reach[z]) {
        return Err(Error::UnreachableBoundary(z));
    }
    let opts = SolverOptions::default();
    boundary_set
        .members()
        .iter()
        .map(|&eta| {
            let bvals: Vec<Option<f64>> = (0..k.n_states())
                .map(|z| {
                    boundary_set
                        .contains(z)
                        .then_some(if z == eta { 1.0 } else { 0.0 })
                })
                .collect();
            let p = elimination::solve_dirichlet(k, &bvals, &opts)?;
            Ok((eta, p[x]))
        })
        .collect()
}

/// Compares the empirical mean of `h(X_τ)` over stopped paths with `h(x)`.
///
/// Paths that did not stop on `A ∪ B` (horizon or jump cap) are ignored.
pub fn dynkin_check(
    k: &RateKernel,
    sol: &CommittorSolution,
    x: usize,
    paths: &[PathRecord],
) -> Result<DynkinReport> {
    k.check_state(x)?;
    crate::sim::dynkin_from_paths(&sol.h, x, paths)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::elimination::SolverKind;

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

    fn sets(n: usize, a: &[usize], b: &[usize]) -> (StateSet, StateSet) {
        (
            StateSet::new(n, a.iter().copied()).unwrap(),
            StateSet::new(n, b.iter().copied()).unwrap(),
        )
    }

    #[test]
    fn m3_committor() {
        let (a, b) = sets(3, &[0], &[2]);
        let s = solve_committor(&m3(), &a, &b).unwrap();
        // 1·(0 − h) + 2·(1 − h) = 0
        assert!((s.h[1] - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(s.h[0], 0.0);
        assert_eq!(s.h[2], 1.0);
        assert!(s.residual <= 1e-10 * 3.0);
    }

    #[test]
    fn m4_committor_both_solvers() {
        let (a, b) = sets(4, &[0], &[3]);
        for kind in [SolverKind::Direct, SolverKind::Iterative] {
            let opts = SolverOptions {
                kind,
                ..Default::default()
            };
            let s = solve_committor_with(&m4(), &a, &b, &opts).unwrap();
            assert!((s.h[1] - 1.0 / 3.0).abs() < 1e-10);
            assert!((s.h[2] - 2.0 / 3.0).abs() < 1e-10);
        }
    }

    #[test]
    fn regularized_m3() {
        let (a, b) = sets(3, &[0], &[2]);
        for n in [1u32, 2, 5, 10] {
            let s = solve_committor_regularized(&m3(), &a, &b, n).unwrap();
            let e = (-(n as f64)).exp();
            // 1·(e^{-n} − h) + 2·(1 − h) = 0
            assert!((s.h[1] - (2.0 + e) / 3.0).abs() < 1e-15);
            assert_eq!(s.h[0], e);
        }
        let s0 = solve_committor_regularized(&m3(), &a, &b, 0).unwrap();
        assert!(s0.h.iter().all(|&v| (v - 1.0).abs() < 1e-15));
    }

    #[test]
    fn regularized_m4_perturbation_bound() {
        let (a, b) = sets(4, &[0], &[3]);
        let h = solve_committor(&m4(), &a, &b).unwrap();
        let hn = solve_committor_regularized(&m4(), &a, &b, 40).unwrap();
        let gap =
            h.h.iter()
                .zip(hn.h.iter())
                .map(|(x, y)| (x - y).abs())
                .fold(0.0, f64::max);
        assert!(gap <= (-40.0f64).exp() + 1e-16);
        // hⁿ − h = e^{-n} P(hit A first)
        for n in [5u32, 20, 40] {
            let d = regularization_defect(&m4(), &a, &b, n).unwrap();
            for x in 0..4 {
                let want = (-(n as f64)).exp() * (1.0 - h.h[x]);
                assert!((d[x] - want).abs() <= 1e-14 * want, "{n} {x}");
            }
        }
    }

    #[test]
    fn errors() {
        let k = m3();
        let (a, b) = sets(3, &[0], &[0, 2]);
        assert_eq!(solve_committor(&k, &a, &b), Err(Error::SetsOverlap(0)));
        let (a, b) = sets(3, &[], &[2]);
        assert_eq!(solve_committor(&k, &a, &b), Err(Error::EmptySet("A")));
        // state 2 never leaves {2, 3}
        let k = RateKernel::from_triplets(4, &[(1, 0, 1.0), (2, 3, 1.0), (3, 2, 1.0)]).unwrap();
        let (a, b) = sets(4, &[0], &[1]);
        assert_eq!(
            solve_committor(&k, &a, &b),
            Err(Error::UnreachableBoundary(2))
        );
    }

    #[test]
    fn hitting_distribution_sums_to_one() {
        let k = m4();
        let (a, b) = sets(4, &[0], &[3]);
        let law = hitting_distribution(&k, &a, &b, 1).unwrap();
        assert_eq!(law.len(), 2);
        assert!((law[0].1 - 2.0 / 3.0).abs() < 1e-14);
        assert!((law[1].1 - 1.0 / 3.0).abs() < 1e-14);
    }
}
