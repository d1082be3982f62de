//! Finite-state jump kernels and the fields that live on them.
//!
//! A [`RateKernel`] stores the off-diagonal jump rates `L(x, y)` of a
//! finite-state Markov jump process in compressed sparse rows. Every other
//! pair quantity in the crate (velocities, fluxes, test functions) is a
//! [`PairField`] aligned entry-for-entry with some kernel's sparsity pattern.

use std::collections::HashSet;
use std::ops::{Deref, Index, Range};

use serde::Serialize;

use crate::elimination;
use crate::error::{Error, Result};

/// Dense generator matrices are only materialized up to this many states.
pub const DEFAULT_DENSE_THRESHOLD: usize = 2000;

/// Sparse off-diagonal jump rates on `0..n_states`.
#[derive(Debug, Clone, PartialEq)]
pub struct RateKernel {
    n_states: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    rates: Vec<f64>,
    labels: Option<Vec<String>>,
}

impl RateKernel {
    /// Builds a kernel from `(from, to, rate)` triplets.
    ///
    /// Zero rates are accepted and dropped from the sparsity pattern. A pair
    /// listed twice is rejected even if one of the copies is zero.
    pub fn from_triplets(n_states: usize, triplets: &[(usize, usize, f64)]) -> Result<Self> {
        if n_states == 0 {
            return Err(Error::EmptyStateSpace);
        }
        let mut seen = HashSet::with_capacity(triplets.len());
        let mut kept = Vec::with_capacity(triplets.len());
        for &(from, to, rate) in triplets {
            for s in [from, to] {
                if s >= n_states {
                    return Err(Error::StateOutOfRange { state: s, n_states });
                }
            }
            if from == to {
                return Err(Error::DiagonalEntry { state: from });
            }
            if !rate.is_finite() {
                return Err(Error::NonFiniteRate { from, to, rate });
            }
            if rate < 0.0 {
                return Err(Error::NegativeRate { from, to, rate });
            }
            if !seen.insert((from, to)) {
                return Err(Error::DuplicateRateEntry { from, to });
            }
            if rate > 0.0 {
                kept.push((from, to, rate));
            }
        }
        kept.sort_by_key(|&(x, y, _)| (x, y));
        let mut row_ptr = vec![0usize; n_states + 1];
        for &(x, _, _) in &kept {
            row_ptr[x + 1] += 1;
        }
        for i in 0..n_states {
            row_ptr[i + 1] += row_ptr[i];
        }
        let cols = kept.iter().map(|t| t.1).collect();
        let rates = kept.iter().map(|t| t.2).collect();
        Ok(Self {
            n_states,
            row_ptr,
            cols,
            rates,
            labels: None,
        })
    }

    pub fn with_labels(mut self, labels: Vec<String>) -> Result<Self> {
        if labels.len() != self.n_states {
            return Err(Error::DimensionMismatch {
                expected: self.n_states,
                got: labels.len(),
            });
        }
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn labels(&self) -> Option<&[String]> {
        self.labels.as_deref()
    }

    /// Number of stored (strictly positive) rates.
    pub fn n_entries(&self) -> usize {
        self.rates.len()
    }

    /// Entry indices belonging to row `x`.
    pub fn row_range(&self, x: usize) -> Range<usize> {
        self.row_ptr[x]..self.row_ptr[x + 1]
    }

    /// Targets and rates of the jumps out of `x`.
    pub fn row(&self, x: usize) -> (&[usize], &[f64]) {
        let r = self.row_range(x);
        (&self.cols[r.clone()], &self.rates[r])
    }

    pub fn target(&self, entry: usize) -> usize {
        self.cols[entry]
    }

    pub fn rate_at(&self, entry: usize) -> f64 {
        self.rates[entry]
    }

    /// Entry index of `(x, y)`, if the pair carries a positive rate.
    pub fn entry_index(&self, x: usize, y: usize) -> Option<usize> {
        let r = self.row_range(x);
        self.cols[r.clone()]
            .binary_search(&y)
            .ok()
            .map(|i| r.start + i)
    }

    pub fn rate(&self, x: usize, y: usize) -> f64 {
        self.entry_index(x, y).map_or(0.0, |e| self.rates[e])
    }

    /// Iterates `(from, to, rate)` in row-major order.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n_states).flat_map(move |x| {
            self.row_range(x)
                .map(move |e| (x, self.cols[e], self.rates[e]))
        })
    }

    /// Exit intensity `λ(x) = Σ_y L(x, y)`.
    pub fn exit_rate(&self, x: usize) -> f64 {
        self.row(x).1.iter().sum()
    }

    pub fn exit_rates(&self) -> Vec<f64> {
        (0..self.n_states).map(|x| self.exit_rate(x)).collect()
    }

    /// `c_L = max_x λ(x)`.
    pub fn total_intensity(&self) -> f64 {
        (0..self.n_states)
            .map(|x| self.exit_rate(x))
            .fold(0.0, f64::max)
    }

    /// Kernel with rates `factor(e) · L(e)` on the same pattern; products
    /// that come out zero are dropped.
    pub fn scaled(&self, factors: &PairField) -> Result<RateKernel> {
        factors.check_aligned(self)?;
        let triplets: Vec<_> = self
            .entries()
            .zip(factors.values.iter())
            .map(|((x, y, r), &v)| (x, y, v * r))
            .collect();
        let mut k = RateKernel::from_triplets(self.n_states, &triplets)?;
        k.labels = self.labels.clone();
        Ok(k)
    }

    /// `(Lφ)(x) = Σ_y L(x, y)(φ(y) − φ(x))`.
    pub fn apply_generator(&self, phi: &[f64]) -> Result<ScalarField> {
        self.check_len(phi.len())?;
        let out = (0..self.n_states)
            .map(|x| {
                let (ys, rs) = self.row(x);
                ys.iter()
                    .zip(rs)
                    .map(|(&y, &r)| r * (phi[y] - phi[x]))
                    .sum()
            })
            .collect();
        Ok(ScalarField(out))
    }

    /// Forward action `(pᵀG)(y)` of the generator on a row vector.
    pub fn apply_adjoint(&self, p: &[f64]) -> Result<Vec<f64>> {
        self.check_len(p.len())?;
        let mut out = vec![0.0; self.n_states];
        for (x, y, r) in self.entries() {
            out[y] += p[x] * r;
            out[x] -= p[x] * r;
        }
        Ok(out)
    }

    /// Dense generator (rows sum to zero), or `None` above `threshold` states.
    pub fn dense_generator(&self, threshold: usize) -> Option<Vec<Vec<f64>>> {
        if self.n_states > threshold {
            return None;
        }
        let mut g = vec![vec![0.0; self.n_states]; self.n_states];
        for (x, y, r) in self.entries() {
            g[x][y] += r;
            g[x][x] -= r;
        }
        Some(g)
    }

    /// Marks every state that can reach `targets` in the embedded jump graph.
    pub fn can_reach(&self, targets: &[bool]) -> Vec<bool> {
        let mut reverse: Vec<Vec<usize>> = vec![Vec::new(); self.n_states];
        for (x, y, _) in self.entries() {
            reverse[y].push(x);
        }
        let mut seen = targets.to_vec();
        let mut stack: Vec<usize> = (0..self.n_states).filter(|&x| targets[x]).collect();
        while let Some(y) = stack.pop() {
            for &x in &reverse[y] {
                if !seen[x] {
                    seen[x] = true;
                    stack.push(x);
                }
            }
        }
        seen
    }

    pub fn reachable_from(&self, start: usize) -> Vec<bool> {
        let mut seen = vec![false; self.n_states];
        seen[start] = true;
        let mut stack = vec![start];
        while let Some(x) = stack.pop() {
            for &y in self.row(x).0 {
                if !seen[y] {
                    seen[y] = true;
                    stack.push(y);
                }
            }
        }
        seen
    }

    pub fn is_strongly_connected(&self) -> bool {
        let mut root = vec![false; self.n_states];
        root[0] = true;
        self.reachable_from(0).iter().all(|&b| b) && self.can_reach(&root).iter().all(|&b| b)
    }

    pub(crate) fn check_len(&self, len: usize) -> Result<()> {
        if len != self.n_states {
            return Err(Error::DimensionMismatch {
                expected: self.n_states,
                got: len,
            });
        }
        Ok(())
    }

    pub(crate) fn check_state(&self, x: usize) -> Result<()> {
        if x >= self.n_states {
            return Err(Error::StateOutOfRange {
                state: x,
                n_states: self.n_states,
            });
        }
        Ok(())
    }
}

/// One real value per state.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct ScalarField(pub Vec<f64>);

impl ScalarField {
    pub fn constant(n: usize, c: f64) -> Self {
        Self(vec![c; n])
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

impl Deref for ScalarField {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl From<Vec<f64>> for ScalarField {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

/// A probability vector over states.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct Distribution(Vec<f64>);

impl Distribution {
    pub const SUM_TOL: f64 = 1e-12;

    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if let Some(w) = weights.iter().find(|w| !w.is_finite() || **w < 0.0) {
            return Err(Error::InvalidDistribution(format!(
                "weight {w} is not a nonnegative number"
            )));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > Self::SUM_TOL {
            return Err(Error::InvalidDistribution(format!(
                "weights sum to {total}"
            )));
        }
        Ok(Self(weights))
    }

    pub fn dirac(n: usize, x: usize) -> Result<Self> {
        if x >= n {
            return Err(Error::StateOutOfRange {
                state: x,
                n_states: n,
            });
        }
        let mut w = vec![0.0; n];
        w[x] = 1.0;
        Ok(Self(w))
    }

    /// Rescales nonnegative weights to unit mass.
    pub fn normalized(mut weights: Vec<f64>) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if !(total.is_finite() && total > 0.0) {
            return Err(Error::InvalidDistribution(format!(
                "cannot normalize mass {total}"
            )));
        }
        weights.iter_mut().for_each(|w| *w /= total);
        Self::new(weights)
    }

    pub fn weights(&self) -> &[f64] {
        &self.0
    }
}

impl Deref for Distribution {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// A subset of states, kept both as a sorted list and a membership mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StateSet {
    members: Vec<usize>,
    mask: Vec<bool>,
}

impl StateSet {
    pub fn new(n_states: usize, members: impl IntoIterator<Item = usize>) -> Result<Self> {
        let mut mask = vec![false; n_states];
        for s in members {
            if s >= n_states {
                return Err(Error::StateOutOfRange { state: s, n_states });
            }
            mask[s] = true;
        }
        Ok(Self::from_mask(mask))
    }

    pub fn empty(n_states: usize) -> Self {
        Self::from_mask(vec![false; n_states])
    }

    pub fn from_mask(mask: Vec<bool>) -> Self {
        let members = (0..mask.len()).filter(|&i| mask[i]).collect();
        Self { members, mask }
    }

    pub fn contains(&self, x: usize) -> bool {
        self.mask.get(x).copied().unwrap_or(false)
    }

    pub fn members(&self) -> &[usize] {
        &self.members
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn n_states(&self) -> usize {
        self.mask.len()
    }

    pub fn union(&self, other: &StateSet) -> StateSet {
        let mask = self
            .mask
            .iter()
            .zip(&other.mask)
            .map(|(a, b)| *a || *b)
            .collect();
        Self::from_mask(mask)
    }

    pub fn complement(&self) -> StateSet {
        Self::from_mask(self.mask.iter().map(|b| !b).collect())
    }
}

/// Checks that `A` and `B` are nonempty, disjoint and sized for the kernel.
pub fn check_transition_sets(k: &RateKernel, a: &StateSet, b: &StateSet) -> Result<()> {
    k.check_len(a.n_states())?;
    k.check_len(b.n_states())?;
    if a.is_empty() {
        return Err(Error::EmptySet("A"));
    }
    if b.is_empty() {
        return Err(Error::EmptySet("B"));
    }
    if let Some(&x) = a.members().iter().find(|&&x| b.contains(x)) {
        return Err(Error::SetsOverlap(x));
    }
    Ok(())
}

/// A real value on every stored pair of a kernel, indexed by entry.
#[derive(Debug, Clone, PartialEq)]
pub struct PairField {
    values: Vec<f64>,
}

impl PairField {
    pub fn from_values(k: &RateKernel, values: Vec<f64>) -> Result<Self> {
        if values.len() != k.n_entries() {
            return Err(Error::DimensionMismatch {
                expected: k.n_entries(),
                got: values.len(),
            });
        }
        Ok(Self { values })
    }

    pub fn constant(k: &RateKernel, c: f64) -> Self {
        Self {
            values: vec![c; k.n_entries()],
        }
    }

    /// Evaluates `f(x, y, L(x, y))` on every stored pair.
    pub fn from_fn(k: &RateKernel, mut f: impl FnMut(usize, usize, f64) -> f64) -> Self {
        Self {
            values: k.entries().map(|(x, y, r)| f(x, y, r)).collect(),
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, k: &RateKernel, x: usize, y: usize) -> Option<f64> {
        k.entry_index(x, y).map(|e| self.values[e])
    }

    pub(crate) fn check_aligned(&self, k: &RateKernel) -> Result<()> {
        if self.values.len() != k.n_entries() {
            return Err(Error::DimensionMismatch {
                expected: k.n_entries(),
                got: self.values.len(),
            });
        }
        Ok(())
    }
}

impl Index<usize> for PairField {
    type Output = f64;
    fn index(&self, e: usize) -> &f64 {
        &self.values[e]
    }
}

/// Summary produced by [`validate_kernel`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KernelReport {
    pub n_states: usize,
    pub n_entries: usize,
    pub total_intensity: f64,
    pub exit_rates: Vec<f64>,
    pub absorbing: Vec<usize>,
    /// Set when no state has a positive exit intensity.
    pub zero_intensity: bool,
    pub strongly_connected: bool,
}

/// Reports `c_L`, the exit intensities and absorbing states.
///
/// Sign and finiteness of the rates are enforced when the kernel is built,
/// so this cannot fail.
pub fn validate_kernel(k: &RateKernel) -> KernelReport {
    let exit_rates = k.exit_rates();
    let total_intensity = exit_rates.iter().copied().fold(0.0, f64::max);
    let absorbing = (0..k.n_states())
        .filter(|&x| exit_rates[x] == 0.0)
        .collect();
    KernelReport {
        n_states: k.n_states(),
        n_entries: k.n_entries(),
        total_intensity,
        exit_rates,
        absorbing,
        zero_intensity: total_intensity == 0.0,
        strongly_connected: k.is_strongly_connected(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Stationary {
    pub pi: Distribution,
    /// `‖πᵀG‖∞`.
    pub residual: f64,
}

/// Unique invariant law of an irreducible kernel, by GTH state reduction.
pub fn stationary_distribution(k: &RateKernel) -> Result<Stationary> {
    if k.n_states() > 1 && !k.is_strongly_connected() {
        return Err(Error::Reducible);
    }
    let weights = elimination::stationary_weights(k);
    let pi = Distribution::normalized(weights)?;
    let residual = k
        .apply_adjoint(&pi)?
        .iter()
        .fold(0.0, |m: f64, v| m.max(v.abs()));
    Ok(Stationary { pi, residual })
}
