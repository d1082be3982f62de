//! Linear solvers on generator systems.
//!
//! The direct route is state reduction (the Grassmann–Taksar–Heyman scheme):
//! interior states are censored out one at a time and their rates re-routed
//! to the remaining states. Only sums and products of nonnegative numbers
//! appear, so the solution is accurate to a few ulps without pivoting.
//! Above the dense threshold a Jacobi-preconditioned BiCGSTAB is used.

use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};
use crate::kernel::RateKernel;

/// Which linear solver to use for Dirichlet problems.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SolverKind {
    /// Direct elimination up to `dense_threshold` interior states, iterative above.
    Auto,
    Direct,
    Iterative,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub kind: SolverKind,
    pub dense_threshold: usize,
    /// Relative residual target of the iterative solver.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            kind: SolverKind::Auto,
            dense_threshold: crate::kernel::DEFAULT_DENSE_THRESHOLD,
            tol: 1e-10,
            max_iter: 10_000,
        }
    }
}

struct Reducer {
    rows: Vec<BTreeMap<usize, f64>>,
    incoming: Vec<BTreeSet<usize>>,
    active: Vec<bool>,
}

struct Eliminated {
    state: usize,
    out: Vec<(usize, f64)>,
    inc: Vec<(usize, f64)>,
    exit: f64,
}

impl Reducer {
    /// `active` states are the ones that will be eliminated; rows are kept
    /// only for them, but may point at any state.
    fn new(k: &RateKernel, active: Vec<bool>) -> Self {
        let n = k.n_states();
        let mut rows = vec![BTreeMap::new(); n];
        let mut incoming = vec![BTreeSet::new(); n];
        for (x, y, r) in k.entries() {
            if active[x] {
                rows[x].insert(y, r);
                incoming[y].insert(x);
            }
        }
        Self {
            rows,
            incoming,
            active,
        }
    }

    fn next_pivot(&self, keep: Option<usize>) -> Option<usize> {
        (0..self.rows.len())
            .filter(|&z| self.active[z] && Some(z) != keep)
            .min_by_key(|&z| {
                let inc = self.incoming[z].iter().filter(|&&x| self.active[x]).count();
                (inc * self.rows[z].len(), z)
            })
    }

    fn eliminate(&mut self, z: usize) -> Eliminated {
        self.active[z] = false;
        let out: Vec<(usize, f64)> = std::mem::take(&mut self.rows[z]).into_iter().collect();
        let exit: f64 = out.iter().map(|p| p.1).sum();
        let sources: Vec<usize> = self.incoming[z]
            .iter()
            .copied()
            .filter(|&x| self.active[x])
            .collect();
        let mut inc = Vec::with_capacity(sources.len());
        for x in sources {
            let r = self.rows[x].remove(&z).unwrap_or(0.0);
            inc.push((x, r));
            if exit == 0.0 {
                continue;
            }
            for &(y, s) in &out {
                if y == x {
                    continue;
                }
                *self.rows[x].entry(y).or_insert(0.0) += r * s / exit;
                self.incoming[y].insert(x);
            }
        }
        for &(y, _) in &out {
            self.incoming[y].remove(&z);
        }
        Eliminated {
            state: z,
            out,
            inc,
            exit,
        }
    }
}

/// Unnormalized stationary weights of an irreducible kernel.
pub(crate) fn stationary_weights(k: &RateKernel) -> Vec<f64> {
    let n = k.n_states();
    if n == 1 {
        return vec![1.0];
    }
    let mut red = Reducer::new(k, vec![true; n]);
    let last = n - 1;
    let mut stack = Vec::with_capacity(n - 1);
    while let Some(z) = red.next_pivot(Some(last)) {
        stack.push(red.eliminate(z));
    }
    let mut w = vec![0.0; n];
    w[last] = 1.0;
    for e in stack.iter().rev() {
        let inflow: f64 = e.inc.iter().map(|&(x, r)| w[x] * r).sum();
        w[e.state] = inflow / e.exit;
    }
    w
}

/// Solves `(Lh)(x) = 0` on states with `boundary[x] == None`, with
/// `h = boundary[x]` elsewhere. Every interior state must reach the
/// boundary; callers check this up front.
pub(crate) fn solve_dirichlet(
    k: &RateKernel,
    boundary: &[Option<f64>],
    opts: &SolverOptions,
) -> Result<Vec<f64>> {
    let n_interior = boundary.iter().filter(|b| b.is_none()).count();
    let direct = match opts.kind {
        SolverKind::Direct => true,
        SolverKind::Iterative => false,
        SolverKind::Auto => n_interior <= opts.dense_threshold,
    };
    if direct {
        solve_direct(k, boundary)
    } else {
        solve_bicgstab(k, boundary, opts)
    }
}

fn solve_direct(k: &RateKernel, boundary: &[Option<f64>]) -> Result<Vec<f64>> {
    let active: Vec<bool> = boundary.iter().map(|b| b.is_none()).collect();
    let mut red = Reducer::new(k, active);
    let mut stack = Vec::new();
    while let Some(z) = red.next_pivot(None) {
        let e = red.eliminate(z);
        if e.exit == 0.0 {
            return Err(Error::UnreachableBoundary(z));
        }
        stack.push(e);
    }
    let mut h: Vec<f64> = boundary.iter().map(|b| b.unwrap_or(0.0)).collect();
    for e in stack.iter().rev() {
        let s: f64 = e.out.iter().map(|&(y, r)| r * h[y]).sum();
        h[e.state] = s / e.exit;
    }
    Ok(h)
}

/// Right-preconditioned BiCGSTAB on `(diag(λ) − L_II) h_I = L_IB g`.
fn solve_bicgstab(
    k: &RateKernel,
    boundary: &[Option<f64>],
    opts: &SolverOptions,
) -> Result<Vec<f64>> {
    let n = k.n_states();
    let interior: Vec<usize> = (0..n).filter(|&x| boundary[x].is_none()).collect();
    let mut local = vec![usize::MAX; n];
    for (i, &x) in interior.iter().enumerate() {
        local[x] = i;
    }
    let m = interior.len();
    let diag: Vec<f64> = interior.iter().map(|&x| k.exit_rate(x)).collect();
    if let Some(i) = diag.iter().position(|&d| d == 0.0) {
        return Err(Error::UnreachableBoundary(interior[i]));
    }
    let mut rhs = vec![0.0; m];
    for (i, &x) in interior.iter().enumerate() {
        let (ys, rs) = k.row(x);
        for (&y, &r) in ys.iter().zip(rs) {
            if let Some(g) = boundary[y] {
                rhs[i] += r * g;
            }
        }
    }
    let matvec = |v: &[f64], out: &mut [f64]| {
        for (i, &x) in interior.iter().enumerate() {
            let (ys, rs) = k.row(x);
            let mut s = diag[i] * v[i];
            for (&y, &r) in ys.iter().zip(rs) {
                if local[y] != usize::MAX {
                    s -= r * v[local[y]];
                }
            }
            out[i] = s;
        }
    };
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let norm = |a: &[f64]| dot(a, a).sqrt();

    let bnorm = norm(&rhs);
    let mut sol = vec![0.0; m];
    if bnorm > 0.0 {
        let mut r = rhs.clone();
        let r0 = r.clone();
        let (mut rho, mut alpha, mut omega) = (1.0, 1.0, 1.0);
        let mut v = vec![0.0; m];
        let mut p = vec![0.0; m];
        let mut y = vec![0.0; m];
        let mut z = vec![0.0; m];
        let mut s = vec![0.0; m];
        let mut t = vec![0.0; m];
        let mut converged = false;
        let mut iterations = 0;
        for it in 0..opts.max_iter {
            iterations = it + 1;
            let rho_new = dot(&r0, &r);
            if rho_new == 0.0 {
                break;
            }
            let beta = (rho_new / rho) * (alpha / omega);
            rho = rho_new;
            for i in 0..m {
                p[i] = r[i] + beta * (p[i] - omega * v[i]);
                y[i] = p[i] / diag[i];
            }
            matvec(&y, &mut v);
            alpha = rho / dot(&r0, &v);
            for i in 0..m {
                s[i] = r[i] - alpha * v[i];
            }
            if norm(&s) <= opts.tol * bnorm {
                for i in 0..m {
                    sol[i] += alpha * y[i];
                }
                converged = true;
                break;
            }
            for i in 0..m {
                z[i] = s[i] / diag[i];
            }
            matvec(&z, &mut t);
            omega = dot(&t, &s) / dot(&t, &t);
            for i in 0..m {
                sol[i] += alpha * y[i] + omega * z[i];
                r[i] = s[i] - omega * t[i];
            }
            if norm(&r) <= opts.tol * bnorm {
                converged = true;
                break;
            }
            if omega == 0.0 {
                break;
            }
        }
        // recompute the true residual; the recursive one drifts
        let mut ax = vec![0.0; m];
        matvec(&sol, &mut ax);
        let res = ax
            .iter()
            .zip(&rhs)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        if !converged || res > 10.0 * opts.tol * bnorm {
            return Err(Error::NoConvergence {
                iterations,
                residual: res / bnorm,
            });
        }
    }
    let mut h: Vec<f64> = boundary.iter().map(|b| b.unwrap_or(0.0)).collect();
    for (i, &x) in interior.iter().enumerate() {
        h[x] = sol[i];
    }
    Ok(h)
}
