#![allow(dead_code)]

use jumppath::{RateKernel, StateSet};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn m2() -> RateKernel {
    RateKernel::from_triplets(2, &[(0, 1, 1.0), (1, 0, 1.0)]).unwrap()
}

pub fn m3() -> RateKernel {
    RateKernel::from_triplets(3, &[(0, 1, 1.0), (1, 0, 1.0), (1, 2, 2.0), (2, 1, 1.0)]).unwrap()
}

pub fn m4() -> RateKernel {
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

pub fn set(n: usize, s: &[usize]) -> StateSet {
    StateSet::new(n, s.iter().copied()).unwrap()
}

/// `A = {0}`, `B = {n − 1}`.
pub fn end_sets(n: usize) -> (StateSet, StateSet) {
    (set(n, &[0]), set(n, &[n - 1]))
}

/// Strongly connected kernel on 3..=6 states: a two-way ring plus random
/// chords, rates uniform in `[0.1, 5)`.
pub fn random_kernel(rng: &mut ChaCha8Rng) -> RateKernel {
    let n = rng.random_range(3..=6);
    let mut trip = Vec::new();
    for x in 0..n {
        for y in 0..n {
            if x == y {
                continue;
            }
            let ring = y == (x + 1) % n || x == (y + 1) % n;
            if ring || rng.random_bool(0.3) {
                trip.push((x, y, rng.random_range(0.1..5.0)));
            }
        }
    }
    RateKernel::from_triplets(n, &trip).unwrap()
}

pub fn random_kernels(count: usize, seed: u64) -> Vec<RateKernel> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| random_kernel(&mut rng)).collect()
}

/// Committor by dense LU on the full generator with boundary rows replaced.
pub fn dense_committor(k: &RateKernel, a: &StateSet, b: &StateSet) -> Vec<f64> {
    let n = k.n_states();
    let mut m = DMatrix::<f64>::zeros(n, n);
    let mut rhs = DVector::<f64>::zeros(n);
    for x in 0..n {
        if a.contains(x) || b.contains(x) {
            m[(x, x)] = 1.0;
            rhs[x] = if b.contains(x) { 1.0 } else { 0.0 };
            continue;
        }
        for (_, y, r) in k.entries().filter(|e| e.0 == x) {
            m[(x, y)] += r;
            m[(x, x)] -= r;
        }
    }
    m.lu()
        .solve(&rhs)
        .expect("nonsingular")
        .iter()
        .copied()
        .collect()
}

/// Closed-form `h_t(a)` for M2 with `h_T = (e^{-M}, 1)`, `s = T − t`.
pub fn m2_h_a(m: f64, s: f64) -> f64 {
    let e = (-m).exp();
    0.5 * (1.0 + e) - 0.5 * (1.0 - e) * (-2.0 * s).exp()
}
