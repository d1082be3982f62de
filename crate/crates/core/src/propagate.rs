//! Exact transition semigroup `e^{sG}` by uniformization.
//!
//! With `Λ = c_L` and the stochastic matrix `P = I + G/Λ`,
//! `e^{sG} = Σ_k Pois(k; Λs) P^k`. Every term is nonnegative, so the
//! maximum principle and positivity survive rounding.

use crate::kernel::RateKernel;

/// Largest `Λs` handled in one uniformization sweep; longer steps are split.
const MAX_SWEEP: f64 = 16.0;
const MAX_TERMS: usize = 400;

struct Uniformized<'a> {
    k: &'a RateKernel,
    lambda: f64,
    stay: Vec<f64>,
}

impl<'a> Uniformized<'a> {
    fn new(k: &'a RateKernel) -> Self {
        let exits = k.exit_rates();
        let lambda = exits.iter().copied().fold(0.0, f64::max);
        let stay = exits.iter().map(|&e| (lambda - e) / lambda).collect();
        Self { k, lambda, stay }
    }

    fn apply_right(&self, v: &[f64], out: &mut [f64]) {
        for x in 0..v.len() {
            let (ys, rs) = self.k.row(x);
            let mut s = self.stay[x] * v[x];
            for (&y, &r) in ys.iter().zip(rs) {
                s += r / self.lambda * v[y];
            }
            out[x] = s;
        }
    }

    fn apply_left(&self, p: &[f64], out: &mut [f64]) {
        for (y, o) in out.iter_mut().enumerate() {
            *o = self.stay[y] * p[y];
        }
        for (x, &px) in p.iter().enumerate() {
            if px == 0.0 {
                continue;
            }
            let (ys, rs) = self.k.row(x);
            for (&y, &r) in ys.iter().zip(rs) {
                out[y] += px * (r / self.lambda);
            }
        }
    }
}

fn poisson_weights(a: f64) -> Vec<f64> {
    let mut w = vec![(-a).exp()];
    let mut cum = w[0];
    let mut k = 1;
    while k < MAX_TERMS {
        let next = w[k - 1] * a / k as f64;
        w.push(next);
        cum += next;
        if k as f64 > a && next <= 1e-20 * cum {
            break;
        }
        k += 1;
    }
    w
}

fn n_sweeps(lambda: f64, s: f64) -> usize {
    ((lambda * s) / MAX_SWEEP).ceil().max(1.0) as usize
}

/// `e^{sG} v`, the backward (Kolmogorov) propagation of a function.
pub fn backward(k: &RateKernel, v: &[f64], s: f64) -> Vec<f64> {
    let u = Uniformized::new(k);
    if u.lambda == 0.0 || s == 0.0 {
        return v.to_vec();
    }
    let sweeps = n_sweeps(u.lambda, s);
    let w = poisson_weights(u.lambda * s / sweeps as f64);
    let mut cur = v.to_vec();
    let mut term = vec![0.0; v.len()];
    let mut next = vec![0.0; v.len()];
    for _ in 0..sweeps {
        let mut acc: Vec<f64> = cur.iter().map(|x| w[0] * x).collect();
        term.copy_from_slice(&cur);
        for &wk in &w[1..] {
            u.apply_right(&term, &mut next);
            std::mem::swap(&mut term, &mut next);
            for (a, t) in acc.iter_mut().zip(&term) {
                *a += wk * t;
            }
        }
        cur = acc;
    }
    cur
}

/// `p e^{sG}`, the forward propagation of a measure.
pub fn forward(k: &RateKernel, p: &[f64], s: f64) -> Vec<f64> {
    forward_with_occupation(k, p, s).0
}

/// Returns `p e^{sG}` together with the occupation measure `∫_0^s p e^{uG} du`.
pub fn forward_with_occupation(k: &RateKernel, p: &[f64], s: f64) -> (Vec<f64>, Vec<f64>) {
    let u = Uniformized::new(k);
    if u.lambda == 0.0 || s == 0.0 {
        return (p.to_vec(), p.iter().map(|x| x * s).collect());
    }
    let sweeps = n_sweeps(u.lambda, s);
    let w = poisson_weights(u.lambda * s / sweeps as f64);
    // ∫_0^s Pois(k; Λu) du = P(N > k) / Λ
    let mut tails = vec![0.0; w.len()];
    for i in (0..w.len() - 1).rev() {
        tails[i] = tails[i + 1] + w[i + 1];
    }
    let mut cur = p.to_vec();
    let mut occ = vec![0.0; p.len()];
    let mut term = vec![0.0; p.len()];
    let mut next = vec![0.0; p.len()];
    for _ in 0..sweeps {
        let mut acc: Vec<f64> = cur.iter().map(|x| w[0] * x).collect();
        for (o, x) in occ.iter_mut().zip(&cur) {
            *o += tails[0] / u.lambda * x;
        }
        term.copy_from_slice(&cur);
        for (i, &wk) in w.iter().enumerate().skip(1) {
            u.apply_left(&term, &mut next);
            std::mem::swap(&mut term, &mut next);
            for (a, t) in acc.iter_mut().zip(&term) {
                *a += wk * t;
            }
            for (o, t) in occ.iter_mut().zip(&term) {
                *o += tails[i] / u.lambda * t;
            }
        }
        cur = acc;
    }
    (cur, occ)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m2() -> RateKernel {
        RateKernel::from_triplets(2, &[(0, 1, 1.0), (1, 0, 1.0)]).unwrap()
    }

    #[test]
    fn two_state_closed_form() {
        // eigenvalues 0, −2: e^{sG}(a, a) = ½(1 + e^{−2s})
        for s in [0.01, 0.3, 1.0, 7.5, 40.0] {
            let v = backward(&m2(), &[1.0, 0.0], s);
            let want = 0.5 * (1.0 + (-2.0 * s).exp());
            assert!((v[0] - want).abs() < 1e-14, "{s}: {} vs {want}", v[0]);
            assert!((v[1] - (1.0 - want)).abs() < 1e-14);
        }
    }

    #[test]
    fn occupation_two_state() {
        let s = 0.8;
        let (p, occ) = forward_with_occupation(&m2(), &[1.0, 0.0], s);
        // ∫_0^s ½(1 + e^{−2u}) du = s/2 + (1 − e^{−2s})/4
        let want = s / 2.0 + (1.0 - (-2.0 * s).exp()) / 4.0;
        assert!((occ[0] - want).abs() < 1e-14);
        assert!((occ[0] + occ[1] - s).abs() < 1e-14);
        assert!((p[0] + p[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn absorbing_kernel_is_identity() {
        let k = RateKernel::from_triplets(2, &[]).unwrap();
        assert_eq!(backward(&k, &[0.3, 0.7], 2.0), vec![0.3, 0.7]);
    }
}
