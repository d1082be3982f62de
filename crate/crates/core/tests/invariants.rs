mod common;

use common::*;
use jumppath::doob::doob_transform;
use jumppath::model_io::{emit_model, parse_model, Model};
use jumppath::propagate;
use jumppath::sim::sample_path_stream;
use jumppath::{solve_committor, RateKernel, ScalarField, StateSet, StopRule};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn kernel_strategy() -> impl Strategy<Value = RateKernel> {
    any::<u64>().prop_map(|seed| random_kernel(&mut ChaCha8Rng::seed_from_u64(seed)))
}

fn field(n: usize, raw: &[f64]) -> Vec<f64> {
    (0..n).map(|i| raw[i % raw.len()]).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn generator_is_linear(k in kernel_strategy(), u in prop::collection::vec(-5.0..5.0f64, 6), v in prop::collection::vec(-5.0..5.0f64, 6), c in -3.0..3.0f64) {
        let n = k.n_states();
        let (u, v) = (field(n, &u), field(n, &v));
        let w: Vec<f64> = u.iter().zip(&v).map(|(a, b)| a + c * b).collect();
        let (lu, lv, lw) = (k.apply_generator(&u).unwrap(), k.apply_generator(&v).unwrap(), k.apply_generator(&w).unwrap());
        for x in 0..n {
            prop_assert!((lw[x] - (lu[x] + c * lv[x])).abs() <= 1e-10);
        }
        // constants are annihilated
        prop_assert!(k.apply_generator(&vec![2.5; n]).unwrap().max_abs() <= 1e-12);
    }

    #[test]
    fn adjoint_conserves_mass(k in kernel_strategy(), p in prop::collection::vec(0.0..1.0f64, 6), s in 0.01..3.0f64) {
        let p = field(k.n_states(), &p);
        let total: f64 = p.iter().sum();
        prop_assert!(k.apply_adjoint(&p).unwrap().iter().sum::<f64>().abs() <= 1e-12 * (1.0 + total));
        let q = propagate::forward(&k, &p, s);
        prop_assert!((q.iter().sum::<f64>() - total).abs() <= 1e-12 * (1.0 + total));
        prop_assert!(q.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn committor_matches_dense_and_obeys_max_principle(k in kernel_strategy()) {
        let (a, b) = end_sets(k.n_states());
        let sol = solve_committor(&k, &a, &b).unwrap();
        let dense = dense_committor(&k, &a, &b);
        for (x, (s, d)) in sol.h.iter().zip(&dense).enumerate() {
            prop_assert!((s - d).abs() <= 1e-10, "state {x}: {s} vs {d}");
            prop_assert!((0.0..=1.0).contains(s));
        }
        prop_assert!(sol.residual <= 1e-10);
    }

    #[test]
    fn doob_transforms_compose(k in kernel_strategy(), g1 in prop::collection::vec(0.1..4.0f64, 6), g2 in prop::collection::vec(0.1..4.0f64, 6)) {
        let n = k.n_states();
        let (h1, h2) = (ScalarField(field(n, &g1)), ScalarField(field(n, &g2)));
        let none = StateSet::empty(n);
        let (_, k1) = doob_transform(&k, &h1, &none).unwrap();
        let (_, k12) = doob_transform(&k1, &h2, &none).unwrap();
        let prod = ScalarField(h1.iter().zip(h2.iter()).map(|(a, b)| a * b).collect());
        let (_, direct) = doob_transform(&k, &prod, &none).unwrap();
        for ((x, y, r), (_, _, s)) in k12.entries().zip(direct.entries()) {
            prop_assert!((r - s).abs() <= 1e-12 * r.max(1.0), "({x}, {y})");
        }
    }

    #[test]
    fn paths_are_reproducible(k in kernel_strategy(), seed in any::<u64>(), stream in 0u64..1000) {
        let stop = StopRule::horizon(5.0);
        let p = sample_path_stream(&k, 0, &stop, seed, stream).unwrap();
        let q = sample_path_stream(&k, 0, &stop, seed, stream).unwrap();
        prop_assert_eq!(&p, &q);
        prop_assert!(p.jump_times.windows(2).all(|w| w[0] < w[1]));
        prop_assert!((0..p.n_jumps()).all(|i| p.from_state(i) != p.states[i] && k.rate(p.from_state(i), p.states[i]) > 0.0));
    }

    #[test]
    fn model_round_trip(k in kernel_strategy()) {
        let n = k.n_states();
        let (a, b) = end_sets(n);
        let m = Model::new(k, a, b);
        let back = parse_model(&emit_model(&m)).unwrap();
        for ((_, _, r), (_, _, s)) in m.kernel.entries().zip(back.kernel.entries()) {
            prop_assert_eq!(r.to_bits(), s.to_bits());
        }
        prop_assert_eq!(back, m);
    }
}

#[test]
fn set_stopped_paths_end_on_first_entry() {
    for (i, k) in random_kernels(20, 9).iter().enumerate() {
        let (a, b) = end_sets(k.n_states());
        let stop = StopRule::sets(a.clone(), b.clone());
        for s in 0..50 {
            let p = sample_path_stream(k, 1, &stop, i as u64, s).unwrap();
            let last = p.final_state();
            assert!(a.contains(last) || b.contains(last));
            assert!(p.states[..p.n_jumps() - 1]
                .iter()
                .all(|&x| !a.contains(x) && !b.contains(x)));
        }
    }
}
