#![allow(clippy::needless_range_loop)]

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vidcompress_core::pruning::{
    oracle_active_set, sample_fixed_size_with, select_top_n, solve_inclusion, solver_jacobian, Sampler,
};
use vidcompress_core::Error;

fn random_instance(rng: &mut ChaCha8Rng, max_n: usize) -> (Vec<f64>, usize) {
    let big_n = rng.random_range(2..=max_n);
    let n = rng.random_range(1..big_n);
    // mix of spread-out and skewed importances so every branch is exercised
    let skew: f64 = rng.random_range(0.5..4.0);
    let q = (0..big_n).map(|_| rng.random_range(0.01f64..1.0).powf(skew)).collect();
    (q, n)
}

#[test]
fn solver_matches_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut clamped_cases = 0;
    for _ in 0..500 {
        let (q, n) = random_instance(&mut rng, 10);
        let s = solve_inclusion(&q, n).unwrap();
        let o = oracle_active_set(&q, n).unwrap();
        assert!(
            (s.objective - o.objective).abs() <= 1e-9,
            "q={q:?} n={n}: solver {} oracle {}",
            s.objective,
            o.objective
        );
        for (a, b) in s.p.iter().zip(&o.p) {
            assert!((a - b).abs() <= 1e-7, "q={q:?} n={n}: {:?} vs {:?}", s.p, o.p);
        }
        if s.t > 1 {
            clamped_cases += 1;
        }
    }
    assert!(clamped_cases > 50, "only {clamped_cases} clamped instances");
}

#[test]
fn oracle_spot_case() {
    let q = [0.99, 0.98, 0.01];
    let s = solve_inclusion(&q, 2).unwrap();
    let o = oracle_active_set(&q, 2).unwrap();
    assert!((s.objective - o.objective).abs() <= 1e-9);
    for (a, b) in s.p.iter().zip(&o.p) {
        assert!((a - b).abs() <= 1e-9);
    }
}

#[test]
fn clamped_example_matches_enumeration() {
    let q = [0.9, 0.8, 0.05];
    let s = solve_inclusion(&q, 2).unwrap();
    let o = oracle_active_set(&q, 2).unwrap();
    assert_eq!(s.t, 2);
    assert_eq!(o.t, 2);
    for (a, b) in s.p.iter().zip(&o.p) {
        assert!((a - b).abs() <= 1e-9);
    }
}

#[test]
fn proportional_example_matches_oracle() {
    let s = solve_inclusion(&[1.0, 0.1, 0.1], 1).unwrap();
    let o = oracle_active_set(&[1.0, 0.1, 0.1], 1).unwrap();
    assert!((s.objective - o.objective).abs() < 1e-12);
    assert!((o.c - 5.0 / 6.0).abs() < 1e-12);
}

fn central_difference(q: &[f64], n: usize, h: f64) -> Vec<Vec<f64>> {
    let big_n = q.len();
    let mut jac = vec![vec![0.0; big_n]; big_n];
    for j in 0..big_n {
        let mut up = q.to_vec();
        let mut dn = q.to_vec();
        up[j] += h;
        dn[j] -= h;
        let pu = solve_inclusion(&up, n).unwrap().p;
        let pd = solve_inclusion(&dn, n).unwrap().p;
        for i in 0..big_n {
            jac[i][j] = (pu[i] - pd[i]) / (2.0 * h);
        }
    }
    jac
}

#[test]
fn jacobian_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut checked = 0;
    while checked < 100 {
        let (q, n) = random_instance(&mut rng, 8);
        let jac = match solver_jacobian(&q, n) {
            Ok(j) => j,
            Err(Error::Degenerate(_)) => continue,
            Err(e) => panic!("{e}"),
        };
        let fd = central_difference(&q, n, 1e-6);
        for i in 0..q.len() {
            for j in 0..q.len() {
                assert!(
                    (jac.at(i, j) - fd[i][j]).abs() <= 1e-5,
                    "q={q:?} n={n} ({i},{j}): {} vs {}",
                    jac.at(i, j),
                    fd[i][j]
                );
            }
        }
        for j in 0..q.len() {
            let s: f64 = (0..q.len()).map(|i| jac.at(i, j)).sum();
            assert!(s.abs() <= 1e-10);
        }
        checked += 1;
    }
}

#[test]
fn systematic_and_brewer_agree_in_frequency() {
    let p = [0.8, 0.7, 0.3, 0.2];
    let draws = 40_000;
    for sampler in [Sampler::Brewer, Sampler::SystematicPps] {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut counts = [0usize; 4];
        for _ in 0..draws {
            let s = sample_fixed_size_with(sampler, &p, 2, &mut rng).unwrap();
            for i in s.selected() {
                counts[i] += 1;
            }
        }
        for (c, &pi) in counts.iter().zip(&p) {
            let f = *c as f64 / draws as f64;
            let sigma = (pi * (1.0 - pi) / draws as f64).sqrt();
            assert!((f - pi).abs() <= 4.0 * sigma, "{sampler:?}: {f} vs {pi}");
        }
    }
}

#[test]
fn top_n_matches_sort_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..200 {
        let big_n = rng.random_range(1..12);
        let n = rng.random_range(0..=big_n);
        // coarse values to force ties
        let q: Vec<f64> = (0..big_n).map(|_| rng.random_range(0..5) as f64 / 4.0).collect();
        let mut pairs: Vec<(f64, usize)> = q.iter().cloned().zip(0..).collect();
        pairs.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
        let mut expect: Vec<usize> = pairs[..n].iter().map(|p| p.1).collect();
        expect.sort();
        assert_eq!(select_top_n(&q, n).unwrap(), expect);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn solution_is_feasible(q in prop::collection::vec(1e-6f64..1.0, 2..14), frac in 0.0f64..1.0) {
        let n = 1 + ((q.len() - 1) as f64 * frac * 0.999) as usize;
        let s = solve_inclusion(&q, n).unwrap();
        prop_assert!((s.p.iter().sum::<f64>() - n as f64).abs() <= 1e-9);
        prop_assert!(s.p.iter().all(|&p| (-1e-12..=1.0 + 1e-12).contains(&p)));
        prop_assert!(s.c >= 0.0);
        if s.t == 1 {
            let ratio = s.p[0] / q[0];
            for (p, q) in s.p.iter().zip(&q) {
                prop_assert!((p / q - ratio).abs() <= 1e-10 * ratio.max(1.0));
            }
        }
    }

    #[test]
    fn scale_covariance(q in prop::collection::vec(0.01f64..1.0, 2..10), frac in 0.0f64..1.0, s in 0.05f64..20.0) {
        let n = 1 + ((q.len() - 1) as f64 * frac * 0.999) as usize;
        let a = solve_inclusion(&q, n).unwrap();
        let scaled: Vec<f64> = q.iter().map(|v| v * s).collect();
        let b = solve_inclusion(&scaled, n).unwrap();
        prop_assert_eq!(a.t, b.t);
        for (x, y) in a.p.iter().zip(&b.p) {
            prop_assert!((x - y).abs() <= 1e-12);
        }
        prop_assert!((a.c / s - b.c).abs() <= 1e-10 * b.c.max(1.0));
    }

    #[test]
    fn samples_have_fixed_size(q in prop::collection::vec(0.01f64..1.0, 2..12), frac in 0.0f64..1.0, seed: u64) {
        let n = 1 + ((q.len() - 1) as f64 * frac * 0.999) as usize;
        let p = solve_inclusion(&q, n).unwrap().p;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for sampler in [Sampler::Brewer, Sampler::SystematicPps] {
            let s = sample_fixed_size_with(sampler, &p, n, &mut rng).unwrap();
            prop_assert_eq!(s.z.iter().filter(|&&z| z).count(), n);
        }
    }
}
