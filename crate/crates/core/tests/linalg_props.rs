use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vidcompress_core::linalg::{pinv, svd, truncated_approx};
use vidcompress_core::Tensor;

fn to_na(t: &Tensor) -> DMatrix<f64> {
    DMatrix::from_row_slice(t.rows(), t.cols(), t.data())
}

fn matrix_strategy() -> impl Strategy<Value = Tensor> {
    (1usize..9, 1usize..9).prop_flat_map(|(m, n)| {
        prop::collection::vec(-3.0f64..3.0, m * n).prop_map(move |d| Tensor::new(vec![m, n], d).unwrap())
    })
}

fn orthonormal_columns(t: &Tensor, tol: f64) -> bool {
    let g = t.transpose().matmul(t).unwrap();
    g.max_abs_diff(&Tensor::eye(t.cols())) <= tol
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn svd_reconstructs_and_matches_reference(a in matrix_strategy()) {
        let dec = svd(&a).unwrap();
        let r = a.rows().min(a.cols());
        prop_assert_eq!(dec.s.len(), r);
        prop_assert!(dec.reconstruct(r).max_abs_diff(&a) <= 1e-10 * a.max_abs().max(1.0));
        prop_assert!(orthonormal_columns(&dec.u, 1e-10));
        prop_assert!(orthonormal_columns(&dec.v, 1e-10));
        prop_assert!(dec.s.windows(2).all(|w| w[0] >= w[1]));

        let mut reference = to_na(&a).singular_values().as_slice().to_vec();
        reference.sort_by(|x, y| y.partial_cmp(x).unwrap());
        for (s, e) in dec.s.iter().zip(&reference) {
            prop_assert!((s - e).abs() <= 1e-10 * reference[0].max(1.0));
        }
    }

    #[test]
    fn pinv_satisfies_penrose_conditions(a in matrix_strategy()) {
        let p = pinv(&a).unwrap();
        let tol = 1e-8 * a.max_abs().max(1.0);
        let apa = a.matmul(&p).unwrap().matmul(&a).unwrap();
        prop_assert!(apa.max_abs_diff(&a) <= tol);
        let pap = p.matmul(&a).unwrap().matmul(&p).unwrap();
        prop_assert!(pap.max_abs_diff(&p) <= 1e-8 * p.max_abs().max(1.0));
        let ap = a.matmul(&p).unwrap();
        prop_assert!(ap.max_abs_diff(&ap.transpose()) <= tol);
        let pa = p.matmul(&a).unwrap();
        prop_assert!(pa.max_abs_diff(&pa.transpose()) <= tol);
    }
}

#[test]
fn pinv_matches_reference_on_full_rank() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..50 {
        let m = rng.random_range(1..10);
        let n = rng.random_range(1..10);
        let a = Tensor::randn(&[m, n], 1.0, &mut rng);
        let ours = pinv(&a).unwrap();
        let theirs = to_na(&a).pseudo_inverse(1e-12).unwrap();
        let theirs = Tensor::new(vec![n, m], theirs.transpose().as_slice().to_vec()).unwrap();
        assert!(ours.max_abs_diff(&theirs) <= 1e-9, "{m}x{n}");
    }
}

#[test]
fn eckart_young_against_random_rank_k() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for _ in 0..20 {
        let (m, n) = (rng.random_range(3..10), rng.random_range(3..10));
        let k = rng.random_range(1..m.min(n));
        let a = Tensor::randn(&[m, n], 1.0, &mut rng);
        let best = a.sub(&truncated_approx(&a, k).unwrap()).unwrap().frobenius_norm();
        assert!((best - svd(&a).unwrap().tail_norm(k)).abs() <= 1e-10);
        for _ in 0..100 {
            let b = Tensor::randn(&[m, k], 1.0, &mut rng)
                .matmul(&Tensor::randn(&[k, n], 1.0, &mut rng))
                .unwrap();
            assert!(a.sub(&b).unwrap().frobenius_norm() >= best - 1e-12);
        }
    }
}

#[test]
fn rank_deficient_inputs() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let a = Tensor::randn(&[7, 2], 1.0, &mut rng)
        .matmul(&Tensor::randn(&[2, 5], 1.0, &mut rng))
        .unwrap();
    let dec = svd(&a).unwrap();
    assert!(dec.s[2] <= 1e-12 * dec.s[0]);
    assert!(orthonormal_columns(&dec.u, 1e-10));
    assert!(truncated_approx(&a, 2).unwrap().max_abs_diff(&a) <= 1e-12 * 10.0);
}
