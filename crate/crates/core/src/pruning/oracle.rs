//! Exhaustive active-set oracle for the inclusion-probability problem.
//!
//! Independent of the closed-form path: it does not sort, does not assume
//! the clamp set is a prefix, and solves each equality-constrained least
//! squares problem through its full KKT system with a general dense solver.

use super::solver::{prepare_importances, InclusionSolution, BOX_TOL};
use crate::error::{Error, Result};
use crate::linalg::solve_linear;
use crate::tensor::Tensor;

pub const ORACLE_MAX_N: usize = 16;

/// Enumerates every set `S` of indices fixed at one with `|S| ≤ n`, solves
/// for `c` and the free probabilities under `Σ p = n`, and returns the
/// feasible solution with the smallest objective.
pub fn oracle_active_set(q: &[f64], n: usize) -> Result<InclusionSolution> {
    if q.len() > ORACLE_MAX_N {
        return Err(Error::arg(format!(
            "oracle enumerates 2^N subsets; N = {} exceeds {ORACLE_MAX_N}",
            q.len()
        )));
    }
    let q = prepare_importances(q, n)?;
    let big_n = q.len();
    let sum_sq: f64 = q.iter().map(|v| v * v).sum();

    let mut best: Option<InclusionSolution> = None;
    for mask in 0u32..(1u32 << big_n) {
        let ones = mask.count_ones() as usize;
        if ones > n {
            continue;
        }
        let free: Vec<usize> = (0..big_n).filter(|i| mask & (1 << i) == 0).collect();
        let f = free.len();
        // unknowns: [c, p_free..., μ]
        let dim = f + 2;
        let mut m = Tensor::zeros(&[dim, dim]);
        let mut rhs = vec![0.0; dim];
        // ∂/∂c:  c·Σq² − Σ_free q_i p_i = Σ_S q_i
        m.set(0, 0, sum_sq);
        for (k, &i) in free.iter().enumerate() {
            m.set(0, 1 + k, -q[i]);
        }
        rhs[0] = (0..big_n).filter(|i| mask & (1 << i) != 0).map(|i| q[i]).sum();
        // ∂/∂p_i:  2 p_i − 2 c q_i + μ = 0
        for (k, &i) in free.iter().enumerate() {
            m.set(1 + k, 0, -2.0 * q[i]);
            m.set(1 + k, 1 + k, 2.0);
            m.set(1 + k, dim - 1, 1.0);
        }
        // Σ_free p_i = n − |S|
        for k in 0..f {
            m.set(dim - 1, 1 + k, 1.0);
        }
        rhs[dim - 1] = (n - ones) as f64;

        let Ok(x) = solve_linear(&m, &rhs) else {
            continue;
        };
        let c = x[0];
        if c < 0.0 {
            continue;
        }
        let mut p = vec![1.0; big_n];
        let mut feasible = true;
        for (k, &i) in free.iter().enumerate() {
            let v = x[1 + k];
            if !(-BOX_TOL..=1.0 + BOX_TOL).contains(&v) {
                feasible = false;
                break;
            }
            p[i] = v.clamp(0.0, 1.0);
        }
        if !feasible {
            continue;
        }
        let objective: f64 = p.iter().zip(&q).map(|(p, q)| (p - c * q).powi(2)).sum();
        if best.as_ref().is_none_or(|b| objective < b.objective) {
            best = Some(InclusionSolution {
                p,
                c,
                t: ones + 1,
                objective,
                duals: None,
            });
        }
    }
    best.ok_or_else(|| Error::Contract("no feasible active set found".into()))
}
