//! Closed-form importance → inclusion-probability solver.
//!
//! With importances sorted descending, every optimum clamps a prefix of
//! `t − 1` probabilities to one and sets the rest to `c·q_i − β/2`, where
//! `(c, β/2)` solve
//!
//! ```text
//! [ Σ_{i≥t} q_i     −(N − t + 1) ] [ c   ]   [ n − t + 1  ]
//! [ Σ_{i<t} q_i²     Σ_{i≥t} q_i ] [ β/2 ] = [ Σ_{i<t} q_i ]
//! ```
//!
//! `t = 1` is the exactly proportional solution `p = n·q/Σq`. The solver
//! evaluates `t = 1..=n`, keeps the feasible candidates and returns the one
//! with the smallest objective. The 0/1 vertex (`t = n + 1`, top `n` at one)
//! is always feasible and is the fallback.

use log::warn;
use serde::{Deserialize, Serialize};

use super::{descending_order, MIN_IMPORTANCE};
use crate::error::{Error, Result};
use crate::linalg::solve_2x2_raw;
use crate::tensor::Tensor;

/// Tolerance on the box constraints `0 ≤ p_i ≤ 1`.
pub const BOX_TOL: f64 = 1e-12;
/// Distance from a constraint below which the Jacobian is refused.
pub const DEGENERACY_TOL: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Duals {
    /// Multiplier of `Σ p = n`.
    pub beta: f64,
    /// Multipliers of `p_i ≤ 1`, original index order. Zero off the clamp set.
    pub delta: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InclusionSolution {
    pub p: Vec<f64>,
    pub c: f64,
    /// One plus the number of probabilities clamped to one.
    pub t: usize,
    pub objective: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub duals: Option<Duals>,
}

impl InclusionSolution {
    /// Proportional branch: nothing clamped.
    pub fn is_proportional(&self) -> bool {
        self.t == 1
    }
}

/// Validated, clamped importances.
pub(crate) fn prepare_importances(q: &[f64], n: usize) -> Result<Vec<f64>> {
    let big_n = q.len();
    if big_n < 2 {
        return Err(Error::arg(format!("need at least two importances, got {big_n}")));
    }
    if n == 0 || n >= big_n {
        return Err(Error::arg(format!("budget {n} outside 1..{big_n}")));
    }
    if let Some(v) = q.iter().find(|v| !v.is_finite()) {
        return Err(Error::domain(format!("importance {v} is not finite")));
    }
    let clamped = q.iter().filter(|&&v| v < MIN_IMPORTANCE).count();
    if clamped > 0 {
        warn!("{clamped} importance value(s) below {MIN_IMPORTANCE:e} raised to the floor");
    }
    Ok(q.iter().map(|&v| v.max(MIN_IMPORTANCE)).collect())
}

struct Candidate {
    t: usize,
    c: f64,
    half_beta: f64,
    /// Sorted order.
    p: Vec<f64>,
    objective: f64,
}

/// `(c, β/2)` for clamp index `t` over sorted importances.
fn branch_coefficients(qs: &[f64], n: usize, t: usize) -> Result<(f64, f64)> {
    let big_n = qs.len();
    let (head, tail) = qs.split_at(t - 1);
    let tail_sum: f64 = tail.iter().sum();
    if t == 1 {
        return Ok((n as f64 / tail_sum, 0.0));
    }
    let head_sum: f64 = head.iter().sum();
    let head_sq: f64 = head.iter().map(|v| v * v).sum();
    let [c, hb] = solve_2x2_raw(
        [[tail_sum, -((big_n - t + 1) as f64)], [head_sq, tail_sum]],
        [(n - t + 1) as f64, head_sum],
    )?;
    Ok((c, hb))
}

fn objective(p: &[f64], q: &[f64], c: f64) -> f64 {
    p.iter().zip(q).map(|(p, q)| (p - c * q).powi(2)).sum()
}

fn branch(qs: &[f64], n: usize, t: usize) -> Option<Candidate> {
    let (c, half_beta) = branch_coefficients(qs, n, t).ok()?;
    if !(c >= 0.0) {
        return None;
    }
    let mut p = vec![1.0; qs.len()];
    for i in t - 1..qs.len() {
        let v = c * qs[i] - half_beta;
        if !(-BOX_TOL..=1.0 + BOX_TOL).contains(&v) {
            return None;
        }
        p[i] = v;
    }
    let objective = objective(&p, qs, c);
    Some(Candidate {
        t,
        c,
        half_beta,
        p,
        objective,
    })
}

fn fallback(qs: &[f64], n: usize) -> Candidate {
    let mut p = vec![0.0; qs.len()];
    p[..n].fill(1.0);
    let c = qs[..n].iter().sum::<f64>() / qs.iter().map(|v| v * v).sum::<f64>();
    let objective = objective(&p, qs, c);
    Candidate {
        t: n + 1,
        c,
        half_beta: 0.0,
        p,
        objective,
    }
}

fn solve_sorted(q: &[f64], n: usize) -> Result<(Vec<usize>, f64, Candidate)> {
    let q = prepare_importances(q, n)?;
    let order = descending_order(&q);
    // work on q / max(q): exact for symmetric inputs, c rescales back below
    let scale = q[order[0]];
    let qs: Vec<f64> = order.iter().map(|&i| q[i] / scale).collect();

    let mut best = fallback(&qs, n);
    for t in (1..=n).rev() {
        if let Some(cand) = branch(&qs, n, t) {
            if cand.objective <= best.objective {
                best = cand;
            }
        }
    }
    Ok((order, scale, best))
}

pub fn solve_inclusion(q: &[f64], n: usize) -> Result<InclusionSolution> {
    let (order, scale, best) = solve_sorted(q, n)?;
    let big_n = order.len();
    let mut p = vec![0.0; big_n];
    let mut delta = vec![0.0; big_n];
    for (rank, &i) in order.iter().enumerate() {
        p[i] = best.p[rank].clamp(0.0, 1.0);
        if rank + 1 < best.t {
            // from ∂L/∂p_i = 2(p_i − c q_i) + β + δ_i = 0 at p_i = 1
            let qi = q[i].max(MIN_IMPORTANCE) / scale;
            delta[i] = 2.0 * (best.c * qi - best.half_beta - 1.0);
        }
    }
    Ok(InclusionSolution {
        p,
        c: best.c / scale,
        t: best.t,
        objective: best.objective,
        duals: Some(Duals {
            beta: 2.0 * best.half_beta,
            delta,
        }),
    })
}

/// Derivatives of `(c, β/2)` with respect to `q_j` for the branch clamping
/// `head`, by implicit differentiation of the 2×2 system.
struct BranchSensitivity {
    /// `dc/dq_j`, original order.
    dc: Vec<f64>,
    /// `d(β/2)/dq_j`, original order.
    dhb: Vec<f64>,
    c: f64,
    clamped: Vec<bool>,
}

fn sensitivity(q: &[f64], n: usize) -> Result<BranchSensitivity> {
    let (order, scale, best) = solve_sorted(q, n)?;
    let big_n = q.len();
    if best.t == n + 1 {
        return Err(Error::Degenerate(
            "optimum is the 0/1 vertex; probabilities are locally constant or non-smooth".into(),
        ));
    }
    let q: Vec<f64> = q.iter().map(|&v| v.max(MIN_IMPORTANCE)).collect();
    let t = best.t;
    let c = best.c / scale;
    let hb = best.half_beta;

    let mut clamped = vec![false; big_n];
    for &i in &order[..t - 1] {
        clamped[i] = true;
    }
    for (rank, &i) in order.iter().enumerate() {
        let value = c * q[i] - hb;
        if rank + 1 < t {
            if value - 1.0 <= DEGENERACY_TOL {
                return Err(Error::Degenerate(format!(
                    "clamped index {i} sits on the boundary of the clamp set (unclamped value {value})"
                )));
            }
        } else if value <= DEGENERACY_TOL || value >= 1.0 - DEGENERACY_TOL {
            return Err(Error::Degenerate(format!(
                "free index {i} has p = {value}, within {DEGENERACY_TOL:e} of a bound"
            )));
        }
    }

    let tail_sum: f64 = (0..big_n).filter(|&i| !clamped[i]).map(|i| q[i]).sum();
    let head_sq: f64 = (0..big_n).filter(|&i| clamped[i]).map(|i| q[i] * q[i]).sum();
    let m = [[tail_sum, -((big_n - t + 1) as f64)], [head_sq, tail_sum]];
    let mut dc = vec![0.0; big_n];
    let mut dhb = vec![0.0; big_n];
    for j in 0..big_n {
        // M·dx = dr − dM·x
        let rhs = if clamped[j] {
            [0.0, 1.0 - 2.0 * q[j] * c]
        } else {
            [-c, -hb]
        };
        let [a, b] = solve_2x2_raw(m, rhs)?;
        dc[j] = a;
        dhb[j] = b;
    }
    Ok(BranchSensitivity { dc, dhb, c, clamped })
}

fn assemble(q: &[f64], s: &BranchSensitivity, ste_rows: bool) -> Tensor {
    let big_n = q.len();
    let mut jac = Tensor::zeros(&[big_n, big_n]);
    for i in 0..big_n {
        if s.clamped[i] && !ste_rows {
            continue;
        }
        let qi = q[i].max(MIN_IMPORTANCE);
        for j in 0..big_n {
            let mut d = s.dc[j] * qi - s.dhb[j];
            if i == j {
                d += s.c;
            }
            jac.set(i, j, d);
        }
    }
    jac
}

/// Exact Jacobian `∂p_i/∂q_j` of [`solve_inclusion`] at a non-degenerate
/// point. Rows of clamped indices are zero, since `p_i = 1` is locally
/// constant there.
pub fn solver_jacobian(q: &[f64], n: usize) -> Result<Tensor> {
    let s = sensitivity(q, n)?;
    Ok(assemble(q, &s, false))
}

/// Training-time Jacobian: clamped rows take the gradient of the unclamped
/// expression `c·q_i − β/2` (straight-through for the clamp).
pub fn ste_jacobian(q: &[f64], n: usize) -> Result<Tensor> {
    let s = sensitivity(q, n)?;
    Ok(assemble(q, &s, true))
}
