//! Dense linear algebra on [`Tensor`] matrices.
//!
//! The SVD is a one-sided (Hestenes) Jacobi iteration. It is slower than
//! Golub-Kahan for large matrices but every matrix this crate decomposes is
//! small, and the relative convergence test gives orthonormal singular
//! vectors for singular values down to rounding level; values below
//! `ε·m·σ_max` are reported as exact zeros.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const JACOBI_EPS: f64 = 1e-15;
const MAX_SWEEPS: usize = 80;

/// Thin SVD `A = U · diag(S) · Vᵀ` with `r = min(m, n)` columns in `U` and `V`.
#[derive(Clone, Debug)]
pub struct SvdResult {
    pub u: Tensor,
    pub s: Vec<f64>,
    pub v: Tensor,
}

impl SvdResult {
    pub fn rank_cutoff(&self, rtol: f64) -> usize {
        let smax = self.s.first().copied().unwrap_or(0.0);
        self.s.iter().filter(|&&s| s > rtol * smax).count()
    }

    /// `U_k · diag(S_k) · V_kᵀ`.
    pub fn reconstruct(&self, k: usize) -> Tensor {
        let uk = self.u.columns(0..k).scale_columns(&self.s[..k]);
        let vk = self.v.columns(0..k);
        uk.matmul(&vk.transpose()).expect("svd factors conform")
    }

    /// Frobenius norm of the discarded tail `sqrt(Σ_{i>k} S_i²)`.
    pub fn tail_norm(&self, k: usize) -> f64 {
        self.s[k..].iter().map(|s| s * s).sum::<f64>().sqrt()
    }
}

pub fn svd(a: &Tensor) -> Result<SvdResult> {
    let (m, n) = a.ensure_matrix("svd input")?;
    a.ensure_finite("svd input")?;
    if m >= n {
        let (u, s, v) = jacobi_tall(a);
        Ok(canonical_signs(u, s, v))
    } else {
        let (v, s, u) = jacobi_tall(&a.transpose());
        Ok(canonical_signs(u, s, v))
    }
}

/// Thin SVD of `outer · inner` through the shared width `k`. When `k` is
/// below both outer dimensions only `k` singular triplets exist, and they are
/// found from two `k`-column decompositions instead of the full product.
pub fn svd_of_product(outer: &Tensor, inner: &Tensor) -> Result<SvdResult> {
    let (m, k) = outer.ensure_matrix("outer factor")?;
    let (_, n) = inner.ensure_matrix("inner factor")?;
    if k >= m.min(n) {
        return svd(&outer.matmul(inner)?);
    }
    let b = svd(outer)?;
    let core = b.v.transpose().scale_rows(&b.s).matmul(inner)?;
    let c = svd(&core)?;
    Ok(SvdResult {
        u: b.u.matmul(&c.u)?,
        s: c.s,
        v: c.v,
    })
}

/// One-sided Jacobi for `m >= n`. Returns `(U m×n, S, V n×n)` sorted by
/// decreasing singular value.
fn jacobi_tall(a: &Tensor) -> (Tensor, Vec<f64>, Tensor) {
    let (m, n) = (a.rows(), a.cols());
    // column-major working copies
    let mut cols: Vec<Vec<f64>> = (0..n).map(|j| a.column(j)).collect();
    let mut vcols: Vec<Vec<f64>> = (0..n)
        .map(|j| {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            e
        })
        .collect();

    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let (alpha, beta, gamma) = {
                    let (cp, cq) = (&cols[p], &cols[q]);
                    let mut al = 0.0;
                    let mut be = 0.0;
                    let mut ga = 0.0;
                    for i in 0..m {
                        al += cp[i] * cp[i];
                        be += cq[i] * cq[i];
                        ga += cp[i] * cq[i];
                    }
                    (al, be, ga)
                };
                if gamma == 0.0 || gamma.abs() <= JACOBI_EPS * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut cols, p, q, c, s);
                rotate(&mut vcols, p, q, c, s);
            }
        }
        if !rotated {
            break;
        }
    }

    let norms: Vec<f64> = cols
        .iter()
        .map(|c| c.iter().map(|x| x * x).sum::<f64>().sqrt())
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    // stable: equal values keep their column order
    order.sort_by(|&i, &j| norms[j].partial_cmp(&norms[i]).unwrap());

    let smax = norms.iter().copied().fold(0.0, f64::max);
    // below rounding level a column's direction is noise, not a singular vector
    let null = smax * f64::EPSILON * m as f64;
    let mut u_cols: Vec<Option<Vec<f64>>> = Vec::with_capacity(n);
    let mut s = Vec::with_capacity(n);
    let mut v = Tensor::zeros(&[n, n]);
    for (k, &j) in order.iter().enumerate() {
        let sigma = norms[j];
        if sigma > null && sigma > 0.0 {
            u_cols.push(Some(cols[j].iter().map(|x| x / sigma).collect()));
            s.push(sigma);
        } else {
            u_cols.push(None);
            s.push(0.0);
        }
        for i in 0..n {
            v.set(i, k, vcols[j][i]);
        }
    }
    let u_cols = complete_basis(m, u_cols);
    let mut u = Tensor::zeros(&[m, n]);
    for (k, col) in u_cols.iter().enumerate() {
        for i in 0..m {
            u.set(i, k, col[i]);
        }
    }
    (u, s, v)
}

fn rotate(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (lo, hi) = cols.split_at_mut(q);
    let (cp, cq) = (&mut lo[p], &mut hi[0]);
    for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
        let (a, b) = (*x, *y);
        *x = c * a - s * b;
        *y = s * a + c * b;
    }
}

/// Fills `None` slots with unit vectors orthogonal to every other column.
fn complete_basis(m: usize, cols: Vec<Option<Vec<f64>>>) -> Vec<Vec<f64>> {
    let mut done: Vec<Vec<f64>> = cols.iter().flatten().cloned().collect();
    let mut candidate = 0usize;
    let mut out = Vec::with_capacity(cols.len());
    for slot in cols {
        match slot {
            Some(c) => out.push(c),
            None => loop {
                assert!(candidate < m, "cannot complete orthonormal basis");
                let mut e = vec![0.0; m];
                e[candidate] = 1.0;
                candidate += 1;
                // two passes of Gram-Schmidt
                for _ in 0..2 {
                    for d in &done {
                        let proj: f64 = d.iter().zip(&e).map(|(a, b)| a * b).sum();
                        for (x, y) in e.iter_mut().zip(d) {
                            *x -= proj * y;
                        }
                    }
                }
                let norm = e.iter().map(|x| x * x).sum::<f64>().sqrt();
                if norm > 1e-8 {
                    e.iter_mut().for_each(|x| *x /= norm);
                    done.push(e.clone());
                    out.push(e);
                    break;
                }
            },
        }
    }
    out
}

/// Flips column pairs so the largest-magnitude entry of each `U` column is
/// positive (first such row wins ties).
fn canonical_signs(u: Tensor, s: Vec<f64>, v: Tensor) -> SvdResult {
    let r = s.len();
    let mut u = u.columns(0..r);
    let mut v = v.columns(0..r);
    for k in 0..r {
        let mut best = 0usize;
        let mut best_abs = -1.0;
        for i in 0..u.rows() {
            let a = u.at(i, k).abs();
            if a > best_abs {
                best_abs = a;
                best = i;
            }
        }
        if u.at(best, k) < 0.0 {
            for i in 0..u.rows() {
                u.set(i, k, -u.at(i, k));
            }
            for i in 0..v.rows() {
                v.set(i, k, -v.at(i, k));
            }
        }
    }
    SvdResult { u, s, v }
}

/// Relative cutoff used by [`pinv`]: `1e-12 · max(m, n)`.
pub fn pinv_rtol(m: usize, n: usize) -> f64 {
    1e-12 * m.max(n) as f64
}

/// Moore-Penrose pseudoinverse.
pub fn pinv(a: &Tensor) -> Result<Tensor> {
    let (m, n) = a.ensure_matrix("pinv input")?;
    let dec = svd(a)?;
    let cutoff = pinv_rtol(m, n) * dec.s.first().copied().unwrap_or(0.0);
    let inv: Vec<f64> = dec
        .s
        .iter()
        .map(|&s| if s > cutoff && s > 0.0 { 1.0 / s } else { 0.0 })
        .collect();
    dec.v.scale_columns(&inv).matmul(&dec.u.transpose())
}

/// Best rank-`k` approximation in Frobenius norm.
pub fn truncated_approx(a: &Tensor, k: usize) -> Result<Tensor> {
    let (m, n) = a.ensure_matrix("truncated_approx input")?;
    if k == 0 || k > m.min(n) {
        return Err(Error::arg(format!(
            "rank {k} outside 1..={} for a {m}x{n} matrix",
            m.min(n)
        )));
    }
    Ok(svd(a)?.reconstruct(k))
}

/// Solves `M x = b` for a 2×2 system by Cramer's rule.
pub fn solve_2x2(m: &Tensor, b: &[f64]) -> Result<[f64; 2]> {
    if m.shape() != [2, 2] || b.len() != 2 {
        return Err(Error::shape(format!(
            "solve_2x2 expects 2x2 and length-2 inputs, got {:?} and {}",
            m.shape(),
            b.len()
        )));
    }
    solve_2x2_raw([[m.at(0, 0), m.at(0, 1)], [m.at(1, 0), m.at(1, 1)]], [b[0], b[1]])
}

pub(crate) fn solve_2x2_raw(m: [[f64; 2]; 2], b: [f64; 2]) -> Result<[f64; 2]> {
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    let norm2 = m.iter().flatten().map(|v| v * v).sum::<f64>();
    if !(det.abs() > 1e-14 * norm2) {
        return Err(Error::Singular { det });
    }
    Ok([
        (b[0] * m[1][1] - m[0][1] * b[1]) / det,
        (m[0][0] * b[1] - b[0] * m[1][0]) / det,
    ])
}

/// Gaussian elimination with partial pivoting for a square system.
pub fn solve_linear(m: &Tensor, b: &[f64]) -> Result<Vec<f64>> {
    let (r, c) = m.ensure_matrix("system matrix")?;
    if r != c || b.len() != r {
        return Err(Error::shape(format!(
            "solve_linear expects square system, got {r}x{c} with rhs {}",
            b.len()
        )));
    }
    let n = r;
    let mut a = m.data().to_vec();
    let mut x = b.to_vec();
    let scale = m.max_abs().max(f64::MIN_POSITIVE);
    for k in 0..n {
        let piv = (k..n)
            .max_by(|&i, &j| a[i * n + k].abs().partial_cmp(&a[j * n + k].abs()).unwrap())
            .unwrap();
        if a[piv * n + k].abs() <= 1e-13 * scale {
            return Err(Error::Singular { det: a[piv * n + k] });
        }
        if piv != k {
            for j in 0..n {
                a.swap(k * n + j, piv * n + j);
            }
            x.swap(k, piv);
        }
        for i in k + 1..n {
            let f = a[i * n + k] / a[k * n + k];
            if f == 0.0 {
                continue;
            }
            for j in k..n {
                a[i * n + j] -= f * a[k * n + j];
            }
            x[i] -= f * x[k];
        }
    }
    for k in (0..n).rev() {
        let mut acc = x[k];
        for j in k + 1..n {
            acc -= a[k * n + j] * x[j];
        }
        x[k] = acc / a[k * n + k];
    }
    Ok(x)
}
