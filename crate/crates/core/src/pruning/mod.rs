//! Learned temporal-block pruning.
//!
//! Each temporal block `i` carries an importance `q_i ∈ (0, 1)`. During
//! training the importances are turned into inclusion probabilities `p` by
//!
//! ```text
//! min_{c, p}  Σ (p_i − c·q_i)²   s.t.  Σ p_i = n,  0 ≤ p_i ≤ 1,  c ≥ 0
//! ```
//!
//! ([`solve_inclusion`]), a fixed-size subset of `n` blocks is drawn with
//! those first-order inclusion probabilities ([`sample_fixed_size`]), and the
//! zero-one draw gates each block through a straight-through estimator
//! ([`gates`]). At inference the top-`n` blocks by importance are kept
//! ([`select_top_n`]).

pub mod gates;
mod oracle;
mod sampling;
mod solver;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{logit, sigmoid};

pub use gates::{gate_forward, gate_grad, l1_gate_loss};
pub use oracle::{oracle_active_set, ORACLE_MAX_N};
pub use sampling::{sample_fixed_size, sample_fixed_size_with, GateSample, Sampler};
pub use solver::{solve_inclusion, solver_jacobian, ste_jacobian, Duals, InclusionSolution};

pub const DEFAULT_TEMPERATURE: f64 = 0.1;

/// Pruning rates of the budget presets.
pub const PRUNING_RATE_PRESETS: [f64; 3] = [0.7, 0.8, 0.9];

/// Smallest importance the solver accepts; lower values are raised to it.
pub const MIN_IMPORTANCE: f64 = 1e-9;

/// Blocks kept at pruning rate `rate`: `round((1 − rate)·N)`.
pub fn budget_for_rate(rate: f64, total: usize) -> Result<usize> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(Error::arg(format!("pruning rate {rate} outside [0, 1]")));
    }
    Ok(((1.0 - rate) * total as f64).round() as usize)
}

/// Importance logits; `q_i = sigmoid(θ_i / temperature)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImportanceVector {
    pub theta: Vec<f64>,
    pub temperature: f64,
}

impl ImportanceVector {
    pub fn new(theta: Vec<f64>, temperature: f64) -> Result<Self> {
        if theta.len() < 2 {
            return Err(Error::arg(format!(
                "need at least two importance values, got {}",
                theta.len()
            )));
        }
        if !(temperature > 0.0) {
            return Err(Error::arg(format!("temperature {temperature} must be positive")));
        }
        if theta.iter().any(|t| !t.is_finite()) {
            return Err(Error::domain("non-finite importance logit"));
        }
        Ok(ImportanceVector { theta, temperature })
    }

    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }

    pub fn q(&self) -> Vec<f64> {
        self.theta.iter().map(|t| sigmoid(t / self.temperature)).collect()
    }
}

/// Temporal mix weights `α_i ∈ (0, 1)`, stored through their logits.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TemporalMixWeights {
    pub logits: Vec<f64>,
    pub temperature: f64,
}

impl TemporalMixWeights {
    pub fn from_alpha(alpha: &[f64]) -> Result<Self> {
        check_open_unit(alpha, "mix weight")?;
        Ok(TemporalMixWeights {
            logits: alpha.iter().map(|&a| DEFAULT_TEMPERATURE * logit(a)).collect(),
            temperature: DEFAULT_TEMPERATURE,
        })
    }

    pub fn alpha(&self) -> Vec<f64> {
        self.logits.iter().map(|l| sigmoid(l / self.temperature)).collect()
    }
}

fn check_open_unit(values: &[f64], what: &str) -> Result<()> {
    match values.iter().find(|&&a| !(a > 0.0 && a < 1.0)) {
        Some(a) => Err(Error::domain(format!("{what} {a} outside (0, 1)"))),
        None => Ok(()),
    }
}

/// Importance initialised from the block's mix weight: `q_i = 1 − α_i`.
pub fn importance_from_alpha(alpha: &[f64]) -> Result<ImportanceVector> {
    check_open_unit(alpha, "mix weight")?;
    let theta = alpha.iter().map(|&a| DEFAULT_TEMPERATURE * logit(1.0 - a)).collect();
    ImportanceVector::new(theta, DEFAULT_TEMPERATURE)
}

/// Stable descending order of `q`; ties keep the lower index first.
pub(crate) fn descending_order(q: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..q.len()).collect();
    order.sort_by(|&i, &j| q[j].partial_cmp(&q[i]).expect("finite importances"));
    order
}

/// Indices of the `n` largest importances, ascending. Ties favour the lower
/// index.
pub fn select_top_n(q: &[f64], n: usize) -> Result<Vec<usize>> {
    if n > q.len() {
        return Err(Error::arg(format!("budget {n} exceeds {} blocks", q.len())));
    }
    if q.iter().any(|v| v.is_nan()) {
        return Err(Error::domain("NaN importance"));
    }
    let mut keep: Vec<usize> = descending_order(q).into_iter().take(n).collect();
    keep.sort_unstable();
    Ok(keep)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn top_n_examples() {
        assert_eq!(select_top_n(&[0.2, 0.9, 0.5], 2).unwrap(), vec![1, 2]);
        assert_eq!(select_top_n(&[0.3; 4], 2).unwrap(), vec![0, 1]);
        assert_eq!(select_top_n(&[0.3; 4], 0).unwrap(), Vec::<usize>::new());
        assert!(select_top_n(&[0.3; 4], 5).is_err());
    }

    #[test]
    fn importance_from_alpha_examples() {
        let iv = importance_from_alpha(&[0.5, 0.9]).unwrap();
        assert_eq!(iv.theta[0], 0.0);
        let q = iv.q();
        assert_eq!(q[0], 0.5);
        assert!((q[1] - 0.1).abs() < 1e-12);
        assert!(importance_from_alpha(&[0.0, 0.5]).is_err());
        assert!(importance_from_alpha(&[1.0, 0.5]).is_err());
    }

    #[test]
    fn mix_weights_round_trip() {
        let w = TemporalMixWeights::from_alpha(&[0.25, 0.5, 0.75]).unwrap();
        for (a, b) in w.alpha().iter().zip([0.25, 0.5, 0.75]) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn importance_vector_validation() {
        assert!(ImportanceVector::new(vec![0.0], 0.1).is_err());
        assert!(ImportanceVector::new(vec![0.0, 1.0], 0.0).is_err());
        let iv = ImportanceVector::new(vec![-50.0, 50.0], 0.1).unwrap();
        let q = iv.q();
        assert!(q[0] > 0.0 && q[1] <= 1.0);
    }

    #[test]
    fn rate_presets() {
        assert_eq!(budget_for_rate(0.7, 18).unwrap(), 5);
        assert_eq!(budget_for_rate(0.8, 18).unwrap(), 4);
        assert_eq!(budget_for_rate(0.9, 18).unwrap(), 2);
        assert_eq!(budget_for_rate(0.7, 10).unwrap(), 3);
        assert!(budget_for_rate(1.2, 10).is_err());
    }
}
