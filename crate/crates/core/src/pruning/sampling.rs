//! Fixed-size sampling without replacement with prescribed first-order
//! inclusion probabilities.
//!
//! [`Sampler::Brewer`] is Brewer's draw-by-draw procedure: with `a` the summed
//! probabilities of the units drawn so far and `r` the draws remaining, the
//! next unit `k` is picked with probability proportional to
//!
//! ```text
//! π_k (n − a − π_k) / (n − a − r·π_k)
//! ```
//!
//! [`Sampler::SystematicPps`] randomly permutes the units and takes the
//! systematic sample `u, u + 1, …, u + n − 1` over the cumulative
//! probabilities. Both achieve the target inclusion probabilities exactly.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const SUM_TOL: f64 = 1e-9;
const BOX_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampler {
    #[default]
    Brewer,
    SystematicPps,
}

/// A zero-one selection with exactly `n` ones.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GateSample {
    pub z: Vec<bool>,
    pub p: Vec<f64>,
    pub n: usize,
}

impl GateSample {
    pub fn selected(&self) -> Vec<usize> {
        self.z.iter().enumerate().filter_map(|(i, &z)| z.then_some(i)).collect()
    }

    /// Gate values `ẑ_i ∈ {0, 1}` as reals.
    pub fn gates(&self) -> Vec<f64> {
        self.z.iter().map(|&z| if z { 1.0 } else { 0.0 }).collect()
    }

    /// Gradient of each gate with respect to its probability.
    pub fn grad_passthrough(&self) -> Vec<f64> {
        vec![super::gates::gate_grad(); self.z.len()]
    }
}

/// Brewer sample.
pub fn sample_fixed_size<R: Rng + ?Sized>(p: &[f64], n: usize, rng: &mut R) -> Result<GateSample> {
    sample_fixed_size_with(Sampler::Brewer, p, n, rng)
}

pub fn sample_fixed_size_with<R: Rng + ?Sized>(
    sampler: Sampler,
    p: &[f64],
    n: usize,
    rng: &mut R,
) -> Result<GateSample> {
    validate(p, n)?;
    let mut z = vec![false; p.len()];
    // certain and impossible units are settled without randomness
    let mut uncertain = Vec::new();
    let mut remaining = n;
    for (i, &pi) in p.iter().enumerate() {
        if pi >= 1.0 - BOX_TOL {
            z[i] = true;
            remaining -= 1;
        } else if pi > BOX_TOL {
            uncertain.push(i);
        }
    }
    if remaining > uncertain.len() {
        return Err(Error::arg(format!(
            "only {} units can be drawn for the remaining budget {remaining}",
            uncertain.len()
        )));
    }
    if remaining > 0 {
        let picked = match sampler {
            Sampler::Brewer => brewer(p, &uncertain, remaining, rng),
            Sampler::SystematicPps => systematic(p, uncertain, remaining, rng),
        };
        for i in picked {
            z[i] = true;
        }
    }
    debug_assert_eq!(z.iter().filter(|&&b| b).count(), n);
    Ok(GateSample { z, p: p.to_vec(), n })
}

fn validate(p: &[f64], n: usize) -> Result<()> {
    if n > p.len() {
        return Err(Error::arg(format!("budget {n} exceeds {} units", p.len())));
    }
    if let Some(v) = p.iter().find(|&&v| !(-BOX_TOL..=1.0 + BOX_TOL).contains(&v)) {
        return Err(Error::arg(format!("inclusion probability {v} outside [0, 1]")));
    }
    let sum: f64 = p.iter().sum();
    if (sum - n as f64).abs() > SUM_TOL {
        return Err(Error::arg(format!(
            "inclusion probabilities sum to {sum}, expected {n}"
        )));
    }
    Ok(())
}

fn brewer<R: Rng + ?Sized>(p: &[f64], units: &[usize], n: usize, rng: &mut R) -> Vec<usize> {
    let mut left: Vec<usize> = units.to_vec();
    let mut picked = Vec::with_capacity(n);
    let mut drawn_mass = 0.0;
    let mut weights = Vec::with_capacity(left.len());
    for step in 0..n {
        let r = (n - step) as f64;
        let rest = n as f64 - drawn_mass;
        weights.clear();
        for &k in &left {
            let pk = p[k];
            let w = if n - step == 1 {
                pk
            } else {
                pk * (rest - pk) / (rest - r * pk)
            };
            weights.push(if w.is_finite() { w.max(0.0) } else { 0.0 });
        }
        let total: f64 = weights.iter().sum();
        let pos = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = weights.len() - 1;
            for (idx, &w) in weights.iter().enumerate() {
                acc += w;
                if target < acc {
                    chosen = idx;
                    break;
                }
            }
            chosen
        } else {
            // only reachable through rounding at the last draws
            rng.random_range(0..left.len())
        };
        let k = left.swap_remove(pos);
        drawn_mass += p[k];
        picked.push(k);
    }
    picked
}

fn systematic<R: Rng + ?Sized>(p: &[f64], mut units: Vec<usize>, n: usize, rng: &mut R) -> Vec<usize> {
    units.shuffle(rng);
    let total: f64 = units.iter().map(|&k| p[k]).sum();
    // rescale so the cumulative total is exactly n
    let scale = n as f64 / total;
    let u: f64 = rng.random();
    let mut picked = Vec::with_capacity(n);
    let mut cum = 0.0;
    let mut next = u;
    for (idx, &k) in units.iter().enumerate() {
        let upper = if idx + 1 == units.len() {
            n as f64
        } else {
            cum + p[k] * scale
        };
        if next < upper {
            picked.push(k);
            next += 1.0;
        }
        cum = upper;
    }
    picked.truncate(n);
    picked
}
