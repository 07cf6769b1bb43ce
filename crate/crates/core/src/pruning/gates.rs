//! Straight-through gates on temporal-block updates.
//!
//! The gate is `ẑ = p + stop_gradient(z − p)`: its forward value is the
//! sampled `z ∈ {0, 1}` and its gradient with respect to `p` is one. A gated
//! temporal block updates the spatial output `x_s` with its residual `r_t` as
//! `x_s + ẑ·(1 − α)·r_t`.

/// Forward value of the gate: exactly `z`.
pub fn gate_forward(z: bool, _p: f64) -> f64 {
    if z {
        1.0
    } else {
        0.0
    }
}

/// `∂ẑ/∂p`.
pub fn gate_grad() -> f64 {
    1.0
}

/// Differentiable relaxation of the gate around the point `p0` at which
/// `z` was drawn: `p + (z − p0)`, with `z − p0` held constant.
pub fn gate_surrogate(z: bool, p0: f64, p: f64) -> f64 {
    p + (gate_forward(z, p0) - p0)
}

/// `x_s + ẑ·(1 − α)·r_t`, elementwise.
pub fn gated_update(x_s: &[f64], r_t: &[f64], alpha: f64, gate: f64) -> Vec<f64> {
    assert_eq!(x_s.len(), r_t.len());
    let w = gate * (1.0 - alpha);
    x_s.iter().zip(r_t).map(|(x, r)| x + w * r).collect()
}

/// `∂(x_s + ẑ(1 − α) r_t)/∂p = (1 − α)·r_t` through the straight-through gate.
pub fn gated_update_grad_p(r_t: &[f64], alpha: f64) -> Vec<f64> {
    r_t.iter().map(|r| gate_grad() * (1.0 - alpha) * r).collect()
}

/// L1 penalty `λ·Σ(1 − α_i)` on the temporal mix weights.
pub fn l1_gate_loss(alpha: &[f64], lambda: f64) -> f64 {
    lambda * alpha.iter().map(|a| 1.0 - a).sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gate_values() {
        assert_eq!(gate_forward(true, 0.3), 1.0);
        assert_eq!(gate_forward(false, 0.9), 0.0);
        assert_eq!(gate_grad(), 1.0);
    }

    #[test]
    fn surrogate_matches_forward_at_sample_point() {
        for (z, p) in [(true, 0.3), (false, 0.9), (true, 0.999)] {
            assert!((gate_surrogate(z, p, p) - gate_forward(z, p)).abs() < 1e-15);
        }
    }

    #[test]
    fn closed_gate_leaves_spatial_output() {
        let xs = [1.0, -2.0, 3.5];
        assert_eq!(gated_update(&xs, &[9.0, 9.0, 9.0], 0.3, 0.0), xs.to_vec());
    }

    #[test]
    fn l1_examples() {
        assert_eq!(l1_gate_loss(&[0.3, 0.4], 0.0), 0.0);
        assert_eq!(l1_gate_loss(&[1.0, 1.0, 1.0], 3.0), 0.0);
        assert_eq!(l1_gate_loss(&[0.5, 0.25], 2.0), 2.5);
    }
}
