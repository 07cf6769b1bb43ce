//! Cross-attention with a single context token.
//!
//! With one key/value token the softmax over the key axis is taken over a
//! single logit and is identically one, so every query position receives the
//! same value: `context·Wv·Wo`. [`optimized_cross_attention`] computes that
//! row once and broadcasts it; the query and key projections are never
//! evaluated.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn;
use crate::tensor::Tensor;

/// Tolerance of [`rewrite_equivalence_check`].
pub const REWRITE_TOL: f64 = 1e-10;

/// Query positions used by [`rewrite_equivalence_check`].
pub const CHECK_QUERY_LEN: usize = 16;

/// Multi-head cross-attention, row-vector convention. Queries come from the
/// `L × c_in` input, keys and values from the `m × c_ctx` context.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossAttnLayer {
    pub wq: Tensor,
    pub wk: Tensor,
    pub wv: Tensor,
    pub wo: Tensor,
    pub heads: usize,
}

/// Dimensions of a [`CrossAttnLayer`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CrossAttnDims {
    pub c_in: usize,
    pub c_ctx: usize,
    pub c_head: usize,
    pub c_out: usize,
    pub heads: usize,
}

impl CrossAttnDims {
    pub fn head_width(&self) -> usize {
        self.c_head / self.heads
    }

    fn validate(&self) -> Result<()> {
        if self.heads == 0 || !self.c_head.is_multiple_of(self.heads) {
            return Err(Error::shape(format!(
                "c_head {} is not divisible by {} heads",
                self.c_head, self.heads
            )));
        }
        if [self.c_in, self.c_ctx, self.c_head, self.c_out].contains(&0) {
            return Err(Error::shape(format!("zero extent in {self:?}")));
        }
        Ok(())
    }
}

impl CrossAttnLayer {
    pub fn new(wq: Tensor, wk: Tensor, wv: Tensor, wo: Tensor, heads: usize) -> Result<Self> {
        let (c_in, c_head) = wq.ensure_matrix("Wq")?;
        let (c_ctx, kh) = wk.ensure_matrix("Wk")?;
        let (c_ctx_v, vh) = wv.ensure_matrix("Wv")?;
        let (oh, c_out) = wo.ensure_matrix("Wo")?;
        if kh != c_head || vh != c_head || oh != c_head || c_ctx_v != c_ctx {
            return Err(Error::shape(format!(
                "cross-attention weights Wq {:?}, Wk {:?}, Wv {:?}, Wo {:?} do not conform",
                wq.shape(),
                wk.shape(),
                wv.shape(),
                wo.shape()
            )));
        }
        CrossAttnDims {
            c_in,
            c_ctx,
            c_head,
            c_out,
            heads,
        }
        .validate()?;
        Ok(CrossAttnLayer { wq, wk, wv, wo, heads })
    }

    /// Gaussian weights with standard deviation `1/sqrt(fan_in)`.
    pub fn random<R: Rng + ?Sized>(dims: CrossAttnDims, rng: &mut R) -> Result<Self> {
        dims.validate()?;
        let wq = Tensor::randn(&[dims.c_in, dims.c_head], (dims.c_in as f64).powf(-0.5), rng);
        let wk = Tensor::randn(&[dims.c_ctx, dims.c_head], (dims.c_ctx as f64).powf(-0.5), rng);
        let wv = Tensor::randn(&[dims.c_ctx, dims.c_head], (dims.c_ctx as f64).powf(-0.5), rng);
        let wo = Tensor::randn(&[dims.c_head, dims.c_out], (dims.c_head as f64).powf(-0.5), rng);
        CrossAttnLayer::new(wq, wk, wv, wo, dims.heads)
    }

    pub fn dims(&self) -> CrossAttnDims {
        CrossAttnDims {
            c_in: self.wq.rows(),
            c_ctx: self.wk.rows(),
            c_head: self.wq.cols(),
            c_out: self.wo.cols(),
            heads: self.heads,
        }
    }

    /// `1/sqrt(d)` with `d` the per-head width.
    pub fn scale(&self) -> f64 {
        1.0 / (self.dims().head_width() as f64).sqrt()
    }

    fn check_inputs(&self, x: &Tensor, context: &Tensor) -> Result<()> {
        let d = self.dims();
        if x.rank() != 2 || x.cols() != d.c_in {
            return Err(Error::shape(format!(
                "query input {:?} must be L x {}",
                x.shape(),
                d.c_in
            )));
        }
        if context.rank() != 2 || context.cols() != d.c_ctx {
            return Err(Error::shape(format!(
                "context {:?} must be m x {}",
                context.shape(),
                d.c_ctx
            )));
        }
        x.ensure_finite("query input")?;
        context.ensure_finite("context")
    }
}

/// Output of the reference path with the per-head attention weights
/// (`L × m` each).
#[derive(Clone, Debug)]
pub struct CrossAttnOutput {
    pub output: Tensor,
    pub weights: Vec<Tensor>,
}

/// Standard multi-head softmax attention.
pub fn full_cross_attention(layer: &CrossAttnLayer, x: &Tensor, context: &Tensor) -> Result<Tensor> {
    Ok(full_cross_attention_with_weights(layer, x, context)?.output)
}

pub fn full_cross_attention_with_weights(
    layer: &CrossAttnLayer,
    x: &Tensor,
    context: &Tensor,
) -> Result<CrossAttnOutput> {
    layer.check_inputs(x, context)?;
    let d = layer.dims();
    let hw = d.head_width();
    let q = x.matmul(&layer.wq)?;
    let k = context.matmul(&layer.wk)?;
    let v = context.matmul(&layer.wv)?;
    let mut output = Tensor::zeros(&[x.rows(), d.c_out]);
    let mut weights = Vec::with_capacity(d.heads);
    for h in 0..d.heads {
        let cols = h * hw..(h + 1) * hw;
        let (a, w) = nn::attention(
            &q.columns(cols.clone()),
            &k.columns(cols.clone()),
            &v.columns(cols.clone()),
            layer.scale(),
        )?;
        output = output.add(&a.matmul(&layer.wo.row_block(cols))?)?;
        weights.push(w);
    }
    Ok(CrossAttnOutput { output, weights })
}

/// `context·Wv·Wo` broadcast to every query row. `x` only supplies `L`.
pub fn optimized_cross_attention(layer: &CrossAttnLayer, x: &Tensor, context: &Tensor) -> Result<Tensor> {
    layer.check_inputs(x, context)?;
    if context.rows() != 1 {
        return Err(Error::Contract(format!(
            "single-token rewrite needs exactly one context token, got {}",
            context.rows()
        )));
    }
    let row = context.matmul(&layer.wv)?.matmul(&layer.wo)?;
    let l = x.rows();
    let data = row.data().repeat(l);
    Tensor::new(vec![l, row.cols()], data)
}

/// Multiply-add count (`FLOPs = 2·MACs`) and softmax rows of one
/// cross-attention evaluation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CrossAttnFlops {
    pub query_projection: u64,
    pub key_projection: u64,
    pub value_projection: u64,
    pub scores: u64,
    pub weighted_sum: u64,
    pub output_projection: u64,
    pub softmax_rows: u64,
}

impl CrossAttnFlops {
    pub fn total(&self) -> u64 {
        self.query_projection
            + self.key_projection
            + self.value_projection
            + self.scores
            + self.weighted_sum
            + self.output_projection
    }
}

/// Counts for the reference path with `l` queries and `m` context tokens.
pub fn full_flops(dims: CrossAttnDims, l: usize, m: usize) -> CrossAttnFlops {
    let (l, m) = (l as u64, m as u64);
    let (c_in, c_ctx, c_head, c_out) = (
        dims.c_in as u64,
        dims.c_ctx as u64,
        dims.c_head as u64,
        dims.c_out as u64,
    );
    CrossAttnFlops {
        query_projection: 2 * l * c_in * c_head,
        key_projection: 2 * m * c_ctx * c_head,
        value_projection: 2 * m * c_ctx * c_head,
        scores: 2 * l * m * c_head,
        weighted_sum: 2 * l * m * c_head,
        output_projection: 2 * l * c_head * c_out,
        softmax_rows: l * dims.heads as u64,
    }
}

/// Counts for the broadcast path: one value and one output projection.
pub fn optimized_flops(dims: CrossAttnDims) -> CrossAttnFlops {
    CrossAttnFlops {
        value_projection: 2 * (dims.c_ctx * dims.c_head) as u64,
        output_projection: 2 * (dims.c_head * dims.c_out) as u64,
        ..CrossAttnFlops::default()
    }
}

/// FLOPs removed by the rewrite for `l` queries:
/// `2·c_head·(l·c_in + c_ctx + 2l + (l − 1)·c_out)`.
pub fn rewrite_flops_delta(dims: CrossAttnDims, l: usize) -> u64 {
    let l = l as u64;
    2 * dims.c_head as u64 * (l * dims.c_in as u64 + dims.c_ctx as u64 + 2 * l + (l - 1) * dims.c_out as u64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewriteReport {
    pub trials: usize,
    pub query_len: usize,
    pub max_deviation: f64,
    pub flops_full: u64,
    pub flops_optimized: u64,
    pub flops_delta: u64,
    pub softmax_rows_full: u64,
    pub softmax_rows_optimized: u64,
    pub passed: bool,
}

/// Paired evaluations of both paths on random inputs and single-token
/// contexts.
pub fn rewrite_equivalence_check(layer: &CrossAttnLayer, trials: usize, seed: u64) -> Result<RewriteReport> {
    paired_check(layer, layer, trials, seed)
}

/// Like [`rewrite_equivalence_check`] but evaluates the optimized path on
/// `optimized`, which lets a caller inject a fault into one side.
pub fn paired_check(
    reference: &CrossAttnLayer,
    optimized: &CrossAttnLayer,
    trials: usize,
    seed: u64,
) -> Result<RewriteReport> {
    if trials == 0 {
        return Err(Error::arg("at least one trial is required"));
    }
    let dims = reference.dims();
    if optimized.dims() != dims {
        return Err(Error::shape("paired layers differ in shape"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let l = CHECK_QUERY_LEN;
    let mut max_deviation: f64 = 0.0;
    for _ in 0..trials {
        let x = Tensor::randn(&[l, dims.c_in], 1.0, &mut rng);
        let ctx = Tensor::randn(&[1, dims.c_ctx], 1.0, &mut rng);
        let a = full_cross_attention(reference, &x, &ctx)?;
        let b = optimized_cross_attention(optimized, &x, &ctx)?;
        max_deviation = max_deviation.max(a.max_abs_diff(&b));
    }
    let full = full_flops(dims, l, 1);
    let opt = optimized_flops(dims);
    Ok(RewriteReport {
        trials,
        query_len: l,
        max_deviation,
        flops_full: full.total(),
        flops_optimized: opt.total(),
        flops_delta: full.total() - opt.total(),
        softmax_rows_full: full.softmax_rows,
        softmax_rows_optimized: opt.softmax_rows,
        passed: max_deviation <= REWRITE_TOL,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dims(c_head: usize, heads: usize) -> CrossAttnDims {
        CrossAttnDims {
            c_in: 12,
            c_ctx: 7,
            c_head,
            c_out: 10,
            heads,
        }
    }

    #[test]
    fn single_token_weights_are_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let layer = CrossAttnLayer::random(dims(8, 2), &mut rng).unwrap();
        let x = Tensor::randn(&[5, 12], 3.0, &mut rng);
        let ctx = Tensor::randn(&[1, 7], 1.0, &mut rng);
        let out = full_cross_attention_with_weights(&layer, &x, &ctx).unwrap();
        assert_eq!(out.weights.len(), 2);
        assert!(out.weights.iter().all(|w| w.data().iter().all(|&v| v == 1.0)));
    }

    #[test]
    fn zero_queries_give_broadcast_value() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let layer = CrossAttnLayer::random(dims(8, 4), &mut rng).unwrap();
        let ctx = Tensor::randn(&[1, 7], 1.0, &mut rng);
        let out = full_cross_attention(&layer, &Tensor::zeros(&[3, 12]), &ctx).unwrap();
        let expect = ctx.matmul(&layer.wv).unwrap().matmul(&layer.wo).unwrap();
        for i in 0..3 {
            for j in 0..10 {
                assert!((out.at(i, j) - expect.at(0, j)).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn multi_token_rows_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let layer = CrossAttnLayer::random(dims(8, 2), &mut rng).unwrap();
        let x = Tensor::randn(&[6, 12], 1.0, &mut rng);
        let ctx = Tensor::randn(&[4, 7], 1.0, &mut rng);
        let out = full_cross_attention_with_weights(&layer, &x, &ctx).unwrap();
        for w in &out.weights {
            for i in 0..6 {
                assert!((w.row(i).iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            }
        }
        assert!(matches!(
            optimized_cross_attention(&layer, &x, &ctx),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn optimized_matches_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let layer = CrossAttnLayer::random(dims(8, 2), &mut rng).unwrap();
        let x = Tensor::randn(&[16, 12], 1.0, &mut rng);
        let ctx = Tensor::randn(&[1, 7], 1.0, &mut rng);
        let a = full_cross_attention(&layer, &x, &ctx).unwrap();
        let b = optimized_cross_attention(&layer, &x, &ctx).unwrap();
        assert!(a.max_abs_diff(&b) <= 1e-12);
        let zero = optimized_cross_attention(&layer, &x, &Tensor::zeros(&[1, 7])).unwrap();
        assert_eq!(zero.max_abs(), 0.0);
    }

    #[test]
    fn flops_delta_matches_formula() {
        for (c_head, heads) in [(8, 2), (1, 1), (12, 3)] {
            let d = dims(c_head, heads);
            for l in [1, 4, 16] {
                let full = full_flops(d, l, 1);
                let opt = optimized_flops(d);
                assert_eq!(full.total() - opt.total(), rewrite_flops_delta(d, l));
                assert_eq!(opt.softmax_rows, 0);
                assert_eq!(full.softmax_rows, (l * heads) as u64);
            }
        }
    }

    #[test]
    fn checker_passes_and_detects_faults() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let layer = CrossAttnLayer::random(dims(1, 1), &mut rng).unwrap();
        assert!(rewrite_equivalence_check(&layer, 10, 0).unwrap().passed);
        let layer = CrossAttnLayer::random(dims(8, 2), &mut rng).unwrap();
        let mut broken = layer.clone();
        broken.wv.data_mut()[0] += 0.5;
        let report = paired_check(&layer, &broken, 10, 0).unwrap();
        assert!(!report.passed);
        assert!(report.max_deviation > 1e-3);
        assert!(rewrite_equivalence_check(&layer, 0, 0).is_err());
    }

    #[test]
    fn rejects_indivisible_heads() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        assert!(CrossAttnLayer::random(dims(7, 2), &mut rng).is_err());
    }
}
