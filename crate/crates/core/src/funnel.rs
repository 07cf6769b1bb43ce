//! Channel funnels.
//!
//! A funnel is a pair `(F1, F2)` inserted around the nonlinearity between two
//! affine layers, `y = W2 · F2 · σ(F1 · W1 · x)`, so that the inner width drops
//! from `c_inner` to `c'`. After insertion both funnel matrices fold into their
//! neighbours (`F1·W1`, `W2·F2`) and the network is structurally narrower.
//!
//! Coupled singular initialization (CSI) ignores `σ` and picks `F1, F2` so
//! that the effective product `W2·F2·F1·W1` is the best rank-`c'`
//! approximation of `W2·W1`:
//!
//! ```text
//! W2·W1 = U Σ Vᵀ
//! F2 = W2⁺ · U_c' · Σ_c'^½        F1 = Σ_c'^½ · V_c'ᵀ · W1⁺
//! ```
//!
//! Linear and convolutional pairs use the column-vector convention
//! (`y = W x`). Attention projections use the row-vector convention
//! (`Y = X W`), under which the query/key funnel targets the bilinear matrix
//! `Wq·Wkᵀ` and the value/output funnel is a plain linear pair on the
//! transposed weights.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{pinv, svd, svd_of_product};
use crate::nn::{self, Nonlinearity};
use crate::tensor::Tensor;

pub const DEFAULT_FUN_FACTOR: f64 = 0.5;

/// Reduced inner width `c' = max(1, round(fun_factor · c_inner))`.
pub fn reduced_width(fun_factor: f64, c_inner: usize) -> Result<usize> {
    if !(fun_factor > 0.0 && fun_factor <= 1.0) {
        return Err(Error::arg(format!("fun-factor {fun_factor} outside (0, 1]")));
    }
    Ok(((fun_factor * c_inner as f64).round() as usize).clamp(1, c_inner))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FunnelKind {
    Linear,
    AttentionQk,
    AttentionVo,
    Conv,
}

/// `F1` is `c' × c_inner`, `F2` is `c_inner × c'`.
///
/// For [`FunnelKind::AttentionQk`] the query funnel `Fq` is stored as `F2`
/// and the key funnel as `F1 = Fkᵀ`, so `Wq·F2·F1·Wkᵀ` is the adapted
/// similarity matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct FunnelPair {
    pub f1: Tensor,
    pub f2: Tensor,
    pub fun_factor: f64,
    pub kind: FunnelKind,
}

impl FunnelPair {
    pub fn new(f1: Tensor, f2: Tensor, kind: FunnelKind) -> Result<Self> {
        let (cp, ci) = f1.ensure_matrix("F1")?;
        let (ci2, cp2) = f2.ensure_matrix("F2")?;
        if ci != ci2 || cp != cp2 {
            return Err(Error::shape(format!(
                "funnel shapes F1 {:?} and F2 {:?} do not pair",
                f1.shape(),
                f2.shape()
            )));
        }
        if cp > ci {
            return Err(Error::shape(format!("funnel widens {ci} to {cp} channels")));
        }
        Ok(FunnelPair {
            fun_factor: cp as f64 / ci as f64,
            f1,
            f2,
            kind,
        })
    }

    pub fn identity(c_inner: usize, kind: FunnelKind) -> Self {
        FunnelPair {
            f1: Tensor::eye(c_inner),
            f2: Tensor::eye(c_inner),
            fun_factor: 1.0,
            kind,
        }
    }

    /// Reduced width `c'`.
    pub fn width(&self) -> usize {
        self.f1.rows()
    }

    pub fn inner(&self) -> usize {
        self.f1.cols()
    }

    /// Query funnel, `c_inner × c'`.
    pub fn fq(&self) -> &Tensor {
        &self.f2
    }

    /// Key funnel, `c_inner × c'`.
    pub fn fk(&self) -> Tensor {
        self.f1.transpose()
    }

    fn expect_kind(&self, kind: FunnelKind) -> Result<()> {
        if self.kind != kind {
            return Err(Error::shape(format!(
                "funnel of kind {:?} applied to a {kind:?} target",
                self.kind
            )));
        }
        Ok(())
    }
}

/// Coupled singular initialization for the product `outer · inner`
/// (`outer` is `a × c_inner`, `inner` is `c_inner × b`).
fn coupled_singular_init(outer: &Tensor, inner: &Tensor, width: usize) -> Result<(Tensor, Tensor)> {
    let dec = svd_of_product(outer, inner)?;
    let width = width.min(dec.s.len());
    let root: Vec<f64> = dec.s[..width].iter().map(|s| s.sqrt()).collect();
    let u = dec.u.columns(0..width).scale_columns(&root);
    let vt = dec.v.columns(0..width).scale_columns(&root).transpose();
    let f2 = pinv(outer)?.matmul(&u)?;
    let f1 = vt.matmul(&pinv(inner)?)?;
    Ok((f1, f2))
}

// ---- linear pairs ------------------------------------------------------------

/// `y = W2 · σ(W1 · x)` with `W1: c_inner × c_in` and `W2: c_out × c_inner`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearPair {
    pub w1: Tensor,
    pub w2: Tensor,
    pub nonlinearity: Nonlinearity,
}

impl LinearPair {
    pub fn new(w1: Tensor, w2: Tensor, nonlinearity: Nonlinearity) -> Result<Self> {
        let (ci, _) = w1.ensure_matrix("W1")?;
        let (_, ci2) = w2.ensure_matrix("W2")?;
        if ci != ci2 {
            return Err(Error::shape(format!(
                "W1 {:?} and W2 {:?} disagree on the inner width",
                w1.shape(),
                w2.shape()
            )));
        }
        w1.ensure_finite("W1")?;
        w2.ensure_finite("W2")?;
        Ok(LinearPair { w1, w2, nonlinearity })
    }

    /// Column-convention pair for row-convention projections `Y = X·Wa·Wb`.
    pub(crate) fn from_row_convention(wa: &Tensor, wb: &Tensor) -> Result<Self> {
        LinearPair::new(wa.transpose(), wb.transpose(), Nonlinearity::Identity)
    }

    /// Inverse of [`LinearPair::from_row_convention`].
    pub(crate) fn to_row_convention(&self) -> (Tensor, Tensor) {
        (self.w1.transpose(), self.w2.transpose())
    }

    pub fn c_in(&self) -> usize {
        self.w1.cols()
    }

    pub fn c_inner(&self) -> usize {
        self.w1.rows()
    }

    pub fn c_out(&self) -> usize {
        self.w2.rows()
    }

    pub fn param_count(&self) -> usize {
        self.w1.len() + self.w2.len()
    }

    /// Multiply-adds per position.
    pub fn macs(&self) -> usize {
        self.c_inner() * (self.c_in() + self.c_out())
    }

    /// Forward on a batch of column vectors `x: c_in × B`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let h = self.nonlinearity.apply_tensor(&self.w1.matmul(x)?);
        self.w2.matmul(&h)
    }

    /// `W2 · F2 · σ(F1 · W1 · x)` without folding the funnel.
    pub fn forward_funneled(&self, funnel: &FunnelPair, x: &Tensor) -> Result<Tensor> {
        let h = funnel.f1.matmul(&self.w1.matmul(x)?)?;
        let h = self.nonlinearity.apply_tensor(&h);
        self.w2.matmul(&funnel.f2.matmul(&h)?)
    }

    /// `W2 · W1`.
    pub fn product(&self) -> Result<Tensor> {
        self.w2.matmul(&self.w1)
    }

    /// `W2 · F2 · F1 · W1`.
    pub fn effective(&self, funnel: &FunnelPair) -> Result<Tensor> {
        self.w2.matmul(&funnel.f2)?.matmul(&funnel.f1.matmul(&self.w1)?)
    }

    fn check_funnel(&self, funnel: &FunnelPair) -> Result<()> {
        if funnel.inner() != self.c_inner() {
            return Err(Error::shape(format!(
                "funnel inner width {} does not match pair inner width {}",
                funnel.inner(),
                self.c_inner()
            )));
        }
        Ok(())
    }
}

pub fn csi_linear_pair(pair: &LinearPair, fun_factor: f64) -> Result<FunnelPair> {
    let width = reduced_width(fun_factor, pair.c_inner())?;
    let (f1, f2) = coupled_singular_init(&pair.w2, &pair.w1, width)?;
    Ok(FunnelPair {
        f1,
        f2,
        fun_factor,
        kind: FunnelKind::Linear,
    })
}

/// Folds the funnel: `W1' = F1·W1`, `W2' = W2·F2`.
pub fn merge_linear(pair: &LinearPair, funnel: &FunnelPair) -> Result<LinearPair> {
    funnel.expect_kind(FunnelKind::Linear)?;
    pair.check_funnel(funnel)?;
    Ok(LinearPair {
        w1: funnel.f1.matmul(&pair.w1)?,
        w2: pair.w2.matmul(&funnel.f2)?,
        nonlinearity: pair.nonlinearity,
    })
}

// ---- attention -----------------------------------------------------------------

/// Single-head projections in the row-vector convention: `Q = X·Wq`,
/// `K = X·Wk`, `V = X·Wv`, output `softmax(Q·Kᵀ·scale)·V·Wo`.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionProjections {
    pub wq: Tensor,
    pub wk: Tensor,
    pub wv: Tensor,
    pub wo: Tensor,
}

impl AttentionProjections {
    pub fn new(wq: Tensor, wk: Tensor, wv: Tensor, wo: Tensor) -> Result<Self> {
        wq.ensure_matrix("Wq")?;
        wv.ensure_matrix("Wv")?;
        wo.ensure_matrix("Wo")?;
        if wq.shape() != wk.shape() {
            return Err(Error::shape(format!(
                "Wq {:?} and Wk {:?} must share both dimensions",
                wq.shape(),
                wk.shape()
            )));
        }
        if wv.rows() != wq.rows() || wv.cols() != wo.rows() {
            return Err(Error::shape(format!(
                "Wv {:?} and Wo {:?} do not chain from {} inputs",
                wv.shape(),
                wo.shape(),
                wq.rows()
            )));
        }
        Ok(AttentionProjections { wq, wk, wv, wo })
    }

    pub fn c_in(&self) -> usize {
        self.wq.rows()
    }

    /// Query/key width.
    pub fn c_qk(&self) -> usize {
        self.wq.cols()
    }

    /// Value width.
    pub fn c_v(&self) -> usize {
        self.wv.cols()
    }

    pub fn c_out(&self) -> usize {
        self.wo.cols()
    }

    /// `1/sqrt(d)` for the current query/key width.
    pub fn default_scale(&self) -> f64 {
        1.0 / (self.c_qk() as f64).sqrt()
    }

    /// `Wq · Wkᵀ`, the `c_in × c_in` bilinear similarity matrix.
    pub fn similarity(&self) -> Result<Tensor> {
        self.wq.matmul(&self.wk.transpose())
    }

    /// Self-attention over the rows of `x` (`L × c_in`).
    pub fn forward(&self, x: &Tensor, scale: f64) -> Result<Tensor> {
        let q = x.matmul(&self.wq)?;
        let k = x.matmul(&self.wk)?;
        let v = x.matmul(&self.wv)?;
        let (a, _) = nn::attention(&q, &k, &v, scale)?;
        a.matmul(&self.wo)
    }

    /// Pre-softmax logits `X·Wq·Kᵀ·scale` with optional query/key funnel.
    pub fn logits(&self, x: &Tensor, qk: Option<&FunnelPair>) -> Result<Tensor> {
        let (q, k) = match qk {
            Some(f) => (
                x.matmul(&self.wq)?.matmul(f.fq())?,
                x.matmul(&self.wk)?.matmul(&f.fk())?,
            ),
            None => (x.matmul(&self.wq)?, x.matmul(&self.wk)?),
        };
        q.matmul(&k.transpose())
    }

    /// Forward with funnels kept as separate matrices.
    pub fn forward_funneled(
        &self,
        x: &Tensor,
        qk: Option<&FunnelPair>,
        vo: Option<&FunnelPair>,
        scale: f64,
    ) -> Result<Tensor> {
        if let Some(f) = qk {
            f.expect_kind(FunnelKind::AttentionQk)?;
        }
        let mut q = x.matmul(&self.wq)?;
        let mut k = x.matmul(&self.wk)?;
        if let Some(f) = qk {
            q = q.matmul(f.fq())?;
            k = k.matmul(&f.fk())?;
        }
        let mut v = x.matmul(&self.wv)?;
        if let Some(f) = vo {
            f.expect_kind(FunnelKind::AttentionVo)?;
            v = v.matmul(&f.f1.transpose())?;
        }
        let (mut a, _) = nn::attention(&q, &k, &v, scale)?;
        if let Some(f) = vo {
            a = a.matmul(&f.f2.transpose())?;
        }
        a.matmul(&self.wo)
    }

    /// The value/output pair in column convention: `W1 = Wvᵀ`, `W2 = Woᵀ`.
    pub fn value_output_pair(&self) -> Result<LinearPair> {
        LinearPair::from_row_convention(&self.wv, &self.wo)
    }
}

pub fn csi_attention_qk(proj: &AttentionProjections, fun_factor: f64) -> Result<FunnelPair> {
    let width = reduced_width(fun_factor, proj.c_qk())?;
    let (f1, f2) = coupled_singular_init(&proj.wq, &proj.wk.transpose(), width)?;
    Ok(FunnelPair {
        f1,
        f2,
        fun_factor,
        kind: FunnelKind::AttentionQk,
    })
}

pub fn csi_value_output(proj: &AttentionProjections, fun_factor: f64) -> Result<FunnelPair> {
    let mut f = csi_linear_pair(&proj.value_output_pair()?, fun_factor)?;
    f.kind = FunnelKind::AttentionVo;
    Ok(f)
}

/// Folds query/key and value/output funnels into the projections.
pub fn merge_attention(
    proj: &AttentionProjections,
    qk: Option<&FunnelPair>,
    vo: Option<&FunnelPair>,
) -> Result<AttentionProjections> {
    let mut out = proj.clone();
    if let Some(f) = qk {
        f.expect_kind(FunnelKind::AttentionQk)?;
        if f.inner() != proj.c_qk() {
            return Err(Error::shape(format!(
                "query/key funnel inner width {} vs projection width {}",
                f.inner(),
                proj.c_qk()
            )));
        }
        out.wq = proj.wq.matmul(f.fq())?;
        out.wk = proj.wk.matmul(&f.fk())?;
    }
    if let Some(f) = vo {
        f.expect_kind(FunnelKind::AttentionVo)?;
        let pair = proj.value_output_pair()?;
        pair.check_funnel(f)?;
        let merged = LinearPair {
            w1: f.f1.matmul(&pair.w1)?,
            w2: pair.w2.matmul(&f.f2)?,
            nonlinearity: Nonlinearity::Identity,
        };
        let (wv, wo) = merged.to_row_convention();
        out.wv = wv;
        out.wo = wo;
    }
    Ok(out)
}

// ---- convolutions -------------------------------------------------------------

/// `y = K2 ∗ σ(K1 ∗ x)`, same-size stride-1 convolutions.
///
/// `K1` is `[Kh, Kw, c_mid, c_in]`, `K2` is `[Kh, Kw, c_out, c_mid]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvPair {
    pub k1: Tensor,
    pub k2: Tensor,
    pub nonlinearity: Nonlinearity,
}

impl ConvPair {
    pub fn new(k1: Tensor, k2: Tensor, nonlinearity: Nonlinearity) -> Result<Self> {
        if k1.rank() != 4 || k2.rank() != 4 {
            return Err(Error::shape(format!(
                "conv kernels must be rank 4, got {:?} and {:?}",
                k1.shape(),
                k2.shape()
            )));
        }
        if k1.shape()[2] != k2.shape()[3] {
            return Err(Error::shape(format!(
                "K1 {:?} produces {} channels but K2 {:?} consumes {}",
                k1.shape(),
                k1.shape()[2],
                k2.shape(),
                k2.shape()[3]
            )));
        }
        Ok(ConvPair { k1, k2, nonlinearity })
    }

    pub fn c_in(&self) -> usize {
        self.k1.shape()[3]
    }

    pub fn c_mid(&self) -> usize {
        self.k1.shape()[2]
    }

    pub fn c_out(&self) -> usize {
        self.k2.shape()[2]
    }

    fn taps(k: &Tensor) -> usize {
        k.shape()[0] * k.shape()[1]
    }

    /// Input-patch view of `K1`: `c_mid × (Kh·Kw·c_in)`.
    pub fn input_patch_matrix(&self) -> Tensor {
        let (taps, cmid, cin) = (Self::taps(&self.k1), self.c_mid(), self.c_in());
        let mut a = Tensor::zeros(&[cmid, taps * cin]);
        let kd = self.k1.data();
        for q in 0..taps {
            for j in 0..cmid {
                for i in 0..cin {
                    a.set(j, q * cin + i, kd[(q * cmid + j) * cin + i]);
                }
            }
        }
        a
    }

    /// Output-collection view of `K2`: `(Kh·Kw·c_out) × c_mid`.
    pub fn output_collection_matrix(&self) -> Tensor {
        let (taps, cout, cmid) = (Self::taps(&self.k2), self.c_out(), self.c_mid());
        // [Kh, Kw, c_out, c_mid] is already row-major in (q, o) × m
        Tensor::new(vec![taps * cout, cmid], self.k2.data().to_vec()).expect("kernel shape is consistent")
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let h = self.nonlinearity.apply_tensor(&nn::conv2d(x, &self.k1)?);
        nn::conv2d(&h, &self.k2)
    }

    /// Funnels applied as 1×1 channel mixes around the nonlinearity.
    pub fn forward_funneled(&self, funnel: &FunnelPair, x: &Tensor) -> Result<Tensor> {
        funnel.expect_kind(FunnelKind::Conv)?;
        let h = nn::channel_mix(&funnel.f1, &nn::conv2d(x, &self.k1)?)?;
        let h = self.nonlinearity.apply_tensor(&h);
        nn::conv2d(&nn::channel_mix(&funnel.f2, &h)?, &self.k2)
    }

    pub fn macs_per_pixel(&self) -> usize {
        Self::taps(&self.k1) * self.c_mid() * (self.c_in() + self.c_out())
    }
}

pub fn csi_conv_pair(pair: &ConvPair, fun_factor: f64) -> Result<FunnelPair> {
    let width = reduced_width(fun_factor, pair.c_mid())?;
    let a = pair.input_patch_matrix();
    let b = pair.output_collection_matrix();
    let (f1, f2) = coupled_singular_init(&b, &a, width)?;
    Ok(FunnelPair {
        f1,
        f2,
        fun_factor,
        kind: FunnelKind::Conv,
    })
}

pub fn merge_conv(pair: &ConvPair, funnel: &FunnelPair) -> Result<ConvPair> {
    funnel.expect_kind(FunnelKind::Conv)?;
    if funnel.inner() != pair.c_mid() {
        return Err(Error::shape(format!(
            "funnel inner width {} does not match conv mid width {}",
            funnel.inner(),
            pair.c_mid()
        )));
    }
    let cp = funnel.width();
    let (cin, cmid, cout) = (pair.c_in(), pair.c_mid(), pair.c_out());
    let s1 = pair.k1.shape();
    let s2 = pair.k2.shape();
    let (taps1, taps2) = (s1[0] * s1[1], s2[0] * s2[1]);

    let mut k1 = Tensor::zeros(&[s1[0], s1[1], cp, cin]);
    {
        let src = pair.k1.data();
        let dst = k1.data_mut();
        for q in 0..taps1 {
            for jp in 0..cp {
                for j in 0..cmid {
                    let f = funnel.f1.at(jp, j);
                    for i in 0..cin {
                        dst[(q * cp + jp) * cin + i] += f * src[(q * cmid + j) * cin + i];
                    }
                }
            }
        }
    }
    let mut k2 = Tensor::zeros(&[s2[0], s2[1], cout, cp]);
    {
        let src = pair.k2.data();
        let dst = k2.data_mut();
        for q in 0..taps2 {
            for o in 0..cout {
                for m in 0..cmid {
                    let w = src[(q * cout + o) * cmid + m];
                    for j in 0..cp {
                        dst[(q * cout + o) * cp + j] += w * funnel.f2.at(m, j);
                    }
                }
            }
        }
    }
    Ok(ConvPair {
        k1,
        k2,
        nonlinearity: pair.nonlinearity,
    })
}

// ---- baselines ------------------------------------------------------------------

/// Rank kept by [`truncated_layer_baseline`]: `max(1, round(r·min(c_in, c_out)))`.
pub fn truncated_rank(r: f64, c_in: usize, c_out: usize) -> Result<usize> {
    if !(r > 0.0 && r <= 1.0) {
        return Err(Error::arg(format!("rank ratio {r} outside (0, 1]")));
    }
    let full = c_in.min(c_out);
    Ok(((r * full as f64).round() as usize).clamp(1, full))
}

/// Replaces one layer by a product of two thinner layers from its truncated
/// SVD. Returns `(W1, W2)` with `W2·W1` the rank-`rc` approximation of `w`.
pub fn truncated_layer_baseline(w: &Tensor, r: f64) -> Result<(Tensor, Tensor)> {
    let (c_out, c_in) = w.ensure_matrix("layer weight")?;
    let rc = truncated_rank(r, c_in, c_out)?;
    let dec = svd(w)?;
    let root: Vec<f64> = dec.s[..rc].iter().map(|s| s.sqrt()).collect();
    let w2 = dec.u.columns(0..rc).scale_columns(&root);
    let w1 = dec.v.columns(0..rc).scale_columns(&root).transpose();
    Ok((w1, w2))
}

/// Funnel with i.i.d. `N(0, 2/fan_in)` entries (He initialization).
pub fn he_init_baseline(shape_f1: [usize; 2], shape_f2: [usize; 2], seed: u64) -> Result<FunnelPair> {
    let [cp, ci] = shape_f1;
    if shape_f2 != [ci, cp] || cp == 0 || ci == 0 {
        return Err(Error::shape(format!(
            "funnel shapes {shape_f1:?} and {shape_f2:?} do not pair"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // fan_in is the column count of each matrix
    let f1 = Tensor::randn(&shape_f1, (2.0 / ci as f64).sqrt(), &mut rng);
    let f2 = Tensor::randn(&shape_f2, (2.0 / cp as f64).sqrt(), &mut rng);
    FunnelPair::new(f1, f2, FunnelKind::Linear)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::truncated_approx;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn random_pair(r: &mut ChaCha8Rng, c_in: usize, c_inner: usize, c_out: usize) -> LinearPair {
        LinearPair::new(
            Tensor::randn(&[c_inner, c_in], 1.0, r),
            Tensor::randn(&[c_out, c_inner], 1.0, r),
            Nonlinearity::Silu,
        )
        .unwrap()
    }

    #[test]
    fn reduced_width_rounding() {
        assert_eq!(reduced_width(0.5, 64).unwrap(), 32);
        assert_eq!(reduced_width(0.01, 8).unwrap(), 1);
        assert_eq!(reduced_width(1.0, 7).unwrap(), 7);
        assert_eq!(reduced_width(0.5, 5).unwrap(), 3);
        assert!(reduced_width(0.0, 4).is_err());
        assert!(reduced_width(1.5, 4).is_err());
        assert!(reduced_width(f64::NAN, 4).is_err());
    }

    #[test]
    fn csi_rank_one_inner_is_lossless() {
        let mut r = rng(0);
        let col = Tensor::randn(&[4, 1], 1.0, &mut r);
        let row = Tensor::randn(&[1, 6], 1.0, &mut r);
        let pair = LinearPair::new(
            col.matmul(&row).unwrap(),
            Tensor::randn(&[5, 4], 1.0, &mut r),
            Nonlinearity::Relu,
        )
        .unwrap();
        let f = csi_linear_pair(&pair, 0.25).unwrap();
        assert_eq!(f.width(), 1);
        let diff = pair.effective(&f).unwrap().sub(&pair.product().unwrap()).unwrap();
        assert!(diff.frobenius_norm() <= 1e-9);
    }

    #[test]
    fn csi_full_factor_is_exact() {
        let pair = random_pair(&mut rng(1), 6, 4, 5);
        let f = csi_linear_pair(&pair, 1.0).unwrap();
        assert_eq!(f.width(), 4);
        let p = pair.product().unwrap();
        let diff = pair.effective(&f).unwrap().sub(&p).unwrap().frobenius_norm();
        assert!(diff <= 1e-9 * p.frobenius_norm().max(1.0));
    }

    #[test]
    fn csi_half_matches_svd_tail() {
        let pair = random_pair(&mut rng(2), 6, 4, 5);
        let f = csi_linear_pair(&pair, 0.5).unwrap();
        assert_eq!(f.width(), 2);
        let p = pair.product().unwrap();
        let s = svd(&p).unwrap().s;
        let resid = pair.effective(&f).unwrap().sub(&p).unwrap().frobenius_norm();
        assert!((resid - (s[2] * s[2] + s[3] * s[3]).sqrt()).abs() <= 1e-8);
    }

    #[test]
    fn csi_rejects_bad_factor() {
        let pair = random_pair(&mut rng(3), 3, 3, 3);
        assert!(matches!(csi_linear_pair(&pair, 0.0), Err(Error::Argument(_))));
        assert!(matches!(csi_linear_pair(&pair, 1.01), Err(Error::Argument(_))));
    }

    #[test]
    fn row_convention_round_trip() {
        let mut r = rng(4);
        let wv = Tensor::randn(&[6, 4], 1.0, &mut r);
        let wo = Tensor::randn(&[4, 3], 1.0, &mut r);
        let pair = LinearPair::from_row_convention(&wv, &wo).unwrap();
        assert_eq!(pair.c_in(), 6);
        assert_eq!(pair.c_out(), 3);
        let (a, b) = pair.to_row_convention();
        assert_eq!((a, b), (wv.clone(), wo.clone()));
        // X·Wv·Wo == (Woᵀ·Wvᵀ·Xᵀ)ᵀ
        let x = Tensor::randn(&[5, 6], 1.0, &mut r);
        let row = x.matmul(&wv).unwrap().matmul(&wo).unwrap();
        let col = pair.forward(&x.transpose()).unwrap().transpose();
        assert!(row.max_abs_diff(&col) < 1e-12);
    }

    #[test]
    fn qk_identity_projections() {
        let proj = AttentionProjections::new(Tensor::eye(4), Tensor::eye(4), Tensor::eye(4), Tensor::eye(4)).unwrap();
        let f = csi_attention_qk(&proj, 1.0).unwrap();
        let m = merge_attention(&proj, Some(&f), None).unwrap();
        let sim = m.similarity().unwrap();
        assert!(sim.max_abs_diff(&Tensor::eye(4)) < 1e-12);
    }

    #[test]
    fn qk_truncation_matches_oracle() {
        let mut r = rng(5);
        let proj = AttentionProjections::new(
            Tensor::randn(&[8, 4], 1.0, &mut r),
            Tensor::randn(&[8, 4], 1.0, &mut r),
            Tensor::randn(&[8, 4], 1.0, &mut r),
            Tensor::randn(&[4, 8], 1.0, &mut r),
        )
        .unwrap();
        let full = csi_attention_qk(&proj, 1.0).unwrap();
        let x = Tensor::randn(&[10, 8], 1.0, &mut r);
        let base = proj.logits(&x, None).unwrap();
        let adapted = proj.logits(&x, Some(&full)).unwrap();
        assert!(base.max_abs_diff(&adapted) <= 1e-8 * base.max_abs().max(1.0));

        let half = csi_attention_qk(&proj, 0.5).unwrap();
        let adapted = merge_attention(&proj, Some(&half), None).unwrap().similarity().unwrap();
        let oracle = truncated_approx(&proj.similarity().unwrap(), 2).unwrap();
        assert!(adapted.max_abs_diff(&oracle) <= 1e-8);
    }

    #[test]
    fn merge_linear_identity_and_params() {
        let pair = random_pair(&mut rng(6), 5, 6, 7);
        let merged = merge_linear(&pair, &FunnelPair::identity(6, FunnelKind::Linear)).unwrap();
        assert_eq!(merged, pair);
        let f = csi_linear_pair(&pair, 0.5).unwrap();
        let merged = merge_linear(&pair, &f).unwrap();
        assert_eq!(merged.param_count(), 3 * 5 + 7 * 3);
        assert!(merged.param_count() < pair.param_count());
        assert_eq!(merged.macs(), 3 * (5 + 7));
    }

    #[test]
    fn merge_rejects_mismatch() {
        let pair = random_pair(&mut rng(7), 5, 6, 7);
        let wrong = FunnelPair::identity(5, FunnelKind::Linear);
        assert!(matches!(merge_linear(&pair, &wrong), Err(Error::Shape(_))));
        let kind = FunnelPair::identity(6, FunnelKind::Conv);
        assert!(merge_linear(&pair, &kind).is_err());
    }

    #[test]
    fn conv_views_for_unit_kernels() {
        let mut r = rng(8);
        let w1 = Tensor::randn(&[4, 3], 1.0, &mut r);
        let w2 = Tensor::randn(&[5, 4], 1.0, &mut r);
        let conv = ConvPair::new(
            w1.clone().reshape(&[1, 1, 4, 3]).unwrap(),
            w2.clone().reshape(&[1, 1, 5, 4]).unwrap(),
            Nonlinearity::Silu,
        )
        .unwrap();
        assert_eq!(conv.input_patch_matrix(), w1);
        assert_eq!(conv.output_collection_matrix(), w2);
        let lin = LinearPair::new(w1, w2, Nonlinearity::Silu).unwrap();
        let fc = csi_conv_pair(&conv, 0.5).unwrap();
        let fl = csi_linear_pair(&lin, 0.5).unwrap();
        assert!(fc.f1.max_abs_diff(&fl.f1) < 1e-12);
        assert!(fc.f2.max_abs_diff(&fl.f2) < 1e-12);
        let mc = merge_conv(&conv, &fc).unwrap();
        let ml = merge_linear(&lin, &fl).unwrap();
        assert!(mc.input_patch_matrix().max_abs_diff(&ml.w1) < 1e-12);
        assert!(mc.output_collection_matrix().max_abs_diff(&ml.w2) < 1e-12);
    }

    #[test]
    fn merge_conv_identity_is_noop() {
        let mut r = rng(9);
        let conv = ConvPair::new(
            Tensor::randn(&[3, 3, 4, 2], 1.0, &mut r),
            Tensor::randn(&[3, 3, 3, 4], 1.0, &mut r),
            Nonlinearity::Relu,
        )
        .unwrap();
        let merged = merge_conv(&conv, &FunnelPair::identity(4, FunnelKind::Conv)).unwrap();
        assert_eq!(merged, conv);
    }

    #[test]
    fn conv_pair_rejects_broken_chain() {
        assert!(ConvPair::new(
            Tensor::zeros(&[3, 3, 4, 2]),
            Tensor::zeros(&[3, 3, 3, 5]),
            Nonlinearity::Relu
        )
        .is_err());
    }

    #[test]
    fn truncated_baseline_examples() {
        let w = Tensor::from_diag(&[3.0, 2.0, 1.0, 0.5]);
        let (w1, w2) = truncated_layer_baseline(&w, 0.5).unwrap();
        assert_eq!(w1.shape(), [2, 4]);
        let prod = w2.matmul(&w1).unwrap();
        assert!(prod.max_abs_diff(&Tensor::from_diag(&[3.0, 2.0, 0.0, 0.0])) < 1e-12);

        let mut r = rng(10);
        let w = Tensor::randn(&[6, 6], 1.0, &mut r);
        let (w1, w2) = truncated_layer_baseline(&w, 1.0).unwrap();
        assert!(w2.matmul(&w1).unwrap().max_abs_diff(&w) <= 1e-9);
        assert!(truncated_layer_baseline(&w, 0.0).is_err());
    }

    #[test]
    fn truncated_baseline_parameter_threshold() {
        // square n×n: 2·rc·n < n² iff rc < n/2
        for n in [4usize, 8, 10] {
            for step in 1..=20 {
                let r = step as f64 / 20.0;
                let rc = truncated_rank(r, n, n).unwrap();
                let reduced = 2 * rc * n < n * n;
                assert_eq!(reduced, (rc as f64) < 0.5 * n as f64, "n={n} r={r}");
                if r < 0.5 && 2 * rc < n {
                    assert!(reduced);
                }
            }
        }
    }

    #[test]
    fn he_init_deterministic_and_validated() {
        let a = he_init_baseline([2, 4], [4, 2], 7).unwrap();
        let b = he_init_baseline([2, 4], [4, 2], 7).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, he_init_baseline([2, 4], [4, 2], 8).unwrap());
        assert!(he_init_baseline([2, 4], [4, 3], 0).is_err());
    }
}
