//! Building blocks of the toy UNet.

use rand::Rng;

use super::flops::{ConvDims, ConvPairDims, HeadDims, ResDims, TemporalDims};
use super::ops;
use crate::attnopt::{full_cross_attention, optimized_cross_attention, CrossAttnDims, CrossAttnLayer};
use crate::error::{Error, Result};
use crate::funnel::{
    csi_attention_qk, csi_conv_pair, csi_value_output, merge_attention, merge_conv, AttentionProjections, ConvPair,
    FunnelPair, LinearPair,
};
use crate::nn::{self, Nonlinearity};
use crate::pruning::gates::{gate_forward, gated_update};
use crate::tensor::Tensor;

/// Output gain of the last layer of every residual branch.
const BRANCH_GAIN: f64 = 0.3;

pub(crate) fn conv_kernel<R: Rng + ?Sized>(
    kh: usize,
    kw: usize,
    c_out: usize,
    c_in: usize,
    gain: f64,
    rng: &mut R,
) -> Tensor {
    let fan_in = (kh * kw * c_in) as f64;
    Tensor::randn(&[kh, kw, c_out, c_in], gain / fan_in.sqrt(), rng)
}

fn conv_dims(k: &Tensor) -> ConvDims {
    let s = k.shape();
    ConvDims {
        kh: s[0],
        kw: s[1],
        c_out: s[2],
        c_in: s[3],
    }
}

fn pair_dims(pair: &ConvPair, funnel: Option<&FunnelPair>) -> ConvPairDims {
    ConvPairDims {
        k1: conv_dims(&pair.k1),
        k2: conv_dims(&pair.k2),
        funnel: funnel.map(FunnelPair::width),
    }
}

/// Which layer pairs receive funnels.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct FunnelTargets {
    pub qk: bool,
    pub vo: bool,
    pub conv: bool,
}

impl FunnelTargets {
    pub fn attention() -> Self {
        FunnelTargets {
            qk: true,
            vo: true,
            conv: false,
        }
    }

    pub fn all() -> Self {
        FunnelTargets {
            qk: true,
            vo: true,
            conv: true,
        }
    }
}

// ---- residual convolution block ------------------------------------------------

/// `skip(x) + K2 ∗ silu(K1 ∗ silu(x))`, applied per frame.
#[derive(Clone, Debug, PartialEq)]
pub struct ResBlock {
    pub pair: ConvPair,
    pub skip: Option<Tensor>,
    pub funnel: Option<FunnelPair>,
}

impl ResBlock {
    pub(crate) fn random<R: Rng + ?Sized>(c_in: usize, c_out: usize, k: usize, rng: &mut R) -> Result<Self> {
        let k1 = conv_kernel(k, k, c_out, c_in, 1.0, rng);
        let k2 = conv_kernel(k, k, c_out, c_out, BRANCH_GAIN, rng);
        let skip = (c_in != c_out).then(|| Tensor::randn(&[c_out, c_in], (c_in as f64).powf(-0.5), rng));
        Ok(ResBlock {
            pair: ConvPair::new(k1, k2, Nonlinearity::Silu)?,
            skip,
            funnel: None,
        })
    }

    pub fn c_in(&self) -> usize {
        self.pair.c_in()
    }

    pub fn c_out(&self) -> usize {
        self.pair.c_out()
    }

    fn forward_frame(&self, x: &Tensor) -> Result<Tensor> {
        let h = Nonlinearity::Silu.apply_tensor(x);
        let branch = match &self.funnel {
            Some(f) => self.pair.forward_funneled(f, &h)?,
            None => self.pair.forward(&h)?,
        };
        match &self.skip {
            Some(s) => nn::channel_mix(s, x)?.add(&branch),
            None => x.add(&branch),
        }
    }

    pub(crate) fn forward(&self, x: &Tensor) -> Result<Tensor> {
        ops::map_frames(x, |f| self.forward_frame(f))
    }

    pub(crate) fn dims(&self) -> ResDims {
        ResDims {
            pair: pair_dims(&self.pair, self.funnel.as_ref()),
            skip: self.skip.as_ref().map(|s| (s.cols(), s.rows())),
        }
    }
}

// ---- multi-head self-attention -------------------------------------------------

/// Sum over heads of `softmax(X Wq_h (X Wk_h)ᵀ · scale) X Wv_h Wo_h`, with
/// optional per-head funnels. `scale` is fixed at construction so merging
/// a query/key funnel leaves it unchanged.
#[derive(Clone, Debug, PartialEq)]
pub struct SelfAttention {
    pub heads: Vec<AttentionProjections>,
    pub scale: f64,
    pub qk: Vec<Option<FunnelPair>>,
    pub vo: Vec<Option<FunnelPair>>,
}

impl SelfAttention {
    pub(crate) fn random<R: Rng + ?Sized>(c: usize, heads: usize, rng: &mut R) -> Result<Self> {
        if heads == 0 || !c.is_multiple_of(heads) {
            return Err(Error::shape(format!("{c} channels do not split into {heads} heads")));
        }
        let d = c / heads;
        let std = (c as f64).powf(-0.5);
        let mut hs = Vec::with_capacity(heads);
        for _ in 0..heads {
            hs.push(AttentionProjections::new(
                Tensor::randn(&[c, d], std, rng),
                Tensor::randn(&[c, d], std, rng),
                Tensor::randn(&[c, d], std, rng),
                Tensor::randn(&[d, c], BRANCH_GAIN / (c as f64).sqrt(), rng),
            )?);
        }
        Ok(SelfAttention {
            heads: hs,
            scale: 1.0 / (d as f64).sqrt(),
            qk: vec![None; heads],
            vo: vec![None; heads],
        })
    }

    /// `x` is `L × c`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut out: Option<Tensor> = None;
        for (h, proj) in self.heads.iter().enumerate() {
            let y = proj.forward_funneled(x, self.qk[h].as_ref(), self.vo[h].as_ref(), self.scale)?;
            out = Some(match out {
                Some(acc) => acc.add(&y)?,
                None => y,
            });
        }
        out.ok_or_else(|| Error::shape("attention without heads"))
    }

    pub(crate) fn dims(&self) -> Vec<HeadDims> {
        self.heads
            .iter()
            .enumerate()
            .map(|(h, p)| HeadDims {
                c_in: p.c_in(),
                c_qk: p.c_qk(),
                c_v: p.c_v(),
                c_out: p.c_out(),
                qk_funnel: self.qk[h].as_ref().map(FunnelPair::width),
                vo_funnel: self.vo[h].as_ref().map(FunnelPair::width),
            })
            .collect()
    }

    fn inject(&mut self, fun_factor: f64, targets: FunnelTargets) -> Result<usize> {
        let mut count = 0;
        for (h, proj) in self.heads.iter().enumerate() {
            if targets.qk {
                self.qk[h] = Some(csi_attention_qk(proj, fun_factor)?);
                count += 1;
            }
            if targets.vo {
                self.vo[h] = Some(csi_value_output(proj, fun_factor)?);
                count += 1;
            }
        }
        Ok(count)
    }

    fn merge(&mut self) -> Result<()> {
        for h in 0..self.heads.len() {
            let (qk, vo) = (self.qk[h].take(), self.vo[h].take());
            if qk.is_some() || vo.is_some() {
                self.heads[h] = merge_attention(&self.heads[h], qk.as_ref(), vo.as_ref())?;
            }
        }
        Ok(())
    }

    fn has_funnels(&self) -> bool {
        self.qk.iter().chain(&self.vo).any(Option::is_some)
    }

    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor)) {
        for (h, p) in self.heads.iter().enumerate() {
            f(format!("{prefix}.head{h}.wq"), &p.wq);
            f(format!("{prefix}.head{h}.wk"), &p.wk);
            f(format!("{prefix}.head{h}.wv"), &p.wv);
            f(format!("{prefix}.head{h}.wo"), &p.wo);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor) -> Result<()>) -> Result<()> {
        for (h, p) in self.heads.iter_mut().enumerate() {
            f(format!("{prefix}.head{h}.wq"), &mut p.wq)?;
            f(format!("{prefix}.head{h}.wk"), &mut p.wk)?;
            f(format!("{prefix}.head{h}.wv"), &mut p.wv)?;
            f(format!("{prefix}.head{h}.wo"), &mut p.wo)?;
        }
        Ok(())
    }

    fn revalidate(&mut self) -> Result<()> {
        for p in &mut self.heads {
            *p = AttentionProjections::new(p.wq.clone(), p.wk.clone(), p.wv.clone(), p.wo.clone())?;
        }
        Ok(())
    }
}

// ---- temporal blocks -------------------------------------------------------------

#[derive(Clone, Debug, PartialEq)]
// few instances per net; boxing would only add indirection
#[allow(clippy::large_enum_variant)]
pub enum TemporalLayer {
    /// Self-attention over the frames of each pixel.
    Attention(SelfAttention),
    /// `K2 ∗ silu(K1 ∗ x)` with `Kt × 1` kernels along time.
    Conv { pair: ConvPair, funnel: Option<FunnelPair> },
}

/// A residual temporal block mixed into the spatial stream as
/// `x_s + ẑ·(1 − α)·r_t`. Without a gate `ẑ = 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct TemporalBlock {
    pub alpha: f64,
    pub gate: Option<bool>,
    pub layer: TemporalLayer,
}

impl TemporalBlock {
    pub(crate) fn random<R: Rng + ?Sized>(
        kind: super::TemporalKind,
        c: usize,
        heads: usize,
        kernel: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let layer = match kind {
            super::TemporalKind::TemporalAttention => TemporalLayer::Attention(SelfAttention::random(c, heads, rng)?),
            super::TemporalKind::TemporalConv => TemporalLayer::Conv {
                pair: ConvPair::new(
                    conv_kernel(kernel, 1, c, c, 1.0, rng),
                    conv_kernel(kernel, 1, c, c, BRANCH_GAIN, rng),
                    Nonlinearity::Silu,
                )?,
                funnel: None,
            },
        };
        let alpha = rng.random_range(0.2..0.8);
        Ok(TemporalBlock {
            alpha,
            gate: None,
            layer,
        })
    }

    /// The residual `r_t` for a `[T, C, H, W]` input.
    pub fn residual(&self, x: &Tensor) -> Result<Tensor> {
        let (_, _, h, w) = ops::dims4(x)?;
        let y = ops::time_major(x);
        let r = match &self.layer {
            TemporalLayer::Conv { pair, funnel } => match funnel {
                Some(f) => pair.forward_funneled(f, &y)?,
                None => pair.forward(&y)?,
            },
            TemporalLayer::Attention(attn) => {
                let mut out = Tensor::zeros(y.shape());
                for p in 0..h * w {
                    let seq = attn.forward(&ops::pixel_sequence(&y, p))?;
                    ops::set_pixel_sequence(&mut out, p, &seq);
                }
                out
            }
        };
        ops::from_time_major(&r, h, w)
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let z = self.gate.map_or(1.0, |z| gate_forward(z, 1.0));
        let r = self.residual(x)?;
        let data = gated_update(x.data(), r.data(), self.alpha, z);
        Tensor::new(x.shape().to_vec(), data)
    }

    pub(crate) fn dims(&self) -> TemporalDims {
        match &self.layer {
            TemporalLayer::Attention(a) => TemporalDims::Attention(a.dims()),
            TemporalLayer::Conv { pair, funnel } => TemporalDims::Conv(pair_dims(pair, funnel.as_ref())),
        }
    }

    fn inject(&mut self, fun_factor: f64, targets: FunnelTargets) -> Result<usize> {
        match &mut self.layer {
            TemporalLayer::Attention(a) => a.inject(fun_factor, targets),
            TemporalLayer::Conv { pair, funnel } if targets.conv => {
                *funnel = Some(csi_conv_pair(pair, fun_factor)?);
                Ok(1)
            }
            TemporalLayer::Conv { .. } => Ok(0),
        }
    }

    fn merge(&mut self) -> Result<()> {
        match &mut self.layer {
            TemporalLayer::Attention(a) => a.merge(),
            TemporalLayer::Conv { pair, funnel } => {
                if let Some(f) = funnel.take() {
                    *pair = merge_conv(pair, &f)?;
                }
                Ok(())
            }
        }
    }

    fn has_funnels(&self) -> bool {
        match &self.layer {
            TemporalLayer::Attention(a) => a.has_funnels(),
            TemporalLayer::Conv { funnel, .. } => funnel.is_some(),
        }
    }
}

// ---- spatial transformer -----------------------------------------------------

/// Cross-attention evaluation path.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CrossAttentionMode {
    #[default]
    Full,
    Optimized,
}

/// Per-frame `x += attn(x); x += cross(x, cond); x += ff(x)` over `H·W`
/// tokens.
#[derive(Clone, Debug, PartialEq)]
pub struct Transformer {
    pub attn: SelfAttention,
    pub cross: CrossAttnLayer,
    pub ff: LinearPair,
}

impl Transformer {
    pub(crate) fn random<R: Rng + ?Sized>(
        c: usize,
        c_ctx: usize,
        heads: usize,
        ff_mult: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let attn = SelfAttention::random(c, heads, rng)?;
        let mut cross = CrossAttnLayer::random(
            CrossAttnDims {
                c_in: c,
                c_ctx,
                c_head: c,
                c_out: c,
                heads,
            },
            rng,
        )?;
        cross.wo = cross.wo.scale(BRANCH_GAIN);
        let hidden = ff_mult * c;
        let ff = LinearPair::new(
            Tensor::randn(&[hidden, c], (c as f64).powf(-0.5), rng),
            Tensor::randn(&[c, hidden], BRANCH_GAIN / (hidden as f64).sqrt(), rng),
            Nonlinearity::Silu,
        )?;
        Ok(Transformer { attn, cross, ff })
    }

    fn forward_frame(&self, f: &Tensor, cond: &Tensor, mode: CrossAttentionMode) -> Result<Tensor> {
        let (h, w) = (f.shape()[1], f.shape()[2]);
        let mut x = ops::frame_tokens(f);
        x = x.add(&self.attn.forward(&x)?)?;
        let c = match mode {
            CrossAttentionMode::Full => full_cross_attention(&self.cross, &x, cond)?,
            CrossAttentionMode::Optimized => optimized_cross_attention(&self.cross, &x, cond)?,
        };
        x = x.add(&c)?;
        let ff = self.ff.forward(&x.transpose())?.transpose();
        x = x.add(&ff)?;
        ops::tokens_frame(&x, h, w)
    }

    pub(crate) fn forward(&self, x: &Tensor, cond: &Tensor, mode: CrossAttentionMode) -> Result<Tensor> {
        ops::map_frames(x, |f| self.forward_frame(f, cond, mode))
    }
}

// ---- UNet block -----------------------------------------------------------------

/// Residual block, temporal block, transformer, temporal block. A temporal
/// slot holding `None` has been pruned.
#[derive(Clone, Debug, PartialEq)]
pub struct UNetBlock {
    pub res: ResBlock,
    pub temporal: [Option<TemporalBlock>; 2],
    pub transformer: Transformer,
}

impl UNetBlock {
    pub(crate) fn forward(&self, x: &Tensor, cond: &Tensor, mode: CrossAttentionMode) -> Result<Tensor> {
        let mut x = self.res.forward(x)?;
        if let Some(t) = &self.temporal[0] {
            x = t.forward(&x)?;
        }
        x = self.transformer.forward(&x, cond, mode)?;
        if let Some(t) = &self.temporal[1] {
            x = t.forward(&x)?;
        }
        Ok(x)
    }

    pub(crate) fn inject(&mut self, fun_factor: f64, targets: FunnelTargets) -> Result<usize> {
        let mut count = self.transformer.attn.inject(fun_factor, targets)?;
        if targets.conv {
            self.res.funnel = Some(csi_conv_pair(&self.res.pair, fun_factor)?);
            count += 1;
        }
        for t in self.temporal.iter_mut().flatten() {
            count += t.inject(fun_factor, targets)?;
        }
        Ok(count)
    }

    pub(crate) fn merge(&mut self) -> Result<()> {
        self.transformer.attn.merge()?;
        if let Some(f) = self.res.funnel.take() {
            self.res.pair = merge_conv(&self.res.pair, &f)?;
        }
        for t in self.temporal.iter_mut().flatten() {
            t.merge()?;
        }
        Ok(())
    }

    pub(crate) fn has_funnels(&self) -> bool {
        self.res.funnel.is_some()
            || self.transformer.attn.has_funnels()
            || self.temporal.iter().flatten().any(TemporalBlock::has_funnels)
    }

    pub(crate) fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor)) {
        f(format!("{prefix}.res.k1"), &self.res.pair.k1);
        f(format!("{prefix}.res.k2"), &self.res.pair.k2);
        if let Some(s) = &self.res.skip {
            f(format!("{prefix}.res.skip"), s);
        }
        for (i, t) in self.temporal.iter().enumerate() {
            let Some(t) = t else { continue };
            let p = format!("{prefix}.temporal{i}");
            f(format!("{p}.alpha"), &Tensor::vector(&[t.alpha]));
            match &t.layer {
                TemporalLayer::Attention(a) => a.visit(&format!("{p}.attn"), f),
                TemporalLayer::Conv { pair, .. } => {
                    f(format!("{p}.conv.k1"), &pair.k1);
                    f(format!("{p}.conv.k2"), &pair.k2);
                }
            }
        }
        let tr = &self.transformer;
        tr.attn.visit(&format!("{prefix}.attn"), f);
        f(format!("{prefix}.cross.wq"), &tr.cross.wq);
        f(format!("{prefix}.cross.wk"), &tr.cross.wk);
        f(format!("{prefix}.cross.wv"), &tr.cross.wv);
        f(format!("{prefix}.cross.wo"), &tr.cross.wo);
        f(format!("{prefix}.ff.w1"), &tr.ff.w1);
        f(format!("{prefix}.ff.w2"), &tr.ff.w2);
    }

    pub(crate) fn visit_mut(
        &mut self,
        prefix: &str,
        f: &mut dyn FnMut(String, &mut Tensor) -> Result<()>,
    ) -> Result<()> {
        f(format!("{prefix}.res.k1"), &mut self.res.pair.k1)?;
        f(format!("{prefix}.res.k2"), &mut self.res.pair.k2)?;
        if let Some(s) = &mut self.res.skip {
            f(format!("{prefix}.res.skip"), s)?;
        }
        for (i, t) in self.temporal.iter_mut().enumerate() {
            let Some(t) = t else { continue };
            let p = format!("{prefix}.temporal{i}");
            let mut alpha = Tensor::vector(&[t.alpha]);
            f(format!("{p}.alpha"), &mut alpha)?;
            t.alpha = alpha.data()[0];
            match &mut t.layer {
                TemporalLayer::Attention(a) => a.visit_mut(&format!("{p}.attn"), f)?,
                TemporalLayer::Conv { pair, .. } => {
                    f(format!("{p}.conv.k1"), &mut pair.k1)?;
                    f(format!("{p}.conv.k2"), &mut pair.k2)?;
                }
            }
        }
        let tr = &mut self.transformer;
        tr.attn.visit_mut(&format!("{prefix}.attn"), f)?;
        f(format!("{prefix}.cross.wq"), &mut tr.cross.wq)?;
        f(format!("{prefix}.cross.wk"), &mut tr.cross.wk)?;
        f(format!("{prefix}.cross.wv"), &mut tr.cross.wv)?;
        f(format!("{prefix}.cross.wo"), &mut tr.cross.wo)?;
        f(format!("{prefix}.ff.w1"), &mut tr.ff.w1)?;
        f(format!("{prefix}.ff.w2"), &mut tr.ff.w2)
    }

    /// Re-runs the shape checks of every layer after tensors were replaced.
    pub(crate) fn revalidate(&mut self) -> Result<()> {
        let r = &mut self.res;
        r.pair = ConvPair::new(r.pair.k1.clone(), r.pair.k2.clone(), r.pair.nonlinearity)?;
        if let Some(s) = &r.skip {
            if s.shape() != [r.pair.c_out(), r.pair.c_in()] {
                return Err(Error::shape(format!("residual skip {:?}", s.shape())));
            }
        }
        for t in self.temporal.iter_mut().flatten() {
            if !(t.alpha > 0.0 && t.alpha < 1.0) {
                return Err(Error::domain(format!("mix weight {} outside (0, 1)", t.alpha)));
            }
            match &mut t.layer {
                TemporalLayer::Attention(a) => a.revalidate()?,
                TemporalLayer::Conv { pair, .. } => {
                    *pair = ConvPair::new(pair.k1.clone(), pair.k2.clone(), pair.nonlinearity)?;
                }
            }
        }
        let tr = &mut self.transformer;
        tr.attn.revalidate()?;
        tr.cross = CrossAttnLayer::new(
            tr.cross.wq.clone(),
            tr.cross.wk.clone(),
            tr.cross.wv.clone(),
            tr.cross.wo.clone(),
            tr.cross.heads,
        )?;
        tr.ff = LinearPair::new(tr.ff.w1.clone(), tr.ff.w2.clone(), tr.ff.nonlinearity)?;
        Ok(())
    }
}
