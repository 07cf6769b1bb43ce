//! Analytic FLOP counts (`2 ×` multiply-adds) of the toy UNet.
//!
//! Counting works on a [`Skeleton`], the layer widths of a network without
//! its weights, so the same walk serves built networks (including funneled,
//! merged and pruned ones) and large presets that are never instantiated.
//! Elementwise work (activations, residual adds, resampling, gating) is not
//! counted; softmax evaluations are tracked as a separate row count.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{CrossAttentionMode, Geometry, Schedule, ToyUNetSpec};
use crate::attnopt::{full_flops, optimized_flops, CrossAttnDims};
use crate::error::Result;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvDims {
    pub kh: usize,
    pub kw: usize,
    pub c_in: usize,
    pub c_out: usize,
}

/// Two convolutions, optionally with an unmerged funnel of width `funnel`
/// (two extra 1×1 mixes).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvPairDims {
    pub k1: ConvDims,
    pub k2: ConvDims,
    pub funnel: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ResDims {
    pub pair: ConvPairDims,
    /// `(c_in, c_out)` of the 1×1 skip projection.
    pub skip: Option<(usize, usize)>,
}

/// One attention head; funnel widths are present while unmerged.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct HeadDims {
    pub c_in: usize,
    pub c_qk: usize,
    pub c_v: usize,
    pub c_out: usize,
    pub qk_funnel: Option<usize>,
    pub vo_funnel: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum TemporalDims {
    Attention(Vec<HeadDims>),
    Conv(ConvPairDims),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlockDims {
    pub res: ResDims,
    pub temporal: [Option<TemporalDims>; 2],
    pub attn: Vec<HeadDims>,
    pub cross: CrossAttnDims,
    /// `(c, hidden)` of the feed-forward pair.
    pub ff: (usize, usize),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Skeleton {
    pub conv_in: ConvDims,
    pub down: Vec<BlockDims>,
    pub mid: Vec<BlockDims>,
    pub up: Vec<BlockDims>,
    pub conv_out: ConvDims,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerFlops {
    pub flops: u64,
    pub softmax_rows: u64,
}

impl std::ops::AddAssign for LayerFlops {
    fn add_assign(&mut self, rhs: Self) {
        self.flops += rhs.flops;
        self.softmax_rows += rhs.softmax_rows;
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockFlops {
    pub total: u64,
    pub softmax_rows: u64,
    pub layers: BTreeMap<String, LayerFlops>,
}

impl BlockFlops {
    fn push(&mut self, name: &str, f: LayerFlops) {
        self.total += f.flops;
        self.softmax_rows += f.softmax_rows;
        *self.layers.entry(name.to_string()).or_default() += f;
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlopReport {
    pub total: u64,
    pub softmax_rows: u64,
    pub blocks: BTreeMap<String, BlockFlops>,
}

impl FlopReport {
    fn push(&mut self, block: &str, b: BlockFlops) {
        self.total += b.total;
        self.softmax_rows += b.softmax_rows;
        self.blocks.insert(block.to_string(), b);
    }

    /// Softmax rows in all cross-attention layers.
    pub fn cross_attention_softmax_rows(&self) -> u64 {
        self.blocks
            .values()
            .filter_map(|b| b.layers.get("cross_attn"))
            .map(|l| l.softmax_rows)
            .sum()
    }

    /// Relative reduction of `self` against `baseline`, in percent.
    pub fn reduction_percent(&self, baseline: &FlopReport) -> f64 {
        100.0 * (1.0 - self.total as f64 / baseline.total as f64)
    }
}

pub fn conv_flops(d: ConvDims, positions: usize) -> u64 {
    2 * (d.kh * d.kw * d.c_in * d.c_out * positions) as u64
}

pub fn linear_flops(c_in: usize, c_out: usize, positions: usize) -> u64 {
    2 * (c_in * c_out * positions) as u64
}

fn pair_flops(d: ConvPairDims, positions: usize) -> u64 {
    let mut f = conv_flops(d.k1, positions) + conv_flops(d.k2, positions);
    if let Some(cp) = d.funnel {
        f += 2 * linear_flops(d.k1.c_out, cp, positions);
    }
    f
}

/// One head over `sequences` independent sequences of `tokens` tokens.
pub fn head_flops(h: HeadDims, tokens: usize, sequences: usize) -> LayerFlops {
    let l = tokens;
    let mut f = linear_flops(h.c_in, h.c_qk, l) * 2 + linear_flops(h.c_in, h.c_v, l);
    let w_qk = match h.qk_funnel {
        Some(cp) => {
            f += 2 * linear_flops(h.c_qk, cp, l);
            cp
        }
        None => h.c_qk,
    };
    let w_v = match h.vo_funnel {
        Some(cp) => {
            f += 2 * linear_flops(h.c_v, cp, l);
            cp
        }
        None => h.c_v,
    };
    f += 2 * (l * l * w_qk) as u64 + 2 * (l * l * w_v) as u64;
    f += linear_flops(h.c_v, h.c_out, l);
    LayerFlops {
        flops: f * sequences as u64,
        softmax_rows: (l * sequences) as u64,
    }
}

fn attention_flops(heads: &[HeadDims], tokens: usize, sequences: usize) -> LayerFlops {
    let mut total = LayerFlops::default();
    for &h in heads {
        total += head_flops(h, tokens, sequences);
    }
    total
}

fn temporal_flops(d: &TemporalDims, g: Geometry) -> LayerFlops {
    match d {
        TemporalDims::Attention(heads) => attention_flops(heads, g.frames, g.height * g.width),
        TemporalDims::Conv(pair) => LayerFlops {
            flops: pair_flops(*pair, g.positions()),
            softmax_rows: 0,
        },
    }
}

/// FLOPs of one temporal block at geometry `g`.
pub fn temporal_block_flops(d: &TemporalDims, g: Geometry) -> u64 {
    temporal_flops(d, g).flops
}

fn block_flops(b: &BlockDims, g: Geometry, mode: CrossAttentionMode) -> BlockFlops {
    let pos = g.positions();
    let mut out = BlockFlops::default();
    let mut res = pair_flops(b.res.pair, pos);
    if let Some((ci, co)) = b.res.skip {
        res += linear_flops(ci, co, pos);
    }
    out.push(
        "res",
        LayerFlops {
            flops: res,
            softmax_rows: 0,
        },
    );
    let names = ["temporal_a", "temporal_b"];
    if let Some(t) = &b.temporal[0] {
        out.push(names[0], temporal_flops(t, g));
    }
    let tokens = g.height * g.width;
    out.push("attn", attention_flops(&b.attn, tokens, g.frames));
    let c = match mode {
        CrossAttentionMode::Full => full_flops(b.cross, tokens, 1),
        CrossAttentionMode::Optimized => optimized_flops(b.cross),
    };
    out.push(
        "cross_attn",
        LayerFlops {
            flops: c.total() * g.frames as u64,
            softmax_rows: c.softmax_rows * g.frames as u64,
        },
    );
    let (ci, hidden) = b.ff;
    out.push(
        "ff",
        LayerFlops {
            flops: 2 * linear_flops(ci, hidden, pos),
            softmax_rows: 0,
        },
    );
    if let Some(t) = &b.temporal[1] {
        out.push(names[1], temporal_flops(t, g));
    }
    out
}

/// Counts `skeleton` laid out on the geometry schedule of `spec`.
pub fn count(skeleton: &Skeleton, spec: &ToyUNetSpec) -> Result<FlopReport> {
    let sched: Schedule = spec.schedule()?;
    let mode = spec.cross_attention;
    let mut report = FlopReport::default();
    let single = |name: &str, d: ConvDims, g: Geometry| {
        let mut b = BlockFlops::default();
        b.push(
            name,
            LayerFlops {
                flops: conv_flops(d, g.positions()),
                softmax_rows: 0,
            },
        );
        b
    };
    report.push("conv_in", single("conv", skeleton.conv_in, sched.input));
    for (i, (b, &g)) in skeleton.down.iter().zip(&sched.down).enumerate() {
        report.push(&format!("down{i}"), block_flops(b, g, mode));
    }
    for (i, b) in skeleton.mid.iter().enumerate() {
        report.push(&format!("mid{i}"), block_flops(b, sched.mid, mode));
    }
    for (i, (b, &g)) in skeleton.up.iter().zip(&sched.up).enumerate() {
        report.push(&format!("up{i}"), block_flops(b, g, mode));
    }
    report.push("conv_out", single("conv", skeleton.conv_out, sched.input));
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_conv_is_two_flops() {
        let d = ConvDims {
            kh: 1,
            kw: 1,
            c_in: 1,
            c_out: 1,
        };
        assert_eq!(conv_flops(d, 1), 2);
        assert_eq!(linear_flops(3, 4, 5), 120);
    }

    #[test]
    fn head_count_by_hand() {
        let h = HeadDims {
            c_in: 4,
            c_qk: 2,
            c_v: 2,
            c_out: 4,
            qk_funnel: None,
            vo_funnel: None,
        };
        // projections 2·3·4·2·3 = 144, scores + weighted sum 2·9·2·2 = 72,
        // output 2·3·2·4 = 48
        let f = head_flops(h, 3, 1);
        assert_eq!(f.flops, 144 + 72 + 48);
        assert_eq!(f.softmax_rows, 3);
        assert_eq!(head_flops(h, 3, 5).flops, 5 * 264);
    }
}
