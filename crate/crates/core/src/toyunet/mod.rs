//! A forward-only spatio-temporal UNet at toy scale.
//!
//! Layout: `conv_in`, `D` down blocks, `M` mid blocks, `D` up blocks,
//! `conv_out`. Every block is
//!
//! ```text
//! ResBlock → temporal block → transformer (self-attn, cross-attn, FF) → temporal block
//! ```
//!
//! Each down block halves the spatial size after running; each up block
//! upsamples to its skip connection, concatenates it and runs. Temporal
//! and/or spatial multiscaling downscales once more after the first down
//! block and upscales again just before the last up block. The default
//! layout has `2·(4 + 1 + 4) = 18` temporal blocks.
//!
//! Weights are random and deterministic in the seed; the network is never
//! trained and exists to exercise the funnel, pruning and rewrite
//! transformations end to end.

pub mod flops;
mod io;
mod layers;
pub mod ops;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::pruning::{sample_fixed_size, select_top_n, solve_inclusion, GateSample};
use crate::tensor::Tensor;

pub use flops::{count, FlopReport, Skeleton};
pub use io::{load_net, save_net, NET_MANIFEST};
pub use layers::{
    CrossAttentionMode, FunnelTargets, ResBlock, SelfAttention, TemporalBlock, TemporalLayer, Transformer, UNetBlock,
};
pub use ops::{
    spatial_downscale, spatial_upscale, temporal_downscale, temporal_round_trip, temporal_upscale, DownscaleOp,
};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemporalKind {
    #[default]
    TemporalAttention,
    TemporalConv,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Multiscaling {
    #[default]
    None,
    Temporal,
    Spatial,
    Both,
}

impl Multiscaling {
    pub const ALL: [Multiscaling; 4] = [
        Multiscaling::None,
        Multiscaling::Temporal,
        Multiscaling::Spatial,
        Multiscaling::Both,
    ];

    pub fn temporal(self) -> bool {
        matches!(self, Multiscaling::Temporal | Multiscaling::Both)
    }

    pub fn spatial(self) -> bool {
        matches!(self, Multiscaling::Spatial | Multiscaling::Both)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyUNetSpec {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub latent_channels: usize,
    /// Channel width per stage; stages past the end reuse the last entry.
    pub channels: Vec<usize>,
    pub down_blocks: usize,
    pub mid_blocks: usize,
    pub up_blocks: usize,
    pub temporal_kind: TemporalKind,
    pub cond_width: usize,
    pub heads: usize,
    pub ff_mult: usize,
    pub kernel: usize,
    pub temporal_kernel: usize,
    pub multiscaling: Multiscaling,
    pub downscale: DownscaleOp,
    pub cross_attention: CrossAttentionMode,
    pub seed: u64,
}

impl Default for ToyUNetSpec {
    fn default() -> Self {
        ToyUNetSpec {
            frames: 14,
            height: 32,
            width: 16,
            latent_channels: 4,
            channels: vec![16, 32, 64],
            down_blocks: 4,
            mid_blocks: 1,
            up_blocks: 4,
            temporal_kind: TemporalKind::TemporalAttention,
            cond_width: 32,
            heads: 2,
            ff_mult: 2,
            kernel: 3,
            temporal_kernel: 3,
            multiscaling: Multiscaling::None,
            downscale: DownscaleOp::Average,
            cross_attention: CrossAttentionMode::Full,
            seed: 0,
        }
    }
}

/// Frames and spatial size at which a stage runs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Geometry {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
}

impl Geometry {
    pub fn positions(&self) -> usize {
        self.frames * self.height * self.width
    }

    fn halved(self, temporal: bool, spatial: bool) -> Geometry {
        Geometry {
            frames: if temporal && self.frames >= 2 {
                self.frames.div_ceil(2)
            } else {
                self.frames
            },
            height: if spatial { self.height.div_ceil(2) } else { self.height },
            width: if spatial { self.width.div_ceil(2) } else { self.width },
        }
    }
}

/// Geometry of every stage for a spec.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schedule {
    pub input: Geometry,
    pub down: Vec<Geometry>,
    pub mid: Geometry,
    pub up: Vec<Geometry>,
    /// After the first down block, before multiscaling.
    pub before_multiscale: Geometry,
    /// After the first down block and multiscaling.
    pub after_multiscale: Geometry,
}

/// `(c_in, c_out)` of one block.
type ChannelsIo = (usize, usize);

impl ToyUNetSpec {
    /// Preset at the scale of the full video model, for FLOP counting only.
    pub fn svd_like() -> Self {
        ToyUNetSpec {
            frames: 14,
            height: 64,
            width: 32,
            channels: vec![320, 640, 1280],
            cond_width: 1024,
            heads: 8,
            ff_mult: 4,
            ..ToyUNetSpec::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("frames", self.frames),
            ("height", self.height),
            ("width", self.width),
            ("latent_channels", self.latent_channels),
            ("down_blocks", self.down_blocks),
            ("cond_width", self.cond_width),
            ("heads", self.heads),
            ("ff_mult", self.ff_mult),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::arg(format!("{name} must be positive")));
        }
        if self.up_blocks != self.down_blocks {
            return Err(Error::arg(format!(
                "up_blocks ({}) must equal down_blocks ({}) to pair skip connections",
                self.up_blocks, self.down_blocks
            )));
        }
        if self.channels.is_empty() || self.channels.contains(&0) {
            return Err(Error::arg("channel widths must be non-empty and positive"));
        }
        if let Some(c) = self.channels.iter().find(|&&c| c % self.heads != 0) {
            return Err(Error::arg(format!(
                "channel width {c} is not divisible by {} heads",
                self.heads
            )));
        }
        if self.kernel.is_multiple_of(2) || self.temporal_kernel.is_multiple_of(2) {
            return Err(Error::arg("kernel sizes must be odd"));
        }
        Ok(())
    }

    pub fn stage_channels(&self, i: usize) -> usize {
        self.channels[i.min(self.channels.len() - 1)]
    }

    pub fn temporal_block_count(&self) -> usize {
        2 * (self.down_blocks + self.mid_blocks + self.up_blocks)
    }

    pub fn latent_shape(&self) -> [usize; 4] {
        [self.frames, self.latent_channels, self.height, self.width]
    }

    pub fn schedule(&self) -> Result<Schedule> {
        self.validate()?;
        let input = Geometry {
            frames: self.frames,
            height: self.height,
            width: self.width,
        };
        let ms = self.multiscaling;
        let mut g = input;
        let mut down = Vec::with_capacity(self.down_blocks);
        let (mut before, mut after) = (g, g);
        for i in 0..self.down_blocks {
            down.push(g);
            g = g.halved(false, true);
            if i == 0 {
                before = g;
                g = g.halved(ms.temporal(), ms.spatial());
                after = g;
            }
        }
        let mid = g;
        let up = down.iter().rev().copied().collect();
        Ok(Schedule {
            input,
            down,
            mid,
            up,
            before_multiscale: before,
            after_multiscale: after,
        })
    }

    /// `(c_in, c_out)` of the residual block of each down, mid and up block.
    fn block_channels(&self) -> (Vec<ChannelsIo>, Vec<ChannelsIo>, Vec<ChannelsIo>) {
        let d = self.down_blocks;
        let mut prev = self.stage_channels(0);
        let down = (0..d)
            .map(|i| {
                let c = self.stage_channels(i);
                let io = (prev, c);
                prev = c;
                io
            })
            .collect();
        let mid = (0..self.mid_blocks).map(|_| (prev, prev)).collect();
        let up = (0..d)
            .map(|j| {
                let c = self.stage_channels(d - 1 - j);
                let io = (prev + c, c);
                prev = c;
                io
            })
            .collect();
        (down, mid, up)
    }

    /// Layer widths of the network this spec builds.
    pub fn skeleton(&self) -> Result<Skeleton> {
        use flops::*;
        self.validate()?;
        let conv = |c_in, c_out, k: usize, kw: usize| ConvDims { kh: k, kw, c_in, c_out };
        let heads = |c: usize| {
            let d = c / self.heads;
            vec![
                HeadDims {
                    c_in: c,
                    c_qk: d,
                    c_v: d,
                    c_out: c,
                    qk_funnel: None,
                    vo_funnel: None,
                };
                self.heads
            ]
        };
        let block = |(ci, co): (usize, usize)| {
            let temporal = match self.temporal_kind {
                TemporalKind::TemporalAttention => TemporalDims::Attention(heads(co)),
                TemporalKind::TemporalConv => TemporalDims::Conv(ConvPairDims {
                    k1: conv(co, co, self.temporal_kernel, 1),
                    k2: conv(co, co, self.temporal_kernel, 1),
                    funnel: None,
                }),
            };
            BlockDims {
                res: ResDims {
                    pair: ConvPairDims {
                        k1: conv(ci, co, self.kernel, self.kernel),
                        k2: conv(co, co, self.kernel, self.kernel),
                        funnel: None,
                    },
                    skip: (ci != co).then_some((ci, co)),
                },
                temporal: [Some(temporal.clone()), Some(temporal)],
                attn: heads(co),
                cross: crate::attnopt::CrossAttnDims {
                    c_in: co,
                    c_ctx: self.cond_width,
                    c_head: co,
                    c_out: co,
                    heads: self.heads,
                },
                ff: (co, self.ff_mult * co),
            }
        };
        let (down, mid, up) = self.block_channels();
        let c0 = self.stage_channels(0);
        Ok(Skeleton {
            conv_in: conv(self.latent_channels, c0, self.kernel, self.kernel),
            down: down.into_iter().map(block).collect(),
            mid: mid.into_iter().map(block).collect(),
            up: up.into_iter().map(block).collect(),
            conv_out: conv(c0, self.latent_channels, self.kernel, self.kernel),
        })
    }
}

/// FLOPs of the network a spec builds, without building it.
pub fn count_flops_spec(spec: &ToyUNetSpec) -> Result<FlopReport> {
    count(&spec.skeleton()?, spec)
}

/// Geometry observed at each stage of a forward pass.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trace {
    pub stages: Vec<(String, Geometry)>,
}

impl Trace {
    fn record(&mut self, name: impl Into<String>, x: &Tensor) {
        let s = x.shape();
        self.stages.push((
            name.into(),
            Geometry {
                frames: s[0],
                height: s[2],
                width: s[3],
            },
        ));
    }

    pub fn get(&self, name: &str) -> Option<Geometry> {
        self.stages.iter().find(|(n, _)| n == name).map(|(_, g)| *g)
    }

    /// Frame count inside the multiscaled section (at the middle block).
    pub fn internal_frames(&self) -> Option<usize> {
        self.get("mid0").map(|g| g.frames)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ToyUNet {
    pub spec: ToyUNetSpec,
    pub conv_in: Tensor,
    pub down: Vec<UNetBlock>,
    pub mid: Vec<UNetBlock>,
    pub up: Vec<UNetBlock>,
    pub conv_out: Tensor,
}

impl ToyUNet {
    pub fn build(spec: &ToyUNetSpec) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let k = spec.kernel;
        let c0 = spec.stage_channels(0);
        let conv_in = layers::conv_kernel(k, k, c0, spec.latent_channels, 1.0, &mut rng);
        let (down, mid, up) = spec.block_channels();
        let make = |(ci, co): (usize, usize), rng: &mut ChaCha8Rng| -> Result<UNetBlock> {
            let res = ResBlock::random(ci, co, k, rng)?;
            let t0 = TemporalBlock::random(spec.temporal_kind, co, spec.heads, spec.temporal_kernel, rng)?;
            let transformer = Transformer::random(co, spec.cond_width, spec.heads, spec.ff_mult, rng)?;
            let t1 = TemporalBlock::random(spec.temporal_kind, co, spec.heads, spec.temporal_kernel, rng)?;
            Ok(UNetBlock {
                res,
                temporal: [Some(t0), Some(t1)],
                transformer,
            })
        };
        let down = down
            .into_iter()
            .map(|io| make(io, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let mid = mid
            .into_iter()
            .map(|io| make(io, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let up = up
            .into_iter()
            .map(|io| make(io, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let conv_out = layers::conv_kernel(k, k, spec.latent_channels, c0, 1.0, &mut rng);
        Ok(ToyUNet {
            spec: spec.clone(),
            conv_in,
            down,
            mid,
            up,
            conv_out,
        })
    }

    /// A random latent and conditioning token matching the spec.
    pub fn random_inputs<R: Rng + ?Sized>(&self, rng: &mut R) -> (Tensor, Tensor) {
        (
            Tensor::randn(&self.spec.latent_shape(), 1.0, rng),
            Tensor::randn(&[1, self.spec.cond_width], 1.0, rng),
        )
    }

    pub fn forward(&self, latent: &Tensor, cond: &Tensor) -> Result<Tensor> {
        Ok(self.forward_traced(latent, cond)?.0)
    }

    pub fn forward_traced(&self, latent: &Tensor, cond: &Tensor) -> Result<(Tensor, Trace)> {
        let spec = &self.spec;
        if latent.shape() != spec.latent_shape() {
            return Err(Error::shape(format!(
                "latent {:?} does not match spec {:?}",
                latent.shape(),
                spec.latent_shape()
            )));
        }
        if cond.shape() != [1, spec.cond_width] {
            return Err(Error::shape(format!(
                "conditioning token {:?} must be 1 x {}",
                cond.shape(),
                spec.cond_width
            )));
        }
        latent.ensure_finite("latent")?;
        cond.ensure_finite("conditioning token")?;
        let ms = spec.multiscaling;
        let mode = spec.cross_attention;
        let mut trace = Trace::default();

        let mut x = ops::map_frames(latent, |f| crate::nn::conv2d(f, &self.conv_in))?;
        let mut skips = Vec::with_capacity(self.down.len());
        for (i, b) in self.down.iter().enumerate() {
            trace.record(format!("down{i}"), &x);
            x = b.forward(&x, cond, mode)?;
            skips.push(x.clone());
            x = spatial_downscale(&x, spec.downscale)?;
            if i == 0 {
                if ms.temporal() {
                    x = temporal_downscale(&x, spec.downscale)?;
                }
                if ms.spatial() {
                    x = spatial_downscale(&x, spec.downscale)?;
                }
                trace.record("multiscale_down", &x);
            }
        }
        for (i, b) in self.mid.iter().enumerate() {
            trace.record(format!("mid{i}"), &x);
            x = b.forward(&x, cond, mode)?;
        }
        let last = self.up.len() - 1;
        let before = spec.schedule()?.before_multiscale;
        for (j, b) in self.up.iter().enumerate() {
            if j == last {
                if ms.spatial() {
                    x = spatial_upscale(&x, before.height, before.width)?;
                }
                if ms.temporal() {
                    x = temporal_upscale(&x, before.frames)?;
                }
                trace.record("multiscale_up", &x);
            }
            let skip = skips.pop().expect("one skip per down block");
            let s = skip.shape();
            x = spatial_upscale(&x, s[2], s[3])?;
            x = ops::concat_channels(&x, &skip)?;
            trace.record(format!("up{j}"), &x);
            x = b.forward(&x, cond, mode)?;
        }
        let out = ops::map_frames(&x, |f| crate::nn::conv2d(f, &self.conv_out))?;
        trace.record("output", &out);
        Ok((out, trace))
    }

    /// Blocks in execution order.
    pub fn blocks(&self) -> impl Iterator<Item = &UNetBlock> {
        self.down.iter().chain(&self.mid).chain(&self.up)
    }

    pub fn blocks_mut(&mut self) -> impl Iterator<Item = &mut UNetBlock> {
        self.down
            .iter_mut()
            .chain(self.mid.iter_mut())
            .chain(self.up.iter_mut())
    }

    /// Temporal-block slots in execution order; pruned slots are `None`.
    pub fn temporal_slots(&self) -> Vec<Option<&TemporalBlock>> {
        self.blocks()
            .flat_map(|b| b.temporal.iter().map(Option::as_ref))
            .collect()
    }

    fn temporal_slots_mut(&mut self) -> Vec<&mut Option<TemporalBlock>> {
        self.blocks_mut().flat_map(|b| b.temporal.iter_mut()).collect()
    }

    pub fn temporal_block_count(&self) -> usize {
        self.spec.temporal_block_count()
    }

    /// Block name and layer key of temporal slot `i`, as used in
    /// [`FlopReport`].
    pub fn temporal_slot_name(&self, i: usize) -> (String, &'static str) {
        let block = i / 2;
        let (d, m) = (self.down.len(), self.mid.len());
        let name = if block < d {
            format!("down{block}")
        } else if block < d + m {
            format!("mid{}", block - d)
        } else {
            format!("up{}", block - d - m)
        };
        (
            name,
            if i.is_multiple_of(2) {
                "temporal_a"
            } else {
                "temporal_b"
            },
        )
    }

    /// Mix weights `α` of the temporal slots (pruned slots report `None`).
    pub fn alphas(&self) -> Vec<Option<f64>> {
        self.temporal_slots().iter().map(|t| t.map(|t| t.alpha)).collect()
    }

    /// Sets the gate of every present temporal block.
    pub fn with_gates(&self, z: &[bool]) -> Result<Self> {
        let n = self.temporal_block_count();
        if z.len() != n {
            return Err(Error::shape(format!("{} gates for {n} temporal blocks", z.len())));
        }
        let mut net = self.clone();
        for (slot, &zi) in net.temporal_slots_mut().into_iter().zip(z) {
            if let Some(t) = slot {
                t.gate = Some(zi);
            }
        }
        Ok(net)
    }

    pub fn clear_gates(&self) -> Self {
        let mut net = self.clone();
        for t in net.temporal_slots_mut().into_iter().flatten() {
            t.gate = None;
        }
        net
    }

    /// Draws a fixed-size sample of `n` blocks with inclusion probabilities
    /// solved from `q` and wires it in as gates.
    pub fn inject_gates<R: Rng + ?Sized>(&self, q: &[f64], n: usize, rng: &mut R) -> Result<(Self, GateSample)> {
        self.check_budget(q, n)?;
        let p = solve_inclusion(q, n)?.p;
        let sample = sample_fixed_size(&p, n, rng)?;
        Ok((self.with_gates(&sample.z)?, sample))
    }

    /// Deletes every temporal block outside the top-`n` by importance.
    pub fn prune(&self, q: &[f64], n: usize) -> Result<Self> {
        self.check_budget(q, n)?;
        let keep = select_top_n(q, n)?;
        let mut net = self.clone();
        for (i, slot) in net.temporal_slots_mut().into_iter().enumerate() {
            if keep.binary_search(&i).is_err() {
                *slot = None;
            }
        }
        Ok(net)
    }

    fn check_budget(&self, q: &[f64], n: usize) -> Result<()> {
        let big_n = self.temporal_block_count();
        if q.len() != big_n {
            return Err(Error::shape(format!(
                "{} importances for {big_n} temporal blocks",
                q.len()
            )));
        }
        if n > big_n {
            return Err(Error::arg(format!("budget {n} exceeds {big_n} temporal blocks")));
        }
        Ok(())
    }

    /// Installs CSI funnels (kept unmerged) on all matching layer pairs.
    pub fn inject_funnels(&self, fun_factor: f64, targets: FunnelTargets) -> Result<Self> {
        crate::funnel::reduced_width(fun_factor, 1)?;
        let mut net = self.clone();
        let mut installed = 0;
        for b in net.blocks_mut() {
            installed += b.inject(fun_factor, targets)?;
        }
        if installed == 0 {
            log::warn!("no layer pairs match funnel targets {targets:?}");
        }
        Ok(net)
    }

    /// Folds every installed funnel into its neighbouring weights.
    pub fn merge_funnels(&self) -> Result<Self> {
        let mut net = self.clone();
        for b in net.blocks_mut() {
            b.merge()?;
        }
        Ok(net)
    }

    pub fn has_funnels(&self) -> bool {
        self.blocks().any(UNetBlock::has_funnels)
    }

    /// Layer widths as currently configured.
    pub fn skeleton(&self) -> Skeleton {
        let conv = |k: &Tensor| flops::ConvDims {
            kh: k.shape()[0],
            kw: k.shape()[1],
            c_out: k.shape()[2],
            c_in: k.shape()[3],
        };
        let block = |b: &UNetBlock| flops::BlockDims {
            res: b.res.dims(),
            temporal: [
                b.temporal[0].as_ref().map(TemporalBlock::dims),
                b.temporal[1].as_ref().map(TemporalBlock::dims),
            ],
            attn: b.transformer.attn.dims(),
            cross: b.transformer.cross.dims(),
            ff: (b.transformer.ff.c_in(), b.transformer.ff.c_inner()),
        };
        Skeleton {
            conv_in: conv(&self.conv_in),
            down: self.down.iter().map(block).collect(),
            mid: self.mid.iter().map(block).collect(),
            up: self.up.iter().map(block).collect(),
            conv_out: conv(&self.conv_out),
        }
    }

    pub fn count_flops(&self) -> Result<FlopReport> {
        count(&self.skeleton(), &self.spec)
    }

    /// Visits every weight tensor with a stable name.
    pub fn visit_tensors(&self, f: &mut dyn FnMut(String, &Tensor)) {
        f("conv_in".into(), &self.conv_in);
        for (i, b) in self.down.iter().enumerate() {
            b.visit(&format!("down{i}"), f);
        }
        for (i, b) in self.mid.iter().enumerate() {
            b.visit(&format!("mid{i}"), f);
        }
        for (i, b) in self.up.iter().enumerate() {
            b.visit(&format!("up{i}"), f);
        }
        f("conv_out".into(), &self.conv_out);
    }

    pub(crate) fn visit_tensors_mut(&mut self, f: &mut dyn FnMut(String, &mut Tensor) -> Result<()>) -> Result<()> {
        f("conv_in".into(), &mut self.conv_in)?;
        for (i, b) in self.down.iter_mut().enumerate() {
            b.visit_mut(&format!("down{i}"), f)?;
        }
        for (i, b) in self.mid.iter_mut().enumerate() {
            b.visit_mut(&format!("mid{i}"), f)?;
        }
        for (i, b) in self.up.iter_mut().enumerate() {
            b.visit_mut(&format!("up{i}"), f)?;
        }
        f("conv_out".into(), &mut self.conv_out)
    }

    /// Number of scalar weights, mix weights included.
    pub fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit_tensors(&mut |_, t| n += t.len());
        n
    }

    /// SHA-256 over tensor names, shapes and values.
    pub fn weights_digest(&self) -> String {
        let mut h = Sha256::new();
        self.visit_tensors(&mut |name, t| {
            h.update(name.as_bytes());
            crate::tensor::update_digest(&mut h, t);
        });
        hex::encode(h.finalize())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec() -> ToyUNetSpec {
        ToyUNetSpec {
            frames: 4,
            height: 8,
            width: 4,
            channels: vec![4, 8],
            down_blocks: 2,
            up_blocks: 2,
            cond_width: 6,
            ..ToyUNetSpec::default()
        }
    }

    #[test]
    fn default_schedule() {
        let s = ToyUNetSpec::default().schedule().unwrap();
        assert_eq!(
            s.mid,
            Geometry {
                frames: 14,
                height: 2,
                width: 1
            }
        );
        assert_eq!(s.down.len(), 4);
        assert_eq!(s.up[3], s.input);
        let t = ToyUNetSpec {
            multiscaling: Multiscaling::Temporal,
            ..ToyUNetSpec::default()
        };
        assert_eq!(t.schedule().unwrap().mid.frames, 7);
        assert_eq!(ToyUNetSpec::default().temporal_block_count(), 18);
    }

    #[test]
    fn build_is_deterministic() {
        let spec = small_spec();
        let a = ToyUNet::build(&spec).unwrap();
        let b = ToyUNet::build(&spec).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.weights_digest(), b.weights_digest());
        let c = ToyUNet::build(&ToyUNetSpec { seed: 1, ..spec }).unwrap();
        assert_ne!(a.weights_digest(), c.weights_digest());
    }

    #[test]
    fn skeleton_of_built_net_matches_spec() {
        for kind in [TemporalKind::TemporalAttention, TemporalKind::TemporalConv] {
            let spec = ToyUNetSpec {
                temporal_kind: kind,
                ..small_spec()
            };
            let net = ToyUNet::build(&spec).unwrap();
            assert_eq!(net.skeleton(), spec.skeleton().unwrap());
        }
    }

    #[test]
    fn forward_preserves_shape_and_traces_internal_frames() {
        for ms in Multiscaling::ALL {
            let spec = ToyUNetSpec {
                multiscaling: ms,
                ..small_spec()
            };
            let net = ToyUNet::build(&spec).unwrap();
            let latent = Tensor::zeros(&spec.latent_shape());
            let cond = Tensor::zeros(&[1, spec.cond_width]);
            let (out, trace) = net.forward_traced(&latent, &cond).unwrap();
            assert_eq!(out.shape(), latent.shape());
            assert!(out.is_finite());
            let expect = if ms.temporal() { 2 } else { 4 };
            assert_eq!(trace.internal_frames(), Some(expect));
        }
    }

    #[test]
    fn rejects_bad_specs_and_inputs() {
        assert!(ToyUNetSpec {
            up_blocks: 3,
            ..ToyUNetSpec::default()
        }
        .validate()
        .is_err());
        assert!(ToyUNetSpec {
            channels: vec![15],
            ..ToyUNetSpec::default()
        }
        .validate()
        .is_err());
        let net = ToyUNet::build(&small_spec()).unwrap();
        assert!(net
            .forward(&Tensor::zeros(&[4, 4, 8, 5]), &Tensor::zeros(&[1, 6]))
            .is_err());
        assert!(net
            .forward(&Tensor::zeros(&[4, 4, 8, 4]), &Tensor::zeros(&[2, 6]))
            .is_err());
    }

    #[test]
    fn spec_json_defaults() {
        let spec: ToyUNetSpec = serde_json::from_str(r#"{"frames": 6}"#).unwrap();
        assert_eq!(spec.frames, 6);
        assert_eq!(spec.channels, vec![16, 32, 64]);
        assert!(serde_json::from_str::<ToyUNetSpec>(r#"{"frame": 6}"#).is_err());
    }
}
