//! Layout changes and resampling on `[T, C, H, W]` latents.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// How a factor-2 downscale combines neighbours.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DownscaleOp {
    /// Mean of each pair (or 2×2 window); a trailing odd element passes
    /// through on its own.
    #[default]
    Average,
    /// Keep every second element, starting with the first.
    Strided,
}

pub(crate) fn dims4(x: &Tensor) -> Result<(usize, usize, usize, usize)> {
    match x.shape() {
        &[t, c, h, w] => Ok((t, c, h, w)),
        s => Err(Error::shape(format!("expected a [T, C, H, W] latent, got {s:?}"))),
    }
}

pub(crate) fn frame(x: &Tensor, t: usize) -> Tensor {
    let (_, c, h, w) = dims4(x).expect("latent");
    let n = c * h * w;
    Tensor::new(vec![c, h, w], x.data()[t * n..(t + 1) * n].to_vec()).expect("frame shape")
}

pub(crate) fn stack(frames: Vec<Tensor>) -> Result<Tensor> {
    let shape = frames
        .first()
        .ok_or_else(|| Error::shape("no frames to stack"))?
        .shape()
        .to_vec();
    let mut data = Vec::with_capacity(frames.len() * frames[0].len());
    for f in &frames {
        if f.shape() != shape.as_slice() {
            return Err(Error::shape(format!("frame {:?} differs from {shape:?}", f.shape())));
        }
        data.extend_from_slice(f.data());
    }
    let mut full = vec![frames.len()];
    full.extend(shape);
    Tensor::new(full, data)
}

/// Applies `f` to every `[C, H, W]` frame.
pub(crate) fn map_frames(x: &Tensor, mut f: impl FnMut(&Tensor) -> Result<Tensor>) -> Result<Tensor> {
    let t = dims4(x)?.0;
    stack((0..t).map(|i| f(&frame(x, i))).collect::<Result<Vec<_>>>()?)
}

/// `[C, H, W]` to `[H·W, C]` tokens.
pub(crate) fn frame_tokens(f: &Tensor) -> Tensor {
    let (c, hw) = (f.shape()[0], f.shape()[1] * f.shape()[2]);
    Tensor::new(vec![c, hw], f.data().to_vec())
        .expect("frame shape")
        .transpose()
}

pub(crate) fn tokens_frame(tokens: &Tensor, h: usize, w: usize) -> Result<Tensor> {
    let c = tokens.cols();
    tokens.transpose().reshape(&[c, h, w])
}

/// `[T, C, H, W]` to `[C, T, H·W]`, the layout of a convolution along time.
pub(crate) fn time_major(x: &Tensor) -> Tensor {
    let (t, c, h, w) = dims4(x).expect("latent");
    let hw = h * w;
    let mut out = Tensor::zeros(&[c, t, hw]);
    let (src, dst) = (x.data(), out.data_mut());
    for ti in 0..t {
        for ci in 0..c {
            let s = (ti * c + ci) * hw;
            let d = (ci * t + ti) * hw;
            dst[d..d + hw].copy_from_slice(&src[s..s + hw]);
        }
    }
    out
}

pub(crate) fn from_time_major(y: &Tensor, h: usize, w: usize) -> Result<Tensor> {
    let (c, t, hw) = match y.shape() {
        &[c, t, hw] if hw == h * w => (c, t, hw),
        s => return Err(Error::shape(format!("time-major tensor {s:?} for {h}x{w}"))),
    };
    let mut out = Tensor::zeros(&[t, c, h, w]);
    let (src, dst) = (y.data(), out.data_mut());
    for ci in 0..c {
        for ti in 0..t {
            let s = (ci * t + ti) * hw;
            let d = (ti * c + ci) * hw;
            dst[d..d + hw].copy_from_slice(&src[s..s + hw]);
        }
    }
    Ok(out)
}

/// The `T × C` sequence of pixel `p` from a time-major tensor.
pub(crate) fn pixel_sequence(y: &Tensor, p: usize) -> Tensor {
    let (c, t, hw) = (y.shape()[0], y.shape()[1], y.shape()[2]);
    let mut out = Tensor::zeros(&[t, c]);
    for ci in 0..c {
        for ti in 0..t {
            out.set(ti, ci, y.data()[(ci * t + ti) * hw + p]);
        }
    }
    out
}

pub(crate) fn set_pixel_sequence(y: &mut Tensor, p: usize, seq: &Tensor) {
    let (c, t, hw) = (y.shape()[0], y.shape()[1], y.shape()[2]);
    let data = y.data_mut();
    for ci in 0..c {
        for ti in 0..t {
            data[(ci * t + ti) * hw + p] = seq.at(ti, ci);
        }
    }
}

pub(crate) fn concat_channels(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (ta, ca, ha, wa) = dims4(a)?;
    let (tb, cb, hb, wb) = dims4(b)?;
    if (ta, ha, wa) != (tb, hb, wb) {
        return Err(Error::shape(format!(
            "cannot concatenate {:?} and {:?} along channels",
            a.shape(),
            b.shape()
        )));
    }
    let n = ha * wa;
    let mut data = Vec::with_capacity(a.len() + b.len());
    for t in 0..ta {
        data.extend_from_slice(&a.data()[t * ca * n..(t + 1) * ca * n]);
        data.extend_from_slice(&b.data()[t * cb * n..(t + 1) * cb * n]);
    }
    Tensor::new(vec![ta, ca + cb, ha, wa], data)
}

/// Halves the frame count: `T → ceil(T/2)`. Fewer than two frames are
/// returned unchanged.
pub fn temporal_downscale(x: &Tensor, op: DownscaleOp) -> Result<Tensor> {
    let (t, ..) = dims4(x)?;
    if t < 2 {
        log::warn!("temporal downscale of a {t}-frame latent is a no-op");
        return Ok(x.clone());
    }
    let frames = (0..t.div_ceil(2))
        .map(|i| {
            let a = frame(x, 2 * i);
            match op {
                DownscaleOp::Average if 2 * i + 1 < t => a.zip_with(&frame(x, 2 * i + 1), |u, v| 0.5 * (u + v)),
                _ => Ok(a),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    stack(frames)
}

/// Repeats every frame twice and keeps the first `frames`.
pub fn temporal_upscale(x: &Tensor, frames: usize) -> Result<Tensor> {
    let (t, ..) = dims4(x)?;
    if frames > 2 * t || frames < t {
        return Err(Error::shape(format!("cannot upscale {t} frames to {frames}")));
    }
    stack((0..frames).map(|i| frame(x, i / 2)).collect())
}

/// Downscale followed by the matching upscale.
pub fn temporal_round_trip(x: &Tensor, op: DownscaleOp) -> Result<Tensor> {
    let (t, ..) = dims4(x)?;
    let down = temporal_downscale(x, op)?;
    if down.shape()[0] == t {
        return Ok(down);
    }
    temporal_upscale(&down, t)
}

/// Factor-2 spatial downscale to `ceil(H/2) × ceil(W/2)`; partial windows
/// at odd edges average the pixels they contain.
pub fn spatial_downscale(x: &Tensor, op: DownscaleOp) -> Result<Tensor> {
    let (t, c, h, w) = dims4(x)?;
    let (h2, w2) = (h.div_ceil(2), w.div_ceil(2));
    let mut out = Tensor::zeros(&[t, c, h2, w2]);
    let src = x.data();
    let dst = out.data_mut();
    for plane in 0..t * c {
        let s = &src[plane * h * w..(plane + 1) * h * w];
        let d = &mut dst[plane * h2 * w2..(plane + 1) * h2 * w2];
        for y in 0..h2 {
            for xx in 0..w2 {
                d[y * w2 + xx] = match op {
                    DownscaleOp::Strided => s[2 * y * w + 2 * xx],
                    DownscaleOp::Average => {
                        let (mut acc, mut n) = (0.0, 0.0);
                        for yy in 2 * y..(2 * y + 2).min(h) {
                            for xs in 2 * xx..(2 * xx + 2).min(w) {
                                acc += s[yy * w + xs];
                                n += 1.0;
                            }
                        }
                        acc / n
                    }
                };
            }
        }
    }
    Ok(out)
}

/// Nearest-neighbour factor-2 upscale cropped to `h × w`.
pub fn spatial_upscale(x: &Tensor, h: usize, w: usize) -> Result<Tensor> {
    let (t, c, hs, ws) = dims4(x)?;
    if h > 2 * hs || w > 2 * ws || h < hs || w < ws {
        return Err(Error::shape(format!("cannot upscale {hs}x{ws} to {h}x{w}")));
    }
    let mut out = Tensor::zeros(&[t, c, h, w]);
    let src = x.data();
    let dst = out.data_mut();
    for plane in 0..t * c {
        for y in 0..h {
            for xx in 0..w {
                dst[(plane * h + y) * w + xx] = src[(plane * hs + y / 2) * ws + xx / 2];
            }
        }
    }
    Ok(out)
}
