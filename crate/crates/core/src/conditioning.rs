//! Clip micro-conditioning: the singular-value motion descriptor and FPS
//! frame striding.
//!
//! A clip is converted to grayscale, area-resized to a bucket resolution and
//! flattened to a `T × (H'·W')` matrix. A static clip has rank 1; motion
//! spreads energy over more singular values. The descriptor's area is the
//! mean of the normalized cumulative sum of singular values, so it lies in
//! `[(T+1)/(2T), 1]` with 1 for a static clip.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{pinv_rtol, svd};
use crate::tensor::Tensor;

pub const LUMA: [f64; 3] = [0.299, 0.587, 0.114];
pub const DEFAULT_BUCKET: (usize, usize) = (128, 64);
pub const DEFAULT_TARGET_FRAMES: usize = 14;
pub const MAX_STRIDE: usize = 4;
/// Sidecar written next to raw frame directories.
pub const CLIP_SIDECAR: &str = "clip.json";

/// `frames` is `[T, C, H, W]` with values in `[0, 1]` and `C ∈ {1, 3}`.
#[derive(Clone, Debug, PartialEq)]
pub struct Clip {
    frames: Tensor,
    native_fps: f64,
}

impl Clip {
    pub fn new(frames: Tensor, native_fps: f64) -> Result<Self> {
        let s = frames.shape();
        if s.len() != 4 {
            return Err(Error::shape(format!("clip must be [T, C, H, W], got {s:?}")));
        }
        if s[0] == 0 {
            return Err(Error::arg("clip has no frames"));
        }
        if s[1] != 1 && s[1] != 3 {
            return Err(Error::shape(format!("clip must have 1 or 3 channels, got {}", s[1])));
        }
        if s[2] == 0 || s[3] == 0 {
            return Err(Error::shape(format!("clip frames are empty: {s:?}")));
        }
        if !(native_fps.is_finite() && native_fps > 0.0) {
            return Err(Error::arg(format!("fps must be positive, got {native_fps}")));
        }
        if let Some(v) = frames.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::domain(format!("pixel value {v} outside [0, 1]")));
        }
        Ok(Clip { frames, native_fps })
    }

    pub fn frames(&self) -> &Tensor {
        &self.frames
    }

    pub fn native_fps(&self) -> f64 {
        self.native_fps
    }

    pub fn len(&self) -> usize {
        self.frames.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn channels(&self) -> usize {
        self.frames.shape()[1]
    }

    pub fn height(&self) -> usize {
        self.frames.shape()[2]
    }

    pub fn width(&self) -> usize {
        self.frames.shape()[3]
    }

    /// Frame `t` as `[C, H, W]` data.
    pub fn frame(&self, t: usize) -> &[f64] {
        let n = self.channels() * self.height() * self.width();
        &self.frames.data()[t * n..(t + 1) * n]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MotionDescriptor {
    /// Non-increasing; values below the rank cutoff are reported as zero.
    pub singular_values: Vec<f64>,
    pub area: f64,
    pub bucket_resolution: (usize, usize),
}

/// Luma conversion `[T, C, H, W] → [T, 1, H, W]`; identity for one channel.
pub fn grayscale(frames: &Tensor) -> Result<Tensor> {
    let s = frames.shape();
    if s.len() != 4 {
        return Err(Error::shape(format!("expected [T, C, H, W], got {s:?}")));
    }
    let (t, c, hw) = (s[0], s[1], s[2] * s[3]);
    match c {
        1 => Ok(frames.clone()),
        3 => {
            let d = frames.data();
            let mut out = vec![0.0; t * hw];
            for f in 0..t {
                let base = f * 3 * hw;
                for (p, o) in out[f * hw..(f + 1) * hw].iter_mut().enumerate() {
                    *o = LUMA[0] * d[base + p] + LUMA[1] * d[base + hw + p] + LUMA[2] * d[base + 2 * hw + p];
                }
            }
            Tensor::new(vec![t, 1, s[2], s[3]], out)
        }
        _ => Err(Error::shape(format!("expected 1 or 3 channels, got {c}"))),
    }
}

/// Row-stochastic `dst × src` matrix of overlap fractions between source
/// cells of width 1 and destination cells of width `src / dst`.
fn area_weights(src: usize, dst: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|i| {
            let (lo, hi) = (i as f64 * scale, (i + 1) as f64 * scale);
            let first = lo.floor() as usize;
            let last = (hi.ceil() as usize).min(src);
            (first..last)
                .filter_map(|j| {
                    let overlap = hi.min((j + 1) as f64) - lo.max(j as f64);
                    (overlap > 0.0).then_some((j, overlap / scale))
                })
                .collect()
        })
        .collect()
}

/// Area-averaging resize of every channel plane of `[T, C, H, W]` to `h × w`.
pub fn area_resize(frames: &Tensor, h: usize, w: usize) -> Result<Tensor> {
    let s = frames.shape();
    if s.len() != 4 {
        return Err(Error::shape(format!("expected [T, C, H, W], got {s:?}")));
    }
    if h == 0 || w == 0 {
        return Err(Error::arg(format!("target resolution {h}x{w} is empty")));
    }
    let (planes, sh, sw) = (s[0] * s[1], s[2], s[3]);
    if (sh, sw) == (h, w) {
        return Ok(frames.clone());
    }
    let wy = area_weights(sh, h);
    let wx = area_weights(sw, w);
    let d = frames.data();
    let mut out = vec![0.0; planes * h * w];
    let mut rows = vec![0.0; h * sw];
    for p in 0..planes {
        let src = &d[p * sh * sw..(p + 1) * sh * sw];
        rows.iter_mut().for_each(|v| *v = 0.0);
        for (y, ws) in wy.iter().enumerate() {
            let dst = &mut rows[y * sw..(y + 1) * sw];
            for &(j, f) in ws {
                for (o, &v) in dst.iter_mut().zip(&src[j * sw..(j + 1) * sw]) {
                    *o += f * v;
                }
            }
        }
        let dst = &mut out[p * h * w..(p + 1) * h * w];
        for y in 0..h {
            for (x, ws) in wx.iter().enumerate() {
                dst[y * w + x] = ws.iter().map(|&(j, f)| f * rows[y * sw + j]).sum();
            }
        }
    }
    Tensor::new(vec![s[0], s[1], h, w], out)
}

/// Singular-value motion descriptor at bucket resolution `h × w`.
pub fn motion_descriptor(clip: &Clip, h: usize, w: usize) -> Result<MotionDescriptor> {
    let t = clip.len();
    let small = area_resize(&grayscale(clip.frames())?, h, w)?;
    let m = small.reshape(&[t, h * w])?;
    let mut s = svd(&m)?.s;
    let smax = s.first().copied().unwrap_or(0.0);
    if smax <= 0.0 {
        return Err(Error::domain(
            "clip is all zero; the normalized cumulative sum is undefined",
        ));
    }
    let cutoff = pinv_rtol(t, h * w) * smax;
    for v in s.iter_mut().filter(|v| **v <= cutoff) {
        *v = 0.0;
    }
    // a wide clip has only T singular values; a clip with fewer pixels than
    // frames contributes zeros for the missing ones
    s.resize(t, 0.0);
    let total: f64 = s.iter().sum();
    let mut acc = 0.0;
    let mut area = 0.0;
    for v in &s {
        acc += v;
        area += acc / total;
    }
    Ok(MotionDescriptor {
        singular_values: s,
        area: area / t as f64,
        bucket_resolution: (h, w),
    })
}

/// Keeps frames `0, k, 2k, …` (`n_target` of them); fps becomes `fps / k`.
pub fn fps_stride(clip: &Clip, k: usize, n_target: usize) -> Result<Clip> {
    if !(1..=MAX_STRIDE).contains(&k) {
        return Err(Error::arg(format!("stride must be in 1..={MAX_STRIDE}, got {k}")));
    }
    if n_target == 0 {
        return Err(Error::arg("target frame count must be positive"));
    }
    if clip.len() < k * n_target {
        return Err(Error::arg(format!(
            "{} frames cannot supply {n_target} frames at stride {k}",
            clip.len()
        )));
    }
    let s = clip.frames().shape();
    let mut data = Vec::with_capacity(n_target * s[1] * s[2] * s[3]);
    for i in 0..n_target {
        data.extend_from_slice(clip.frame(i * k));
    }
    Clip::new(
        Tensor::new(vec![n_target, s[1], s[2], s[3]], data)?,
        clip.native_fps() / k as f64,
    )
}

/// Direction of the bucket id relative to the area.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BucketOrientation {
    /// Larger ids for more motion (smaller area).
    #[default]
    MotionIncreasing,
    /// Larger ids for larger area.
    AreaIncreasing,
}

/// Linear map from `[area_min, area_max]` to `0..=max_id`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BucketConfig {
    pub area_min: f64,
    pub area_max: f64,
    pub max_id: u32,
    pub orientation: BucketOrientation,
}

impl Default for BucketConfig {
    fn default() -> Self {
        // the smallest area a 14-frame clip can reach
        BucketConfig {
            area_min: 15.0 / 28.0,
            area_max: 1.0,
            max_id: 255,
            orientation: BucketOrientation::MotionIncreasing,
        }
    }
}

pub fn motion_bucket_id(area: f64, cfg: &BucketConfig) -> Result<u32> {
    if !(cfg.area_min < cfg.area_max) || !area.is_finite() {
        return Err(Error::arg(format!(
            "bucket range [{}, {}] or area {area} invalid",
            cfg.area_min, cfg.area_max
        )));
    }
    let t = ((area - cfg.area_min) / (cfg.area_max - cfg.area_min)).clamp(0.0, 1.0);
    let t = match cfg.orientation {
        BucketOrientation::AreaIncreasing => t,
        BucketOrientation::MotionIncreasing => 1.0 - t,
    };
    Ok((t * cfg.max_id as f64).round() as u32)
}

// ---- raw frame directories ----------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ClipSidecar {
    fps: f64,
    width: usize,
    height: usize,
}

/// Frame files of a clip directory, sorted by name.
fn frame_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "rgb"))
        .collect();
    files.sort();
    Ok(files)
}

/// Reads `*.rgb` frames (8-bit, row-major, interleaved RGB) and the
/// `clip.json` sidecar from `dir`. `fps` overrides the sidecar rate.
pub fn load_clip_dir(dir: &Path, fps: Option<f64>) -> Result<Clip> {
    let path = dir.join(CLIP_SIDECAR);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let meta: ClipSidecar = serde_json::from_str(&text).map_err(|e| Error::json(&path, e))?;
    let (h, w) = (meta.height, meta.width);
    let files = frame_files(dir)?;
    if files.is_empty() {
        return Err(Error::Format(format!("{} holds no .rgb frames", dir.display())));
    }
    let mut data = Vec::with_capacity(files.len() * 3 * h * w);
    for f in &files {
        let bytes = fs::read(f).map_err(|e| Error::io(f, e))?;
        if bytes.len() != 3 * h * w {
            return Err(Error::Format(format!(
                "{}: {} bytes, expected {} for {w}x{h} RGB",
                f.display(),
                bytes.len(),
                3 * h * w
            )));
        }
        for c in 0..3 {
            data.extend(bytes.iter().skip(c).step_by(3).map(|&b| b as f64 / 255.0));
        }
    }
    Clip::new(Tensor::new(vec![files.len(), 3, h, w], data)?, fps.unwrap_or(meta.fps))
}

/// Writes `clip` as 8-bit RGB frames plus sidecar; grayscale clips are
/// replicated to three channels.
pub fn save_clip_dir(clip: &Clip, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (c, h, w) = (clip.channels(), clip.height(), clip.width());
    let hw = h * w;
    for t in 0..clip.len() {
        let frame = clip.frame(t);
        let mut bytes = Vec::with_capacity(3 * hw);
        for p in 0..hw {
            for ch in 0..3 {
                let v = frame[(ch % c) * hw + p];
                bytes.push((v * 255.0).round() as u8);
            }
        }
        let path = dir.join(format!("{t:05}.rgb"));
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
    }
    let meta = ClipSidecar {
        fps: clip.native_fps(),
        width: w,
        height: h,
    };
    let path = dir.join(CLIP_SIDECAR);
    let text = serde_json::to_string_pretty(&meta).map_err(|e| Error::json(&path, e))?;
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

/// Loads a clip from a frame directory or an MVDT `[T, C, H, W]` tensor file.
/// Tensor files take their rate from `fps` or a `<file>.json` sidecar.
pub fn load_clip(path: &Path, fps: Option<f64>) -> Result<Clip> {
    if path.is_dir() {
        return load_clip_dir(path, fps);
    }
    let frames = Tensor::load(path)?;
    let fps = match fps {
        Some(f) => f,
        None => {
            let side = PathBuf::from(format!("{}.json", path.display()));
            let text = fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
            #[derive(Deserialize)]
            struct Rate {
                fps: f64,
            }
            serde_json::from_str::<Rate>(&text)
                .map_err(|e| Error::json(&side, e))?
                .fps
        }
    };
    Clip::new(frames, fps)
}

// ---- synthetic clips --------------------------------------------------------------

/// `t` copies of one smooth grayscale frame.
pub fn static_clip(t: usize, h: usize, w: usize, fps: f64) -> Result<Clip> {
    let mut frame = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            frame[y * w + x] = 0.2 + 0.6 * ((y * w + x) % 7) as f64 / 6.0;
        }
    }
    let data = frame.iter().copied().cycle().take(t * h * w).collect();
    Clip::new(Tensor::new(vec![t, 1, h, w], data)?, fps)
}

/// A bright square sliding diagonally over a dark background.
pub fn moving_square_clip(t: usize, h: usize, w: usize, side: usize, fps: f64) -> Result<Clip> {
    let side = side.min(h).min(w).max(1);
    let mut data = vec![0.1; t * h * w];
    for f in 0..t {
        let y0 = (f * 2) % (h - side + 1);
        let x0 = (f * 3) % (w - side + 1);
        for y in y0..y0 + side {
            for x in x0..x0 + side {
                data[f * h * w + y * w + x] = 0.9;
            }
        }
    }
    Clip::new(Tensor::new(vec![t, 1, h, w], data)?, fps)
}

/// Frame `i` lights the `i`-th of `t` disjoint bands of `⌊h·w / t⌋` pixels,
/// so the flattened frames are orthogonal with equal norms.
pub fn orthogonal_clip(t: usize, h: usize, w: usize, fps: f64) -> Result<Clip> {
    let hw = h * w;
    if t == 0 || t > hw {
        return Err(Error::arg(format!(
            "{t} frames do not fit disjoint bands in {h}x{w} pixels"
        )));
    }
    let band = hw / t;
    let mut data = vec![0.0; t * hw];
    for f in 0..t {
        data[f * hw + f * band..f * hw + (f + 1) * band].fill(0.5);
    }
    Clip::new(Tensor::new(vec![t, 1, h, w], data)?, fps)
}
