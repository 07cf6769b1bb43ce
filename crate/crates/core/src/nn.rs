//! Forward kernels shared by the funnel algebra and the toy UNet.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Nonlinearity {
    #[default]
    Identity,
    Relu,
    Silu,
}

impl Nonlinearity {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Nonlinearity::Identity => x,
            Nonlinearity::Relu => x.max(0.0),
            Nonlinearity::Silu => x / (1.0 + (-x).exp()),
        }
    }

    pub fn apply_tensor(self, t: &Tensor) -> Tensor {
        match self {
            Nonlinearity::Identity => t.clone(),
            _ => t.map(|v| self.apply(v)),
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Same-size zero-padded 2-D convolution with stride 1.
///
/// `x` is `[C_in, H, W]`, `kernel` is `[Kh, Kw, C_out, C_in]` with odd
/// spatial extents; the result is `[C_out, H, W]`.
pub fn conv2d(x: &Tensor, kernel: &Tensor) -> Result<Tensor> {
    let (cin, h, w) = chw(x)?;
    let ks = kernel.shape();
    if ks.len() != 4 || ks[3] != cin {
        return Err(Error::shape(format!(
            "kernel {ks:?} does not accept {cin} input channels"
        )));
    }
    let (kh, kw, cout) = (ks[0], ks[1], ks[2]);
    if kh % 2 == 0 || kw % 2 == 0 {
        return Err(Error::shape(format!("kernel extents must be odd, got {kh}x{kw}")));
    }
    let (ph, pw) = (kh / 2, kw / 2);
    let xd = x.data();
    let kd = kernel.data();
    let mut out = Tensor::zeros(&[cout, h, w]);
    let od = out.data_mut();
    for a in 0..kh {
        for b in 0..kw {
            // valid output rows/cols for this tap
            let y0 = ph.saturating_sub(a);
            let y1 = (h + ph).saturating_sub(a).min(h);
            let x0 = pw.saturating_sub(b);
            let x1 = (w + pw).saturating_sub(b).min(w);
            if y0 >= y1 || x0 >= x1 {
                continue;
            }
            for o in 0..cout {
                let kbase = ((a * kw + b) * cout + o) * cin;
                for i in 0..cin {
                    let k = kd[kbase + i];
                    if k == 0.0 {
                        continue;
                    }
                    for y in y0..y1 {
                        let sy = y + a - ph;
                        let orow = &mut od[(o * h + y) * w..(o * h + y + 1) * w];
                        let xrow = &xd[(i * h + sy) * w..(i * h + sy + 1) * w];
                        for xx in x0..x1 {
                            orow[xx] += k * xrow[xx + b - pw];
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// 1×1 convolution: `mix` is `[C_out, C_in]`, `x` is `[C_in, H, W]`.
pub fn channel_mix(mix: &Tensor, x: &Tensor) -> Result<Tensor> {
    let (cin, h, w) = chw(x)?;
    if mix.rank() != 2 || mix.cols() != cin {
        return Err(Error::shape(format!(
            "channel mix {:?} does not accept {cin} channels",
            mix.shape()
        )));
    }
    let flat = x.clone().reshape(&[cin, h * w])?;
    mix.matmul(&flat)?.reshape(&[mix.rows(), h, w])
}

fn chw(x: &Tensor) -> Result<(usize, usize, usize)> {
    match x.shape() {
        &[c, h, w] => Ok((c, h, w)),
        s => Err(Error::shape(format!("expected [C, H, W], got {s:?}"))),
    }
}

/// Row-wise numerically stable softmax in place.
pub fn softmax_rows(t: &mut Tensor) {
    let n = t.cols();
    for row in t.data_mut().chunks_mut(n) {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
}

/// `softmax(q kᵀ · scale) · v` for one head. Returns the output and the
/// attention weights.
pub fn attention(q: &Tensor, k: &Tensor, v: &Tensor, scale: f64) -> Result<(Tensor, Tensor)> {
    if q.cols() != k.cols() || k.rows() != v.rows() {
        return Err(Error::shape(format!(
            "attention q {:?}, k {:?}, v {:?}",
            q.shape(),
            k.shape(),
            v.shape()
        )));
    }
    let mut logits = q.matmul(&k.transpose())?.scale(scale);
    softmax_rows(&mut logits);
    let out = logits.matmul(v)?;
    Ok((out, logits))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Direct definition of the padded convolution, no loop reordering.
    fn conv_reference(x: &Tensor, k: &Tensor) -> Tensor {
        let (cin, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let (kh, kw, cout) = (k.shape()[0], k.shape()[1], k.shape()[2]);
        let mut out = Tensor::zeros(&[cout, h, w]);
        for o in 0..cout {
            for y in 0..h as isize {
                for xx in 0..w as isize {
                    let mut acc = 0.0;
                    for a in 0..kh as isize {
                        for b in 0..kw as isize {
                            let sy = y + a - kh as isize / 2;
                            let sx = xx + b - kw as isize / 2;
                            if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                                continue;
                            }
                            for i in 0..cin {
                                let kv = k.data()[((a as usize * kw + b as usize) * cout + o) * cin + i];
                                acc += kv * x.data()[(i * h + sy as usize) * w + sx as usize];
                            }
                        }
                    }
                    out.data_mut()[(o * h + y as usize) * w + xx as usize] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn conv_matches_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for (kh, kw) in [(3, 3), (1, 1), (3, 1), (5, 3)] {
            let x = Tensor::randn(&[3, 6, 5], 1.0, &mut rng);
            let k = Tensor::randn(&[kh, kw, 4, 3], 1.0, &mut rng);
            let got = conv2d(&x, &k).unwrap();
            assert!(got.max_abs_diff(&conv_reference(&x, &k)) < 1e-12);
        }
    }

    #[test]
    fn conv_rejects_even_kernels() {
        let x = Tensor::zeros(&[1, 4, 4]);
        assert!(conv2d(&x, &Tensor::zeros(&[2, 2, 1, 1])).is_err());
        assert!(conv2d(&x, &Tensor::zeros(&[3, 3, 1, 2])).is_err());
    }

    #[test]
    fn one_by_one_conv_is_channel_mix() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Tensor::randn(&[3, 4, 4], 1.0, &mut rng);
        let m = Tensor::randn(&[2, 3], 1.0, &mut rng);
        let k = m.clone().reshape(&[1, 1, 2, 3]).unwrap();
        let a = conv2d(&x, &k).unwrap();
        let b = channel_mix(&m, &x).unwrap();
        assert!(a.max_abs_diff(&b) < 1e-14);
    }

    #[test]
    fn softmax_rows_normalize() {
        let mut t = Tensor::from_rows(&[[1000.0, 1000.0], [0.0, f64::ln(3.0)]]);
        softmax_rows(&mut t);
        assert!((t.at(0, 0) - 0.5).abs() < 1e-15);
        assert!((t.at(1, 1) - 0.75).abs() < 1e-15);
    }

    #[test]
    fn sigmoid_logit_inverse() {
        for p in [1e-6, 0.1, 0.5, 0.9, 1.0 - 1e-6] {
            assert!((sigmoid(logit(p)) - p).abs() < 1e-12);
        }
        assert_eq!(sigmoid(0.0), 0.5);
    }
}
