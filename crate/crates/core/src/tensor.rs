//! Dense row-major `f64` tensors and their on-disk encodings.
//!
//! Two encodings are supported:
//!
//! * `MVDT` binary: magic `4D 56 44 54`, a little-endian `u32` rank, `rank`
//!   little-endian `u32` extents, then the payload as little-endian `f64`
//!   values in row-major order.
//! * JSON: `{"shape":[...],"data":[...]}`, intended for small tensors.

use std::fmt;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MVDT_MAGIC: [u8; 4] = *b"MVDT";

/// Semantic axis labels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Axis {
    T,
    C,
    H,
    W,
    /// Sequence position.
    L,
    /// Input channel.
    I,
    /// Output channel.
    O,
    Kh,
    Kw,
}

#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    axes: Option<Vec<Axis>>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut s = f.debug_struct("Tensor");
        s.field("shape", &self.shape);
        if let Some(axes) = &self.axes {
            s.field("axes", axes);
        }
        if self.data.len() <= 36 {
            s.field("data", &self.data);
        }
        s.finish()
    }
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::shape(format!("zero extent in shape {shape:?}")));
        }
        let len: usize = shape.iter().product();
        if len != data.len() {
            return Err(Error::shape(format!(
                "shape {shape:?} holds {len} values, got {}",
                data.len()
            )));
        }
        Ok(Tensor {
            shape,
            data,
            axes: None,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; len],
            axes: None,
        }
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let mut t = Self::zeros(shape);
        t.data.fill(value);
        t
    }

    pub fn eye(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let n = diag.len();
        let mut t = Self::zeros(&[n, n]);
        for (i, &d) in diag.iter().enumerate() {
            t.data[i * n + i] = d;
        }
        t
    }

    /// Builds a matrix from row slices. Panics on ragged input.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Self {
        let m = rows.len();
        let n = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(m * n);
        for r in rows {
            let r = r.as_ref();
            assert_eq!(r.len(), n, "ragged rows");
            data.extend_from_slice(r);
        }
        Tensor::new(vec![m, n], data).expect("non-empty matrix")
    }

    pub fn vector(values: &[f64]) -> Self {
        Tensor {
            shape: vec![values.len()],
            data: values.to_vec(),
            axes: None,
        }
    }

    /// I.i.d. standard normal entries scaled by `std`.
    pub fn randn<R: Rng + ?Sized>(shape: &[usize], std: f64, rng: &mut R) -> Self {
        let mut t = Self::zeros(shape);
        for v in &mut t.data {
            let z: f64 = StandardNormal.sample(rng);
            *v = std * z;
        }
        t
    }

    pub fn with_axes(mut self, axes: Vec<Axis>) -> Result<Self> {
        if axes.len() != self.shape.len() {
            return Err(Error::shape(format!(
                "{} axis labels for rank-{} tensor",
                axes.len(),
                self.shape.len()
            )));
        }
        self.axes = Some(axes);
        Ok(self)
    }

    pub fn axes(&self) -> Option<&[Axis]> {
        self.axes.as_deref()
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let len: usize = shape.iter().product();
        if len != self.data.len() {
            return Err(Error::shape(format!("cannot reshape {:?} into {shape:?}", self.shape)));
        }
        self.shape = shape.to_vec();
        self.axes = None;
        Ok(self)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub(crate) fn ensure_finite(&self, what: &str) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::domain(format!("{what} has non-finite entries")))
        }
    }

    // ---- matrix helpers ----------------------------------------------------

    pub fn is_matrix(&self) -> bool {
        self.shape.len() == 2
    }

    pub(crate) fn ensure_matrix(&self, what: &str) -> Result<(usize, usize)> {
        if self.shape.len() != 2 {
            return Err(Error::shape(format!(
                "{what} must be 2-dimensional, got shape {:?}",
                self.shape
            )));
        }
        Ok((self.shape[0], self.shape[1]))
    }

    /// Rows of a matrix. Panics if not 2-D.
    pub fn rows(&self) -> usize {
        assert!(self.is_matrix(), "rows() on shape {:?}", self.shape);
        self.shape[0]
    }

    /// Columns of a matrix. Panics if not 2-D.
    pub fn cols(&self) -> usize {
        assert!(self.is_matrix(), "cols() on shape {:?}", self.shape);
        self.shape[1]
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.shape[1] + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let n = self.shape[1];
        self.data[i * n + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let n = self.shape[1];
        &self.data[i * n..(i + 1) * n]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows()).map(|i| self.at(i, j)).collect()
    }

    pub fn transpose(&self) -> Tensor {
        let (m, n) = (self.rows(), self.cols());
        let mut out = Tensor::zeros(&[n, m]);
        for i in 0..m {
            for j in 0..n {
                out.data[j * m + i] = self.data[i * n + j];
            }
        }
        out
    }

    pub fn matmul(&self, rhs: &Tensor) -> Result<Tensor> {
        let (m, k) = self.ensure_matrix("lhs")?;
        let (k2, n) = rhs.ensure_matrix("rhs")?;
        if k != k2 {
            return Err(Error::shape(format!(
                "matmul {m}x{k} by {k2}x{n}: inner dimensions differ"
            )));
        }
        let mut out = Tensor::zeros(&[m, n]);
        for i in 0..m {
            let a_row = &self.data[i * k..(i + 1) * k];
            let o_row = &mut out.data[i * n..(i + 1) * n];
            for (p, &a) in a_row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let b_row = &rhs.data[p * n..(p + 1) * n];
                for (o, &b) in o_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `self · v` for a matrix and a vector.
    pub fn matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        let (m, n) = self.ensure_matrix("matrix")?;
        if v.len() != n {
            return Err(Error::shape(format!("matvec {m}x{n} by vector of length {}", v.len())));
        }
        Ok((0..m)
            .map(|i| self.row(i).iter().zip(v).map(|(a, b)| a * b).sum())
            .collect())
    }

    /// Sub-matrix of columns `range`.
    pub fn columns(&self, range: std::ops::Range<usize>) -> Tensor {
        let m = self.rows();
        let w = range.len();
        let mut out = Tensor::zeros(&[m, w.max(1)]);
        if w == 0 {
            return out;
        }
        for i in 0..m {
            for (jj, j) in range.clone().enumerate() {
                out.data[i * w + jj] = self.at(i, j);
            }
        }
        out
    }

    /// Sub-matrix of rows `range`.
    pub fn row_block(&self, range: std::ops::Range<usize>) -> Tensor {
        let n = self.cols();
        let data = self.data[range.start * n..range.end * n].to_vec();
        Tensor {
            shape: vec![range.len(), n],
            data,
            axes: None,
        }
    }

    /// Scales column `j` by `s[j]`.
    pub fn scale_columns(&self, s: &[f64]) -> Tensor {
        let mut out = self.clone();
        let n = self.cols();
        assert_eq!(s.len(), n);
        for row in out.data.chunks_mut(n) {
            for (v, &f) in row.iter_mut().zip(s) {
                *v *= f;
            }
        }
        out
    }

    /// Scales row `i` by `s[i]`.
    pub fn scale_rows(&self, s: &[f64]) -> Tensor {
        let mut out = self.clone();
        let n = self.cols();
        assert_eq!(s.len(), self.rows());
        for (row, &f) in out.data.chunks_mut(n).zip(s) {
            for v in row {
                *v *= f;
            }
        }
        out
    }

    // ---- elementwise -------------------------------------------------------

    pub fn scale(&self, s: f64) -> Tensor {
        let mut out = self.clone();
        out.data.iter_mut().for_each(|v| *v *= s);
        out
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        let mut out = self.clone();
        out.data.iter_mut().for_each(|v| *v = f(*v));
        out
    }

    pub fn add(&self, rhs: &Tensor) -> Result<Tensor> {
        self.zip_with(rhs, |a, b| a + b)
    }

    pub fn sub(&self, rhs: &Tensor) -> Result<Tensor> {
        self.zip_with(rhs, |a, b| a - b)
    }

    pub fn zip_with(&self, rhs: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        if self.shape != rhs.shape {
            return Err(Error::shape(format!(
                "elementwise op on {:?} and {:?}",
                self.shape, rhs.shape
            )));
        }
        let mut out = self.clone();
        for (a, &b) in out.data.iter_mut().zip(&rhs.data) {
            *a = f(*a, b);
        }
        Ok(out)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Largest absolute elementwise difference; `f64::INFINITY` if shapes differ.
    pub fn max_abs_diff(&self, rhs: &Tensor) -> f64 {
        if self.shape != rhs.shape {
            return f64::INFINITY;
        }
        self.data
            .iter()
            .zip(&rhs.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|v| v.abs()).fold(0.0, f64::max)
    }

    /// SHA-256 over shape and payload bytes, hex encoded.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        update_digest(&mut h, self);
        hex::encode(h.finalize())
    }

    // ---- encodings ---------------------------------------------------------

    pub fn to_mvdt_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + 4 * self.shape.len() + 8 * self.data.len());
        out.extend_from_slice(&MVDT_MAGIC);
        out.extend_from_slice(&(self.shape.len() as u32).to_le_bytes());
        for &d in &self.shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_mvdt_bytes(bytes: &[u8]) -> Result<Tensor> {
        let fail = |msg: &str| Error::Format(format!("MVDT: {msg}"));
        if bytes.len() < 8 || bytes[..4] != MVDT_MAGIC {
            return Err(fail("bad magic"));
        }
        let read_u32 = |off: usize| -> Result<u32> {
            bytes
                .get(off..off + 4)
                .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
                .ok_or_else(|| fail("truncated header"))
        };
        let rank = read_u32(4)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for r in 0..rank {
            shape.push(read_u32(8 + 4 * r)? as usize);
        }
        let start = 8 + 4 * rank;
        let len: usize = shape.iter().product();
        let payload = &bytes[start.min(bytes.len())..];
        if payload.len() != 8 * len {
            return Err(fail(&format!(
                "expected {} payload bytes for shape {shape:?}, found {}",
                8 * len,
                payload.len()
            )));
        }
        let data = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Tensor::new(shape, data).map_err(|e| fail(&e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&TensorJson {
            shape: self.shape.clone(),
            data: self.data.clone(),
        })
        .expect("tensor serializes")
    }

    pub fn from_json(text: &str) -> Result<Tensor> {
        let raw: TensorJson = serde_json::from_str(text).map_err(|e| Error::Format(format!("tensor JSON: {e}")))?;
        Tensor::new(raw.shape, raw.data).map_err(|e| Error::Format(e.to_string()))
    }

    /// Writes MVDT, or JSON when the extension is `.json`.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes = if is_json_path(path) {
            self.to_json().into_bytes()
        } else {
            self.to_mvdt_bytes()
        };
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    /// Reads MVDT or JSON, sniffing the magic bytes.
    pub fn load(path: impl AsRef<Path>) -> Result<Tensor> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let parsed = if bytes.starts_with(&MVDT_MAGIC) {
            Tensor::from_mvdt_bytes(&bytes)
        } else {
            std::str::from_utf8(&bytes)
                .map_err(|_| Error::Format("neither MVDT nor UTF-8 JSON".into()))
                .and_then(Tensor::from_json)
        };
        parsed.map_err(|e| match e {
            Error::Format(msg) => Error::Format(format!("{}: {msg}", path.display())),
            other => other,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct TensorJson {
    shape: Vec<usize>,
    data: Vec<f64>,
}

fn is_json_path(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"))
}

pub(crate) fn update_digest(h: &mut Sha256, t: &Tensor) {
    h.update((t.shape.len() as u64).to_le_bytes());
    for &d in &t.shape {
        h.update((d as u64).to_le_bytes());
    }
    for &v in &t.data {
        h.update(v.to_le_bytes());
    }
}

/// Digest over a sequence of tensors, order-sensitive.
pub fn digest_all<'a>(tensors: impl IntoIterator<Item = &'a Tensor>) -> String {
    let mut h = Sha256::new();
    for t in tensors {
        update_digest(&mut h, t);
    }
    hex::encode(h.finalize())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_inconsistent_shape() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::new(vec![2, 0], vec![]).is_err());
    }

    #[test]
    fn mvdt_header_layout() {
        let t = Tensor::new(vec![2, 1], vec![1.5, -2.0]).unwrap();
        let b = t.to_mvdt_bytes();
        assert_eq!(&b[..4], &[0x4D, 0x56, 0x44, 0x54]);
        assert_eq!(&b[4..8], &2u32.to_le_bytes());
        assert_eq!(&b[8..12], &2u32.to_le_bytes());
        assert_eq!(&b[12..16], &1u32.to_le_bytes());
        assert_eq!(&b[16..24], &1.5f64.to_le_bytes());
        assert_eq!(b.len(), 32);
        assert_eq!(Tensor::from_mvdt_bytes(&b).unwrap(), t);
    }

    #[test]
    fn mvdt_rejects_truncation() {
        let mut b = Tensor::eye(2).to_mvdt_bytes();
        b.pop();
        assert!(matches!(Tensor::from_mvdt_bytes(&b), Err(Error::Format(_))));
        assert!(Tensor::from_mvdt_bytes(b"MVD").is_err());
    }

    #[test]
    fn json_form() {
        let t = Tensor::from_json(r#"{"shape":[2,2],"data":[1,0,0,1]}"#).unwrap();
        assert_eq!(t, Tensor::eye(2));
        assert_eq!(t.to_json(), r#"{"shape":[2,2],"data":[1.0,0.0,0.0,1.0]}"#);
        assert!(Tensor::from_json(r#"{"shape":[3],"data":[1]}"#).is_err());
    }

    #[test]
    fn matmul_small() {
        let a = Tensor::from_rows(&[[1.0, 2.0], [3.0, 4.0]]);
        let b = Tensor::from_rows(&[[0.0, 1.0], [1.0, 0.0]]);
        assert_eq!(a.matmul(&b).unwrap(), Tensor::from_rows(&[[2.0, 1.0], [4.0, 3.0]]));
        assert!(a.matmul(&Tensor::eye(3)).is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let t = Tensor::from_rows(&[[1.0, 2.0, 3.0]]);
        for name in ["a.mvdt", "a.json"] {
            let p = dir.path().join(name);
            t.save(&p).unwrap();
            assert_eq!(Tensor::load(&p).unwrap(), t);
        }
    }

    proptest::proptest! {
        #[test]
        fn mvdt_round_trip(shape in proptest::collection::vec(1usize..4, 1..4), seed in 0u64..1000) {
            use rand::SeedableRng;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let t = Tensor::randn(&shape, 3.0, &mut rng);
            let back = Tensor::from_mvdt_bytes(&t.to_mvdt_bytes()).unwrap();
            proptest::prop_assert_eq!(back, t);
        }
    }
}
