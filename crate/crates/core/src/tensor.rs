//! The `(channel, time, height, width)` volume used by every other module,
//! its on-disk format, and a few synthetic generators.

use std::fs;
use std::io::{self, Write};
use std::ops::Range;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// File magic for the tensor format.
pub const MAGIC: &[u8; 4] = b"OSPT";
/// Current (and only) format version.
pub const FORMAT_VERSION: u16 = 1;
const HEADER_LEN: usize = 4 + 2 + 4 * 4;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("all dimensions must be >= 1, got {0:?}")]
    ZeroDim([usize; 4]),
    #[error("payload has {actual} values but dims {dims:?} require {expected}")]
    LengthMismatch {
        dims: [usize; 4],
        expected: usize,
        actual: usize,
    },
    #[error("format error: {0}")]
    Format(String),
    #[error("read error on {path}: {source}")]
    Read { path: String, source: io::Error },
    #[error("write error on {path}: {source}")]
    Write { path: String, source: io::Error },
    #[error("dims {dims:?} not divisible by kernel {kernel:?}")]
    Divisibility { dims: [usize; 3], kernel: [usize; 3] },
    #[error("shape mismatch: {0}")]
    Shape(String),
}

/// Dense `f32` volume, row-major with channel outermost and width innermost.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor4D {
    dims: [usize; 4],
    data: Vec<f32>,
}

impl Tensor4D {
    pub fn new(dims: [usize; 4], data: Vec<f32>) -> Result<Self, TensorError> {
        if dims.contains(&0) {
            return Err(TensorError::ZeroDim(dims));
        }
        let expected = dims.iter().product::<usize>();
        if data.len() != expected {
            return Err(TensorError::LengthMismatch {
                dims,
                expected,
                actual: data.len(),
            });
        }
        Ok(Self { dims, data })
    }

    pub fn zeros(dims: [usize; 4]) -> Result<Self, TensorError> {
        Self::filled(dims, 0.0)
    }

    pub fn filled(dims: [usize; 4], value: f32) -> Result<Self, TensorError> {
        Self::new(dims, vec![value; dims.iter().product()])
    }

    /// Builds a tensor by evaluating `f(c, t, h, w)` for every element.
    pub fn from_fn(
        dims: [usize; 4],
        mut f: impl FnMut(usize, usize, usize, usize) -> f32,
    ) -> Result<Self, TensorError> {
        let [c_n, t_n, h_n, w_n] = dims;
        let mut data = Vec::with_capacity(dims.iter().product());
        for c in 0..c_n {
            for t in 0..t_n {
                for h in 0..h_n {
                    for w in 0..w_n {
                        data.push(f(c, t, h, w));
                    }
                }
            }
        }
        Self::new(dims, data)
    }

    /// Uniform random values in `[-1, 1)`.
    pub fn random<R: Rng + ?Sized>(dims: [usize; 4], rng: &mut R) -> Result<Self, TensorError> {
        let n = dims.iter().product();
        Self::new(dims, (0..n).map(|_| rng.gen_range(-1.0f32..1.0)).collect())
    }

    pub fn dims(&self) -> [usize; 4] {
        self.dims
    }
    pub fn channels(&self) -> usize {
        self.dims[0]
    }
    pub fn frames(&self) -> usize {
        self.dims[1]
    }
    pub fn height(&self) -> usize {
        self.dims[2]
    }
    pub fn width(&self) -> usize {
        self.dims[3]
    }
    pub fn len(&self) -> usize {
        self.data.len()
    }
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
    pub fn data(&self) -> &[f32] {
        &self.data
    }
    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }
    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn offset(&self, c: usize, t: usize, h: usize, w: usize) -> usize {
        ((c * self.dims[1] + t) * self.dims[2] + h) * self.dims[3] + w
    }

    #[inline]
    pub fn get(&self, c: usize, t: usize, h: usize, w: usize) -> f32 {
        self.data[self.offset(c, t, h, w)]
    }

    #[inline]
    pub fn set(&mut self, c: usize, t: usize, h: usize, w: usize, v: f32) {
        let i = self.offset(c, t, h, w);
        self.data[i] = v;
    }

    /// Number of values in one `(c, t)` plane.
    pub fn plane_len(&self) -> usize {
        self.dims[2] * self.dims[3]
    }

    /// Contiguous `h*w` slice for channel `c`, frame `t`.
    pub fn plane(&self, c: usize, t: usize) -> &[f32] {
        let start = self.offset(c, t, 0, 0);
        &self.data[start..start + self.plane_len()]
    }

    pub fn plane_mut(&mut self, c: usize, t: usize) -> &mut [f32] {
        let start = self.offset(c, t, 0, 0);
        let n = self.plane_len();
        &mut self.data[start..start + n]
    }

    /// Copies the frames in `range` into a new tensor.
    pub fn slice_frames(&self, range: Range<usize>) -> Result<Self, TensorError> {
        if range.start >= range.end || range.end > self.frames() {
            return Err(TensorError::Shape(format!(
                "frame range {range:?} invalid for {} frames",
                self.frames()
            )));
        }
        let [c_n, _, h_n, w_n] = self.dims;
        let mut data = Vec::with_capacity(c_n * range.len() * h_n * w_n);
        for c in 0..c_n {
            for t in range.clone() {
                data.extend_from_slice(self.plane(c, t));
            }
        }
        Self::new([c_n, range.len(), h_n, w_n], data)
    }

    /// Stacks tensors along the frame axis. All parts must agree on `(C, H, W)`.
    pub fn concat_frames(parts: &[Tensor4D]) -> Result<Self, TensorError> {
        let first = parts
            .first()
            .ok_or_else(|| TensorError::Shape("nothing to concatenate".into()))?;
        let [c_n, _, h_n, w_n] = first.dims;
        if parts
            .iter()
            .any(|p| p.channels() != c_n || p.height() != h_n || p.width() != w_n)
        {
            return Err(TensorError::Shape(
                "concatenated parts disagree on (C, H, W)".into(),
            ));
        }
        let t_total: usize = parts.iter().map(Tensor4D::frames).sum();
        let mut data = Vec::with_capacity(c_n * t_total * h_n * w_n);
        for c in 0..c_n {
            for p in parts {
                for t in 0..p.frames() {
                    data.extend_from_slice(p.plane(c, t));
                }
            }
        }
        Self::new([c_n, t_total, h_n, w_n], data)
    }

    pub fn sum_of_squares(&self) -> f64 {
        self.data.iter().map(|&v| f64::from(v) * f64::from(v)).sum()
    }

    pub fn max_abs_diff(&self, other: &Tensor4D) -> Result<f32, TensorError> {
        if self.dims != other.dims {
            return Err(TensorError::Shape(format!(
                "{:?} vs {:?}",
                self.dims, other.dims
            )));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max))
    }

    /// Bitwise equality of dims and payload (distinguishes `0.0` from `-0.0`).
    pub fn bit_eq(&self, other: &Tensor4D) -> bool {
        self.dims == other.dims
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Self {
        Self {
            dims: self.dims,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Serializes into the `OSPT` byte layout.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + 4 * self.data.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        for d in self.dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, TensorError> {
        if bytes.len() < HEADER_LEN {
            return Err(TensorError::Format(format!(
                "file is {} bytes, header needs {HEADER_LEN}",
                bytes.len()
            )));
        }
        if &bytes[..4] != MAGIC {
            return Err(TensorError::Format("bad magic".into()));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != FORMAT_VERSION {
            return Err(TensorError::Format(format!(
                "unsupported version {version}"
            )));
        }
        let mut dims = [0usize; 4];
        for (i, d) in dims.iter_mut().enumerate() {
            let o = 6 + 4 * i;
            *d = u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes")) as usize;
        }
        if dims.contains(&0) {
            return Err(TensorError::Format(format!("zero dimension in {dims:?}")));
        }
        let payload = &bytes[HEADER_LEN..];
        let expected = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| TensorError::Format(format!("dims {dims:?} overflow")))?;
        if !payload.len().is_multiple_of(4) || payload.len() / 4 != expected {
            return Err(TensorError::Format(format!(
                "payload holds {} bytes, dims {dims:?} need {} values",
                payload.len(),
                expected
            )));
        }
        let data = payload
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
            .collect();
        Self::new(dims, data)
    }
}

pub fn load_tensor(path: impl AsRef<Path>) -> Result<Tensor4D, TensorError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| TensorError::Read {
        path: path.display().to_string(),
        source,
    })?;
    Tensor4D::from_bytes(&bytes)
}

pub fn save_tensor(t: &Tensor4D, path: impl AsRef<Path>) -> Result<(), TensorError> {
    let path = path.as_ref();
    let err = |source| TensorError::Write {
        path: path.display().to_string(),
        source,
    };
    let mut f = fs::File::create(path).map_err(err)?;
    f.write_all(&t.to_bytes()).map_err(err)?;
    f.flush().map_err(err)
}

/// Latent token extents after patch embedding.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TokenGrid {
    pub t: usize,
    pub h: usize,
    pub w: usize,
}

impl TokenGrid {
    pub fn new(t: usize, h: usize, w: usize) -> Result<Self, TensorError> {
        if t == 0 || h == 0 || w == 0 {
            return Err(TensorError::ZeroDim([1, t, h, w]));
        }
        Ok(Self { t, h, w })
    }

    /// Sequence length `t*h*w`.
    pub fn len(&self) -> usize {
        self.t * self.h * self.w
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Spatial plane size `h*w`.
    pub fn plane(&self) -> usize {
        self.h * self.w
    }

    /// Flat index to `(t, h, w)`.
    pub fn coords(&self, idx: usize) -> (usize, usize, usize) {
        let plane = self.plane();
        (idx / plane, (idx % plane) / self.w, idx % self.w)
    }
}

/// Token grid produced by a non-overlapping patch embedding with the given kernel.
pub fn patch_grid(latent: [usize; 3], kernel: [usize; 3]) -> Result<TokenGrid, TensorError> {
    if kernel.contains(&0) || latent.iter().zip(&kernel).any(|(&d, &k)| d % k != 0) {
        return Err(TensorError::Divisibility {
            dims: latent,
            kernel,
        });
    }
    TokenGrid::new(
        latent[0] / kernel[0],
        latent[1] / kernel[1],
        latent[2] / kernel[2],
    )
}

/// `T*H*W / (k_t*k_h*k_w)`.
pub fn patch_token_count(latent: [usize; 3], kernel: [usize; 3]) -> Result<usize, TensorError> {
    patch_grid(latent, kernel).map(|g| g.len())
}
