use serde::{Deserialize, Serialize};

use super::SkiparseError;

pub const DEFAULT_ROPE_BASE: f64 = 10_000.0;

/// Multi-axis rotary encoding: the width `dim` is split into one contiguous
/// slice per position axis, and slice `i` is rotated by position `p_i`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RopeConfig {
    dim: usize,
    extents: Vec<usize>,
    base: f64,
}

impl RopeConfig {
    /// `extents[i]` bounds the positions accepted on axis `i` (exclusive).
    pub fn new(dim: usize, extents: Vec<usize>) -> Result<Self, SkiparseError> {
        Self::with_base(dim, extents, DEFAULT_ROPE_BASE)
    }

    pub fn with_base(dim: usize, extents: Vec<usize>, base: f64) -> Result<Self, SkiparseError> {
        let n = extents.len();
        if !(1..=3).contains(&n) {
            return Err(SkiparseError::Rope(format!("{n} partitions; expected 1, 2 or 3")));
        }
        if dim == 0 || !dim.is_multiple_of(n) || !(dim / n).is_multiple_of(2) {
            return Err(SkiparseError::Rope(format!(
                "width {dim} must split into {n} even slices"
            )));
        }
        if !(base > 1.0) {
            return Err(SkiparseError::Rope(format!("base {base} must exceed 1")));
        }
        Ok(Self { dim, extents, base })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn partitions(&self) -> usize {
        self.extents.len()
    }

    pub fn slice_width(&self) -> usize {
        self.dim / self.partitions()
    }

    pub fn extents(&self) -> &[usize] {
        &self.extents
    }

    pub fn base(&self) -> f64 {
        self.base
    }

    /// Rotation frequency of pair `i` within a slice.
    fn frequency(&self, i: usize) -> f64 {
        let width = self.slice_width() as f64;
        self.base.powf(-2.0 * i as f64 / width)
    }
}

/// Applies the encoding to a row-major `(tokens, dim)` matrix. `positions`
/// holds one `partitions()`-long row per token.
///
/// Within a slice of width `d`, element `j < d/2` is paired with `j + d/2`.
pub fn rope_apply(tokens: &[f32], positions: &[usize], cfg: &RopeConfig) -> Result<Vec<f32>, SkiparseError> {
    let (dim, n) = (cfg.dim, cfg.partitions());
    if !tokens.len().is_multiple_of(dim) {
        return Err(SkiparseError::Shape(format!(
            "{} values are not a whole number of width-{dim} tokens",
            tokens.len()
        )));
    }
    let count = tokens.len() / dim;
    if positions.len() != count * n {
        return Err(SkiparseError::Shape(format!(
            "{} positions for {count} tokens with {n} axes",
            positions.len()
        )));
    }
    let width = cfg.slice_width();
    let half = width / 2;
    let freqs: Vec<f64> = (0..half).map(|i| cfg.frequency(i)).collect();
    let mut out = tokens.to_vec();
    for (tok, pos) in out.chunks_exact_mut(dim).zip(positions.chunks_exact(n)) {
        for (axis, (&p, &extent)) in pos.iter().zip(&cfg.extents).enumerate() {
            if p >= extent {
                return Err(SkiparseError::Shape(format!(
                    "position {p} on axis {axis} exceeds extent {extent}"
                )));
            }
            let slice = &mut tok[axis * width..(axis + 1) * width];
            for (i, &f) in freqs.iter().enumerate() {
                let (sin, cos) = (p as f64 * f).sin_cos();
                let (a, b) = (f64::from(slice[i]), f64::from(slice[i + half]));
                slice[i] = (a * cos - b * sin) as f32;
                slice[i + half] = (a * sin + b * cos) as f32;
            }
        }
    }
    Ok(out)
}
