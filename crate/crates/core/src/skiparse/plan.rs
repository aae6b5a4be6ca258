use serde::{Deserialize, Serialize};

use super::SkiparseError;
use crate::tensor::TokenGrid;

/// Marks a padded slot in a Group Skip layout.
pub const PAD_INDEX: u32 = u32::MAX;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SkipKind {
    Single,
    Group,
}

/// Both bundling permutations for one token grid and sparse ratio.
///
/// `*_perm[e]` is the bundled position `bundle * bundle_len + offset` of flat
/// token `e`; `*_gather` is the inverse, with [`PAD_INDEX`] in padded slots.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkiparsePlan {
    pub grid: TokenGrid,
    pub k: usize,
    pub single_perm: Vec<u32>,
    pub single_gather: Vec<u32>,
    pub group_perm: Vec<u32>,
    pub group_gather: Vec<u32>,
    pub pad_mask: Vec<bool>,
}

impl SkiparsePlan {
    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.single_perm.is_empty()
    }

    pub fn bundle_count(&self) -> usize {
        self.k
    }

    pub fn single_bundle_len(&self) -> usize {
        self.len() / self.k
    }

    /// `k * ceil(L / k^2)`.
    pub fn group_bundle_len(&self) -> usize {
        self.k * self.len().div_ceil(self.k * self.k)
    }

    pub fn padded_slots(&self) -> usize {
        self.pad_mask.iter().filter(|&&p| p).count()
    }

    pub fn perm(&self, which: SkipKind) -> &[u32] {
        match which {
            SkipKind::Single => &self.single_perm,
            SkipKind::Group => &self.group_perm,
        }
    }

    pub fn gather(&self, which: SkipKind) -> &[u32] {
        match which {
            SkipKind::Single => &self.single_gather,
            SkipKind::Group => &self.group_gather,
        }
    }

    pub fn bundle_len(&self, which: SkipKind) -> usize {
        match which {
            SkipKind::Single => self.single_bundle_len(),
            SkipKind::Group => self.group_bundle_len(),
        }
    }

    /// Flat token indices in `bundle`, padded slots removed.
    pub fn bundle_members(&self, which: SkipKind, bundle: usize) -> Vec<usize> {
        let n = self.bundle_len(which);
        self.gather(which)[bundle * n..(bundle + 1) * n]
            .iter()
            .filter(|&&i| i != PAD_INDEX)
            .map(|&i| i as usize)
            .collect()
    }
}

/// Single Skip places token `e` in bundle `e mod k` at offset `e / k`.
pub(crate) fn single_slot(e: usize, k: usize) -> (usize, usize) {
    (e % k, e / k)
}

/// Group Skip places token `e` in bundle `(e / k) mod k` at offset `(e / k^2) * k + e mod k`.
pub(crate) fn group_slot(e: usize, k: usize) -> (usize, usize) {
    ((e / k) % k, (e / (k * k)) * k + e % k)
}

pub fn build_plan(grid: TokenGrid, k: usize) -> Result<SkiparsePlan, SkiparseError> {
    let len = grid.len();
    if k == 0 {
        return Err(SkiparseError::Ratio { k, len, reason: "k must be >= 1" });
    }
    if k > len {
        return Err(SkiparseError::Ratio { k, len, reason: "k exceeds the sequence length" });
    }
    if !len.is_multiple_of(k) {
        return Err(SkiparseError::Ratio { k, len, reason: "Single Skip needs k to divide the sequence length" });
    }
    if len >= PAD_INDEX as usize {
        return Err(SkiparseError::Shape(format!("sequence length {len} does not fit u32 indices")));
    }

    let single_len = len / k;
    let group_len = k * len.div_ceil(k * k);
    let mut single_perm = vec![0u32; len];
    let mut single_gather = vec![PAD_INDEX; len];
    let mut group_perm = vec![0u32; len];
    let mut group_gather = vec![PAD_INDEX; k * group_len];
    for e in 0..len {
        let (b, o) = single_slot(e, k);
        let pos = b * single_len + o;
        single_perm[e] = pos as u32;
        single_gather[pos] = e as u32;

        let (b, o) = group_slot(e, k);
        let pos = b * group_len + o;
        group_perm[e] = pos as u32;
        group_gather[pos] = e as u32;
    }
    let pad_mask = group_gather.iter().map(|&i| i == PAD_INDEX).collect();
    Ok(SkiparsePlan {
        grid,
        k,
        single_perm,
        single_gather,
        group_perm,
        group_gather,
        pad_mask,
    })
}

/// Tokens rearranged into `bundles x bundle_len` rows of width `dim`.
#[derive(Clone, Debug, PartialEq)]
pub struct BundledTokens {
    pub which: SkipKind,
    pub bundles: usize,
    pub bundle_len: usize,
    pub dim: usize,
    pub data: Vec<f32>,
    /// True for padded slots (zero-filled).
    pub pad: Vec<bool>,
}

impl BundledTokens {
    pub fn token(&self, bundle: usize, offset: usize) -> &[f32] {
        let row = bundle * self.bundle_len + offset;
        &self.data[row * self.dim..(row + 1) * self.dim]
    }
}

/// Permutes a row-major `(L, dim)` token matrix into bundles.
pub fn apply_plan(tokens: &[f32], dim: usize, plan: &SkiparsePlan, which: SkipKind) -> Result<BundledTokens, SkiparseError> {
    if dim == 0 || tokens.len() != plan.len() * dim {
        return Err(SkiparseError::Shape(format!(
            "{} values do not form {} tokens of width {dim}",
            tokens.len(),
            plan.len()
        )));
    }
    let gather = plan.gather(which);
    let mut data = vec![0.0f32; gather.len() * dim];
    for (row, &src) in gather.iter().enumerate() {
        if src != PAD_INDEX {
            let src = src as usize;
            data[row * dim..(row + 1) * dim].copy_from_slice(&tokens[src * dim..(src + 1) * dim]);
        }
    }
    Ok(BundledTokens {
        which,
        bundles: plan.k,
        bundle_len: plan.bundle_len(which),
        dim,
        data,
        pad: gather.iter().map(|&i| i == PAD_INDEX).collect(),
    })
}

/// Restores the original token order.
pub fn inverse_apply(bundled: &BundledTokens, plan: &SkiparsePlan) -> Result<Vec<f32>, SkiparseError> {
    let dim = bundled.dim;
    if bundled.data.len() != plan.gather(bundled.which).len() * dim {
        return Err(SkiparseError::Shape("bundled tokens do not match the plan".into()));
    }
    let perm = plan.perm(bundled.which);
    let mut out = vec![0.0f32; plan.len() * dim];
    for (e, &pos) in perm.iter().enumerate() {
        let pos = pos as usize;
        out[e * dim..(e + 1) * dim].copy_from_slice(&bundled.data[pos * dim..(pos + 1) * dim]);
    }
    Ok(out)
}
