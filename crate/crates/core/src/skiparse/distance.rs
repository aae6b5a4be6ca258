//! Average attention distance.
//!
//! Every layout alternates two block types. In each block a token attends to
//! the members of one class of a partition of the flattened sequence: the
//! "even" partition for `2N` blocks and the "odd" partition for `2N+1` blocks.
//! The attention distance from A to B is the minimum number of attention steps
//! linking them; a token is at distance 0 from itself.
//!
//! Two averaging conventions are exposed. [`DistanceConvention::DistinctPairs`]
//! averages over ordered pairs `A != B` and is the default, reproducing
//! `Full3D = 1`. [`DistanceConvention::IncludeSelf`] folds in the `L` zero
//! self-distances and divides by `L^2`.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::plan::{group_slot, single_slot};
use super::SkiparseError;
use crate::tensor::TokenGrid;

/// Largest sequence accepted by [`ad_avg_brute_force`] unless overridden.
pub const DEFAULT_BRUTE_FORCE_CAP: usize = 4096;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mechanism {
    Full3D,
    #[serde(rename = "2+1d")]
    TwoPlusOneD,
    SkipWindow,
    Skiparse,
}

impl Mechanism {
    pub const ALL: [Mechanism; 4] = [
        Mechanism::Full3D,
        Mechanism::TwoPlusOneD,
        Mechanism::SkipWindow,
        Mechanism::Skiparse,
    ];

    pub fn uses_ratio(self) -> bool {
        matches!(self, Mechanism::SkipWindow | Mechanism::Skiparse)
    }
}

impl fmt::Display for Mechanism {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mechanism::Full3D => "full3d",
            Mechanism::TwoPlusOneD => "2+1d",
            Mechanism::SkipWindow => "skip-window",
            Mechanism::Skiparse => "skiparse",
        })
    }
}

impl FromStr for Mechanism {
    type Err = SkiparseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "full3d" | "full-3d" | "full" => Ok(Mechanism::Full3D),
            "2+1d" | "two-plus-one-d" | "2plus1d" => Ok(Mechanism::TwoPlusOneD),
            "skip-window" | "skipwindow" | "skip+window" => Ok(Mechanism::SkipWindow),
            "skiparse" => Ok(Mechanism::Skiparse),
            _ => Err(SkiparseError::ParseMechanism(s.to_string())),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BlockParity {
    Even,
    Odd,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DistanceConvention {
    /// Mean over ordered pairs of distinct tokens.
    #[default]
    DistinctPairs,
    /// Mean over all `L^2` ordered pairs, self-pairs contributing 0.
    IncludeSelf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttentionSpec {
    pub mechanism: Mechanism,
    pub k: usize,
    pub grid: TokenGrid,
}

impl AttentionSpec {
    pub fn new(mechanism: Mechanism, k: usize, grid: TokenGrid) -> Result<Self, SkiparseError> {
        let len = grid.len();
        if mechanism.uses_ratio() {
            if k == 0 {
                return Err(SkiparseError::Ratio { k, len, reason: "k must be >= 1" });
            }
            if k > len {
                return Err(SkiparseError::Ratio { k, len, reason: "k exceeds the sequence length" });
            }
        }
        Ok(Self { mechanism, k, grid })
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    /// Class of `token` in the partition used by blocks of `parity`.
    fn class_of(&self, token: usize, parity: BlockParity) -> usize {
        let k = self.k;
        match (self.mechanism, parity) {
            (Mechanism::Full3D, _) => 0,
            (Mechanism::TwoPlusOneD, BlockParity::Even) => token / self.grid.plane(),
            (Mechanism::TwoPlusOneD, BlockParity::Odd) => token % self.grid.plane(),
            (Mechanism::SkipWindow, BlockParity::Even) => token % k,
            (Mechanism::SkipWindow, BlockParity::Odd) => token / k,
            (Mechanism::Skiparse, BlockParity::Even) => single_slot(token, k).0,
            (Mechanism::Skiparse, BlockParity::Odd) => group_slot(token, k).0,
        }
    }

    fn class_count(&self, parity: BlockParity) -> usize {
        let (len, k) = (self.len(), self.k);
        match (self.mechanism, parity) {
            (Mechanism::Full3D, _) => 1,
            (Mechanism::TwoPlusOneD, BlockParity::Even) => self.grid.t,
            (Mechanism::TwoPlusOneD, BlockParity::Odd) => self.grid.plane(),
            (Mechanism::SkipWindow, BlockParity::Even) => k,
            (Mechanism::SkipWindow, BlockParity::Odd) => len.div_ceil(k),
            (Mechanism::Skiparse, _) => k.min(len),
        }
    }
}

/// Tokens sharing an attention sequence with `token` in a block of the given parity.
pub fn interaction_partners(
    spec: &AttentionSpec,
    token: usize,
    parity: BlockParity,
) -> Result<Vec<usize>, SkiparseError> {
    let len = spec.len();
    if token >= len {
        return Err(SkiparseError::Index { token, len });
    }
    let class = spec.class_of(token, parity);
    Ok((0..len).filter(|&e| spec.class_of(e, parity) == class).collect())
}

/// Sum of distances over all ordered pairs, from counting each token's distance-1 partners.
fn closed_total_distance(spec: &AttentionSpec) -> f64 {
    let l = spec.len() as f64;
    let k = spec.k as f64;
    match spec.mechanism {
        Mechanism::Full3D => l * (l - 1.0),
        Mechanism::TwoPlusOneD => {
            let (t, hw) = (spec.grid.t as f64, spec.grid.plane() as f64);
            l * (2.0 * l - hw - t)
        }
        Mechanism::SkipWindow => l * (2.0 * l - l / k - k),
        Mechanism::Skiparse => l * (2.0 * l - 2.0 * l / k + l / (k * k) - 1.0),
    }
}

/// Closed-form average attention distance. Exact for Full3D and 2+1D on any
/// grid, for Skip+Window when `k | L`, and for Skiparse when `k^2 | L`; outside
/// those cases the same expression is returned as an approximation.
pub fn ad_avg_closed_form(spec: &AttentionSpec, convention: DistanceConvention) -> f64 {
    let l = spec.len() as f64;
    let total = closed_total_distance(spec);
    match convention {
        DistanceConvention::DistinctPairs if spec.len() == 1 => 0.0,
        DistanceConvention::DistinctPairs => total / (l * (l - 1.0)),
        DistanceConvention::IncludeSelf => total / (l * l),
    }
}

/// Large-`L` limits listed for each layout: `1`, `2 - (1/T + 1/HW)`,
/// `2 - (1/k + k/L)` and `2 - 2/k + 1/k^2`.
pub fn ad_avg_asymptotic(spec: &AttentionSpec) -> f64 {
    let l = spec.len() as f64;
    let k = spec.k as f64;
    match spec.mechanism {
        Mechanism::Full3D => 1.0,
        Mechanism::TwoPlusOneD => 2.0 - (1.0 / spec.grid.t as f64 + 1.0 / spec.grid.plane() as f64),
        Mechanism::SkipWindow => 2.0 - (1.0 / k + k / l),
        Mechanism::Skiparse => 2.0 - 2.0 / k + 1.0 / (k * k),
    }
}

/// Exhaustive distance statistics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BruteForceAd {
    pub len: usize,
    /// Sum of distances over all ordered pairs.
    pub total_distance: u64,
    /// `histogram[d]` = number of ordered pairs at distance `d`.
    pub histogram: Vec<u64>,
}

impl BruteForceAd {
    pub fn mean(&self, convention: DistanceConvention) -> f64 {
        let l = self.len as f64;
        match convention {
            DistanceConvention::DistinctPairs if self.len == 1 => 0.0,
            DistanceConvention::DistinctPairs => self.total_distance as f64 / (l * (l - 1.0)),
            DistanceConvention::IncludeSelf => self.total_distance as f64 / (l * l),
        }
    }

    pub fn max_distance(&self) -> usize {
        self.histogram.len().saturating_sub(1)
    }
}

struct Partition {
    of: Vec<u32>,
    members: Vec<Vec<u32>>,
}

impl Partition {
    fn build(spec: &AttentionSpec, parity: BlockParity) -> Self {
        let len = spec.len();
        let mut members = vec![Vec::new(); spec.class_count(parity)];
        let of: Vec<u32> = (0..len)
            .map(|e| {
                let c = spec.class_of(e, parity);
                members[c].push(e as u32);
                c as u32
            })
            .collect();
        Self { of, members }
    }
}

/// Breadth-first search from every token over the two block partitions.
pub fn ad_avg_brute_force(spec: &AttentionSpec, cap: usize) -> Result<BruteForceAd, SkiparseError> {
    let len = spec.len();
    if len > cap {
        return Err(SkiparseError::Size { len, cap });
    }
    let parts = [Partition::build(spec, BlockParity::Even), Partition::build(spec, BlockParity::Odd)];

    let per_source: Vec<Result<Vec<u64>, SkiparseError>> = (0..len)
        .into_par_iter()
        .map(|source| {
            let mut dist = vec![u32::MAX; len];
            let mut seen_class = [vec![false; parts[0].members.len()], vec![false; parts[1].members.len()]];
            let mut frontier = vec![source as u32];
            dist[source] = 0;
            let mut depth = 0u32;
            let mut hist = vec![1u64];
            let mut reached = 1usize;
            while !frontier.is_empty() {
                depth += 1;
                let mut next = Vec::new();
                for &u in &frontier {
                    for (p, part) in parts.iter().enumerate() {
                        let c = part.of[u as usize] as usize;
                        if seen_class[p][c] {
                            continue;
                        }
                        seen_class[p][c] = true;
                        for &v in &part.members[c] {
                            if dist[v as usize] == u32::MAX {
                                dist[v as usize] = depth;
                                next.push(v);
                            }
                        }
                    }
                }
                if !next.is_empty() {
                    hist.push(next.len() as u64);
                    reached += next.len();
                }
                frontier = next;
            }
            if reached != len {
                let to = dist.iter().position(|&d| d == u32::MAX).expect("unreached token");
                return Err(SkiparseError::Disconnected { from: source, to });
            }
            Ok(hist)
        })
        .collect();

    let mut histogram: Vec<u64> = Vec::new();
    for hist in per_source {
        let hist = hist?;
        if histogram.len() < hist.len() {
            histogram.resize(hist.len(), 0);
        }
        for (d, n) in hist.into_iter().enumerate() {
            histogram[d] += n;
        }
    }
    let total_distance = histogram.iter().enumerate().map(|(d, &n)| d as u64 * n).sum();
    Ok(BruteForceAd {
        len,
        total_distance,
        histogram,
    })
}
