//! Min-Max Token bucketing.
//!
//! For each coprime aspect ratio `(r_h, r_w)` the largest scale `k` with
//! `r_h * r_w * k^2 * s^2 <= m` fixes a bucket resolution `(r_h k s, r_w k s)`.
//! Samples are routed to the nearest-aspect bucket and batched so that every
//! global batch shares one resolution (and hence one token count).

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum BucketError {
    #[error("ratio {0}:{1} is not a pair of coprime positive integers")]
    Ratio(u64, u64),
    #[error("cannot parse ratio {0:?} (expected H:W)")]
    Parse(String),
    #[error("stride must be >= 1")]
    Stride,
    #[error("max token {max_token} is below the smallest bucket for every ratio")]
    Empty { max_token: u64 },
    #[error("global batch must be >= 1")]
    Batch,
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct AspectRatio {
    pub h: u64,
    pub w: u64,
}

impl AspectRatio {
    pub fn new(h: u64, w: u64) -> Result<Self, BucketError> {
        if h == 0 || w == 0 || gcd(h, w) != 1 {
            return Err(BucketError::Ratio(h, w));
        }
        Ok(Self { h, w })
    }

    /// `ln(h / w)`.
    pub fn log_aspect(&self) -> f64 {
        (self.h as f64 / self.w as f64).ln()
    }
}

impl fmt::Display for AspectRatio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.h, self.w)
    }
}

impl FromStr for AspectRatio {
    type Err = BucketError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (h, w) = s.trim().split_once(':').ok_or_else(|| BucketError::Parse(s.to_string()))?;
        let parse = |v: &str| v.trim().parse::<u64>().map_err(|_| BucketError::Parse(s.to_string()));
        AspectRatio::new(parse(h)?, parse(w)?)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RatioSet {
    pub ratios: Vec<AspectRatio>,
}

impl FromStr for RatioSet {
    type Err = BucketError;

    /// Comma-separated `H:W` pairs, e.g. `1:1,3:4,9:16`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let ratios = s.split(',').filter(|p| !p.trim().is_empty()).map(str::parse).collect::<Result<_, _>>()?;
        Ok(Self { ratios })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BucketEntry {
    pub ratio: AspectRatio,
    pub k: u64,
    pub height: u64,
    pub width: u64,
    pub tokens: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BucketPlan {
    pub max_token: u64,
    pub stride: u64,
    pub entries: Vec<BucketEntry>,
    pub min_token: u64,
    /// Ratios whose smallest bucket already exceeds the budget.
    #[serde(default)]
    pub excluded: Vec<AspectRatio>,
}

pub fn resolve_buckets(max_token: u64, stride: u64, ratios: &RatioSet) -> Result<BucketPlan, BucketError> {
    if stride == 0 {
        return Err(BucketError::Stride);
    }
    let mut entries = Vec::with_capacity(ratios.ratios.len());
    let mut excluded = Vec::new();
    for &ratio in &ratios.ratios {
        let ratio = AspectRatio::new(ratio.h, ratio.w)?;
        let unit = ratio.h * ratio.w * stride * stride;
        // floor(sqrt(m / unit)) == isqrt(floor(m / unit)) for integers.
        let k = (max_token / unit).isqrt();
        if k == 0 {
            log::warn!("ratio {ratio} excluded: {unit} tokens at k=1 exceed max token {max_token}");
            excluded.push(ratio);
            continue;
        }
        let (height, width) = (ratio.h * k * stride, ratio.w * k * stride);
        entries.push(BucketEntry {
            ratio,
            k,
            height,
            width,
            tokens: height * width,
        });
    }
    let min_token = entries.iter().map(|e| e.tokens).min().ok_or(BucketError::Empty { max_token })?;
    Ok(BucketPlan {
        max_token,
        stride,
        entries,
        min_token,
        excluded,
    })
}

fn id_from_json<'de, D: Deserializer<'de>>(d: D) -> Result<String, D::Error> {
    Ok(match serde_json::Value::deserialize(d)? {
        serde_json::Value::String(s) => s,
        other => other.to_string(),
    })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleMeta {
    #[serde(deserialize_with = "id_from_json")]
    pub id: String,
    pub height: u64,
    pub width: u64,
    pub frames: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct BucketKey {
    pub ratio: AspectRatio,
    pub height: u64,
    pub width: u64,
    pub frames: u64,
}

impl BucketKey {
    pub fn tokens(&self) -> u64 {
        self.height * self.width
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Rejection {
    EmptyPlan,
    InvalidDims,
    TooSmall,
    TooFewFrames,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Assignment {
    Bucket(BucketKey),
    Rejected(Rejection),
}

/// Nearest-aspect entry by `|ln(h/w) - ln(r_h/r_w)|`, ties toward more tokens.
pub fn nearest_entry(height: u64, width: u64, plan: &BucketPlan) -> Option<&BucketEntry> {
    let aspect = (height as f64 / width as f64).ln();
    let mut best: Option<(&BucketEntry, f64)> = None;
    for e in &plan.entries {
        let d = (aspect - e.ratio.log_aspect()).abs();
        best = match best {
            Some((b, bd)) if bd < d || (bd == d && b.tokens >= e.tokens) => Some((b, bd)),
            _ => Some((e, d)),
        };
    }
    best.map(|(e, _)| e)
}

pub fn assign_bucket(sample: &SampleMeta, plan: &BucketPlan, frame_buckets: &[u64]) -> Assignment {
    if sample.height == 0 || sample.width == 0 || sample.frames == 0 {
        return Assignment::Rejected(Rejection::InvalidDims);
    }
    let Some(entry) = nearest_entry(sample.height, sample.width, plan) else {
        return Assignment::Rejected(Rejection::EmptyPlan);
    };
    if sample.height < entry.height || sample.width < entry.width {
        return Assignment::Rejected(Rejection::TooSmall);
    }
    let Some(frames) = frame_buckets.iter().copied().filter(|&f| f <= sample.frames).max() else {
        return Assignment::Rejected(Rejection::TooFewFrames);
    };
    Assignment::Bucket(BucketKey {
        ratio: entry.ratio,
        height: entry.height,
        width: entry.width,
        frames,
    })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Batch {
    pub key: BucketKey,
    pub tokens: u64,
    pub ids: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DroppedLeftover {
    pub key: BucketKey,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectedSample {
    pub id: String,
    pub reason: Rejection,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchPlan {
    pub batches: Vec<Batch>,
    pub dropped: Vec<DroppedLeftover>,
    pub rejected: Vec<RejectedSample>,
}

impl BatchPlan {
    pub fn dropped_total(&self) -> usize {
        self.dropped.iter().map(|d| d.count).sum()
    }
}

/// Groups samples by bucket and emits full batches of `global_batch`. Both the
/// order within each bucket and the final batch order are shuffled from `seed`.
pub fn plan_batches(
    samples: &[SampleMeta],
    plan: &BucketPlan,
    frame_buckets: &[u64],
    global_batch: usize,
    seed: u64,
) -> Result<BatchPlan, BucketError> {
    if global_batch == 0 {
        return Err(BucketError::Batch);
    }
    let mut buckets: BTreeMap<BucketKey, Vec<String>> = BTreeMap::new();
    let mut rejected = Vec::new();
    for s in samples {
        match assign_bucket(s, plan, frame_buckets) {
            Assignment::Bucket(key) => buckets.entry(key).or_default().push(s.id.clone()),
            Assignment::Rejected(reason) => rejected.push(RejectedSample { id: s.id.clone(), reason }),
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut batches = Vec::new();
    let mut dropped = Vec::new();
    for (key, mut ids) in buckets {
        ids.shuffle(&mut rng);
        let full = ids.len() / global_batch * global_batch;
        if full < ids.len() {
            dropped.push(DroppedLeftover {
                key,
                count: ids.len() - full,
            });
        }
        ids.truncate(full);
        for chunk in ids.chunks(global_batch) {
            batches.push(Batch {
                key,
                tokens: key.tokens(),
                ids: chunk.to_vec(),
            });
        }
    }
    batches.shuffle(&mut rng);
    Ok(BatchPlan {
        batches,
        dropped,
        rejected,
    })
}
