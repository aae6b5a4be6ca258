//! Clip curation statistics: jump-cut detection from a frame-dissimilarity
//! series, motion-range filtering, OCR edge cropping and fixed-length slicing.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::Tensor4D;

#[derive(Debug, Error, PartialEq)]
pub enum CurationError {
    #[error("similarity series is empty")]
    Empty,
    #[error("series value {value} at position {index} is not a finite non-negative number")]
    Value { index: usize, value: f64 },
    #[error("{values} values but {indices} frame indices")]
    Length { values: usize, indices: usize },
    #[error("invalid thresholds: {0}")]
    Thresholds(String),
    #[error("box {0:?} lies outside the frame")]
    Box(BoxRect),
    #[error("duration {0} must be positive")]
    Duration(f64),
    #[error("sampling step must be >= 1 and the tensor needs at least two sampled frames")]
    Sampling,
}

/// Dissimilarity between consecutive sampled frames; `frame_indices[i]` is
/// the right-hand frame of pair `i`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimilaritySeries {
    values: Vec<f64>,
    frame_indices: Vec<usize>,
}

impl SimilaritySeries {
    pub fn new(values: Vec<f64>, frame_indices: Vec<usize>) -> Result<Self, CurationError> {
        if values.is_empty() {
            return Err(CurationError::Empty);
        }
        if values.len() != frame_indices.len() {
            return Err(CurationError::Length {
                values: values.len(),
                indices: frame_indices.len(),
            });
        }
        if let Some((index, &value)) = values.iter().enumerate().find(|(_, v)| !(v.is_finite() && **v >= 0.0)) {
            return Err(CurationError::Value { index, value });
        }
        Ok(Self { values, frame_indices })
    }

    /// Values for consecutive frames: pair `i` ends at frame `i + 1`.
    pub fn from_values(values: Vec<f64>) -> Result<Self, CurationError> {
        let idx = (1..=values.len()).collect();
        Self::new(values, idx)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn frame_indices(&self) -> &[usize] {
        &self.frame_indices
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Population mean and standard deviation.
    pub fn mean_std(&self) -> (f64, f64) {
        let n = self.values.len() as f64;
        let mean = self.values.iter().sum::<f64>() / n;
        let var = self.values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        (mean, var.sqrt())
    }

    /// Z-scores; all `None` when the standard deviation is zero.
    pub fn z_scores(&self) -> Vec<Option<f64>> {
        let (mean, std) = self.mean_std();
        self.values.iter().map(|v| (std > 0.0).then(|| (v - mean) / std)).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CutThresholds {
    pub z_threshold: f64,
    pub l_threshold: f64,
    pub z_threshold2: f64,
    pub l_threshold2: f64,
}

impl Default for CutThresholds {
    fn default() -> Self {
        Self {
            z_threshold: 2.0,
            l_threshold: 0.35,
            z_threshold2: 3.2,
            l_threshold2: 0.2,
        }
    }
}

impl CutThresholds {
    pub fn validate(&self) -> Result<(), CurationError> {
        let all = [self.z_threshold, self.l_threshold, self.z_threshold2, self.l_threshold2];
        if all.iter().all(|v| v.is_finite() && *v > 0.0) {
            Ok(())
        } else {
            Err(CurationError::Thresholds(format!("{self:?} must all be positive")))
        }
    }
}

/// Candidate set `P` (z above `z_threshold`).
pub fn outlier_candidates(series: &SimilaritySeries, th: &CutThresholds) -> Vec<usize> {
    series
        .z_scores()
        .iter()
        .enumerate()
        .filter(|(_, z)| z.is_some_and(|z| z > th.z_threshold))
        .map(|(i, _)| i)
        .collect()
}

/// Final cut positions: members of `P` that are either large in absolute
/// terms or both very unusual and moderately large.
pub fn detect_cuts(series: &SimilaritySeries, th: &CutThresholds) -> Vec<usize> {
    let z = series.z_scores();
    outlier_candidates(series, th)
        .into_iter()
        .filter(|&i| {
            let l = series.values[i];
            let zi = z[i].expect("candidate has a z-score");
            l > th.l_threshold || (zi > th.z_threshold2 && l > th.l_threshold2)
        })
        .collect()
}

pub fn motion_score(series: &SimilaritySeries) -> f64 {
    series.values.iter().sum::<f64>() / series.values.len() as f64
}

pub const MOTION_LOW: f64 = 0.001;
pub const MOTION_HIGH: f64 = 0.3;

pub fn motion_filter(score: f64, low: f64, high: f64) -> bool {
    low <= score && score <= high
}

/// Mean absolute difference of two equally sized frames, clamped to `[0, 1]`.
/// A cheap stand-in for a learned perceptual metric.
pub fn frame_dissimilarity(a: &[f32], b: &[f32]) -> f64 {
    assert_eq!(a.len(), b.len(), "frame sizes differ");
    if a.is_empty() {
        return 0.0;
    }
    let sum: f64 = a.iter().zip(b).map(|(x, y)| (f64::from(*x) - f64::from(*y)).abs()).sum();
    (sum / a.len() as f64).clamp(0.0, 1.0)
}

/// Series over frames `0, step, 2 step, ...` using [`frame_dissimilarity`].
pub fn series_from_tensor(x: &Tensor4D, step: usize) -> Result<SimilaritySeries, CurationError> {
    if step == 0 || x.frames() <= step {
        return Err(CurationError::Sampling);
    }
    let frame = |t: usize| -> Vec<f32> { (0..x.channels()).flat_map(|c| x.plane(c, t).iter().copied()).collect() };
    let sampled: Vec<usize> = (0..x.frames()).step_by(step).collect();
    let mut values = Vec::with_capacity(sampled.len() - 1);
    let mut prev = frame(sampled[0]);
    for &t in &sampled[1..] {
        let cur = frame(t);
        values.push(frame_dissimilarity(&prev, &cur));
        prev = cur;
    }
    SimilaritySeries::new(values, sampled[1..].to_vec())
}

/// Half-open pixel rectangle `[x0, x1) x [y0, y1)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoxRect {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CropRect {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
    pub area_fraction: f64,
}

pub const MAX_EDGE_FRACTION: f64 = 0.20;

/// Crops edge bands that contain text boxes. Each box is charged to the edge
/// that removes it most cheaply; every band is capped at `max_edge_fraction`
/// of its dimension, and boxes fully inside the uncroppable centre are kept.
pub fn ocr_crop_geometry(
    height: usize,
    width: usize,
    boxes: &[BoxRect],
    max_edge_fraction: f64,
) -> Result<CropRect, CurationError> {
    if !(0.0..0.5).contains(&max_edge_fraction) {
        return Err(CurationError::Thresholds(format!("edge fraction {max_edge_fraction} must lie in [0, 0.5)")));
    }
    let cap_h = (max_edge_fraction * height as f64 + 1e-9).floor() as usize;
    let cap_w = (max_edge_fraction * width as f64 + 1e-9).floor() as usize;
    // top, bottom, left, right
    let mut cut = [0usize; 4];
    for b in boxes {
        if b.x0 >= b.x1 || b.y0 >= b.y1 || b.x1 > width || b.y1 > height {
            return Err(CurationError::Box(*b));
        }
        let central = b.y0 >= cap_h && b.y1 <= height - cap_h && b.x0 >= cap_w && b.x1 <= width - cap_w;
        if central {
            continue;
        }
        let costs = [b.y1, height - b.y0, b.x1, width - b.x0];
        let caps = [cap_h, cap_h, cap_w, cap_w];
        let edge = (0..4).min_by_key(|&e| (costs[e] > caps[e], costs[e])).expect("four edges");
        cut[edge] = cut[edge].max(costs[edge].min(caps[edge]));
    }
    let (crop_h, crop_w) = (height - cut[0] - cut[1], width - cut[2] - cut[3]);
    let area = (height * width) as f64;
    Ok(CropRect {
        top: cut[0],
        left: cut[2],
        height: crop_h,
        width: crop_w,
        area_fraction: if area > 0.0 { (crop_h * crop_w) as f64 / area } else { 0.0 },
    })
}

pub const MAX_CLIP_SECONDS: f64 = 16.0;

pub fn slice_plan(duration_s: f64, max_clip_s: f64) -> Result<Vec<(f64, f64)>, CurationError> {
    if !(duration_s > 0.0 && duration_s.is_finite()) {
        return Err(CurationError::Duration(duration_s));
    }
    if !(max_clip_s > 0.0 && max_clip_s.is_finite()) {
        return Err(CurationError::Duration(max_clip_s));
    }
    let n = (duration_s / max_clip_s).ceil() as usize;
    Ok((0..n)
        .map(|i| (i as f64 * max_clip_s, ((i + 1) as f64 * max_clip_s).min(duration_s)))
        .filter(|(s, e)| e > s)
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurationConfig {
    pub thresholds: CutThresholds,
    pub motion_low: f64,
    pub motion_high: f64,
    pub min_frames: usize,
    pub max_frames: usize,
    pub aesthetic_min: f64,
    pub technical_min: f64,
}

impl Default for CurationConfig {
    fn default() -> Self {
        Self {
            thresholds: CutThresholds::default(),
            motion_low: MOTION_LOW,
            motion_high: MOTION_HIGH,
            min_frames: 32,
            max_frames: 512,
            aesthetic_min: 4.75,
            technical_min: 0.0,
        }
    }
}

/// Scores from external quality models, when available.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct QualityScores {
    pub aesthetic: Option<f64>,
    pub technical: Option<f64>,
}

pub fn aesthetic_filter(score: f64, min: f64) -> bool {
    score >= min
}

pub fn technical_filter(score: f64, min: f64) -> bool {
    score > min
}

pub fn frame_bounds_filter(frames: usize, min: usize, max: usize) -> bool {
    (min..=max).contains(&frames)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Reason {
    FrameBounds,
    MotionRange,
    Aesthetic,
    Technical,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub start_frame: usize,
    pub end_frame: usize,
    pub frames: usize,
    pub motion_score: Option<f64>,
    pub kept: bool,
    pub reasons: Vec<Reason>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClipVerdict {
    pub cut_indices: Vec<usize>,
    pub cut_frames: Vec<usize>,
    pub motion_score: f64,
    pub kept: bool,
    pub reasons: Vec<Reason>,
    pub segments: Vec<Segment>,
}

fn clip_reasons(frames: usize, motion: Option<f64>, cfg: &CurationConfig, scores: &QualityScores) -> Vec<Reason> {
    let mut reasons = Vec::new();
    if !frame_bounds_filter(frames, cfg.min_frames, cfg.max_frames) {
        reasons.push(Reason::FrameBounds);
    }
    if motion.is_some_and(|m| !motion_filter(m, cfg.motion_low, cfg.motion_high)) {
        reasons.push(Reason::MotionRange);
    }
    if scores.aesthetic.is_some_and(|s| !aesthetic_filter(s, cfg.aesthetic_min)) {
        reasons.push(Reason::Aesthetic);
    }
    if scores.technical.is_some_and(|s| !technical_filter(s, cfg.technical_min)) {
        reasons.push(Reason::Technical);
    }
    reasons
}

pub fn curate_clip(series: &SimilaritySeries, frame_count: usize, th: &CutThresholds) -> Result<ClipVerdict, CurationError> {
    let cfg = CurationConfig {
        thresholds: *th,
        ..CurationConfig::default()
    };
    curate_clip_with(series, frame_count, &cfg, &QualityScores::default())
}

/// Whole-clip verdict plus per-segment verdicts for the pieces between cuts.
pub fn curate_clip_with(
    series: &SimilaritySeries,
    frame_count: usize,
    cfg: &CurationConfig,
    scores: &QualityScores,
) -> Result<ClipVerdict, CurationError> {
    cfg.thresholds.validate()?;
    let cut_indices = detect_cuts(series, &cfg.thresholds);
    let mut cut_frames: Vec<usize> = cut_indices
        .iter()
        .map(|&i| series.frame_indices[i])
        .filter(|&f| f > 0 && f < frame_count)
        .collect();
    cut_frames.dedup();
    let motion = motion_score(series);

    let mut bounds = vec![0];
    bounds.extend(&cut_frames);
    bounds.push(frame_count);
    let segments = bounds
        .windows(2)
        .filter(|w| w[1] > w[0])
        .map(|w| {
            let (start, end) = (w[0], w[1]);
            // Pairs whose right frame lies strictly inside the segment.
            let inner: Vec<f64> = series
                .values
                .iter()
                .zip(&series.frame_indices)
                .filter(|(_, &f)| f > start && f < end)
                .map(|(&v, _)| v)
                .collect();
            let seg_motion = (!inner.is_empty()).then(|| inner.iter().sum::<f64>() / inner.len() as f64);
            let reasons = clip_reasons(end - start, seg_motion, cfg, scores);
            Segment {
                start_frame: start,
                end_frame: end,
                frames: end - start,
                motion_score: seg_motion,
                kept: reasons.is_empty(),
                reasons,
            }
        })
        .collect();

    let reasons = clip_reasons(frame_count, Some(motion), cfg, scores);
    Ok(ClipVerdict {
        cut_indices,
        cut_frames,
        motion_score: motion,
        kept: reasons.is_empty(),
        reasons,
        segments,
    })
}
