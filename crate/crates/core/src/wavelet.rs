//! Multi-level Haar analysis/synthesis over [`Tensor4D`] volumes.
//!
//! A 3D level filters T, H and W with the scaling filter `h = [1, 1]/√2` or
//! the wavelet filter `g = [1, -1]/√2` at stride 2, producing eight sub-bands
//! labelled by the filter used on each axis in `(T, H, W)` order: `hhh` is
//! low-pass everywhere, `ggg` high-pass everywhere. A 2D level does the same
//! over `(H, W)` only and leaves time untouched. Each subsequent level
//! consumes the all-low band of the previous one.
//!
//! Windows never overlap and no padding is applied, so every transformed axis
//! must be even. Within a window, accumulation runs T, then H, then W in
//! `f64`; each band value is rounded to `f32` once.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::{load_tensor, save_tensor, Tensor4D, TensorError};

const INV_SQRT2: f64 = std::f64::consts::FRAC_1_SQRT_2;
/// Stabilizer in the adaptive adversarial weight.
pub const ADV_WEIGHT_DELTA: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum WaveletError {
    #[error("level {level}: {kind} transform needs even {axes}, got dims {dims:?}")]
    Dimension {
        level: usize,
        kind: LevelKind,
        axes: &'static str,
        dims: [usize; 4],
    },
    #[error("pyramid structure error: {0}")]
    Structure(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("unknown level kind {0:?} (expected 3d or 2d)")]
    ParseKind(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("manifest error: {0}")]
    Manifest(String),
}

/// Filter pair in one axis.
#[derive(Clone, Copy, Debug)]
pub struct HaarFilters {
    pub scaling: [f64; 2],
    pub wavelet: [f64; 2],
}

impl HaarFilters {
    pub const fn new() -> Self {
        Self {
            scaling: [INV_SQRT2, INV_SQRT2],
            wavelet: [INV_SQRT2, -INV_SQRT2],
        }
    }

    fn tap(&self, high: bool, offset: usize) -> f64 {
        if high {
            self.wavelet[offset]
        } else {
            self.scaling[offset]
        }
    }
}

impl Default for HaarFilters {
    fn default() -> Self {
        Self::new()
    }
}

const HAAR: HaarFilters = HaarFilters::new();

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LevelKind {
    #[serde(rename = "3d")]
    ThreeD,
    #[serde(rename = "2d")]
    TwoD,
}

impl LevelKind {
    pub fn band_count(self) -> usize {
        match self {
            LevelKind::ThreeD => 8,
            LevelKind::TwoD => 4,
        }
    }

    /// Band labels in lexicographic order.
    pub fn labels(self) -> &'static [&'static str] {
        match self {
            LevelKind::ThreeD => &["ggg", "ggh", "ghg", "ghh", "hgg", "hgh", "hhg", "hhh"],
            LevelKind::TwoD => &["gg", "gh", "hg", "hh"],
        }
    }

    pub fn low_label(self) -> &'static str {
        match self {
            LevelKind::ThreeD => "hhh",
            LevelKind::TwoD => "hh",
        }
    }

    /// Output dims of one level applied to `dims`.
    pub fn output_dims(self, dims: [usize; 4]) -> [usize; 4] {
        let [c, t, h, w] = dims;
        match self {
            LevelKind::ThreeD => [c, t / 2, h / 2, w / 2],
            LevelKind::TwoD => [c, t, h / 2, w / 2],
        }
    }
}

impl fmt::Display for LevelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LevelKind::ThreeD => "3d",
            LevelKind::TwoD => "2d",
        })
    }
}

impl FromStr for LevelKind {
    type Err = WaveletError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "3d" => Ok(LevelKind::ThreeD),
            "2d" => Ok(LevelKind::TwoD),
            other => Err(WaveletError::ParseKind(other.to_string())),
        }
    }
}

/// Parses a comma-separated schedule such as `3d,3d,2d`. The empty string is the empty schedule.
pub fn parse_schedule(s: &str) -> Result<Vec<LevelKind>, WaveletError> {
    if s.trim().is_empty() {
        return Ok(Vec::new());
    }
    s.split(',').map(str::parse).collect()
}

/// Two 3D levels followed by one 2D level: 4x8x8 compression in `(T, H, W)`.
pub fn default_schedule() -> Vec<LevelKind> {
    vec![LevelKind::ThreeD, LevelKind::ThreeD, LevelKind::TwoD]
}

/// One decomposition level.
#[derive(Clone, Debug, PartialEq)]
pub struct SubbandLevel {
    pub kind: LevelKind,
    pub bands: BTreeMap<String, Tensor4D>,
}

impl SubbandLevel {
    pub fn band(&self, label: &str) -> Option<&Tensor4D> {
        self.bands.get(label)
    }

    pub fn low(&self) -> Option<&Tensor4D> {
        self.bands.get(self.kind.low_label())
    }

    pub fn element_count(&self) -> usize {
        self.bands.values().map(Tensor4D::len).sum()
    }

    pub fn energy(&self) -> f64 {
        self.bands.values().map(Tensor4D::sum_of_squares).sum()
    }

    /// Shape shared by every band, after checking labels and shapes agree.
    fn validated_dims(&self, level: usize) -> Result<[usize; 4], WaveletError> {
        let labels = self.kind.labels();
        if self.bands.len() != labels.len() || labels.iter().any(|l| !self.bands.contains_key(*l)) {
            return Err(WaveletError::Structure(format!(
                "level {level} ({}) must hold bands {labels:?}, found {:?}",
                self.kind,
                self.bands.keys().collect::<Vec<_>>()
            )));
        }
        let dims = self.bands[labels[0]].dims();
        if let Some((label, t)) = self.bands.iter().find(|(_, t)| t.dims() != dims) {
            return Err(WaveletError::Structure(format!(
                "level {level} band {label} has dims {:?}, expected {dims:?}",
                t.dims()
            )));
        }
        Ok(dims)
    }
}

/// Result of [`decompose`]. `base` is populated only for an empty schedule,
/// where it carries the untouched input.
#[derive(Clone, Debug, PartialEq)]
pub struct SubbandPyramid {
    pub levels: Vec<SubbandLevel>,
    pub base: Option<Tensor4D>,
}

impl SubbandPyramid {
    pub fn schedule(&self) -> Vec<LevelKind> {
        self.levels.iter().map(|l| l.kind).collect()
    }

    /// Deepest all-low band (or the base for an empty pyramid).
    pub fn approximation(&self) -> Option<&Tensor4D> {
        match self.levels.last() {
            Some(level) => level.low(),
            None => self.base.as_ref(),
        }
    }
}

fn labels_to_highs(label: &str) -> Vec<bool> {
    label.bytes().map(|b| b == b'g').collect()
}

fn check_even(x: &Tensor4D, kind: LevelKind, level: usize) -> Result<(), WaveletError> {
    let [_, t, h, w] = x.dims();
    let ok = match kind {
        LevelKind::ThreeD => t % 2 == 0 && h % 2 == 0 && w % 2 == 0,
        LevelKind::TwoD => h % 2 == 0 && w % 2 == 0,
    };
    if ok {
        Ok(())
    } else {
        Err(WaveletError::Dimension {
            level,
            kind,
            axes: match kind {
                LevelKind::ThreeD => "T, H and W",
                LevelKind::TwoD => "H and W",
            },
            dims: x.dims(),
        })
    }
}

fn forward_level(x: &Tensor4D, kind: LevelKind, level: usize) -> Result<SubbandLevel, WaveletError> {
    check_even(x, kind, level)?;
    let out_dims = kind.output_dims(x.dims());
    let [c_n, t_n, h_n, w_n] = out_dims;
    let labels = kind.labels();
    let highs: Vec<Vec<bool>> = labels.iter().map(|l| labels_to_highs(l)).collect();
    let t_span = if kind == LevelKind::ThreeD { 2 } else { 1 };
    let n = out_dims.iter().product::<usize>();
    let mut outs: Vec<Vec<f32>> = vec![Vec::with_capacity(n); labels.len()];

    for c in 0..c_n {
        for t in 0..t_n {
            for h in 0..h_n {
                for w in 0..w_n {
                    for (band, high) in highs.iter().enumerate() {
                        let mut acc = 0.0f64;
                        for a in 0..t_span {
                            for b in 0..2 {
                                for d in 0..2 {
                                    let v = f64::from(x.get(c, t * t_span + a, 2 * h + b, 2 * w + d));
                                    let weight = match kind {
                                        LevelKind::ThreeD => {
                                            HAAR.tap(high[0], a) * HAAR.tap(high[1], b) * HAAR.tap(high[2], d)
                                        }
                                        LevelKind::TwoD => HAAR.tap(high[0], b) * HAAR.tap(high[1], d),
                                    };
                                    acc += weight * v;
                                }
                            }
                        }
                        outs[band].push(acc as f32);
                    }
                }
            }
        }
    }

    let mut bands = BTreeMap::new();
    for (label, data) in labels.iter().zip(outs) {
        bands.insert((*label).to_string(), Tensor4D::new(out_dims, data)?);
    }
    Ok(SubbandLevel { kind, bands })
}

fn inverse_level(level: &SubbandLevel, index: usize) -> Result<Tensor4D, WaveletError> {
    let dims = level.validated_dims(index)?;
    let kind = level.kind;
    let [c_n, t_n, h_n, w_n] = dims;
    let t_span = if kind == LevelKind::ThreeD { 2 } else { 1 };
    let out_dims = [c_n, t_n * t_span, h_n * 2, w_n * 2];
    let labels = kind.labels();
    let highs: Vec<Vec<bool>> = labels.iter().map(|l| labels_to_highs(l)).collect();
    let bands: Vec<&Tensor4D> = labels.iter().map(|l| &level.bands[*l]).collect();
    let mut out = Tensor4D::zeros(out_dims)?;

    for c in 0..c_n {
        for t in 0..t_n {
            for h in 0..h_n {
                for w in 0..w_n {
                    let coeffs: Vec<f64> = bands.iter().map(|b| f64::from(b.get(c, t, h, w))).collect();
                    for a in 0..t_span {
                        for b in 0..2 {
                            for d in 0..2 {
                                let mut acc = 0.0f64;
                                for (coef, high) in coeffs.iter().zip(&highs) {
                                    let weight = match kind {
                                        LevelKind::ThreeD => {
                                            HAAR.tap(high[0], a) * HAAR.tap(high[1], b) * HAAR.tap(high[2], d)
                                        }
                                        LevelKind::TwoD => HAAR.tap(high[0], b) * HAAR.tap(high[1], d),
                                    };
                                    acc += weight * coef;
                                }
                                out.set(c, t * t_span + a, 2 * h + b, 2 * w + d, acc as f32);
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// One 3D Haar level: eight bands of shape `(C, T/2, H/2, W/2)`.
pub fn forward_3d_level(x: &Tensor4D) -> Result<SubbandLevel, WaveletError> {
    forward_level(x, LevelKind::ThreeD, 0)
}

/// One spatial Haar level: four bands of shape `(C, T, H/2, W/2)`.
pub fn forward_2d_level(x: &Tensor4D) -> Result<SubbandLevel, WaveletError> {
    forward_level(x, LevelKind::TwoD, 0)
}

/// Synthesizes the input of a single level from its bands.
pub fn inverse_single_level(level: &SubbandLevel) -> Result<Tensor4D, WaveletError> {
    inverse_level(level, 0)
}

pub fn decompose(x: &Tensor4D, schedule: &[LevelKind]) -> Result<SubbandPyramid, WaveletError> {
    if schedule.is_empty() {
        return Ok(SubbandPyramid {
            levels: Vec::new(),
            base: Some(x.clone()),
        });
    }
    let mut levels: Vec<SubbandLevel> = Vec::with_capacity(schedule.len());
    for (i, &kind) in schedule.iter().enumerate() {
        let input = match levels.last() {
            Some(prev) => prev.low().expect("forward_level emits every label"),
            None => x,
        };
        let level = forward_level(input, kind, i)?;
        levels.push(level);
    }
    Ok(SubbandPyramid { levels, base: None })
}

/// Inverse of [`decompose`]. Intermediate all-low bands are regenerated from
/// the deeper levels and must match them in shape.
pub fn reconstruct(p: &SubbandPyramid) -> Result<Tensor4D, WaveletError> {
    match (&p.base, p.levels.is_empty()) {
        (Some(base), true) => return Ok(base.clone()),
        (None, true) => return Err(WaveletError::Structure("pyramid has no levels and no base".into())),
        (Some(_), false) => {
            return Err(WaveletError::Structure("pyramid with levels must not carry a base".into()))
        }
        (None, false) => {}
    }
    let last = p.levels.len() - 1;
    let mut current = inverse_level(&p.levels[last], last)?;
    for index in (0..last).rev() {
        let level = &p.levels[index];
        let dims = level.validated_dims(index)?;
        if dims != current.dims() {
            return Err(WaveletError::Structure(format!(
                "level {index} bands have dims {dims:?} but level {} reconstructs {:?}",
                index + 1,
                current.dims()
            )));
        }
        let mut patched = level.clone();
        patched.bands.insert(level.kind.low_label().to_string(), current);
        current = inverse_level(&patched, index)?;
    }
    Ok(current)
}

fn check_same_structure(a: &SubbandPyramid, b: &SubbandPyramid) -> Result<(), WaveletError> {
    if a.levels.len() != b.levels.len() {
        return Err(WaveletError::Structure(format!(
            "pyramids have {} and {} levels",
            a.levels.len(),
            b.levels.len()
        )));
    }
    for (i, (la, lb)) in a.levels.iter().zip(&b.levels).enumerate() {
        if la.kind != lb.kind {
            return Err(WaveletError::Structure(format!(
                "level {i} kinds differ: {} vs {}",
                la.kind, lb.kind
            )));
        }
        let da = la.validated_dims(i)?;
        let db = lb.validated_dims(i)?;
        if da != db {
            return Err(WaveletError::Structure(format!(
                "level {i} dims differ: {da:?} vs {db:?}"
            )));
        }
    }
    Ok(())
}

/// Levels penalized by default: the deepest 3D level and the 2D level of the
/// standard schedule (zero-based).
pub const DEFAULT_WL_LEVELS: [usize; 2] = [1, 2];

/// Sum over `levels` of the mean absolute difference across all bands of that level.
pub fn wl_loss(
    predicted: &SubbandPyramid,
    target: &SubbandPyramid,
    levels: &[usize],
) -> Result<f64, WaveletError> {
    check_same_structure(predicted, target)?;
    let mut total = 0.0;
    for &index in levels {
        let (lp, lt) = match (predicted.levels.get(index), target.levels.get(index)) {
            (Some(lp), Some(lt)) => (lp, lt),
            _ => {
                return Err(WaveletError::Structure(format!(
                    "requested level {index} but pyramid has {} levels",
                    predicted.levels.len()
                )))
            }
        };
        let mut sum = 0.0f64;
        let mut count = 0usize;
        for (label, bp) in &lp.bands {
            let bt = &lt.bands[label];
            for (a, b) in bp.data().iter().zip(bt.data()) {
                sum += (f64::from(*a) - f64::from(*b)).abs();
            }
            count += bp.len();
        }
        total += sum / count as f64;
    }
    Ok(total)
}

/// `½ · recon / (adv + δ)`, balancing adversarial and reconstruction gradient magnitudes.
pub fn adaptive_adv_weight(grad_recon_norm: f64, grad_adv_norm: f64) -> Result<f64, WaveletError> {
    if !(grad_recon_norm >= 0.0) || !(grad_adv_norm >= 0.0) {
        return Err(WaveletError::Domain(format!(
            "gradient norms must be non-negative, got {grad_recon_norm} and {grad_adv_norm}"
        )));
    }
    Ok(0.5 * grad_recon_norm / (grad_adv_norm + ADV_WEIGHT_DELTA))
}

/// Scalar loss terms and their weights.
#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize)]
pub struct LossTerms {
    pub recon: f64,
    pub adv: f64,
    pub kl: f64,
    pub wl: f64,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct LossWeights {
    pub adv: f64,
    pub kl: f64,
    pub wl: f64,
}

pub fn composite_loss(terms: LossTerms, weights: LossWeights) -> f64 {
    terms.recon + weights.adv * terms.adv + weights.kl * terms.kl + weights.wl * terms.wl
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    schedule: Vec<LevelKind>,
    levels: Vec<ManifestLevel>,
    base: Option<[usize; 4]>,
}

#[derive(Serialize, Deserialize)]
struct ManifestLevel {
    kind: LevelKind,
    bands: BTreeMap<String, [usize; 4]>,
}

pub const MANIFEST_NAME: &str = "manifest.json";

fn band_file(level: usize, label: &str) -> String {
    format!("level{level}_{label}.ospt")
}

/// Writes `level<i>_<label>.ospt` files and a `manifest.json` into `dir`.
pub fn save_pyramid(p: &SubbandPyramid, dir: impl AsRef<Path>) -> Result<(), WaveletError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|source| TensorError::Write {
        path: dir.display().to_string(),
        source,
    })?;
    let mut manifest = Manifest {
        schedule: p.schedule(),
        levels: Vec::with_capacity(p.levels.len()),
        base: p.base.as_ref().map(Tensor4D::dims),
    };
    for (i, level) in p.levels.iter().enumerate() {
        let mut shapes = BTreeMap::new();
        for (label, band) in &level.bands {
            save_tensor(band, dir.join(band_file(i, label)))?;
            shapes.insert(label.clone(), band.dims());
        }
        manifest.levels.push(ManifestLevel {
            kind: level.kind,
            bands: shapes,
        });
    }
    if let Some(base) = &p.base {
        save_tensor(base, dir.join("base.ospt"))?;
    }
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| WaveletError::Manifest(e.to_string()))?;
    let path = dir.join(MANIFEST_NAME);
    fs::write(&path, text).map_err(|source| TensorError::Write {
        path: path.display().to_string(),
        source,
    })?;
    Ok(())
}

pub fn load_pyramid(dir: impl AsRef<Path>) -> Result<SubbandPyramid, WaveletError> {
    let dir = dir.as_ref();
    let path = dir.join(MANIFEST_NAME);
    let text = fs::read_to_string(&path).map_err(|source| TensorError::Read {
        path: path.display().to_string(),
        source,
    })?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| WaveletError::Manifest(e.to_string()))?;
    if manifest.schedule.len() != manifest.levels.len() {
        return Err(WaveletError::Manifest("schedule and levels disagree".into()));
    }
    let mut levels = Vec::with_capacity(manifest.levels.len());
    for (i, (ml, kind)) in manifest.levels.iter().zip(&manifest.schedule).enumerate() {
        if ml.kind != *kind {
            return Err(WaveletError::Manifest(format!("level {i} kind disagrees with schedule")));
        }
        let mut bands = BTreeMap::new();
        for (label, dims) in &ml.bands {
            let t = load_tensor(dir.join(band_file(i, label)))?;
            if t.dims() != *dims {
                return Err(WaveletError::Manifest(format!(
                    "level {i} band {label}: file dims {:?} vs manifest {dims:?}",
                    t.dims()
                )));
            }
            bands.insert(label.clone(), t);
        }
        let level = SubbandLevel { kind: *kind, bands };
        level.validated_dims(i)?;
        levels.push(level);
    }
    let base = match manifest.base {
        Some(_) => Some(load_tensor(dir.join("base.ospt"))?),
        None => None,
    };
    Ok(SubbandPyramid { levels, base })
}
