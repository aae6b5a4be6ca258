use std::path::{Path, PathBuf};

use clap::{Args, Subcommand};
use osp_core::curation::{
    curate_clip_with, detect_cuts, motion_filter, motion_score, ocr_crop_geometry, outlier_candidates,
    series_from_tensor, slice_plan, BoxRect, CurationConfig, CutThresholds, QualityScores, SimilaritySeries,
    MAX_CLIP_SECONDS, MAX_EDGE_FRACTION, MOTION_HIGH, MOTION_LOW,
};
use serde::Deserialize;

use crate::error::{CliError, Result};
use crate::io::{emit, read_json, read_jsonl};
use crate::Ctx;

/// With no subcommand, the clip options below are evaluated as `curate clip`.
#[derive(Args)]
#[command(args_conflicts_with_subcommands = true)]
pub struct CurateCmd {
    #[command(subcommand)]
    sub: Option<CurateSub>,
    #[command(flatten)]
    clip: ClipArgs,
}

#[derive(Subcommand)]
enum CurateSub {
    /// Jump-cut positions in a similarity series.
    Cuts {
        #[command(flatten)]
        series: SeriesArgs,
        #[arg(long)]
        thresholds: Option<PathBuf>,
    },
    /// Motion score and range check.
    Motion {
        #[command(flatten)]
        series: SeriesArgs,
        #[arg(long, default_value_t = MOTION_LOW)]
        low: f64,
        #[arg(long, default_value_t = MOTION_HIGH)]
        high: f64,
    },
    /// Crop rectangle that removes edge text boxes.
    Crop {
        #[arg(long)]
        height: usize,
        #[arg(long)]
        width: usize,
        /// File holding a JSON array of {x0, y0, x1, y1}; no boxes when omitted.
        #[arg(long)]
        boxes: Option<PathBuf>,
        #[arg(long, default_value_t = MAX_EDGE_FRACTION)]
        max_edge_fraction: f64,
    },
    /// Full clip verdict.
    Clip(ClipArgs),
    /// Fixed-length windows over a duration.
    Slice {
        #[arg(long)]
        duration: f64,
        #[arg(long, default_value_t = MAX_CLIP_SECONDS)]
        max_clip: f64,
    },
}

#[derive(Args)]
struct SeriesArgs {
    /// JSON lines of {index, value}.
    #[arg(long, conflicts_with = "tensor")]
    series: Option<PathBuf>,
    /// Derive the series from a tensor with mean absolute frame difference.
    #[arg(long)]
    tensor: Option<PathBuf>,
    /// Frame sampling step used with --tensor.
    #[arg(long, default_value_t = 1)]
    sample_step: usize,
}

#[derive(Args)]
struct ClipArgs {
    #[command(flatten)]
    series: SeriesArgs,
    /// Clip length in frames; defaults to the tensor's frame count with --tensor.
    #[arg(long)]
    frames: Option<usize>,
    #[arg(long)]
    thresholds: Option<PathBuf>,
    #[arg(long)]
    aesthetic: Option<f64>,
    #[arg(long)]
    technical: Option<f64>,
}

#[derive(Deserialize)]
struct SeriesRow {
    index: usize,
    value: f64,
}

impl SeriesArgs {
    /// The series and, for tensor input, its frame count.
    fn load(&self) -> Result<(SimilaritySeries, Option<usize>)> {
        match (&self.series, &self.tensor) {
            (Some(path), _) => {
                let rows: Vec<SeriesRow> = read_jsonl(path)?;
                let (idx, values) = rows.into_iter().map(|r| (r.index, r.value)).unzip();
                Ok((SimilaritySeries::new(values, idx)?, None))
            }
            (None, Some(path)) => {
                let x = osp_core::load_tensor(path)?;
                Ok((series_from_tensor(&x, self.sample_step)?, Some(x.frames())))
            }
            (None, None) => Err(CliError::Input("pass --series FILE or --tensor FILE".into())),
        }
    }
}

fn thresholds(path: Option<&Path>) -> Result<CutThresholds> {
    let th = match path {
        Some(p) => read_json(p)?,
        None => CutThresholds::default(),
    };
    th.validate()?;
    Ok(th)
}

fn clip(args: &ClipArgs) -> Result<()> {
    let (series, tensor_frames) = args.series.load()?;
    let frames = args
        .frames
        .or(tensor_frames)
        .ok_or_else(|| CliError::Input("--frames is required with --series".into()))?;
    let cfg = CurationConfig {
        thresholds: thresholds(args.thresholds.as_deref())?,
        ..CurationConfig::default()
    };
    let scores = QualityScores {
        aesthetic: args.aesthetic,
        technical: args.technical,
    };
    emit(&curate_clip_with(&series, frames, &cfg, &scores)?)
}

pub fn run(cmd: CurateCmd, _ctx: &Ctx) -> Result<()> {
    let Some(sub) = cmd.sub else {
        return clip(&cmd.clip);
    };
    match sub {
        CurateSub::Cuts { series, thresholds: th } => {
            let (s, _) = series.load()?;
            let th = thresholds(th.as_deref())?;
            let (mean, std) = s.mean_std();
            let cuts = detect_cuts(&s, &th);
            let cut_frames: Vec<usize> = cuts.iter().map(|&i| s.frame_indices()[i]).collect();
            emit(&serde_json::json!({
                "mean": mean,
                "std": std,
                "candidates": outlier_candidates(&s, &th),
                "cut_indices": cuts,
                "cut_frames": cut_frames,
            }))
        }
        CurateSub::Motion { series, low, high } => {
            let (s, _) = series.load()?;
            let score = motion_score(&s);
            emit(&serde_json::json!({ "motion_score": score, "kept": motion_filter(score, low, high) }))
        }
        CurateSub::Crop {
            height,
            width,
            boxes,
            max_edge_fraction,
        } => {
            let boxes: Vec<BoxRect> = match boxes {
                Some(p) => read_json(&p)?,
                None => Vec::new(),
            };
            emit(&ocr_crop_geometry(height, width, &boxes, max_edge_fraction)?)
        }
        CurateSub::Clip(args) => clip(&args),
        CurateSub::Slice { duration, max_clip } => {
            let windows: Vec<_> = slice_plan(duration, max_clip)?
                .into_iter()
                .map(|(start, end)| serde_json::json!({ "start_s": start, "end_s": end }))
                .collect();
            emit(&windows)
        }
    }
}
