use std::path::PathBuf;

use clap::{Args, Subcommand};
use osp_core::wavelet::{decompose, load_pyramid, parse_schedule, reconstruct, save_pyramid, LevelKind, SubbandPyramid};
use osp_core::Tensor4D;
use serde::Serialize;

use super::{parse_dims4, tensor_input};
use crate::error::Result;
use crate::io::emit;
use crate::Ctx;

#[derive(Subcommand)]
pub enum WaveletCmd {
    /// Decompose a tensor file into a pyramid directory.
    Decompose {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        schedule: ScheduleArg,
    },
    /// Rebuild a tensor from a pyramid directory.
    Reconstruct {
        #[arg(long)]
        pyramid: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Round-trip a tensor and report reconstruction error and energy balance.
    Verify {
        #[arg(long, conflicts_with = "dims")]
        input: Option<PathBuf>,
        /// Generate a random input of these dims instead of reading one.
        #[arg(long, value_parser = parse_dims4)]
        dims: Option<[usize; 4]>,
        #[command(flatten)]
        schedule: ScheduleArg,
        #[arg(long, default_value_t = 1e-5)]
        tolerance: f64,
    },
}

#[derive(Args)]
pub struct ScheduleArg {
    /// Comma-separated level kinds, e.g. 3d,3d,2d.
    #[arg(long, default_value = "3d,3d,2d")]
    schedule: String,
}

impl ScheduleArg {
    fn parse(&self) -> Result<Vec<LevelKind>> {
        Ok(parse_schedule(&self.schedule)?)
    }
}

#[derive(Serialize)]
struct LevelSummary {
    kind: LevelKind,
    band_dims: [usize; 4],
    input_energy: f64,
    energy: f64,
    relative_energy_error: f64,
}

fn relative(a: f64, reference: f64) -> f64 {
    if reference > 0.0 {
        (a - reference).abs() / reference
    } else {
        a.abs()
    }
}

/// Per level: energy entering the level against the energy of its bands.
fn summarize(x: &Tensor4D, p: &SubbandPyramid) -> Vec<LevelSummary> {
    let mut input_energy = x.sum_of_squares();
    p.levels
        .iter()
        .map(|l| {
            let energy = l.energy();
            let summary = LevelSummary {
                kind: l.kind,
                band_dims: l.bands.values().next().map(|t| t.dims()).unwrap_or_default(),
                input_energy,
                energy,
                relative_energy_error: relative(energy, input_energy),
            };
            input_energy = l.low().map_or(0.0, Tensor4D::sum_of_squares);
            summary
        })
        .collect()
}

/// Energy of a pyramid: every band at every level except the intermediate
/// low bands, which are carried by the deeper levels.
fn pyramid_energy(p: &SubbandPyramid) -> f64 {
    let mut e = 0.0;
    for (i, level) in p.levels.iter().enumerate() {
        let last = i + 1 == p.levels.len();
        for (label, band) in &level.bands {
            if last || label != level.kind.low_label() {
                e += band.sum_of_squares();
            }
        }
    }
    e + p.base.as_ref().map_or(0.0, |b| b.sum_of_squares())
}

#[derive(Serialize)]
struct VerifyReport {
    dims: [usize; 4],
    schedule: Vec<LevelKind>,
    max_abs_diff: f64,
    input_energy: f64,
    pyramid_energy: f64,
    relative_energy_error: f64,
    levels: Vec<LevelSummary>,
    pass: bool,
}

pub fn run(cmd: WaveletCmd, ctx: &Ctx) -> Result<()> {
    match cmd {
        WaveletCmd::Decompose { input, out, schedule } => {
            let x = osp_core::load_tensor(&input)?;
            let p = decompose(&x, &schedule.parse()?)?;
            save_pyramid(&p, &out)?;
            emit(&serde_json::json!({
                "input_dims": x.dims(),
                "schedule": p.schedule(),
                "levels": summarize(&x, &p),
                "out": out,
            }))
        }
        WaveletCmd::Reconstruct { pyramid, out } => {
            let p = load_pyramid(&pyramid)?;
            let x = reconstruct(&p)?;
            osp_core::save_tensor(&x, &out)?;
            emit(&serde_json::json!({ "dims": x.dims(), "out": out }))
        }
        WaveletCmd::Verify {
            input,
            dims,
            schedule,
            tolerance,
        } => {
            let x = tensor_input(input.as_deref(), dims, ctx.seed)?;
            let schedule = schedule.parse()?;
            let p = decompose(&x, &schedule)?;
            let y = reconstruct(&p)?;
            let max_abs_diff = f64::from(x.max_abs_diff(&y)?);
            let input_energy = x.sum_of_squares();
            let pe = pyramid_energy(&p);
            let rel = relative(pe, input_energy);
            emit(&VerifyReport {
                dims: x.dims(),
                schedule,
                max_abs_diff,
                input_energy,
                pyramid_energy: pe,
                relative_energy_error: rel,
                levels: summarize(&x, &p),
                pass: max_abs_diff <= tolerance,
            })
        }
    }
}
