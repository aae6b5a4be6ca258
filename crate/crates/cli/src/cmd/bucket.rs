use std::path::PathBuf;

use clap::{Args, Subcommand};
use osp_core::bucket::{assign_bucket, plan_batches, resolve_buckets, Assignment, BucketPlan, RatioSet, SampleMeta};
use serde::Serialize;

use crate::error::Result;
use crate::io::{emit, emit_many, read_json, read_jsonl, List};
use crate::Ctx;

#[derive(Subcommand)]
pub enum BucketCmd {
    /// Resolve per-ratio bucket resolutions under a token budget.
    Plan {
        #[arg(long)]
        max_token: u64,
        #[arg(long, default_value_t = 16)]
        stride: u64,
        /// Comma-separated H:W pairs.
        #[arg(long, default_value = "1:1,3:4,9:16")]
        ratios: RatioSet,
    },
    /// Route each sample to a bucket.
    Assign(SampleArgs),
    /// Group samples into uniform-resolution global batches.
    Batches {
        #[command(flatten)]
        samples: SampleArgs,
        #[arg(long)]
        global_batch: usize,
    },
}

#[derive(Args)]
pub struct SampleArgs {
    /// Plan JSON as written by `bucket plan`.
    #[arg(long)]
    plan: PathBuf,
    /// JSON lines of {id, height, width, frames}.
    #[arg(long)]
    samples: PathBuf,
    #[arg(long, default_value = "29,93")]
    frame_buckets: List<u64>,
}

impl SampleArgs {
    fn load(&self) -> Result<(BucketPlan, Vec<SampleMeta>)> {
        Ok((read_json(&self.plan)?, read_jsonl(&self.samples)?))
    }
}

#[derive(Serialize)]
struct AssignRow<'a> {
    id: &'a str,
    #[serde(flatten)]
    assignment: Assignment,
}

pub fn run(cmd: BucketCmd, ctx: &Ctx) -> Result<()> {
    match cmd {
        BucketCmd::Plan {
            max_token,
            stride,
            ratios,
        } => emit(&resolve_buckets(max_token, stride, &ratios)?),
        BucketCmd::Assign(args) => {
            let (plan, samples) = args.load()?;
            let rows: Vec<_> = samples
                .iter()
                .map(|s| AssignRow {
                    id: &s.id,
                    assignment: assign_bucket(s, &plan, &args.frame_buckets.0),
                })
                .collect();
            emit_many(&rows, ctx.format)
        }
        BucketCmd::Batches { samples: args, global_batch } => {
            let (plan, samples) = args.load()?;
            emit(&plan_batches(&samples, &plan, &args.frame_buckets.0, global_batch, ctx.seed)?)
        }
    }
}
