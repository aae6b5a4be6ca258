use std::path::PathBuf;

use clap::{Args, Subcommand};
use osp_core::causal::{cache_size, cache_size_raw, stream_causal_conv_with, verify_lossless, CausalConvSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{parse_dims4, tensor_input};
use crate::error::Result;
use crate::io::{emit, List};
use crate::Ctx;

#[derive(Subcommand)]
pub enum StreamCmd {
    /// Stream a tensor file through the convolution and save the output.
    Run {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        conv: ConvArgs,
    },
    /// Compare streaming against direct inference bit for bit.
    VerifyLossless {
        #[arg(long, conflicts_with = "dims")]
        input: Option<PathBuf>,
        #[arg(long, value_parser = parse_dims4)]
        dims: Option<[usize; 4]>,
        #[command(flatten)]
        conv: ConvArgs,
    },
    /// Frames retained in the cache after m chunks.
    CacheSize {
        #[arg(long)]
        kernel: usize,
        #[arg(long, default_value_t = 1)]
        stride: usize,
        #[arg(long)]
        chunk: usize,
        #[arg(long, default_value_t = 1)]
        m: usize,
    },
}

#[derive(Args)]
pub struct ConvArgs {
    #[arg(long, default_value_t = 3)]
    kernel: usize,
    #[arg(long, default_value_t = 1)]
    stride: usize,
    /// Frames per chunk after the first frame.
    #[arg(long, default_value_t = 4)]
    chunk: usize,
    /// Comma-separated taps; drawn from the seed when omitted.
    #[arg(long)]
    taps: Option<List<f32>>,
}

impl ConvArgs {
    fn spec(&self, seed: u64) -> Result<CausalConvSpec> {
        let taps = match &self.taps {
            Some(t) => t.0.clone(),
            None => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7a75);
                (0..self.kernel).map(|_| rng.gen_range(-1.0f32..1.0)).collect()
            }
        };
        Ok(CausalConvSpec::new(self.kernel, self.stride, taps)?)
    }
}

pub fn run(cmd: StreamCmd, ctx: &Ctx) -> Result<()> {
    match cmd {
        StreamCmd::Run { input, out, conv } => {
            let x = osp_core::load_tensor(&input)?;
            let spec = conv.spec(ctx.seed)?;
            let run = stream_causal_conv_with(&x, &spec, conv.chunk, |_, _| {})?;
            osp_core::save_tensor(&run.output, &out)?;
            emit(&serde_json::json!({
                "dims": run.output.dims(),
                "chunks": run.chunks,
                "cache_sizes": run.cache_sizes,
                "taps": spec.taps(),
                "out": out,
            }))
        }
        StreamCmd::VerifyLossless { input, dims, conv } => {
            let x = tensor_input(input.as_deref(), dims, ctx.seed)?;
            let spec = conv.spec(ctx.seed)?;
            emit(&verify_lossless(&x, &spec, conv.chunk)?)
        }
        StreamCmd::CacheSize { kernel, stride, chunk, m } => {
            let spec = CausalConvSpec::new(kernel, stride, vec![0.0; kernel])?;
            emit(&serde_json::json!({
                "cache_size": cache_size(&spec, chunk, m),
                "raw": cache_size_raw(&spec, chunk, m),
            }))
        }
    }
}
