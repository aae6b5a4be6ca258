use std::path::PathBuf;

use clap::{Args, Subcommand};
use osp_core::guard::{
    judge_step, simulate_run, ClipGuardState, GuardConfig, Injection, SyntheticTrace, TraceStep, VarianceOrder,
};

use crate::error::Result;
use crate::io::{emit, emit_many, read_jsonl, List};
use crate::Ctx;

#[derive(Subcommand)]
pub enum GuardCmd {
    /// Run the guard over a trace and emit one JSON record per step.
    Simulate {
        /// JSON lines of {step, norms, loss?}; a synthetic trace is generated when omitted.
        #[arg(long)]
        trace: Option<PathBuf>,
        #[arg(long, default_value_t = 8)]
        workers: usize,
        #[arg(long, default_value_t = 1000)]
        steps: u64,
        #[arg(long, default_value_t = 1.0)]
        baseline: f64,
        /// Half-width of the jitter shared by all workers at a step.
        #[arg(long, default_value_t = 0.02)]
        common_jitter: f64,
        /// Half-width of independent per-worker jitter.
        #[arg(long, default_value_t = 0.0)]
        worker_jitter: f64,
        /// step:worker:norm, repeatable.
        #[arg(long)]
        inject: Vec<Injection>,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Judge a single step from a given EMA state.
    Judge {
        #[arg(long)]
        ema_gn: f64,
        #[arg(long)]
        ema_var: f64,
        /// Comma-separated per-worker norms.
        #[arg(long)]
        norms: List<f64>,
        #[command(flatten)]
        config: ConfigArgs,
    },
}

#[derive(Args)]
pub struct ConfigArgs {
    #[arg(long, default_value_t = 0.99)]
    alpha: f64,
    #[arg(long, default_value_t = 3.0)]
    sigmas: f64,
    #[arg(long, default_value_t = 100)]
    warmup: u64,
    /// pre or post: EMA used in the squared deviation.
    #[arg(long, default_value = "pre")]
    variance_order: VarianceOrder,
}

impl ConfigArgs {
    fn config(&self) -> GuardConfig {
        GuardConfig {
            alpha: self.alpha,
            sigmas: self.sigmas,
            warmup: self.warmup,
            variance_order: self.variance_order,
        }
    }
}

pub fn run(cmd: GuardCmd, ctx: &Ctx) -> Result<()> {
    match cmd {
        GuardCmd::Simulate {
            trace,
            workers,
            steps,
            baseline,
            common_jitter,
            worker_jitter,
            inject,
            config,
        } => {
            let trace: Vec<TraceStep> = match trace {
                Some(path) => read_jsonl(&path)?,
                None => SyntheticTrace {
                    workers,
                    steps,
                    baseline,
                    common_jitter,
                    worker_jitter,
                    seed: ctx.seed,
                }
                .generate(),
            };
            let records = simulate_run(&trace, &inject, config.config())?;
            emit_many(&records, ctx.format)
        }
        GuardCmd::Judge {
            ema_gn,
            ema_var,
            norms,
            config,
        } => {
            let state = ClipGuardState::with_ema(config.config(), ema_gn, ema_var)?;
            let (verdict, next) = judge_step(&state, &norms.0)?;
            emit(&serde_json::json!({ "verdict": verdict, "next": next }))
        }
    }
}
