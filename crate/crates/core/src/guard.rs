//! Adaptive gradient clipping across N data-parallel workers.
//!
//! A single EMA of the per-step maximum gradient norm, and an EMA of its
//! squared deviation, define an upper bound `ema_gn + 3 * sqrt(ema_var)`.
//! Workers above the bound have their gradient zeroed; survivors are scaled by
//! `N / M` so the all-reduced sum keeps its magnitude.

use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum GuardError {
    #[error("a step needs at least one worker norm")]
    NoWorkers,
    #[error("worker {worker} norm {value} is not a finite non-negative number")]
    Norm { worker: usize, value: f64 },
    #[error("invalid guard config: {0}")]
    Config(String),
    #[error("trace error: {0}")]
    Trace(String),
    #[error("cannot parse injection {0:?} (expected step:worker:norm)")]
    Injection(String),
}

/// Which `ema_gn` the squared deviation in the variance update is taken against.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VarianceOrder {
    #[default]
    PreUpdate,
    PostUpdate,
}

impl FromStr for VarianceOrder {
    type Err = GuardError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "pre" | "pre-update" => Ok(Self::PreUpdate),
            "post" | "post-update" => Ok(Self::PostUpdate),
            _ => Err(GuardError::Config(format!("unknown variance order {s:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GuardConfig {
    pub alpha: f64,
    pub sigmas: f64,
    /// Steps that only feed the EMAs; nothing is flagged while warming up.
    pub warmup: u64,
    pub variance_order: VarianceOrder,
}

impl Default for GuardConfig {
    fn default() -> Self {
        Self {
            alpha: 0.99,
            sigmas: 3.0,
            warmup: 100,
            variance_order: VarianceOrder::PreUpdate,
        }
    }
}

impl GuardConfig {
    pub fn validate(&self) -> Result<(), GuardError> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(GuardError::Config(format!("alpha {} must lie in (0, 1)", self.alpha)));
        }
        if !(self.sigmas >= 0.0 && self.sigmas.is_finite()) {
            return Err(GuardError::Config(format!("sigma multiplier {} must be >= 0", self.sigmas)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClipGuardState {
    pub ema_gn: f64,
    pub ema_var: f64,
    pub config: GuardConfig,
    /// Steps judged so far, skipped steps included.
    pub step: u64,
    pub initialized: bool,
}

impl ClipGuardState {
    pub fn new(config: GuardConfig) -> Result<Self, GuardError> {
        config.validate()?;
        Ok(Self {
            ema_gn: 0.0,
            ema_var: 0.0,
            config,
            step: 0,
            initialized: false,
        })
    }

    /// A state that is past warm-up with the given EMAs.
    pub fn with_ema(config: GuardConfig, ema_gn: f64, ema_var: f64) -> Result<Self, GuardError> {
        config.validate()?;
        if !(ema_var >= 0.0) {
            return Err(GuardError::Config(format!("ema_var {ema_var} must be >= 0")));
        }
        Ok(Self {
            ema_gn,
            ema_var,
            config,
            step: config.warmup,
            initialized: true,
        })
    }

    pub fn warming_up(&self) -> bool {
        !self.initialized || self.step < self.config.warmup
    }

    pub fn upper_bound(&self) -> f64 {
        self.ema_gn + self.config.sigmas * self.ema_var.sqrt()
    }

    /// In-place form of [`judge_step`].
    pub fn judge(&mut self, norms: &[f64]) -> Result<StepVerdict, GuardError> {
        let (verdict, next) = judge_step(self, norms)?;
        *self = next;
        Ok(verdict)
    }
}

pub fn update_ema(state: &ClipGuardState, gn_max: f64) -> ClipGuardState {
    let a = state.config.alpha;
    let ema_gn = a * state.ema_gn + (1.0 - a) * gn_max;
    let reference = match state.config.variance_order {
        VarianceOrder::PreUpdate => state.ema_gn,
        VarianceOrder::PostUpdate => ema_gn,
    };
    let dev = gn_max - reference;
    ClipGuardState {
        ema_gn,
        ema_var: a * state.ema_var + (1.0 - a) * dev * dev,
        ..*state
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepVerdict {
    pub gn: Vec<f64>,
    /// `true` marks a normal worker.
    pub normal: Vec<bool>,
    pub m: usize,
    pub scale: Vec<f64>,
    /// Bound used for flagging; `None` during warm-up.
    pub threshold: Option<f64>,
    pub skipped: bool,
    pub warmup: bool,
}

impl StepVerdict {
    pub fn n(&self) -> usize {
        self.gn.len()
    }

    pub fn discarded(&self) -> usize {
        self.n() - self.m
    }

    /// Largest norm among normal workers.
    pub fn post_discard_max(&self) -> Option<f64> {
        self.gn.iter().zip(&self.normal).filter(|(_, &ok)| ok).map(|(&g, _)| g).reduce(f64::max)
    }

    /// All-reduced sum of per-worker scalar gradient proxies after rescaling.
    pub fn rescaled_sum(&self, grads: &[f64]) -> f64 {
        grads.iter().zip(&self.scale).map(|(g, s)| g * s).sum()
    }
}

pub fn judge_step(state: &ClipGuardState, norms: &[f64]) -> Result<(StepVerdict, ClipGuardState), GuardError> {
    if norms.is_empty() {
        return Err(GuardError::NoWorkers);
    }
    if let Some((worker, &value)) = norms.iter().enumerate().find(|(_, v)| !(v.is_finite() && **v >= 0.0)) {
        return Err(GuardError::Norm { worker, value });
    }
    let n = norms.len();
    let warmup = state.warming_up();
    let threshold = (!warmup).then(|| state.upper_bound());
    let normal: Vec<bool> = match threshold {
        None => vec![true; n],
        Some(_) => {
            let limit = state.config.sigmas * state.ema_var.sqrt();
            norms.iter().map(|&g| !(g - state.ema_gn > limit)).collect()
        }
    };
    let m = normal.iter().filter(|&&ok| ok).count();
    let mut verdict = StepVerdict {
        gn: norms.to_vec(),
        normal,
        m,
        scale: vec![0.0; n],
        threshold,
        skipped: m == 0,
        warmup,
    };
    let mut next = ClipGuardState {
        step: state.step + 1,
        ..*state
    };
    if m == 0 {
        return Ok((verdict, next));
    }
    let s = n as f64 / m as f64;
    for (scale, &ok) in verdict.scale.iter_mut().zip(&verdict.normal) {
        if ok {
            *scale = s;
        }
    }
    let gn_max = verdict.post_discard_max().expect("m > 0");
    if state.initialized {
        next = update_ema(&next, gn_max);
    } else {
        next.ema_gn = gn_max;
        next.ema_var = 0.0;
        next.initialized = true;
    }
    Ok((verdict, next))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub step: u64,
    pub norms: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loss: Option<f64>,
}

/// Replaces worker `worker`'s norm at `step` with `norm`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Injection {
    pub step: u64,
    pub worker: usize,
    pub norm: f64,
}

impl FromStr for Injection {
    type Err = GuardError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || GuardError::Injection(s.to_string());
        let mut parts = s.trim().split(':');
        let (Some(step), Some(worker), Some(norm), None) = (parts.next(), parts.next(), parts.next(), parts.next())
        else {
            return Err(err());
        };
        Ok(Self {
            step: step.parse().map_err(|_| err())?,
            worker: worker.parse().map_err(|_| err())?,
            norm: norm.parse().map_err(|_| err())?,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTrace {
    pub workers: usize,
    pub steps: u64,
    pub baseline: f64,
    /// Half-width of the uniform jitter shared by all workers at a step.
    pub common_jitter: f64,
    /// Half-width of the independent per-worker jitter.
    pub worker_jitter: f64,
    pub seed: u64,
}

impl SyntheticTrace {
    pub fn new(workers: usize, steps: u64, seed: u64) -> Self {
        Self {
            workers,
            steps,
            baseline: 1.0,
            common_jitter: 0.02,
            worker_jitter: 0.0,
            seed,
        }
    }

    pub fn generate(&self) -> Vec<TraceStep> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut uniform = |half: f64| if half > 0.0 { rng.gen_range(-half..=half) } else { 0.0 };
        (0..self.steps)
            .map(|step| {
                let level = self.baseline + uniform(self.common_jitter);
                let norms = (0..self.workers).map(|_| level + uniform(self.worker_jitter)).collect();
                let loss = 0.5 + 1.5 * (-(step as f64) / 300.0).exp() + uniform(0.01);
                TraceStep {
                    step,
                    norms,
                    loss: Some(loss),
                }
            })
            .collect()
    }
}

/// One row of the monitoring trace; field order follows the usual dashboard panels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub step: u64,
    pub loss: Option<f64>,
    pub discarded: usize,
    pub upper_bound: Option<f64>,
    pub max_norm: f64,
    /// Squared deviation of the post-discard max from the pre-update EMA.
    pub max_norm_var: Option<f64>,
    pub post_discard_max: Option<f64>,
    pub ema_gn: f64,
    pub ema_var: f64,
    pub survivors: usize,
    pub survivor_scale: f64,
    pub flagged: Vec<usize>,
    pub skipped: bool,
    pub warmup: bool,
}

pub fn apply_injections(trace: &mut [TraceStep], injections: &[Injection]) -> Result<(), GuardError> {
    for inj in injections {
        let row = trace
            .iter_mut()
            .find(|r| r.step == inj.step)
            .ok_or_else(|| GuardError::Trace(format!("injection at step {} outside the trace", inj.step)))?;
        let n = row.norms.len();
        let slot = row
            .norms
            .get_mut(inj.worker)
            .ok_or_else(|| GuardError::Trace(format!("injection worker {} outside 0..{n}", inj.worker)))?;
        *slot = inj.norm;
    }
    Ok(())
}

pub fn simulate_run(
    trace: &[TraceStep],
    injections: &[Injection],
    config: GuardConfig,
) -> Result<Vec<TraceRecord>, GuardError> {
    let n = trace.first().ok_or_else(|| GuardError::Trace("empty trace".into()))?.norms.len();
    if let Some(bad) = trace.iter().find(|r| r.norms.len() != n) {
        return Err(GuardError::Trace(format!(
            "step {} has {} norms, expected {n}",
            bad.step,
            bad.norms.len()
        )));
    }
    let mut trace = trace.to_vec();
    apply_injections(&mut trace, injections)?;

    let mut state = ClipGuardState::new(config)?;
    let mut records = Vec::with_capacity(trace.len());
    for row in &trace {
        let before = state;
        let verdict = state.judge(&row.norms)?;
        let post = verdict.post_discard_max();
        records.push(TraceRecord {
            step: row.step,
            loss: row.loss,
            discarded: verdict.discarded(),
            upper_bound: verdict.threshold,
            max_norm: row.norms.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            max_norm_var: post.filter(|_| before.initialized).map(|p| (p - before.ema_gn).powi(2)),
            post_discard_max: post,
            ema_gn: state.ema_gn,
            ema_var: state.ema_var,
            survivors: verdict.m,
            survivor_scale: if verdict.m == 0 { 0.0 } else { n as f64 / verdict.m as f64 },
            flagged: verdict.normal.iter().enumerate().filter(|(_, &ok)| !ok).map(|(i, _)| i).collect(),
            skipped: verdict.skipped,
            warmup: verdict.warmup,
        });
    }
    Ok(records)
}
