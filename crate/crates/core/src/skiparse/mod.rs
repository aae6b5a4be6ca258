//! Index machinery for Skiparse attention: the Single Skip / Group Skip token
//! permutations, attention-distance analytics for the four attention layouts,
//! and multi-axis rotary position encoding.

mod distance;
mod plan;
mod rope;

pub use distance::{
    ad_avg_asymptotic, ad_avg_brute_force, ad_avg_closed_form, interaction_partners, AttentionSpec, BlockParity,
    BruteForceAd, DistanceConvention, Mechanism, DEFAULT_BRUTE_FORCE_CAP,
};
pub use plan::{apply_plan, build_plan, inverse_apply, BundledTokens, SkipKind, SkiparsePlan, PAD_INDEX};
pub use rope::{rope_apply, RopeConfig, DEFAULT_ROPE_BASE};

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SkiparseError {
    #[error("sparse ratio {k} invalid for sequence length {len}: {reason}")]
    Ratio { k: usize, len: usize, reason: &'static str },
    #[error("shape error: {0}")]
    Shape(String),
    #[error("token {token} out of range for sequence length {len}")]
    Index { token: usize, len: usize },
    #[error("sequence length {len} exceeds brute-force cap {cap}")]
    Size { len: usize, cap: usize },
    #[error("attention graph is disconnected: token {from} cannot reach token {to}")]
    Disconnected { from: usize, to: usize },
    #[error("rope config error: {0}")]
    Rope(String),
    #[error("unknown mechanism {0:?}")]
    ParseMechanism(String),
}
