//! Deterministic building blocks for a video diffusion training stack: a Haar
//! wavelet codec with lossless streaming, Skiparse attention indexing, Min-Max
//! token bucketing, adaptive gradient clipping and clip curation statistics.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bucket;
pub mod causal;
pub mod curation;
pub mod guard;
pub mod skiparse;
pub mod tensor;
pub mod wavelet;

pub use tensor::{load_tensor, save_tensor, Tensor4D, TensorError, TokenGrid};

/// Any error raised by this crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] tensor::TensorError),
    #[error(transparent)]
    Wavelet(#[from] wavelet::WaveletError),
    #[error(transparent)]
    Stream(#[from] causal::StreamError),
    #[error(transparent)]
    Skiparse(#[from] skiparse::SkiparseError),
    #[error(transparent)]
    Bucket(#[from] bucket::BucketError),
    #[error(transparent)]
    Guard(#[from] guard::GuardError),
    #[error(transparent)]
    Curation(#[from] curation::CurationError),
}
