//! Depthwise causal temporal convolution and its chunked streaming form.
//!
//! The input is left-padded with `k_t - 1` zero frames. Streaming consumes the
//! first frame on its own, then the remaining `T - 1` frames in chunks, and
//! keeps only the trailing input frames that later outputs still read. Both
//! paths accumulate taps in ascending order in `f64`, so their outputs are
//! bitwise identical.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::{Tensor4D, TensorError};

#[derive(Debug, Error)]
pub enum StreamError {
    #[error("invalid convolution spec: {0}")]
    Spec(String),
    #[error("stream shape error: {0}")]
    Shape(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CausalConvSpec {
    kernel: usize,
    stride: usize,
    taps: Vec<f32>,
}

impl CausalConvSpec {
    pub fn new(kernel: usize, stride: usize, taps: Vec<f32>) -> Result<Self, StreamError> {
        if kernel == 0 || stride == 0 {
            return Err(StreamError::Spec(format!(
                "kernel ({kernel}) and stride ({stride}) must be >= 1"
            )));
        }
        if taps.len() != kernel {
            return Err(StreamError::Spec(format!(
                "{} taps for kernel size {kernel}",
                taps.len()
            )));
        }
        Ok(Self { kernel, stride, taps })
    }

    pub fn kernel(&self) -> usize {
        self.kernel
    }
    pub fn stride(&self) -> usize {
        self.stride
    }
    pub fn taps(&self) -> &[f32] {
        &self.taps
    }

    /// Zero frames prepended to the input.
    pub fn left_padding(&self) -> usize {
        self.kernel - 1
    }

    pub fn output_frames(&self, input_frames: usize) -> usize {
        (input_frames - 1) / self.stride + 1
    }
}

fn frame_len(x: &Tensor4D) -> usize {
    x.channels() * x.plane_len()
}

/// Output frame `t` is `Σ_j taps[j] · x_padded[t·s + j]`.
pub fn direct_causal_conv(x: &Tensor4D, spec: &CausalConvSpec) -> Result<Tensor4D, StreamError> {
    let [c_n, t_n, h_n, w_n] = x.dims();
    let out_t = spec.output_frames(t_n);
    let pad = spec.left_padding();
    let plane = x.plane_len();
    let mut out = Tensor4D::zeros([c_n, out_t, h_n, w_n])?;
    for c in 0..c_n {
        for t in 0..out_t {
            for p in 0..plane {
                let mut acc = 0.0f64;
                for (j, &tap) in spec.taps.iter().enumerate() {
                    let padded = t * spec.stride + j;
                    let v = if padded < pad {
                        0.0
                    } else {
                        x.plane(c, padded - pad)[p]
                    };
                    acc += f64::from(tap) * f64::from(v);
                }
                out.plane_mut(c, t)[p] = acc as f32;
            }
        }
    }
    Ok(out)
}

/// `k_t + m·T_chunk − s_t·⌊m·T_chunk/s_t + 1⌋`, unclamped.
pub fn cache_size_raw(spec: &CausalConvSpec, chunk: usize, m: usize) -> i64 {
    let (k, s, mt) = (spec.kernel as i64, spec.stride as i64, (m * chunk) as i64);
    k + mt - s * (mt / s + 1)
}

/// Frames retained after the first frame plus `m` full chunks. Negative values
/// of the closed form mean the next chunk starts past the next window; they
/// are clamped to 0 with a warning.
pub fn cache_size(spec: &CausalConvSpec, chunk: usize, m: usize) -> usize {
    let raw = cache_size_raw(spec, chunk, m);
    if raw < 0 {
        log::warn!(
            "cache size evaluates to {raw} for k_t={}, s_t={}, T_chunk={chunk}, m={m}; clamped to 0",
            spec.kernel,
            spec.stride
        );
        0
    } else {
        raw as usize
    }
}

/// Incremental state for streaming inference. Frames are fed in order; each
/// call returns whatever output frames became computable.
#[derive(Clone, Debug)]
pub struct StreamState {
    spec: CausalConvSpec,
    channels: usize,
    plane: usize,
    /// Retained padded-input frames, channel-major within a frame.
    cache: VecDeque<Vec<f32>>,
    /// Padded index of `cache[0]`.
    cache_start: usize,
    /// Padded frames seen so far, including the zero padding.
    received: usize,
    next_output: usize,
    chunks: usize,
}

impl StreamState {
    pub fn new(spec: CausalConvSpec, channels: usize, height: usize, width: usize) -> Self {
        let plane = height * width;
        let pad = spec.left_padding();
        let cache = (0..pad).map(|_| vec![0.0f32; channels * plane]).collect();
        Self {
            spec,
            channels,
            plane,
            cache,
            cache_start: 0,
            received: pad,
            next_output: 0,
            chunks: 0,
        }
    }

    pub fn spec(&self) -> &CausalConvSpec {
        &self.spec
    }

    /// Number of input frames currently held between calls.
    pub fn cached_len(&self) -> usize {
        self.cache.len()
    }

    /// Chunks pushed so far (the first frame is not counted).
    pub fn chunk_index(&self) -> usize {
        self.chunks
    }

    /// Mutable view of a cached frame; exposed for fault-injection checks.
    pub fn cached_frame_mut(&mut self, i: usize) -> Option<&mut [f32]> {
        self.cache.get_mut(i).map(Vec::as_mut_slice)
    }

    fn needed_start(&self) -> usize {
        self.next_output * self.spec.stride
    }

    /// Feeds the leading frame; must be called exactly once before any chunk.
    pub fn push_first(&mut self, frame: &Tensor4D) -> Result<Vec<Vec<f32>>, StreamError> {
        if self.received != self.spec.left_padding() || frame.frames() != 1 {
            return Err(StreamError::Shape(
                "the first call must carry exactly one frame".into(),
            ));
        }
        self.ingest(frame)
    }

    pub fn push_chunk(&mut self, chunk: &Tensor4D) -> Result<Vec<Vec<f32>>, StreamError> {
        if self.received == self.spec.left_padding() {
            return Err(StreamError::Shape("push_first must precede chunks".into()));
        }
        let out = self.ingest(chunk)?;
        self.chunks += 1;
        Ok(out)
    }

    fn ingest(&mut self, x: &Tensor4D) -> Result<Vec<Vec<f32>>, StreamError> {
        if x.channels() != self.channels || x.plane_len() != self.plane {
            return Err(StreamError::Shape(format!(
                "chunk dims {:?} do not match stream ({} channels, {} pixels per plane)",
                x.dims(),
                self.channels,
                self.plane
            )));
        }
        for t in 0..x.frames() {
            let index = self.received;
            self.received += 1;
            if index < self.needed_start() {
                // Skipped by the stride; no window reads it.
                continue;
            }
            if self.cache.is_empty() {
                self.cache_start = index;
            }
            let mut frame = Vec::with_capacity(frame_len(x));
            for c in 0..self.channels {
                frame.extend_from_slice(x.plane(c, t));
            }
            self.cache.push_back(frame);
        }

        let (k, s) = (self.spec.kernel, self.spec.stride);
        let mut outputs = Vec::new();
        while self.next_output * s + k <= self.received {
            let base = self.next_output * s - self.cache_start;
            let mut out = vec![0.0f32; self.channels * self.plane];
            for (i, o) in out.iter_mut().enumerate() {
                let mut acc = 0.0f64;
                for (j, &tap) in self.spec.taps.iter().enumerate() {
                    acc += f64::from(tap) * f64::from(self.cache[base + j][i]);
                }
                *o = acc as f32;
            }
            outputs.push(out);
            self.next_output += 1;
        }

        let keep_from = self.needed_start();
        while !self.cache.is_empty() && self.cache_start < keep_from {
            self.cache.pop_front();
            self.cache_start += 1;
        }
        Ok(outputs)
    }
}

fn assemble(frames: &[Vec<f32>], channels: usize, height: usize, width: usize) -> Result<Tensor4D, StreamError> {
    let plane = height * width;
    let t_n = frames.len();
    let mut data = Vec::with_capacity(channels * t_n * plane);
    for c in 0..channels {
        for f in frames {
            data.extend_from_slice(&f[c * plane..(c + 1) * plane]);
        }
    }
    Ok(Tensor4D::new([channels, t_n, height, width], data)?)
}

/// Streaming output plus per-boundary cache sizes.
#[derive(Clone, Debug)]
pub struct StreamRun {
    pub output: Tensor4D,
    pub chunks: usize,
    /// Frames held after each chunk that is followed by another chunk.
    pub cache_sizes: Vec<usize>,
}

fn check_stream_shape(x: &Tensor4D, spec: &CausalConvSpec, chunk: usize) -> Result<(), StreamError> {
    if chunk == 0 {
        return Err(StreamError::Shape("T_chunk must be >= 1".into()));
    }
    if !(x.frames() - 1).is_multiple_of(spec.stride) {
        return Err(StreamError::Shape(format!(
            "(T - 1) = {} is not divisible by stride {}",
            x.frames() - 1,
            spec.stride
        )));
    }
    Ok(())
}

/// Runs the stream, calling `before_chunk(m, state)` ahead of chunk `m` (1-based).
pub fn stream_causal_conv_with(
    x: &Tensor4D,
    spec: &CausalConvSpec,
    chunk: usize,
    mut before_chunk: impl FnMut(usize, &mut StreamState),
) -> Result<StreamRun, StreamError> {
    check_stream_shape(x, spec, chunk)?;
    let [c_n, t_n, h_n, w_n] = x.dims();
    let mut state = StreamState::new(spec.clone(), c_n, h_n, w_n);
    let mut outputs = state.push_first(&x.slice_frames(0..1)?)?;
    let mut cache_sizes = Vec::new();
    let mut start = 1;
    while start < t_n {
        let end = (start + chunk).min(t_n);
        before_chunk(state.chunk_index() + 1, &mut state);
        outputs.extend(state.push_chunk(&x.slice_frames(start..end)?)?);
        start = end;
        if start < t_n {
            cache_sizes.push(state.cached_len());
        }
    }
    Ok(StreamRun {
        output: assemble(&outputs, c_n, h_n, w_n)?,
        chunks: state.chunk_index(),
        cache_sizes,
    })
}

pub fn stream_causal_conv(x: &Tensor4D, spec: &CausalConvSpec, chunk: usize) -> Result<Tensor4D, StreamError> {
    stream_causal_conv_with(x, spec, chunk, |_, _| {}).map(|r| r.output)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LosslessReport {
    pub max_abs_diff: f64,
    pub identical: bool,
    pub chunks: usize,
    pub cache_sizes: Vec<usize>,
}

fn compare(direct: &Tensor4D, run: StreamRun) -> Result<LosslessReport, StreamError> {
    let diff = direct.max_abs_diff(&run.output)?;
    Ok(LosslessReport {
        max_abs_diff: f64::from(diff),
        identical: direct.bit_eq(&run.output),
        chunks: run.chunks,
        cache_sizes: run.cache_sizes,
    })
}

/// Streams `x` and compares bitwise against direct inference.
pub fn verify_lossless(x: &Tensor4D, spec: &CausalConvSpec, chunk: usize) -> Result<LosslessReport, StreamError> {
    verify_lossless_with(x, spec, chunk, |_, _| {})
}

pub fn verify_lossless_with(
    x: &Tensor4D,
    spec: &CausalConvSpec,
    chunk: usize,
    before_chunk: impl FnMut(usize, &mut StreamState),
) -> Result<LosslessReport, StreamError> {
    let run = stream_causal_conv_with(x, spec, chunk, before_chunk)?;
    let direct = direct_causal_conv(x, spec)?;
    compare(&direct, run)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn scalar_frames(values: &[f32]) -> Tensor4D {
        Tensor4D::new([1, values.len(), 1, 1], values.to_vec()).unwrap()
    }

    fn random_spec(k: usize, s: usize, rng: &mut ChaCha8Rng) -> CausalConvSpec {
        CausalConvSpec::new(k, s, (0..k).map(|_| rng.gen_range(-1.0f32..1.0)).collect()).unwrap()
    }

    #[test]
    fn spec_validation() {
        assert!(CausalConvSpec::new(0, 1, vec![]).is_err());
        assert!(CausalConvSpec::new(2, 0, vec![1.0, 1.0]).is_err());
        assert!(CausalConvSpec::new(2, 1, vec![1.0]).is_err());
        assert_eq!(CausalConvSpec::new(3, 1, vec![0.0; 3]).unwrap().left_padding(), 2);
    }

    #[test]
    fn identity_kernel() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Tensor4D::random([2, 5, 3, 3], &mut rng).unwrap();
        let spec = CausalConvSpec::new(1, 1, vec![1.0]).unwrap();
        assert!(direct_causal_conv(&x, &spec).unwrap().bit_eq(&x));
    }

    #[test]
    fn selector_tap_picks_current_frame() {
        let x = scalar_frames(&[3.0, 1.0, 4.0, 1.5]);
        let spec = CausalConvSpec::new(3, 1, vec![0.0, 0.0, 1.0]).unwrap();
        assert_eq!(direct_causal_conv(&x, &spec).unwrap().data(), x.data());
    }

    #[test]
    fn neighbour_sum_with_zero_pad() {
        let x = scalar_frames(&[1.0, 2.0, 3.0]);
        let spec = CausalConvSpec::new(2, 1, vec![1.0, 1.0]).unwrap();
        assert_eq!(direct_causal_conv(&x, &spec).unwrap().data(), &[1.0, 3.0, 5.0]);
    }

    #[test]
    fn strided_output_length() {
        let x = scalar_frames(&[1.0, 2.0, 3.0, 4.0, 5.0]);
        let spec = CausalConvSpec::new(3, 2, vec![1.0, 10.0, 100.0]).unwrap();
        // padded: 0 0 1 2 3 4 5; windows start at 0, 2, 4.
        assert_eq!(direct_causal_conv(&x, &spec).unwrap().data(), &[100.0, 321.0, 543.0]);
    }

    #[test]
    fn cache_size_examples() {
        let k3s1 = CausalConvSpec::new(3, 1, vec![0.0; 3]).unwrap();
        assert_eq!(cache_size(&k3s1, 4, 1), 2);
        let k1s1 = CausalConvSpec::new(1, 1, vec![1.0]).unwrap();
        assert_eq!(cache_size(&k1s1, 1, 1), 0);
        let k3s2 = CausalConvSpec::new(3, 2, vec![0.0; 3]).unwrap();
        assert_eq!(cache_size(&k3s2, 4, 1), 1);
        let k1s2 = CausalConvSpec::new(1, 2, vec![1.0]).unwrap();
        assert_eq!(cache_size_raw(&k1s2, 4, 1), -1);
        assert_eq!(cache_size(&k1s2, 4, 1), 0);
    }

    #[test]
    fn paper_example_caches_two_frames() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = Tensor4D::random([1, 17, 2, 2], &mut rng).unwrap();
        let spec = random_spec(3, 1, &mut rng);
        let report = verify_lossless(&x, &spec, 4).unwrap();
        assert!(report.identical);
        assert_eq!(report.chunks, 4);
        assert_eq!(report.cache_sizes, vec![2, 2, 2]);
    }

    #[test]
    fn strided_random_stream_is_bit_identical() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Tensor4D::random([2, 13, 4, 4], &mut rng).unwrap();
        let spec = random_spec(3, 2, &mut rng);
        let streamed = stream_causal_conv(&x, &spec, 4).unwrap();
        assert!(streamed.bit_eq(&direct_causal_conv(&x, &spec).unwrap()));
    }

    #[test]
    fn single_chunk_when_chunk_covers_everything() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = Tensor4D::random([1, 9, 2, 2], &mut rng).unwrap();
        let spec = random_spec(4, 1, &mut rng);
        let report = verify_lossless(&x, &spec, 8).unwrap();
        assert_eq!(report.chunks, 1);
        assert!(report.cache_sizes.is_empty());
        assert!(report.identical);
    }

    #[test]
    fn zero_input_is_identical() {
        let x = Tensor4D::zeros([1, 5, 2, 2]).unwrap();
        let spec = CausalConvSpec::new(2, 1, vec![-1.0, 2.0]).unwrap();
        let r = verify_lossless(&x, &spec, 2).unwrap();
        assert!(r.identical);
        assert_eq!(r.max_abs_diff, 0.0);
    }

    #[test]
    fn perturbed_cache_is_detected() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = Tensor4D::random([1, 13, 2, 2], &mut rng).unwrap();
        let spec = CausalConvSpec::new(3, 1, vec![0.5, 0.25, 1.0]).unwrap();
        let report = verify_lossless_with(&x, &spec, 4, |m, state| {
            if m == 2 {
                state.cached_frame_mut(0).unwrap()[0] += 1.0;
            }
        })
        .unwrap();
        assert!(!report.identical);
        assert!(report.max_abs_diff > 0.0);
    }

    #[test]
    fn stream_shape_errors() {
        let x = Tensor4D::zeros([1, 4, 1, 1]).unwrap();
        let spec = CausalConvSpec::new(3, 2, vec![0.0; 3]).unwrap();
        assert!(matches!(stream_causal_conv(&x, &spec, 2), Err(StreamError::Shape(_))));
        let spec = CausalConvSpec::new(3, 1, vec![0.0; 3]).unwrap();
        assert!(matches!(stream_causal_conv(&x, &spec, 0), Err(StreamError::Shape(_))));
    }

    #[test]
    fn state_rejects_out_of_order_calls() {
        let spec = CausalConvSpec::new(2, 1, vec![1.0, 1.0]).unwrap();
        let mut state = StreamState::new(spec, 1, 1, 1);
        assert!(state.push_chunk(&scalar_frames(&[1.0])).is_err());
        assert!(state.push_first(&scalar_frames(&[1.0, 2.0])).is_err());
        assert_eq!(state.push_first(&scalar_frames(&[1.0])).unwrap(), vec![vec![1.0]]);
        assert!(state.push_first(&scalar_frames(&[1.0])).is_err());
        assert!(state.push_chunk(&Tensor4D::zeros([2, 1, 1, 1]).unwrap()).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn streaming_matches_direct(k in 1usize..=5, s in 1usize..=2, chunk in 1usize..=8, n in 0usize..8, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let t = n * s + 1;
            let x = Tensor4D::random([2, t, 2, 3], &mut rng).unwrap();
            let spec = random_spec(k, s, &mut rng);
            let run = stream_causal_conv_with(&x, &spec, chunk, |_, _| {}).unwrap();
            let direct = direct_causal_conv(&x, &spec).unwrap();
            prop_assert_eq!(direct.frames(), (t - 1) / s + 1);
            prop_assert!(run.output.bit_eq(&direct));
            // Every boundary after a full chunk holds exactly the closed-form cache.
            for (i, &size) in run.cache_sizes.iter().enumerate() {
                prop_assert_eq!(size, cache_size(&spec, chunk, i + 1));
            }
        }

        #[test]
        fn unit_stride_cache_is_bounded(k in 1usize..=6, chunk in 1usize..=10, m in 1usize..=10) {
            let spec = CausalConvSpec::new(k, 1, vec![0.0; k]).unwrap();
            prop_assert!(cache_size(&spec, chunk, m) < k);
            prop_assert_eq!(cache_size_raw(&spec, chunk, m), k as i64 - 1);
        }
    }
}
