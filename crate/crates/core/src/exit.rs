//! Depth-adaptive inference.
//!
//! After each encoder layer `i ≥ 2` the distance between the masks of layers
//! `i − 1` and `i` is compared with the threshold `τ`; the first layer with
//! `dist < τ` ends the forward pass and its masks are the output. Because the
//! comparison is strict, `τ = 0` always runs the full stack and `τ = ∞`
//! always stops at layer 2.

use alloc::format;
use alloc::vec::Vec;

use crate::masks::MaskStack;
use crate::math;
use crate::model::Separator;
use crate::tensor::{Eval, Ops, ParamSet, Tensor};
use crate::{Error, Result};

/// First layer at which an exit can happen (it needs a predecessor).
pub const MIN_EXIT_LAYER: usize = 2;

/// Which streams enter the consecutive-layer distance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DistanceKind {
    #[default]
    AllStreams,
    SpeakersOnly,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExitPolicy {
    pub threshold: f64,
    pub distance: DistanceKind,
}

impl ExitPolicy {
    pub fn new(threshold: f64) -> Result<Self> {
        if threshold.is_nan() || threshold < 0.0 {
            return Err(Error::Config(format!("exit threshold {threshold} must be ≥ 0")));
        }
        Ok(ExitPolicy {
            threshold,
            distance: DistanceKind::AllStreams,
        })
    }

    pub fn full_depth() -> Self {
        ExitPolicy {
            threshold: 0.0,
            distance: DistanceKind::AllStreams,
        }
    }
}

/// What happened on one chunk.
#[derive(Debug, Clone, PartialEq)]
pub struct ExitTrace {
    pub chunk_id: u64,
    pub exit_layer: usize,
    /// `dist²` … `dist^exit`, in layer order.
    pub dists: Vec<f64>,
    /// Wall-clock nanoseconds spent in the transformer stack.
    pub ns: u64,
}

/// Monotonic time source; the core crate has no clock of its own.
pub trait Clock {
    fn now_ns(&self) -> u64;
}

/// A clock that always reads zero.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoClock;

impl Clock for NoClock {
    fn now_ns(&self) -> u64 {
        0
    }
}

/// Mean over `(t, f)` of the Euclidean norm of the mask difference across
/// the stream axis.
pub fn layer_distance(prev: &MaskStack, cur: &MaskStack, kind: DistanceKind) -> Result<f64> {
    if prev.shape() != cur.shape() {
        return Err(Error::Contract(format!(
            "distance between mask stacks of shape {:?} and {:?}",
            prev.shape(),
            cur.shape()
        )));
    }
    let s = prev.streams;
    let used = match kind {
        DistanceKind::AllStreams => s,
        DistanceKind::SpeakersOnly => prev.speakers(),
    };
    let cells = prev.frames * prev.bins;
    let mut total = 0.0;
    for (a, b) in prev.data.chunks_exact(s).zip(cur.data.chunks_exact(s)) {
        let sq: f64 = a[..used].iter().zip(&b[..used]).map(|(x, y)| (x - y) * (x - y)).sum();
        total += math::sqrt(sq);
    }
    Ok(total / cells as f64)
}

/// Runs layers one at a time and stops at the first layer `i ≥ 2` whose
/// masks are closer than `policy.threshold` to those of layer `i − 1`.
pub fn run_early_exit<'a, C: Clock>(
    model: &Separator,
    params: &'a ParamSet,
    features: &'a Tensor,
    policy: &ExitPolicy,
    clock: &C,
    chunk_id: u64,
) -> Result<(MaskStack, ExitTrace)> {
    let start = clock.now_ns();
    let mut ops = Eval::new(params);
    let x = ops.borrowed(features);
    let mut h = model.input_proj(&mut ops, &x)?;
    let mut prev: Option<MaskStack> = None;
    let mut dists = Vec::new();
    let layers = model.layers.len();
    for (i, layer) in model.layers.iter().enumerate() {
        let depth = i + 1;
        h = model.encoder_layer(&mut ops, &h, layer)?;
        let m = model.estimate_masks(&mut ops, &h, layer)?;
        let masks = model.to_masks(ops.value(&m))?;
        if let Some(p) = &prev {
            let d = layer_distance(p, &masks, policy.distance)?;
            dists.push(d);
            if depth >= MIN_EXIT_LAYER && d < policy.threshold {
                let ns = clock.now_ns().saturating_sub(start);
                return Ok((masks, ExitTrace { chunk_id, exit_layer: depth, dists, ns }));
            }
        }
        if depth == layers {
            let ns = clock.now_ns().saturating_sub(start);
            return Ok((masks, ExitTrace { chunk_id, exit_layer: depth, dists, ns }));
        }
        prev = Some(masks);
    }
    unreachable!("model has at least one layer")
}
