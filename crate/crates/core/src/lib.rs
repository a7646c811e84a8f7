//! Early-exit transformer for multi-channel mask-based speech separation.
//!
//! This crate holds everything that is pure computation: a small dense
//! tensor type with tape-based reverse-mode differentiation, STFT and the
//! magnitude + inter-channel phase difference feature grid, synthetic
//! multi-channel scenes with ideal ratio masks, the relative-position
//! transformer separator with a mask estimator on every layer, the
//! permutation invariant and depth-weighted losses, AdamW, and the
//! depth-adaptive inference loop with sliding-window stitching.
//!
//! It builds without `std` (only `alloc` is required). File formats,
//! the training driver, benchmarking and the command line live in the
//! `exitsep` companion crate.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod css;
mod error;
pub mod exit;
pub mod fft;
pub mod loss;
pub mod masks;
mod math;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod scene;
pub mod signal;
pub mod tensor;

pub use error::{Error, Result};
pub use exit::{layer_distance, run_early_exit, Clock, DistanceKind, ExitPolicy, ExitTrace, NoClock};
pub use loss::{pit_loss, weighted_loss, LossReport, Permutation};
pub use masks::MaskStack;
pub use model::{ModelConfig, Separator};
pub use signal::{assemble_features, ipd, istft, stft, FeatureGrid, Spectrogram, StftConfig};
pub use tensor::{Eval, Graph, Ops, ParamId, ParamSet, Tensor, Var};
