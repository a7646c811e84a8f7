use alloc::vec;
use alloc::vec::Vec;

use crate::tensor::Tensor;
use crate::{Error, Result};

/// Time-frequency masks for `streams` outputs, stored frame-major with the
/// stream index fastest: `data[(t·F + f)·S + s]`.
///
/// By convention the last stream is noise and the others are speakers.
/// A `frames × (F·S)` estimator output already has this layout.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskStack {
    pub frames: usize,
    pub bins: usize,
    pub streams: usize,
    pub data: Vec<f64>,
}

impl MaskStack {
    pub fn zeros(frames: usize, bins: usize, streams: usize) -> Self {
        MaskStack {
            frames,
            bins,
            streams,
            data: vec![0.0; frames * bins * streams],
        }
    }

    pub fn filled(frames: usize, bins: usize, streams: usize, v: f64) -> Self {
        MaskStack {
            frames,
            bins,
            streams,
            data: vec![v; frames * bins * streams],
        }
    }

    pub fn from_tensor(t: &Tensor, bins: usize, streams: usize) -> Result<Self> {
        let (frames, cols) = t.dims2("mask_stack")?;
        if cols != bins * streams {
            return Err(Error::Shape {
                op: "mask_stack",
                left: t.shape().to_vec(),
                right: vec![frames, bins, streams],
            });
        }
        Ok(MaskStack {
            frames,
            bins,
            streams,
            data: t.data().to_vec(),
        })
    }

    pub fn shape(&self) -> [usize; 3] {
        [self.frames, self.bins, self.streams]
    }

    /// Number of speaker streams (all but the trailing noise stream).
    pub fn speakers(&self) -> usize {
        self.streams.saturating_sub(1)
    }

    #[inline]
    pub fn index(&self, t: usize, f: usize, s: usize) -> usize {
        (t * self.bins + f) * self.streams + s
    }

    #[inline]
    pub fn get(&self, t: usize, f: usize, s: usize) -> f64 {
        self.data[self.index(t, f, s)]
    }

    #[inline]
    pub fn set(&mut self, t: usize, f: usize, s: usize, v: f64) {
        let i = self.index(t, f, s);
        self.data[i] = v;
    }

    /// The `T×F` plane of one stream.
    pub fn stream(&self, s: usize) -> Vec<f64> {
        self.data.iter().skip(s).step_by(self.streams).copied().collect()
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        let w = self.bins * self.streams;
        &self.data[t * w..(t + 1) * w]
    }

    pub fn slice_frames(&self, start: usize, len: usize) -> MaskStack {
        let w = self.bins * self.streams;
        MaskStack {
            frames: len,
            bins: self.bins,
            streams: self.streams,
            data: self.data[start * w..(start + len) * w].to_vec(),
        }
    }

    /// Reorders streams so that output stream `i` holds input stream `order[i]`.
    pub fn permute_streams(&self, order: &[usize]) -> MaskStack {
        let mut out = self.clone();
        for (dst_cell, src_cell) in out
            .data
            .chunks_exact_mut(self.streams)
            .zip(self.data.chunks_exact(self.streams))
        {
            for (i, &j) in order.iter().enumerate() {
                dst_cell[i] = src_cell[j];
            }
        }
        out
    }

    pub fn check_same_shape(&self, other: &MaskStack, op: &'static str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::Shape {
                op,
                left: self.shape().to_vec(),
                right: other.shape().to_vec(),
            });
        }
        Ok(())
    }
}
