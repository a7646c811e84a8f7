//! Sliding-window continuous separation: chunking, mask stitching and
//! resynthesis.

use alloc::format;
use alloc::vec::Vec;

use crate::loss::{pit_loss, Permutation};
use crate::masks::MaskStack;
use crate::signal::{istft, Spectrogram};
use crate::{Error, Result};

/// Frames `start .. start + len` of the full utterance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChunkSpan {
    pub start: usize,
    pub len: usize,
}

/// Chunks of `window` frames every `hop` frames covering `total` frames.
/// The last chunk may be shorter. Chunk count is
/// `⌈max(total − window, 0) / hop⌉ + 1`.
pub fn css_windows(total: usize, window: usize, hop: usize) -> Result<Vec<ChunkSpan>> {
    if window == 0 || hop == 0 || hop > window {
        return Err(Error::Config(format!(
            "css window {window} / hop {hop}: need 0 < hop ≤ window"
        )));
    }
    let count = total.saturating_sub(window).div_ceil(hop) + 1;
    Ok((0..count)
        .map(|k| {
            let start = k * hop;
            ChunkSpan {
                start,
                len: window.min(total.saturating_sub(start)),
            }
        })
        .collect())
}

/// Stitched masks and the speaker permutation applied to each chunk.
#[derive(Debug, Clone, PartialEq)]
pub struct Stitched {
    pub masks: MaskStack,
    pub permutations: Vec<Permutation>,
}

/// Folds per-chunk masks into one full-length stack.
///
/// Each chunk's speakers are first reordered to best match the stitched
/// result on the frames they share (squared error, noise fixed, ties keep
/// the identity). Shared frames are then cross-faded linearly, with the new
/// chunk's weight rising as `(k + 1) / (O + 1)` over the `O` shared frames;
/// all other frames are copied.
pub fn stitch_masks(chunks: &[(ChunkSpan, MaskStack)], total: usize) -> Result<Stitched> {
    let Some((_, first)) = chunks.first() else {
        return Err(Error::Contract("nothing to stitch".into()));
    };
    let (bins, streams) = (first.bins, first.streams);
    let mut out = MaskStack::zeros(total, bins, streams);
    let mut permutations = Vec::with_capacity(chunks.len());
    let mut covered = 0usize;
    let width = bins * streams;
    for (span, m) in chunks {
        if m.bins != bins || m.streams != streams || m.frames != span.len {
            return Err(Error::Shape {
                op: "stitch_masks",
                left: m.shape().to_vec(),
                right: [span.len, bins, streams].to_vec(),
            });
        }
        if span.start > covered || span.start + span.len > total {
            return Err(Error::Contract(format!(
                "chunk at frames {}..{} leaves a gap or overruns {total} frames (covered {covered})",
                span.start,
                span.start + span.len
            )));
        }
        let overlap = (covered - span.start).min(span.len);
        let perm = if overlap > 0 {
            let done = out.slice_frames(span.start, overlap);
            let fresh = m.slice_frames(0, overlap);
            pit_loss(&done, &fresh)?.1
        } else {
            Permutation::identity(m.speakers())
        };
        let aligned = if perm.is_identity() {
            m.clone()
        } else {
            m.permute_streams(&perm.with_noise())
        };
        for k in 0..span.len {
            let dst = &mut out.data[(span.start + k) * width..(span.start + k + 1) * width];
            let src = aligned.frame(k);
            if k < overlap {
                let w = (k + 1) as f64 / (overlap + 1) as f64;
                for (d, &s) in dst.iter_mut().zip(src) {
                    *d = (1.0 - w) * *d + w * s;
                }
            } else {
                dst.copy_from_slice(src);
            }
        }
        covered = covered.max(span.start + span.len);
        permutations.push(perm);
    }
    if covered != total {
        return Err(Error::Contract(format!("chunks cover {covered} of {total} frames")));
    }
    Ok(Stitched { masks: out, permutations })
}

/// Applies stream `stream` of `masks` to the reference-channel spectrogram
/// and resynthesises.
pub fn reconstruct(masks: &MaskStack, stream: usize, mixture: &Spectrogram) -> Result<Vec<f64>> {
    if masks.frames != mixture.frames || masks.bins != mixture.bins || stream >= masks.streams {
        return Err(Error::Shape {
            op: "reconstruct",
            left: masks.shape().to_vec(),
            right: [mixture.frames, mixture.bins, stream].to_vec(),
        });
    }
    let mut spec = mixture.clone();
    for (i, c) in spec.data.iter_mut().enumerate() {
        *c *= masks.data[i * masks.streams + stream];
    }
    istft(&spec)
}
