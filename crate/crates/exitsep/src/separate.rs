//! Continuous separation of a whole recording.

use std::fs;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use exitsep_core::css::{css_windows, reconstruct, stitch_masks, ChunkSpan};
use exitsep_core::signal::{raw_features, FeatureGrid};
use exitsep_core::{run_early_exit, stft, Clock, ExitPolicy, ExitTrace, MaskStack, ParamSet, Separator, StftConfig};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Monotonic nanoseconds since construction.
#[derive(Debug, Clone, Copy)]
pub struct WallClock(Instant);

impl Default for WallClock {
    fn default() -> Self {
        WallClock(Instant::now())
    }
}

impl Clock for WallClock {
    fn now_ns(&self) -> u64 {
        self.0.elapsed().as_nanos() as u64
    }
}

#[derive(Debug, Clone)]
pub struct Separation {
    /// One waveform per output stream, as long as the input.
    pub streams: Vec<Vec<f64>>,
    pub masks: MaskStack,
    pub spans: Vec<ChunkSpan>,
    pub traces: Vec<ExitTrace>,
}

/// Sliding-window separation of a multi-channel recording: per-chunk
/// early-exit inference, mask stitching, masking of channel 1 and
/// resynthesis.
#[allow(clippy::too_many_arguments)]
pub fn separate<C: Clock>(
    model: &Separator,
    params: &ParamSet,
    channels: &[Vec<f64>],
    stft_config: StftConfig,
    window: usize,
    hop: usize,
    policy: &ExitPolicy,
    clock: &C,
) -> Result<Separation> {
    let specs = channels.iter().map(|c| stft(c, stft_config)).collect::<exitsep_core::Result<Vec<_>>>()?;
    let raw = raw_features(&specs)?;
    let frames = specs[0].frames;
    let dims = specs.len() * specs[0].bins;
    let spans = css_windows(frames, window, hop)?;
    let mut chunks = Vec::with_capacity(spans.len());
    let mut traces = Vec::with_capacity(spans.len());
    for (k, span) in spans.iter().enumerate() {
        let x = FeatureGrid::from_raw(&raw, dims, span.start, span.len)?.to_tensor();
        let (m, trace) = run_early_exit(model, params, &x, policy, clock, k as u64)?;
        chunks.push((*span, m));
        traces.push(trace);
    }
    let stitched = stitch_masks(&chunks, frames)?;
    let len = channels[0].len();
    let streams = (0..stitched.masks.streams)
        .map(|s| {
            let mut y = reconstruct(&stitched.masks, s, &specs[0])?;
            y.resize(len, 0.0);
            Ok(y)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Separation { streams, masks: stitched.masks, spans, traces })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub chunk_id: u64,
    pub exit_layer: usize,
    pub dists: Vec<f64>,
    pub ns: u64,
}

impl From<&ExitTrace> for TraceRecord {
    fn from(t: &ExitTrace) -> Self {
        TraceRecord { chunk_id: t.chunk_id, exit_layer: t.exit_layer, dists: t.dists.clone(), ns: t.ns }
    }
}

/// One JSON object per line: `chunk_id`, `exit_layer`, `dists`, `ns`.
pub fn write_traces(path: &Path, traces: &[ExitTrace]) -> Result<()> {
    let mut out = Vec::new();
    for t in traces {
        serde_json::to_writer(&mut out, &TraceRecord::from(t)).expect("trace serialises");
        out.push(b'\n');
    }
    let mut f = fs::File::create(path).map_err(Error::io(path))?;
    f.write_all(&out).map_err(Error::io(path))
}

pub fn read_traces(path: &Path) -> Result<Vec<TraceRecord>> {
    let text = fs::read_to_string(path).map_err(Error::io(path))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(n, l)| serde_json::from_str(l).map_err(|e| Error::format(path, format!("line {}: {e}", n + 1))))
        .collect()
}
