//! Threshold sweeps, exit statistics per overlap bucket and wall-clock
//! speedup.

use std::collections::BTreeMap;

use exitsep_core::css::{css_windows, reconstruct, stitch_masks, ChunkSpan};
use exitsep_core::loss::permutations;
use exitsep_core::metrics::{exit_stats, mask_mse, overlap_bucket, si_snr};
use exitsep_core::{run_early_exit, DistanceKind, ExitPolicy, ExitTrace, MaskStack, NoClock, ParamSet, Separator, Tensor};

use crate::dataset::{PreparedScene, SceneSignals};
use crate::error::{Error, Result};
use crate::separate::WallClock;

/// One window of one test scene.
#[derive(Debug, Clone)]
pub struct TestChunk {
    pub id: u64,
    pub scene: usize,
    pub span: ChunkSpan,
    pub overlap: f64,
    pub features: Tensor,
}

/// Chunk id of window `k` of scene `scene`.
pub fn chunk_id(scene: usize, k: usize) -> u64 {
    ((scene as u64) << 20) | k as u64
}

pub fn test_chunks(scenes: &[PreparedScene], window: usize, hop: usize) -> Result<Vec<TestChunk>> {
    let mut out = Vec::new();
    for (i, s) in scenes.iter().enumerate() {
        for (k, span) in css_windows(s.frames, window, hop)?.into_iter().enumerate() {
            out.push(TestChunk {
                id: chunk_id(i, k),
                scene: i,
                span,
                overlap: s.overlap,
                features: s.features(span.start, span.len)?,
            });
        }
    }
    Ok(out)
}

pub fn overlap_map(chunks: &[TestChunk]) -> BTreeMap<u64, f64> {
    chunks.iter().map(|c| (c.id, c.overlap)).collect()
}

/// Per-bucket metrics at one threshold. `overlap` is the bucket in tenths.
#[derive(Debug, Clone, PartialEq)]
pub struct BucketRow {
    pub overlap: u32,
    pub chunks: usize,
    pub avg_exit_layer: f64,
    pub mask_mse: f64,
    pub si_snri_db: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub tau: f64,
    pub avg_exit_layer: f64,
    /// `time(τ = 0) / time(τ)`; absent when timing was not run.
    pub speedup: Option<f64>,
    pub median_ns: Option<u64>,
    pub mask_mse: f64,
    pub si_snri_db: f64,
    pub buckets: Vec<BucketRow>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct BenchReport {
    pub layers: usize,
    pub rows: Vec<SweepRow>,
}

/// Traces of every chunk at one threshold, in chunk order.
#[derive(Debug, Clone)]
pub struct SweepRun {
    pub tau: f64,
    pub traces: Vec<ExitTrace>,
}

fn policy(tau: f64, distance: DistanceKind) -> Result<ExitPolicy> {
    Ok(ExitPolicy { distance, ..ExitPolicy::new(tau)? })
}

/// Mean SI-SNR improvement of the speaker streams of `masks` over the
/// mixture, under the best speaker permutation. `None` when the scene has
/// more speakers than the masks have speaker streams.
pub fn si_snr_improvement(masks: &MaskStack, sig: &SceneSignals) -> Result<Option<f64>> {
    let k = masks.speakers();
    if sig.speakers.len() > k || sig.speakers.is_empty() {
        return Ok(None);
    }
    let estimates = (0..k)
        .map(|s| {
            let mut y = reconstruct(masks, s, &sig.mixture_spec)?;
            y.resize(sig.mixture.len(), 0.0);
            Ok(y)
        })
        .collect::<Result<Vec<_>>>()?;
    let baseline = sig.speakers.iter().map(|r| si_snr(&sig.mixture, r)).collect::<exitsep_core::Result<Vec<_>>>()?;
    let mut best: Option<f64> = None;
    for p in permutations(k) {
        let mut sum = 0.0;
        for ((r, b), &e) in sig.speakers.iter().zip(&baseline).zip(&p) {
            sum += si_snr(&estimates[e], r)? - b;
        }
        let mean = sum / sig.speakers.len() as f64;
        best = Some(best.map_or(mean, |b: f64| b.max(mean)));
    }
    Ok(best)
}

/// Stitched mask MSE against the ideal masks and, when the signals are
/// kept, the SI-SNR improvement.
fn scene_quality(scene: &PreparedScene, spans: &[(ChunkSpan, MaskStack)]) -> Result<(f64, Option<f64>)> {
    let stitched = stitch_masks(spans, scene.frames)?;
    let mse = mask_mse(&stitched.masks, &scene.target, true)?;
    let snri = match &scene.signals {
        Some(sig) => si_snr_improvement(&stitched.masks, sig)?,
        None => None,
    };
    Ok((mse, snri))
}

/// Runs every chunk at every threshold and summarises per overlap bucket.
pub fn sweep(model: &Separator, params: &ParamSet, scenes: &[PreparedScene], chunks: &[TestChunk], taus: &[f64], distance: DistanceKind) -> Result<(BenchReport, Vec<SweepRun>)> {
    if chunks.is_empty() {
        return Err(Error::Usage("test set is empty".into()));
    }
    let overlaps = overlap_map(chunks);
    let mut rows = Vec::with_capacity(taus.len());
    let mut runs = Vec::with_capacity(taus.len());
    for &tau in taus {
        let pol = policy(tau, distance)?;
        let mut traces = Vec::with_capacity(chunks.len());
        let mut per_scene: BTreeMap<usize, Vec<(ChunkSpan, MaskStack)>> = BTreeMap::new();
        for c in chunks {
            let (m, t) = run_early_exit(model, params, &c.features, &pol, &NoClock, c.id)?;
            per_scene.entry(c.scene).or_default().push((c.span, m));
            traces.push(t);
        }
        let stats = exit_stats(&traces, &overlaps)?;
        let mut quality: BTreeMap<u32, (f64, f64, usize, usize)> = BTreeMap::new();
        for (i, spans) in &per_scene {
            let (mse, snri) = scene_quality(&scenes[*i], spans)?;
            let q = quality.entry(overlap_bucket(scenes[*i].overlap)).or_default();
            q.0 += mse;
            q.2 += 1;
            if let Some(v) = snri {
                q.1 += v;
                q.3 += 1;
            }
        }
        let mean = |s: f64, n: usize| if n == 0 { f64::NAN } else { s / n as f64 };
        let buckets: Vec<BucketRow> = stats
            .iter()
            .map(|(b, s)| {
                let q = quality.get(b).copied().unwrap_or_default();
                BucketRow {
                    overlap: *b,
                    chunks: s.chunks,
                    avg_exit_layer: s.mean_exit_layer,
                    mask_mse: mean(q.0, q.2),
                    si_snri_db: mean(q.1, q.3),
                }
            })
            .collect();
        let total: (f64, f64, usize, usize) = quality.values().fold(Default::default(), |a, q| (a.0 + q.0, a.1 + q.1, a.2 + q.2, a.3 + q.3));
        rows.push(SweepRow {
            tau,
            avg_exit_layer: traces.iter().map(|t| t.exit_layer as f64).sum::<f64>() / traces.len() as f64,
            speedup: None,
            median_ns: None,
            mask_mse: mean(total.0, total.2),
            si_snri_db: mean(total.1, total.3),
            buckets,
        });
        runs.push(SweepRun { tau, traces });
    }
    Ok((BenchReport { layers: model.config.layers, rows }, runs))
}

/// Median over `reps` repetitions of the summed per-chunk stack time at
/// each threshold, and the speedup against `τ = 0`. Every chunk is run at
/// all thresholds back to back so slow drifts affect all of them alike.
pub fn speedup_bench(model: &Separator, params: &ParamSet, chunks: &[TestChunk], taus: &[f64], distance: DistanceKind, reps: usize) -> Result<Vec<(f64, u64, f64)>> {
    if chunks.is_empty() {
        return Err(Error::Usage("test set is empty".into()));
    }
    let clock = WallClock::default();
    let mut all = vec![0.0];
    all.extend(taus.iter().copied().filter(|&t| t != 0.0));
    let policies = all.iter().map(|&t| policy(t, distance)).collect::<Result<Vec<_>>>()?;
    for c in chunks.iter().take(8) {
        run_early_exit(model, params, &c.features, &policies[0], &clock, c.id)?;
    }
    let mut times = vec![Vec::with_capacity(reps); all.len()];
    for _ in 0..reps.max(1) {
        let mut ns = vec![0u64; all.len()];
        for c in chunks {
            for (p, slot) in policies.iter().zip(ns.iter_mut()) {
                *slot += run_early_exit(model, params, &c.features, p, &clock, c.id)?.1.ns;
            }
        }
        for (t, n) in times.iter_mut().zip(ns) {
            t.push(n);
        }
    }
    let medians: Vec<u64> = times
        .into_iter()
        .map(|mut v| {
            v.sort_unstable();
            v[v.len() / 2]
        })
        .collect();
    let base = medians[0] as f64;
    Ok(taus
        .iter()
        .map(|&t| {
            let i = all.iter().position(|&a| a == t).expect("threshold was timed");
            (t, medians[i], base / medians[i].max(1) as f64)
        })
        .collect())
}

/// [`sweep`] followed by [`speedup_bench`], merged into one report.
pub fn bench(model: &Separator, params: &ParamSet, scenes: &[PreparedScene], chunks: &[TestChunk], taus: &[f64], distance: DistanceKind, reps: usize) -> Result<(BenchReport, Vec<SweepRun>)> {
    let (mut report, runs) = sweep(model, params, scenes, chunks, taus, distance)?;
    let timing = speedup_bench(model, params, chunks, taus, distance, reps)?;
    for (row, (_, ns, s)) in report.rows.iter_mut().zip(timing) {
        row.median_ns = Some(ns);
        row.speedup = Some(s);
    }
    Ok((report, runs))
}
