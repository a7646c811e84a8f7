//! Separation quality and exit-layer statistics.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use crate::exit::ExitTrace;
use crate::loss::pit_loss;
use crate::masks::MaskStack;
use crate::math;
use crate::{Error, Result};

/// SI-SNR values are capped here so a perfect estimate stays finite.
pub const SI_SNR_CAP_DB: f64 = 60.0;

/// Mean squared error between two mask stacks, optionally minimised over
/// speaker permutations.
pub fn mask_mse(pred: &MaskStack, reference: &MaskStack, permutation_free: bool) -> Result<f64> {
    pred.check_same_shape(reference, "mask_mse")?;
    if permutation_free && pred.streams >= 2 {
        return Ok(pit_loss(pred, reference)?.0);
    }
    let n = pred.data.len() as f64;
    Ok(pred.data.iter().zip(&reference.data).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n)
}

fn zero_mean(x: &[f64]) -> Vec<f64> {
    let m = x.iter().sum::<f64>() / x.len() as f64;
    x.iter().map(|v| v - m).collect()
}

/// Scale-invariant signal-to-noise ratio in dB, capped at
/// [`SI_SNR_CAP_DB`]. Both signals are made zero-mean first.
pub fn si_snr(estimate: &[f64], reference: &[f64]) -> Result<f64> {
    if estimate.len() != reference.len() {
        return Err(Error::Shape {
            op: "si_snr",
            left: vec![estimate.len()],
            right: vec![reference.len()],
        });
    }
    if reference.is_empty() {
        return Err(Error::UndefinedMetric("SI-SNR of an empty signal"));
    }
    let e = zero_mean(estimate);
    let r = zero_mean(reference);
    let rr: f64 = r.iter().map(|v| v * v).sum();
    if rr <= f64::MIN_POSITIVE {
        return Err(Error::UndefinedMetric("SI-SNR against a zero reference"));
    }
    let alpha = e.iter().zip(&r).map(|(a, b)| a * b).sum::<f64>() / rr;
    let (mut target, mut noise) = (0.0, 0.0);
    for (a, b) in e.iter().zip(&r) {
        let t = alpha * b;
        target += t * t;
        noise += (a - t) * (a - t);
    }
    if noise == 0.0 {
        return Ok(SI_SNR_CAP_DB);
    }
    if target == 0.0 {
        return Ok(-SI_SNR_CAP_DB);
    }
    Ok((10.0 * math::log10(target / noise)).clamp(-SI_SNR_CAP_DB, SI_SNR_CAP_DB))
}

/// Overlap bucket in tenths: `round(ratio · 10)`.
pub fn overlap_bucket(ratio: f64) -> u32 {
    math::round(ratio * 10.0).max(0.0) as u32
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct BucketStats {
    pub chunks: usize,
    pub mean_exit_layer: f64,
    /// exit layer → number of chunks.
    pub histogram: BTreeMap<usize, usize>,
}

/// Exit-layer mean and histogram per overlap bucket (keyed in tenths).
///
/// `overlap_by_chunk` maps every chunk id to the overlap ratio of the scene
/// it came from; a trace whose id is missing is a join error listing all
/// such ids.
pub fn exit_stats(traces: &[ExitTrace], overlap_by_chunk: &BTreeMap<u64, f64>) -> Result<BTreeMap<u32, BucketStats>> {
    let orphans: Vec<u64> = traces
        .iter()
        .map(|t| t.chunk_id)
        .filter(|id| !overlap_by_chunk.contains_key(id))
        .collect();
    if !orphans.is_empty() {
        return Err(Error::Join(orphans));
    }
    let mut out: BTreeMap<u32, BucketStats> = BTreeMap::new();
    let mut sums: BTreeMap<u32, usize> = BTreeMap::new();
    for t in traces {
        let b = overlap_bucket(overlap_by_chunk[&t.chunk_id]);
        let s = out.entry(b).or_default();
        s.chunks += 1;
        *s.histogram.entry(t.exit_layer).or_default() += 1;
        *sums.entry(b).or_default() += t.exit_layer;
    }
    for (b, s) in out.iter_mut() {
        s.mean_exit_layer = sums[b] as f64 / s.chunks as f64;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trace(id: u64, layer: usize) -> ExitTrace {
        ExitTrace { chunk_id: id, exit_layer: layer, dists: Vec::new(), ns: 0 }
    }

    #[test]
    fn mse_examples() {
        let r = MaskStack { frames: 1, bins: 2, streams: 3, data: vec![1.0, 0.0, 0.0, 0.0, 1.0, 1.0] };
        assert_eq!(mask_mse(&r, &r, false).unwrap(), 0.0);
        let inv = MaskStack { data: r.data.iter().map(|v| 1.0 - v).collect(), ..r.clone() };
        assert_eq!(mask_mse(&inv, &r, false).unwrap(), 1.0);
        let sw = r.permute_streams(&[1, 0, 2]);
        assert!(mask_mse(&sw, &r, false).unwrap() > 0.0);
        assert_eq!(mask_mse(&sw, &r, true).unwrap(), 0.0);
    }

    #[test]
    fn si_snr_is_scale_invariant_and_capped() {
        let r: Vec<f64> = (0..400).map(|i| (i as f64 * 0.1).sin()).collect();
        assert_eq!(si_snr(&r, &r).unwrap(), SI_SNR_CAP_DB);
        let scaled: Vec<f64> = r.iter().map(|v| 3.0 * v).collect();
        assert_eq!(si_snr(&scaled, &r).unwrap(), SI_SNR_CAP_DB);
        let noisy: Vec<f64> = r.iter().enumerate().map(|(i, v)| v + if i % 2 == 0 { 0.1 } else { -0.1 }).collect();
        let a = si_snr(&noisy, &r).unwrap();
        let b = si_snr(&noisy.iter().map(|v| 0.5 * v).collect::<Vec<_>>(), &r).unwrap();
        assert!((a - b).abs() < 1e-9);
        assert!(a > 10.0 && a < 30.0);
        assert!(matches!(si_snr(&r, &vec![0.0; 400]), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn orthogonal_noise_of_equal_energy_is_zero_db() {
        let n = 1600;
        let w = 2.0 * core::f64::consts::PI * 10.0 / n as f64;
        let r: Vec<f64> = (0..n).map(|i| (w * i as f64).sin()).collect();
        let e: Vec<f64> = (0..n).map(|i| (w * i as f64).sin() + (w * i as f64).cos()).collect();
        assert!(si_snr(&e, &r).unwrap().abs() < 0.1);
    }

    #[test]
    fn all_exit_two_gives_mean_two_everywhere() {
        let overlap: BTreeMap<u64, f64> = (0..10).map(|i| (i, (i % 5) as f64 / 10.0)).collect();
        let traces: Vec<ExitTrace> = (0..10).map(|i| trace(i, 2)).collect();
        let s = exit_stats(&traces, &overlap).unwrap();
        assert_eq!(s.len(), 5);
        assert!(s.values().all(|b| b.mean_exit_layer == 2.0 && b.chunks == 2));
    }

    #[test]
    fn bucket_means_match_hand_computation() {
        let mut overlap = BTreeMap::new();
        for id in 0..6 {
            overlap.insert(id, if id < 3 { 0.0 } else { 0.4 });
        }
        let traces = [trace(0, 2), trace(1, 3), trace(2, 4), trace(3, 8), trace(4, 8), trace(5, 5)];
        let s = exit_stats(&traces, &overlap).unwrap();
        assert_eq!(s[&0].mean_exit_layer, 3.0);
        assert_eq!(s[&4].mean_exit_layer, 7.0);
        assert_eq!(s[&4].histogram[&8], 2);
    }

    #[test]
    fn orphans_are_listed() {
        let overlap = BTreeMap::from([(1u64, 0.1)]);
        let e = exit_stats(&[trace(1, 2), trace(7, 2), trace(9, 2)], &overlap).unwrap_err();
        assert_eq!(e, Error::Join(vec![7, 9]));
    }
}
