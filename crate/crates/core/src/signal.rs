//! STFT analysis/synthesis and the multi-channel feature grid.
//!
//! Analysis and synthesis both use the periodic square-root Hann window
//! `w[n] = sin(πn/N)`. With hop `N/2` the squared windows sum to one, and
//! synthesis divides by the accumulated squared window anyway, so any hop
//! that covers the signal reconstructs it.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use num_complex::Complex64;

use crate::fft::FftPlan;
use crate::math;
use crate::tensor::Tensor;
use crate::{Error, Result};

/// Framing parameters. `window` must be a power of two.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StftConfig {
    pub window: usize,
    pub hop: usize,
    pub sample_rate: u32,
}

impl Default for StftConfig {
    fn default() -> Self {
        StftConfig {
            window: 256,
            hop: 128,
            sample_rate: 16_000,
        }
    }
}

impl StftConfig {
    pub fn bins(&self) -> usize {
        self.window / 2 + 1
    }

    /// Number of frames for a signal of `len` samples (`len ≥ window`).
    pub fn frames(&self, len: usize) -> usize {
        if len < self.window {
            0
        } else {
            (len - self.window) / self.hop + 1
        }
    }

    /// Samples spanned by `frames` consecutive frames.
    pub fn span(&self, frames: usize) -> usize {
        if frames == 0 {
            0
        } else {
            (frames - 1) * self.hop + self.window
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.window.is_power_of_two() || self.window < 2 {
            return Err(Error::Format(format!("window {} is not a power of two", self.window)));
        }
        if self.hop == 0 || self.hop > self.window {
            return Err(Error::Format(format!(
                "hop {} must be in 1..={}",
                self.hop, self.window
            )));
        }
        Ok(())
    }

    pub fn window_fn(&self) -> Vec<f64> {
        let n = self.window as f64;
        (0..self.window).map(|i| math::sin(PI * i as f64 / n)).collect()
    }
}

/// Single-channel complex STFT, frames × bins, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub frames: usize,
    pub bins: usize,
    pub config: StftConfig,
    pub data: Vec<Complex64>,
}

impl Spectrogram {
    pub fn zeros(frames: usize, config: StftConfig) -> Self {
        let bins = config.bins();
        Spectrogram {
            frames,
            bins,
            config,
            data: vec![Complex64::new(0.0, 0.0); frames * bins],
        }
    }

    #[inline]
    pub fn at(&self, t: usize, f: usize) -> Complex64 {
        self.data[t * self.bins + f]
    }

    pub fn frame(&self, t: usize) -> &[Complex64] {
        &self.data[t * self.bins..(t + 1) * self.bins]
    }

    /// Copy of frames `start .. start + len`.
    pub fn slice_frames(&self, start: usize, len: usize) -> Result<Spectrogram> {
        if start + len > self.frames {
            return Err(Error::Contract(format!(
                "frames {start}..{} out of range for {} frames",
                start + len,
                self.frames
            )));
        }
        Ok(Spectrogram {
            frames: len,
            bins: self.bins,
            config: self.config,
            data: self.data[start * self.bins..(start + len) * self.bins].to_vec(),
        })
    }

    pub fn magnitudes(&self) -> Vec<f64> {
        self.data.iter().map(|c| c.norm()).collect()
    }
}

/// Short-time Fourier transform without padding:
/// `T = ⌊(L − N)/H⌋ + 1` frames of `N/2 + 1` bins.
pub fn stft(signal: &[f64], config: StftConfig) -> Result<Spectrogram> {
    config.validate()?;
    let n = config.window;
    if signal.len() < n {
        return Err(Error::InputTooShort {
            len: signal.len(),
            window: n,
        });
    }
    let frames = config.frames(signal.len());
    let bins = config.bins();
    let win = config.window_fn();
    let plan = FftPlan::new(n);
    let mut data = Vec::with_capacity(frames * bins);
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    for t in 0..frames {
        let seg = &signal[t * config.hop..t * config.hop + n];
        for ((b, &x), &w) in buf.iter_mut().zip(seg).zip(&win) {
            *b = Complex64::new(x * w, 0.0);
        }
        plan.forward(&mut buf);
        data.extend_from_slice(&buf[..bins]);
    }
    Ok(Spectrogram {
        frames,
        bins,
        config,
        data,
    })
}

/// Weighted overlap-add synthesis. Output has `(T − 1)·H + N` samples.
pub fn istft(spec: &Spectrogram) -> Result<Vec<f64>> {
    let config = spec.config;
    config.validate()?;
    let n = config.window;
    if spec.bins != config.bins() {
        return Err(Error::Format(format!(
            "{} bins inconsistent with window {n}",
            spec.bins
        )));
    }
    if spec.data.len() != spec.frames * spec.bins {
        return Err(Error::Format(format!(
            "{} values for {}×{} spectrogram",
            spec.data.len(),
            spec.frames,
            spec.bins
        )));
    }
    let len = config.span(spec.frames);
    let win = config.window_fn();
    let plan = FftPlan::new(n);
    let mut out = vec![0.0; len];
    let mut norm = vec![0.0; len];
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    for t in 0..spec.frames {
        let frame = spec.frame(t);
        buf[..spec.bins].copy_from_slice(frame);
        for k in 1..n - spec.bins + 1 {
            buf[n - k] = frame[k].conj();
        }
        plan.inverse(&mut buf);
        let off = t * config.hop;
        for i in 0..n {
            out[off + i] += buf[i].re * win[i];
            norm[off + i] += win[i] * win[i];
        }
    }
    for (o, &w) in out.iter_mut().zip(&norm) {
        *o = if w > 1e-10 { *o / w } else { 0.0 };
    }
    Ok(out)
}

/// Wraps an angle into `(−π, π]`.
pub fn wrap_phase(x: f64) -> f64 {
    let two_pi = 2.0 * PI;
    let r = x - two_pi * math::floor(x / two_pi);
    if r > PI {
        r - two_pi
    } else {
        r
    }
}

/// Inter-channel phase difference `θⁱ − θ¹`, wrapped, as a T×F matrix.
pub fn ipd(spec_i: &Spectrogram, spec_1: &Spectrogram) -> Result<Vec<f64>> {
    if spec_i.frames != spec_1.frames || spec_i.bins != spec_1.bins {
        return Err(Error::Shape {
            op: "ipd",
            left: vec![spec_i.frames, spec_i.bins],
            right: vec![spec_1.frames, spec_1.bins],
        });
    }
    Ok(spec_i
        .data
        .iter()
        .zip(&spec_1.data)
        .map(|(a, b)| wrap_phase(math::atan2(a.im, a.re) - math::atan2(b.im, b.re)))
        .collect())
}

/// Time-major feature matrix, normalised per dimension along time.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGrid {
    pub frames: usize,
    pub dims: usize,
    pub data: Vec<f64>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl FeatureGrid {
    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(vec![self.frames, self.dims], self.data.clone()).expect("grid is frames×dims")
    }
}

/// Z-normalises each column of a `frames×dims` matrix in place and returns
/// the statistics. Columns with standard deviation below `1e-12` become zero.
pub fn normalize_time_axis(data: &mut [f64], frames: usize, dims: usize) -> (Vec<f64>, Vec<f64>) {
    let mut mean = vec![0.0; dims];
    let mut std = vec![0.0; dims];
    for row in data.chunks_exact(dims) {
        for (m, &v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= frames as f64);
    for row in data.chunks_exact(dims) {
        for ((s, &v), &m) in std.iter_mut().zip(row).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    std.iter_mut().for_each(|s| *s = math::sqrt(*s / frames as f64));
    for row in data.chunks_exact_mut(dims) {
        for ((v, &m), &s) in row.iter_mut().zip(&mean).zip(&std) {
            *v = if s < 1e-12 { 0.0 } else { (*v - m) / s };
        }
    }
    (mean, std)
}

/// Channel-1 magnitude followed by one IPD block per further channel,
/// `D = C·F`, before normalisation. Row-major `T×D`.
pub fn raw_features(specs: &[Spectrogram]) -> Result<Vec<f64>> {
    let first = specs
        .first()
        .ok_or_else(|| Error::Contract("feature assembly needs at least one channel".into()))?;
    let (t, f) = (first.frames, first.bins);
    let dims = specs.len() * f;
    let mut data = vec![0.0; t * dims];
    for (r, frame) in first.data.chunks_exact(f).enumerate() {
        for (k, c) in frame.iter().enumerate() {
            data[r * dims + k] = c.norm();
        }
    }
    for (ch, spec) in specs.iter().enumerate().skip(1) {
        let block = ipd(spec, first)?;
        for r in 0..t {
            data[r * dims + ch * f..r * dims + (ch + 1) * f].copy_from_slice(&block[r * f..(r + 1) * f]);
        }
    }
    Ok(data)
}

impl FeatureGrid {
    /// Normalises rows `start .. start + frames` of a raw `T×dims` matrix.
    pub fn from_raw(raw: &[f64], dims: usize, start: usize, frames: usize) -> Result<Self> {
        if dims == 0 || (start + frames) * dims > raw.len() || frames == 0 {
            return Err(Error::Contract(format!(
                "rows {start}..{} of a {}-column matrix with {} values",
                start + frames,
                dims,
                raw.len()
            )));
        }
        let mut data = raw[start * dims..(start + frames) * dims].to_vec();
        let (mean, std) = normalize_time_axis(&mut data, frames, dims);
        Ok(FeatureGrid { frames, dims, data, mean, std })
    }
}

/// [`raw_features`] normalised along time.
pub fn assemble_features(specs: &[Spectrogram]) -> Result<FeatureGrid> {
    let raw = raw_features(specs)?;
    let dims = specs.len() * specs[0].bins;
    FeatureGrid::from_raw(&raw, dims, 0, specs[0].frames)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg() -> StftConfig {
        StftConfig::default()
    }

    fn noise(len: usize, seed: u64) -> Vec<f64> {
        let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1);
        (0..len)
            .map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
            })
            .collect()
    }

    /// Direct DFT of one windowed frame, the independent oracle.
    fn dft_frame(x: &[f64], start: usize, n: usize) -> Vec<Complex64> {
        let w = cfg().window_fn();
        (0..n / 2 + 1)
            .map(|k| {
                (0..n)
                    .map(|j| {
                        let a = -2.0 * PI * (k * j) as f64 / n as f64;
                        Complex64::new(a.cos(), a.sin()) * (x[start + j] * w[j])
                    })
                    .sum()
            })
            .collect()
    }

    #[test]
    fn zero_signal_gives_zero_spectrum() {
        let s = stft(&vec![0.0; 1000], cfg()).unwrap();
        assert_eq!(s.frames, (1000 - 256) / 128 + 1);
        assert_eq!(s.bins, 129);
        assert!(s.data.iter().all(|c| c.norm() == 0.0));
        assert!(istft(&s).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn too_short_is_rejected() {
        assert_eq!(
            stft(&[0.0; 100], cfg()),
            Err(Error::InputTooShort { len: 100, window: 256 })
        );
    }

    #[test]
    fn stft_matches_direct_dft() {
        let x = noise(700, 3);
        let s = stft(&x, cfg()).unwrap();
        let oracle = dft_frame(&x, 2 * 128, 256);
        for (a, b) in s.frame(2).iter().zip(&oracle) {
            assert!((a - b).norm() < 1e-10);
        }
    }

    #[test]
    fn sinusoid_peak_dominates_outside_main_lobe() {
        let k0 = 20;
        let x: Vec<f64> = (0..256).map(|n| (2.0 * PI * (k0 * n) as f64 / 256.0).sin()).collect();
        let s = stft(&x, cfg()).unwrap();
        let mags = s.magnitudes();
        let peak = mags[k0];
        assert!(mags.iter().all(|&m| m <= peak));
        for (k, &m) in mags.iter().enumerate() {
            if k.abs_diff(k0) >= 2 {
                assert!(20.0 * (peak / m.max(1e-300)).log10() >= 20.0, "bin {k}");
            }
        }
    }

    #[test]
    fn round_trip_reconstructs_interior() {
        let x = noise(4000, 9);
        let y = istft(&stft(&x, cfg()).unwrap()).unwrap();
        let energy: f64 = x.iter().map(|v| v * v).sum();
        let err: f64 = x[256..y.len() - 256]
            .iter()
            .zip(&y[256..y.len() - 256])
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        assert!((err / energy).sqrt() < 1e-6);
    }

    #[test]
    fn istft_rejects_inconsistent_metadata() {
        let mut s = stft(&noise(600, 1), cfg()).unwrap();
        s.bins = 100;
        assert!(matches!(istft(&s), Err(Error::Format(_))));
        let mut s = stft(&noise(600, 1), cfg()).unwrap();
        s.config.hop = 0;
        assert!(matches!(istft(&s), Err(Error::Format(_))));
    }

    #[test]
    fn wrap_rule() {
        assert!((wrap_phase(1.5 * PI) + 0.5 * PI).abs() < 1e-12);
        assert_eq!(wrap_phase(PI), PI);
        assert_eq!(wrap_phase(-PI), PI);
        assert!((wrap_phase(0.3) - 0.3).abs() < 1e-15);
    }

    #[test]
    fn ipd_of_identical_channels_is_zero() {
        let s = stft(&noise(900, 4), cfg()).unwrap();
        assert!(ipd(&s, &s).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn ipd_matches_dft_phase_oracle_for_delay() {
        let d = 3;
        let x = noise(1200, 5);
        let delayed: Vec<f64> = (0..x.len()).map(|n| if n >= d { x[n - d] } else { 0.0 }).collect();
        let a = stft(&x, cfg()).unwrap();
        let b = stft(&delayed, cfg()).unwrap();
        let got = ipd(&b, &a).unwrap();
        let t = 3;
        let oa = dft_frame(&x, t * 128, 256);
        let ob = dft_frame(&delayed, t * 128, 256);
        for k in 0..129 {
            let want = wrap_phase(ob[k].arg() - oa[k].arg());
            let diff = wrap_phase(got[t * 129 + k] - want);
            assert!(diff.abs() < 1e-6, "bin {k}: {diff}");
        }
    }

    #[test]
    fn ipd_slope_of_delayed_sinusoid() {
        // A bin-centred tone delayed by d samples has phase −2πk₀d/N at its
        // bin, up to leakage from the negative-frequency image. The image
        // sits N/2 bins away, where the sqrt-Hann spectrum is down by about
        // 1/(4m²−1); a long window pushes that below 1e-6.
        let d = 4;
        let n = 4096;
        let k0 = n / 4;
        let c = StftConfig { window: n, hop: n / 2, sample_rate: 16_000 };
        let tone = |i: isize| (2.0 * PI * (k0 as f64) * i as f64 / n as f64).sin();
        let x: Vec<f64> = (0..3 * n as isize).map(tone).collect();
        let y: Vec<f64> = (0..3 * n as isize).map(|i| tone(i - d as isize)).collect();
        let got = ipd(&stft(&y, c).unwrap(), &stft(&x, c).unwrap()).unwrap();
        let want = wrap_phase(-2.0 * PI * (k0 * d) as f64 / n as f64);
        let bins = n / 2 + 1;
        for t in 0..3 {
            assert!(wrap_phase(got[t * bins + k0] - want).abs() < 1e-6);
        }
    }

    #[test]
    fn chunk_of_raw_features_matches_features_of_chunk() {
        let specs: Vec<Spectrogram> = (0..3).map(|c| stft(&noise(8000, c + 1), cfg()).unwrap()).collect();
        let raw = raw_features(&specs).unwrap();
        let (start, len) = (7, 20);
        let sliced: Vec<Spectrogram> = specs.iter().map(|s| s.slice_frames(start, len).unwrap()).collect();
        let direct = assemble_features(&sliced).unwrap();
        let from_raw = FeatureGrid::from_raw(&raw, 3 * 129, start, len).unwrap();
        assert_eq!(direct, from_raw);
        assert!(FeatureGrid::from_raw(&raw, 3 * 129, specs[0].frames - 2, 5).is_err());
    }

    #[test]
    fn feature_dims_follow_channel_count() {
        let x = noise(2000, 6);
        let s = stft(&x, cfg()).unwrap();
        let one = assemble_features(core::slice::from_ref(&s)).unwrap();
        assert_eq!(one.dims, 129);
        let seven: Vec<Spectrogram> = (0..7).map(|_| s.clone()).collect();
        assert_eq!(assemble_features(&seven).unwrap().dims, 903);
        assert!(matches!(assemble_features(&[]), Err(Error::Contract(_))));
    }

    #[test]
    fn constant_dims_normalise_to_zero() {
        let s = stft(&vec![0.0; 2000], cfg()).unwrap();
        let g = assemble_features(&[s.clone(), s]).unwrap();
        assert!(g.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn normalised_columns_have_unit_statistics() {
        let a = stft(&noise(3000, 7), cfg()).unwrap();
        let b = stft(&noise(3000, 8), cfg()).unwrap();
        let g = assemble_features(&[a, b]).unwrap();
        for d in 0..g.dims {
            let col: Vec<f64> = (0..g.frames).map(|t| g.data[t * g.dims + d]).collect();
            let m = col.iter().sum::<f64>() / col.len() as f64;
            let v = col.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / col.len() as f64;
            assert!(m.abs() < 1e-9);
            assert!((v.sqrt() - 1.0).abs() < 1e-6);
        }
    }

    proptest! {
        #[test]
        fn stft_is_linear(seed in 0u64..1000, alpha in -3.0f64..3.0) {
            let a = noise(900, seed);
            let b = noise(900, seed + 1);
            let sum: Vec<f64> = a.iter().zip(&b).map(|(x, y)| alpha * x + y).collect();
            let sa = stft(&a, cfg()).unwrap();
            let sb = stft(&b, cfg()).unwrap();
            let ss = stft(&sum, cfg()).unwrap();
            for ((x, y), z) in sa.data.iter().zip(&sb.data).zip(&ss.data) {
                prop_assert!((x * alpha + y - z).norm() < 1e-10);
            }
        }

        #[test]
        fn ipd_is_antisymmetric(seed in 0u64..1000) {
            let a = stft(&noise(800, seed), cfg()).unwrap();
            let b = stft(&noise(800, seed + 7), cfg()).unwrap();
            let ab = ipd(&a, &b).unwrap();
            let ba = ipd(&b, &a).unwrap();
            for (x, y) in ab.iter().zip(&ba) {
                prop_assert!(wrap_phase(x + y).abs() < 1e-12);
                prop_assert!(*x > -PI && *x <= PI);
            }
        }

        #[test]
        fn normalisation_is_idempotent(seed in 0u64..1000) {
            let a = stft(&noise(1500, seed), cfg()).unwrap();
            let b = stft(&noise(1500, seed + 3), cfg()).unwrap();
            let g = assemble_features(&[a, b]).unwrap();
            let mut again = g.data.clone();
            normalize_time_axis(&mut again, g.frames, g.dims);
            for (x, y) in g.data.iter().zip(&again) {
                prop_assert!((x - y).abs() < 1e-9);
            }
        }
    }
}
