//! Synthetic multi-channel scenes with controlled overlap and their ideal
//! ratio masks.
//!
//! Each source is band-pass filtered Gaussian noise under a 4 Hz amplitude
//! envelope, gated to its active interval. Every channel receives the
//! source through a (fractional) delay applied as a phase shift on a
//! zero-padded FFT of the whole signal, and spatially white Gaussian noise
//! is added at the requested SNR relative to the channel-1 speech power.
//!
//! Activity is defined on the STFT frame grid: frame `t` is active for a
//! source when the frame centre `t·H + N/2` lies inside its interval.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::fft::FftPlan;
use crate::masks::MaskStack;
use crate::math;
use crate::signal::{stft, Spectrogram, StftConfig};
use crate::{Error, Result};

/// Largest inter-channel delay magnitude, in samples.
pub const MAX_DELAY: f64 = 16.0;

/// Energy floor below which a time-frequency bin counts as silent.
pub const MASK_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct SourceSpec {
    pub onset_s: f64,
    pub offset_s: f64,
    /// Delay at each channel, in samples (may be fractional).
    pub delays: Vec<f64>,
    pub gain_db: f64,
    /// Centre of the band-pass excitation.
    pub center_hz: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub stft: StftConfig,
    pub duration_s: f64,
    pub channels: usize,
    pub sources: Vec<SourceSpec>,
    pub snr_db: f64,
    /// Target fraction of active-union frames where both sources are active.
    pub overlap: f64,
    pub seed: u64,
}

impl SceneSpec {
    pub fn samples(&self) -> usize {
        math::round(self.duration_s * self.stft.sample_rate as f64) as usize
    }

    pub fn frames(&self) -> usize {
        self.stft.frames(self.samples())
    }

    fn sample_of(&self, secs: f64) -> usize {
        math::round(secs * self.stft.sample_rate as f64) as usize
    }

    /// Per-source frame activity under the frame-centre rule.
    pub fn activity(&self) -> Vec<Vec<bool>> {
        let (n, h) = (self.stft.window, self.stft.hop);
        self.sources
            .iter()
            .map(|s| {
                let (a, b) = (self.sample_of(s.onset_s), self.sample_of(s.offset_s));
                (0..self.frames())
                    .map(|t| {
                        let c = t * h + n / 2;
                        a <= c && c < b
                    })
                    .collect()
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.stft.validate()?;
        let spec_err = |m: alloc::string::String| Err(Error::Spec(m));
        if self.channels == 0 {
            return spec_err("channel count must be at least 1".into());
        }
        if self.sources.is_empty() || self.sources.len() > 2 {
            return spec_err(format!("{} sources, expected 1 or 2", self.sources.len()));
        }
        if !(0.0..=1.0).contains(&self.overlap) {
            return spec_err(format!("overlap {} outside [0, 1]", self.overlap));
        }
        if self.samples() < self.stft.window {
            return spec_err(format!("duration {}s shorter than one frame", self.duration_s));
        }
        if !self.snr_db.is_finite() {
            return spec_err("noise SNR must be finite".into());
        }
        for (i, s) in self.sources.iter().enumerate() {
            if s.delays.len() != self.channels {
                return spec_err(format!(
                    "source {i} has {} delays for {} channels",
                    s.delays.len(),
                    self.channels
                ));
            }
            if s.delays.iter().any(|d| d.is_nan() || d.abs() > MAX_DELAY) {
                return spec_err(format!("source {i} delay exceeds {MAX_DELAY} samples"));
            }
            if !(0.0 <= s.onset_s && s.onset_s < s.offset_s && s.offset_s <= self.duration_s) {
                return spec_err(format!("source {i} interval {}..{} invalid", s.onset_s, s.offset_s));
            }
            if !s.gain_db.is_finite() || !(s.center_hz > 0.0 && s.center_hz < self.stft.sample_rate as f64 / 2.0) {
                return spec_err(format!("source {i} gain or band invalid"));
            }
        }
        let act = self.activity();
        let union = (0..self.frames()).filter(|&t| act.iter().any(|a| a[t])).count();
        let both = (0..self.frames()).filter(|&t| act.iter().all(|a| a[t])).count();
        let both = if self.sources.len() < 2 { 0 } else { both };
        if union == 0 {
            return spec_err("no source is active on any frame".into());
        }
        if (both as f64 - self.overlap * union as f64).abs() > 1.0 {
            return spec_err(format!(
                "impossible overlap geometry: {both} of {union} frames overlap, target {}",
                self.overlap
            ));
        }
        Ok(())
    }
}

/// Overlap in frames for two sources of `l1` and `l2` active frames so that
/// `o / (l1 + l2 − o)` is closest to `ratio`. Errors when that overlap is
/// longer than the shorter source.
pub fn overlap_frames(l1: usize, l2: usize, ratio: f64) -> Result<usize> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(Error::Spec(format!("overlap {ratio} outside [0, 1]")));
    }
    let o = math::round(ratio * (l1 + l2) as f64 / (1.0 + ratio)) as usize;
    if o > l1.min(l2) {
        return Err(Error::Spec(format!(
            "impossible overlap geometry: {o} overlapping frames exceed the shorter source ({} frames)",
            l1.min(l2)
        )));
    }
    Ok(o)
}

/// Distribution of random scenes.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneRecipe {
    pub stft: StftConfig,
    pub duration_s: f64,
    pub channels: usize,
    pub sources: usize,
    pub gain_db: (f64, f64),
    pub snr_db: (f64, f64),
}

impl Default for SceneRecipe {
    fn default() -> Self {
        SceneRecipe {
            stft: StftConfig::default(),
            duration_s: 3.0,
            channels: 4,
            sources: 2,
            gain_db: (-5.0, 5.0),
            snr_db: (0.0, 10.0),
        }
    }
}

impl SceneRecipe {
    /// Draws a scene with the given overlap; all randomness comes from `seed`.
    pub fn sample(&self, seed: u64, overlap: f64) -> Result<SceneSpec> {
        if !(0.0..1.0).contains(&overlap) {
            return Err(Error::Spec(format!("overlap {overlap} outside [0, 1)")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5CE7_E5EE_D000_0000);
        let sr = self.stft.sample_rate as f64;
        let samples = math::round(self.duration_s * sr) as usize;
        let frames = self.stft.frames(samples);
        let pad_lo = rng.random_range(4..=12usize);
        let pad_hi = rng.random_range(6..=12usize);
        if frames < pad_lo + pad_hi + 8 {
            return Err(Error::Spec(format!("duration {}s too short", self.duration_s)));
        }
        let usable = frames - pad_lo - pad_hi;
        let intervals: Vec<(usize, usize)> = match self.sources {
            1 => {
                if overlap != 0.0 {
                    return Err(Error::Spec("a single source cannot overlap".into()));
                }
                vec![(pad_lo, pad_lo + usable)]
            }
            2 => {
                let target = math::round(overlap * usable as f64) as usize;
                let free = usable - target;
                let split = rng.random_range(0.35..0.65);
                let l1 = target + math::round(free as f64 * split) as usize;
                let l2 = usable + target - l1;
                let o = overlap_frames(l1, l2, overlap)?;
                let first = (pad_lo, pad_lo + l1);
                let second = (pad_lo + l1 - o, pad_lo + l1 - o + l2);
                if rng.random_bool(0.5) {
                    vec![first, second]
                } else {
                    vec![second, first]
                }
            }
            n => return Err(Error::Spec(format!("{n} sources, expected 1 or 2"))),
        };

        let (n, h) = (self.stft.window, self.stft.hop);
        let edge = |f: usize| (f * h + (n - h) / 2) as f64 / sr;
        let per_channel = if self.channels > 1 {
            MAX_DELAY / (self.channels - 1) as f64
        } else {
            0.0
        };
        let mut steps: Vec<f64> = Vec::new();
        let mut sources = Vec::new();
        for &(on, off) in &intervals {
            // Linear array: channel c sees c·step. Keep the two sources
            // at least 1.5 samples apart across one inter-mic spacing.
            let mut step = 0.0;
            for _ in 0..64 {
                step = rng.random_range(-per_channel..=per_channel);
                if steps.iter().all(|s: &f64| (s - step).abs() >= 1.5) || per_channel < 1.0 {
                    break;
                }
            }
            steps.push(step);
            let lo = math::ln(250.0);
            let hi = math::ln(3000.0);
            sources.push(SourceSpec {
                onset_s: edge(on),
                offset_s: edge(off),
                delays: (0..self.channels).map(|c| c as f64 * step).collect(),
                gain_db: rng.random_range(self.gain_db.0..=self.gain_db.1),
                center_hz: math::exp(rng.random_range(lo..hi)),
            });
        }
        let spec = SceneSpec {
            stft: self.stft,
            duration_s: self.duration_s,
            channels: self.channels,
            sources,
            snr_db: rng.random_range(self.snr_db.0..=self.snr_db.1),
            overlap,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// A synthesised scene. `images[s][c]` is source `s` as received at
/// channel `c`; `noise[c]` is the additive noise at channel `c`.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioScene {
    pub spec: SceneSpec,
    pub mixture: Vec<Vec<f64>>,
    pub images: Vec<Vec<Vec<f64>>>,
    pub noise: Vec<Vec<f64>>,
    pub activity: Vec<Vec<bool>>,
}

impl AudioScene {
    /// Channel-1 images of each source, the separation references.
    pub fn references(&self) -> Vec<&[f64]> {
        self.images.iter().map(|im| im[0].as_slice()).collect()
    }

    pub fn noise_reference(&self) -> &[f64] {
        &self.noise[0]
    }

    /// Achieved overlap: both-active frames over union-active frames.
    pub fn overlap_ratio(&self) -> f64 {
        let frames = self.activity.first().map_or(0, Vec::len);
        let union = (0..frames).filter(|&t| self.activity.iter().any(|a| a[t])).count();
        if self.activity.len() < 2 || union == 0 {
            return 0.0;
        }
        let both = (0..frames).filter(|&t| self.activity.iter().all(|a| a[t])).count();
        both as f64 / union as f64
    }
}

/// RBJ band-pass biquad (0 dB peak gain).
fn bandpass(x: &mut [f64], center_hz: f64, q: f64, sample_rate: f64) {
    let w0 = 2.0 * PI * center_hz / sample_rate;
    let alpha = math::sin(w0) / (2.0 * q);
    let a0 = 1.0 + alpha;
    let (b0, b2) = (alpha / a0, -alpha / a0);
    let (a1, a2) = (-2.0 * math::cos(w0) / a0, (1.0 - alpha) / a0);
    let (mut x1, mut x2, mut y1, mut y2) = (0.0, 0.0, 0.0, 0.0);
    for v in x.iter_mut() {
        let y = b0 * *v + b2 * x2 - a1 * y1 - a2 * y2;
        x2 = x1;
        x1 = *v;
        y2 = y1;
        y1 = y;
        *v = y;
    }
}

/// Delays `x` by `delay` samples (fractional allowed) with a frequency-domain
/// phase shift on a zero-padded transform.
pub fn fractional_delay(x: &[f64], delay: f64) -> Vec<f64> {
    if delay == 0.0 {
        return x.to_vec();
    }
    let n = (x.len() + 2 * MAX_DELAY as usize + 64).next_power_of_two();
    let plan = FftPlan::new(n);
    let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    buf.resize(n, Complex64::new(0.0, 0.0));
    plan.forward(&mut buf);
    for (k, b) in buf.iter_mut().enumerate() {
        let kk = if k <= n / 2 { k as f64 } else { k as f64 - n as f64 };
        let a = -2.0 * PI * kk * delay / n as f64;
        if k == n / 2 {
            *b *= math::cos(a);
        } else {
            *b *= Complex64::new(math::cos(a), math::sin(a));
        }
    }
    plan.inverse(&mut buf);
    buf[..x.len()].iter().map(|c| c.re).collect()
}

fn source_signal(spec: &SceneSpec, index: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let src = &spec.sources[index];
    let sr = spec.stft.sample_rate as f64;
    let len = spec.samples();
    let mut x: Vec<f64> = (0..len).map(|_| StandardNormal.sample(rng)).collect();
    bandpass(&mut x, src.center_hz, 1.0, sr);
    let phase = rng.random_range(0.0..2.0 * PI);
    let rate = rng.random_range(3.0..5.0);
    let a = spec.sample_of(src.onset_s);
    let b = spec.sample_of(src.offset_s).min(len);
    let ramp = (0.008 * sr) as usize;
    for (i, v) in x.iter_mut().enumerate() {
        if i < a || i >= b {
            *v = 0.0;
            continue;
        }
        let t = i as f64 / sr;
        let env = 0.25 + 0.75 * 0.5 * (1.0 - math::cos(2.0 * PI * rate * t + phase));
        let edge = (i - a).min(b - 1 - i);
        let fade = if edge < ramp {
            0.5 * (1.0 - math::cos(PI * edge as f64 / ramp as f64))
        } else {
            1.0
        };
        *v *= env * fade;
    }
    let active = &x[a..b];
    let rms = math::sqrt(active.iter().map(|v| v * v).sum::<f64>() / active.len().max(1) as f64);
    let g = math::powf(10.0, src.gain_db / 20.0) / rms.max(1e-300);
    x.iter_mut().for_each(|v| *v *= g);
    x
}

/// Renders a scene. Output is a pure function of the spec.
pub fn synth_scene(spec: &SceneSpec) -> Result<AudioScene> {
    spec.validate()?;
    let len = spec.samples();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let dry: Vec<Vec<f64>> = (0..spec.sources.len())
        .map(|s| source_signal(spec, s, &mut rng))
        .collect();
    let images: Vec<Vec<Vec<f64>>> = dry
        .iter()
        .zip(&spec.sources)
        .map(|(x, src)| src.delays.iter().map(|&d| fractional_delay(x, d)).collect())
        .collect();

    let speech_power = {
        let mut p = 0.0;
        for i in 0..len {
            let v: f64 = images.iter().map(|im| im[0][i]).sum();
            p += v * v;
        }
        p / len as f64
    };
    let sigma = math::sqrt(speech_power / math::powf(10.0, spec.snr_db / 10.0));
    let noise: Vec<Vec<f64>> = (0..spec.channels)
        .map(|_| {
            (0..len)
                .map(|_| sigma * Distribution::<f64>::sample(&StandardNormal, &mut rng))
                .collect()
        })
        .collect();

    let mixture = (0..spec.channels)
        .map(|c| {
            (0..len)
                .map(|i| images.iter().map(|im| im[c][i]).sum::<f64>() + noise[c][i])
                .collect()
        })
        .collect();

    Ok(AudioScene {
        activity: spec.activity(),
        spec: spec.clone(),
        mixture,
        images,
        noise,
    })
}

/// Ideal ratio masks from reference spectrograms:
/// `Mₛ = |Xₛ| / (Σⱼ|Xⱼ| + |N|)` with a trailing noise stream. Missing
/// speakers (fewer references than `speaker_streams`) get all-zero masks and
/// bins with no energy at all are assigned to noise.
pub fn ideal_masks_from_spectra(refs: &[Spectrogram], noise: &Spectrogram, speaker_streams: usize) -> Result<MaskStack> {
    if refs.len() > speaker_streams {
        return Err(Error::Contract(format!(
            "{} references for {speaker_streams} speaker streams",
            refs.len()
        )));
    }
    for r in refs {
        if r.frames != noise.frames || r.bins != noise.bins {
            return Err(Error::Shape {
                op: "ideal_masks",
                left: vec![r.frames, r.bins],
                right: vec![noise.frames, noise.bins],
            });
        }
    }
    let streams = speaker_streams + 1;
    let mut out = MaskStack::zeros(noise.frames, noise.bins, streams);
    let mut mags = vec![0.0; refs.len()];
    for t in 0..noise.frames {
        for f in 0..noise.bins {
            for (m, r) in mags.iter_mut().zip(refs) {
                *m = r.at(t, f).norm();
            }
            let nz = noise.at(t, f).norm();
            let denom: f64 = mags.iter().sum::<f64>() + nz;
            if denom < MASK_EPS {
                out.set(t, f, speaker_streams, 1.0);
                continue;
            }
            for (s, m) in mags.iter().enumerate() {
                out.set(t, f, s, m / denom);
            }
            out.set(t, f, speaker_streams, nz / denom);
        }
    }
    Ok(out)
}

/// Ideal ratio masks over time-domain references (channel-1 images and
/// channel-1 noise).
pub fn ideal_masks_from_signals(refs: &[&[f64]], noise: &[f64], config: StftConfig, speaker_streams: usize) -> Result<MaskStack> {
    let specs = refs.iter().map(|r| stft(r, config)).collect::<Result<Vec<_>>>()?;
    let nspec = stft(noise, config)?;
    ideal_masks_from_spectra(&specs, &nspec, speaker_streams)
}

/// Ideal masks for a scene with two speaker streams plus noise.
pub fn ideal_masks(scene: &AudioScene, config: StftConfig) -> Result<MaskStack> {
    ideal_masks_from_signals(&scene.references(), scene.noise_reference(), config, 2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::{ipd, wrap_phase};

    fn recipe(channels: usize) -> SceneRecipe {
        SceneRecipe {
            channels,
            ..SceneRecipe::default()
        }
    }

    #[test]
    fn zero_overlap_never_both_active() {
        for seed in 0..10 {
            let scene = synth_scene(&recipe(2).sample(seed, 0.0).unwrap()).unwrap();
            let act = &scene.activity;
            assert!((0..act[0].len()).all(|t| !(act[0][t] && act[1][t])));
            assert_eq!(scene.overlap_ratio(), 0.0);
        }
    }

    #[test]
    fn overlap_target_met_within_one_frame() {
        for seed in 0..10 {
            let scene = synth_scene(&recipe(2).sample(seed, 0.4).unwrap()).unwrap();
            let act = &scene.activity;
            let union = (0..act[0].len()).filter(|&t| act[0][t] || act[1][t]).count();
            assert!((scene.overlap_ratio() - 0.4).abs() * union as f64 <= 1.0);
        }
    }

    #[test]
    fn impossible_geometry_is_rejected() {
        assert!(matches!(overlap_frames(10, 100, 0.9), Err(Error::Spec(_))));
        assert_eq!(overlap_frames(50, 50, 0.0).unwrap(), 0);
        let mut spec = recipe(2).sample(3, 0.2).unwrap();
        spec.overlap = 0.9;
        assert!(matches!(synth_scene(&spec), Err(Error::Spec(_))));
        let mut spec = recipe(2).sample(3, 0.2).unwrap();
        spec.sources[0].delays[1] = 17.0;
        assert!(matches!(synth_scene(&spec), Err(Error::Spec(_))));
        assert!(recipe(2).sample(3, 1.5).is_err());
    }

    #[test]
    fn mixture_decomposes_into_images_and_noise() {
        let scene = synth_scene(&recipe(4).sample(11, 0.3).unwrap()).unwrap();
        for c in 0..4 {
            for i in 0..scene.mixture[c].len() {
                let sum: f64 = scene.images.iter().map(|im| im[c][i]).sum::<f64>() + scene.noise[c][i];
                assert!((sum - scene.mixture[c][i]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn synthesis_is_deterministic() {
        let spec = recipe(3).sample(5, 0.2).unwrap();
        assert_eq!(synth_scene(&spec).unwrap(), synth_scene(&spec).unwrap());
        assert_eq!(spec, recipe(3).sample(5, 0.2).unwrap());
    }

    #[test]
    fn integer_delay_shifts_exactly() {
        let x: Vec<f64> = (0..300).map(|i| if (100..200).contains(&i) { (i as f64 * 0.3).sin() } else { 0.0 }).collect();
        let y = fractional_delay(&x, 4.0);
        for i in 4..300 {
            assert!((y[i] - x[i - 4]).abs() < 1e-12);
        }
    }

    #[test]
    fn delayed_source_ipd_slope() {
        // Clean delayed source, DFT phase oracle: the slope of the unwrapped
        // IPD over low bins matches −2πk·4/N.
        let mut spec = recipe(2).sample(21, 0.0).unwrap();
        spec.sources[0].delays = vec![0.0, 4.0];
        let scene = synth_scene(&spec).unwrap();
        let cfg = spec.stft;
        let a = stft(&scene.images[0][0], cfg).unwrap();
        let b = stft(&scene.images[0][1], cfg).unwrap();
        let d = ipd(&b, &a).unwrap();
        // energy-weighted least-squares slope over bins 1..=16 (no wrapping: 2π·16·4/256 = π/2)
        let mut num = 0.0;
        let mut den = 0.0;
        for t in 0..a.frames {
            for k in 1..=16 {
                let w = a.at(t, k).norm_sqr();
                num += w * k as f64 * d[t * a.bins + k];
                den += w * (k * k) as f64;
            }
        }
        let slope = num / den;
        let want = -2.0 * PI * 4.0 / cfg.window as f64;
        assert!(((slope - want) / want).abs() < 0.05, "slope {slope} vs {want}");
        assert!(wrap_phase(slope).is_finite());
    }

    #[test]
    fn ideal_masks_sum_to_one_and_stay_in_range() {
        let scene = synth_scene(&recipe(2).sample(8, 0.4).unwrap()).unwrap();
        let m = ideal_masks(&scene, scene.spec.stft).unwrap();
        assert_eq!(m.streams, 3);
        for cell in m.data.chunks_exact(3) {
            assert!(cell.iter().all(|&v| (0.0..=1.0).contains(&v)));
            assert!((cell.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn single_speaker_region_and_silence() {
        let cfg = StftConfig::default();
        let x: Vec<f64> = (0..2048).map(|i| (i as f64 * 0.2).sin()).collect();
        let silent = vec![0.0; 2048];
        let m = ideal_masks_from_signals(&[&x, &silent], &silent, cfg, 2).unwrap();
        for t in 0..m.frames {
            assert!((m.get(t, 10, 0) - 1.0).abs() < 1e-12);
            assert_eq!(m.get(t, 10, 1), 0.0);
        }
        let m = ideal_masks_from_signals(&[&silent], &silent, cfg, 2).unwrap();
        assert!(m.data.chunks_exact(3).all(|c| c == [0.0, 0.0, 1.0]));
    }
}
