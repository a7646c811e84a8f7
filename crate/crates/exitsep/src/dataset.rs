//! Scene datasets on disk and their in-memory training form.
//!
//! A dataset directory holds `manifest.jsonl` plus two raw f64 files per
//! scene: `<path>.mix.f64` (all microphones) and `<path>.ref.f64` (the
//! channel-1 image of each source followed by the channel-1 noise).

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use exitsep_core::scene::{ideal_masks_from_signals, synth_scene, SceneRecipe};
use exitsep_core::signal::{raw_features, FeatureGrid};
use exitsep_core::{stft, MaskStack, Spectrogram, StftConfig, Tensor};
use serde::{Deserialize, Serialize};

use crate::audio::{read_raw, write_raw, Audio};
use crate::error::{Error, Result};

pub const MANIFEST: &str = "manifest.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub seed: u64,
    pub overlap: f64,
    pub duration_s: f64,
    pub channels: usize,
    pub sources: usize,
}

/// Seed of scene `index` in a dataset generated with `seed`.
pub fn scene_seed(seed: u64, index: usize) -> u64 {
    let mut z = seed ^ (index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Synthesises `count` scenes into `dir`. Scene `i` uses the overlap
/// `overlaps[i mod len]`, so each value gets an equal share when `count` is
/// a multiple of the list length.
pub fn dataset_generate(dir: &Path, count: usize, recipe: &SceneRecipe, overlaps: &[f64], seed: u64) -> Result<Vec<ManifestEntry>> {
    if overlaps.is_empty() && count > 0 {
        return Err(Error::Usage("overlaps: at least one value is needed".into()));
    }
    if let Some(bad) = overlaps.iter().find(|o| !(0.0..1.0).contains(*o)) {
        return Err(Error::Usage(format!("overlaps: {bad} outside [0, 1)")));
    }
    fs::create_dir_all(dir).map_err(Error::io(dir))?;
    let mut entries = Vec::with_capacity(count);
    for i in 0..count {
        let overlap = overlaps[i % overlaps.len()];
        let s = scene_seed(seed, i);
        let spec = recipe.sample(s, overlap)?;
        let scene = synth_scene(&spec)?;
        let path = format!("scene_{i:05}");
        let sr = recipe.stft.sample_rate;
        write_raw(&dir.join(format!("{path}.mix.f64")), &Audio { sample_rate: sr, channels: scene.mixture.clone() })?;
        let mut refs: Vec<Vec<f64>> = scene.references().iter().map(|r| r.to_vec()).collect();
        refs.push(scene.noise_reference().to_vec());
        write_raw(&dir.join(format!("{path}.ref.f64")), &Audio { sample_rate: sr, channels: refs })?;
        entries.push(ManifestEntry {
            path,
            seed: s,
            overlap,
            duration_s: recipe.duration_s,
            channels: recipe.channels,
            sources: recipe.sources,
        });
    }
    write_manifest(&dir.join(MANIFEST), &entries)?;
    Ok(entries)
}

pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let mut out = Vec::new();
    for e in entries {
        serde_json::to_writer(&mut out, e).expect("manifest entry serialises");
        out.push(b'\n');
    }
    let mut f = fs::File::create(path).map_err(Error::io(path))?;
    f.write_all(&out).map_err(Error::io(path))
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let f = fs::File::open(path).map_err(Error::io(path))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(Error::io(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let e = serde_json::from_str(&line).map_err(|e| Error::format(path, format!("line {}: {e}", n + 1)))?;
        out.push(e);
    }
    Ok(out)
}

/// Mixture and references of one manifest entry.
pub fn load_scene(dir: &Path, entry: &ManifestEntry) -> Result<(Audio, Audio)> {
    let mix_path = dir.join(format!("{}.mix.f64", entry.path));
    let mix = read_raw(&mix_path)?;
    let refs = read_raw(&dir.join(format!("{}.ref.f64", entry.path)))?;
    if mix.channels.len() != entry.channels || refs.channels.len() != entry.sources + 1 || refs.len() != mix.len() {
        return Err(Error::format(&mix_path, "scene files disagree with the manifest"));
    }
    Ok((mix, refs))
}

/// A scene reduced to what training and evaluation need: unnormalised
/// features, ideal masks and, optionally, the signals for SI-SNR.
#[derive(Debug, Clone)]
pub struct PreparedScene {
    pub index: usize,
    pub overlap: f64,
    pub frames: usize,
    pub dims: usize,
    pub raw: Vec<f64>,
    pub target: MaskStack,
    pub signals: Option<SceneSignals>,
}

#[derive(Debug, Clone)]
pub struct SceneSignals {
    pub mixture: Vec<f64>,
    pub mixture_spec: Spectrogram,
    pub speakers: Vec<Vec<f64>>,
}

impl PreparedScene {
    pub fn new(index: usize, overlap: f64, mix: &Audio, refs: &Audio, config: StftConfig, streams: usize, keep_signals: bool) -> Result<Self> {
        let specs = mix.channels.iter().map(|c| stft(c, config)).collect::<exitsep_core::Result<Vec<_>>>()?;
        let raw = raw_features(&specs)?;
        let frames = specs[0].frames;
        let dims = specs.len() * specs[0].bins;
        let (noise, speakers) = refs.channels.split_last().ok_or_else(|| Error::Usage("reference file without channels".into()))?;
        let speaker_refs: Vec<&[f64]> = speakers.iter().map(Vec::as_slice).collect();
        let target = ideal_masks_from_signals(&speaker_refs, noise, config, streams - 1)?;
        let signals = keep_signals.then(|| SceneSignals {
            mixture: mix.channels[0].clone(),
            mixture_spec: specs[0].clone(),
            speakers: speakers.to_vec(),
        });
        Ok(PreparedScene { index, overlap, frames, dims, raw, target, signals })
    }

    /// Normalised features of frames `start .. start + len`.
    pub fn features(&self, start: usize, len: usize) -> Result<Tensor> {
        Ok(FeatureGrid::from_raw(&self.raw, self.dims, start, len)?.to_tensor())
    }
}

/// Loads and prepares every scene listed in `dir/manifest.jsonl`.
pub fn prepare_dataset(dir: &Path, config: StftConfig, streams: usize, keep_signals: bool) -> Result<Vec<PreparedScene>> {
    let entries = read_manifest(&dir.join(MANIFEST))?;
    entries
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let (mix, refs) = load_scene(dir, e)?;
            PreparedScene::new(i, e.overlap, &mix, &refs, config, streams, keep_signals)
        })
        .collect()
}
