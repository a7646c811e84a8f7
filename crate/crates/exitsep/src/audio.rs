//! Multi-channel audio files.
//!
//! Two containers are supported: RIFF/WAVE (16-bit PCM or 32-bit float) and
//! a raw little-endian f64 format with the header
//! `channels: u16, sample_rate: u32, length: u64` followed by the channels
//! one after another (planar).

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Audio {
    pub sample_rate: u32,
    pub channels: Vec<Vec<f64>>,
}

impl Audio {
    pub fn len(&self) -> usize {
        self.channels.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WavFormat {
    Pcm16,
    Float32,
}

const RAW_HEADER: usize = 2 + 4 + 8;

fn check_channels(path: &Path, audio: &Audio) -> Result<()> {
    if audio.channels.is_empty() || audio.channels.len() > u16::MAX as usize {
        return Err(Error::format(path, format!("{} channels", audio.channels.len())));
    }
    if audio.channels.iter().any(|c| c.len() != audio.len()) {
        return Err(Error::format(path, "channels differ in length"));
    }
    Ok(())
}

pub fn write_raw(path: &Path, audio: &Audio) -> Result<()> {
    check_channels(path, audio)?;
    let mut buf = Vec::with_capacity(RAW_HEADER + audio.channels.len() * audio.len() * 8);
    buf.extend_from_slice(&(audio.channels.len() as u16).to_le_bytes());
    buf.extend_from_slice(&audio.sample_rate.to_le_bytes());
    buf.extend_from_slice(&(audio.len() as u64).to_le_bytes());
    for ch in &audio.channels {
        for v in ch {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, buf).map_err(Error::io(path))
}

pub fn read_raw(path: &Path) -> Result<Audio> {
    let bytes = fs::read(path).map_err(Error::io(path))?;
    if bytes.len() < RAW_HEADER {
        return Err(Error::format(path, "truncated header"));
    }
    let channels = u16::from_le_bytes([bytes[0], bytes[1]]) as usize;
    let sample_rate = u32::from_le_bytes(bytes[2..6].try_into().unwrap());
    let len = u64::from_le_bytes(bytes[6..14].try_into().unwrap()) as usize;
    let want = channels
        .checked_mul(len)
        .and_then(|n| n.checked_mul(8))
        .and_then(|n| n.checked_add(RAW_HEADER));
    if channels == 0 || want != Some(bytes.len()) {
        return Err(Error::format(
            path,
            format!("{} bytes for {channels} channels of {len} samples", bytes.len()),
        ));
    }
    let channels = bytes[RAW_HEADER..]
        .chunks_exact(len * 8)
        .map(|ch| ch.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())).collect())
        .collect();
    Ok(Audio { sample_rate, channels })
}

pub fn write_wav(path: &Path, audio: &Audio, format: WavFormat) -> Result<()> {
    check_channels(path, audio)?;
    let spec = hound::WavSpec {
        channels: audio.channels.len() as u16,
        sample_rate: audio.sample_rate,
        bits_per_sample: match format {
            WavFormat::Pcm16 => 16,
            WavFormat::Float32 => 32,
        },
        sample_format: match format {
            WavFormat::Pcm16 => hound::SampleFormat::Int,
            WavFormat::Float32 => hound::SampleFormat::Float,
        },
    };
    let wav_err = |e: hound::Error| Error::format(path, e.to_string());
    let file = fs::File::create(path).map_err(Error::io(path))?;
    let mut w = hound::WavWriter::new(BufWriter::new(file), spec).map_err(wav_err)?;
    for i in 0..audio.len() {
        for ch in &audio.channels {
            match format {
                WavFormat::Pcm16 => {
                    let v = (ch[i] * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
                    w.write_sample(v).map_err(wav_err)?;
                }
                WavFormat::Float32 => w.write_sample(ch[i] as f32).map_err(wav_err)?,
            }
        }
    }
    w.finalize().map_err(wav_err)
}

pub fn read_wav(path: &Path) -> Result<Audio> {
    let wav_err = |e: hound::Error| Error::format(path, e.to_string());
    let mut r = hound::WavReader::open(path).map_err(wav_err)?;
    let spec = r.spec();
    let c = spec.channels as usize;
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Float, 32) => r
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<Result<_, _>>()
            .map_err(wav_err)?,
        (hound::SampleFormat::Int, bits @ 8..=32) => {
            let scale = 1.0 / (1u64 << (bits - 1)) as f64;
            r.samples::<i32>()
                .map(|s| s.map(|v| v as f64 * scale))
                .collect::<Result<_, _>>()
                .map_err(wav_err)?
        }
        (fmt, bits) => return Err(Error::format(path, format!("unsupported {bits}-bit {fmt:?} samples"))),
    };
    let mut channels = vec![Vec::with_capacity(interleaved.len() / c.max(1)); c];
    for frame in interleaved.chunks_exact(c) {
        for (ch, &v) in channels.iter_mut().zip(frame) {
            ch.push(v);
        }
    }
    Ok(Audio {
        sample_rate: spec.sample_rate,
        channels,
    })
}

/// Reads `.wav` files with hound and anything else as raw f64.
pub fn read_audio(path: &Path) -> Result<Audio> {
    match path.extension().and_then(|e| e.to_str()) {
        Some(e) if e.eq_ignore_ascii_case("wav") => read_wav(path),
        _ => read_raw(path),
    }
}

/// Flushes through a writer so partially written files are not left behind
/// on error.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("partial");
    {
        let f = fs::File::create(&tmp).map_err(Error::io(&tmp))?;
        let mut w = BufWriter::new(f);
        w.write_all(bytes).map_err(Error::io(&tmp))?;
        w.flush().map_err(Error::io(&tmp))?;
    }
    fs::rename(&tmp, path).map_err(Error::io(path))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tone(n: usize, phase: f64) -> Vec<f64> {
        (0..n).map(|i| 0.5 * (i as f64 * 0.05 + phase).sin()).collect()
    }

    #[test]
    fn raw_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.f64");
        let a = Audio { sample_rate: 16000, channels: vec![tone(100, 0.0), tone(100, 1.0), tone(100, 2.0)] };
        write_raw(&p, &a).unwrap();
        assert_eq!(read_raw(&p).unwrap(), a);
        assert_eq!(fs::metadata(&p).unwrap().len(), 14 + 3 * 100 * 8);
    }

    #[test]
    fn truncated_raw_is_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.f64");
        let a = Audio { sample_rate: 16000, channels: vec![tone(10, 0.0)] };
        write_raw(&p, &a).unwrap();
        let bytes = fs::read(&p).unwrap();
        fs::write(&p, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(read_raw(&p), Err(Error::Format { .. })));
    }

    #[test]
    fn wav_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let a = Audio { sample_rate: 16000, channels: vec![tone(300, 0.0), tone(300, 0.4)] };
        let p = dir.path().join("f.wav");
        write_wav(&p, &a, WavFormat::Float32).unwrap();
        let b = read_audio(&p).unwrap();
        for (x, y) in a.channels.iter().flatten().zip(b.channels.iter().flatten()) {
            assert!((x - y).abs() < 1e-7);
        }
        let p = dir.path().join("i.wav");
        write_wav(&p, &a, WavFormat::Pcm16).unwrap();
        let b = read_audio(&p).unwrap();
        assert_eq!(b.channels.len(), 2);
        for (x, y) in a.channels.iter().flatten().zip(b.channels.iter().flatten()) {
            assert!((x - y).abs() <= 0.5 / 32768.0 + 1e-12);
        }
    }
}
