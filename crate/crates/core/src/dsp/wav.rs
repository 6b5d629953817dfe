//! WAV input/output and sample-rate conversion.
//!
//! Reading averages all channels to mono. Resampling uses a Hann-windowed
//! sinc kernel with 32 zero crossings per side and the passband edge at 95%
//! of the lower Nyquist frequency; stopband attenuation is roughly 60 dB,
//! which is enough for ingesting corpora but not for mastering.

use std::f64::consts::PI;
use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use super::audio::AudioBuffer;
use crate::error::{BweError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WavFormat {
    Pcm16,
    Float32,
}

pub fn read_wav(path: &Path) -> Result<(AudioBuffer, WavFormat)> {
    let mut reader = WavReader::open(path)?;
    let spec = reader.spec();
    let channels = spec.channels.max(1) as usize;
    let (interleaved, format): (Vec<f64>, WavFormat) = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Float, 32) => (
            reader.samples::<f32>().map(|s| s.map(f64::from)).collect::<std::result::Result<_, _>>()?,
            WavFormat::Float32,
        ),
        (SampleFormat::Int, bits) if bits <= 32 => {
            let scale = 1.0 / (1u64 << (bits - 1)) as f64;
            let samples = reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f64 * scale))
                .collect::<std::result::Result<_, _>>()?;
            (samples, WavFormat::Pcm16)
        }
        (fmt, bits) => {
            return Err(BweError::Data(format!("unsupported wav sample format {fmt:?}/{bits} bits")));
        }
    };
    let mono: Vec<f64> = interleaved
        .chunks(channels)
        .map(|frame| frame.iter().sum::<f64>() / channels as f64)
        .collect();
    Ok((AudioBuffer::new(mono, spec.sample_rate)?, format))
}

/// Read, downmix and resample to `target_rate` if needed.
pub fn load_audio(path: &Path, target_rate: u32) -> Result<AudioBuffer> {
    let (buf, _) = read_wav(path)?;
    resample(&buf, target_rate)
}

pub fn write_wav(path: &Path, x: &AudioBuffer, format: WavFormat) -> Result<()> {
    let spec = WavSpec {
        channels: 1,
        sample_rate: x.sample_rate(),
        bits_per_sample: match format {
            WavFormat::Pcm16 => 16,
            WavFormat::Float32 => 32,
        },
        sample_format: match format {
            WavFormat::Pcm16 => SampleFormat::Int,
            WavFormat::Float32 => SampleFormat::Float,
        },
    };
    let mut writer = WavWriter::create(path, spec)?;
    for &s in x.samples() {
        match format {
            WavFormat::Pcm16 => {
                let v = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
                writer.write_sample(v)?;
            }
            WavFormat::Float32 => writer.write_sample(s as f32)?,
        }
    }
    writer.finalize()?;
    Ok(())
}

const ZERO_CROSSINGS: f64 = 32.0;

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

/// Windowed-sinc sample-rate conversion. Identity when rates match.
pub fn resample(x: &AudioBuffer, target_rate: u32) -> Result<AudioBuffer> {
    if target_rate == 0 {
        return Err(BweError::InvalidArgument("target rate must be positive".into()));
    }
    let src_rate = x.sample_rate();
    if src_rate == target_rate || x.is_empty() {
        return AudioBuffer::new(x.samples().to_vec(), target_rate);
    }
    let ratio = src_rate as f64 / target_rate as f64;
    let cutoff = 0.95 * (1.0 / ratio).min(1.0);
    let half_width = ZERO_CROSSINGS / cutoff;
    let n_out = ((x.len() as f64) / ratio).round() as usize;
    let src = x.samples();
    let out = (0..n_out)
        .map(|i| {
            let center = i as f64 * ratio;
            let lo = (center - half_width).ceil().max(0.0) as usize;
            let hi = ((center + half_width).floor() as usize).min(src.len() - 1);
            let mut acc = 0.0;
            for (j, s) in src.iter().enumerate().take(hi + 1).skip(lo) {
                let u = center - j as f64;
                let w = 0.5 + 0.5 * (PI * u / half_width).cos();
                acc += s * cutoff * sinc(cutoff * u) * w;
            }
            acc
        })
        .collect();
    AudioBuffer::new(out, target_rate)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pcm16_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.wav");
        let samples: Vec<f64> = (-100..100).map(|i| i as f64 * 123.0 / 32768.0).collect();
        let x = AudioBuffer::new(samples, 16000).unwrap();
        write_wav(&path, &x, WavFormat::Pcm16).unwrap();
        let (y, fmt) = read_wav(&path).unwrap();
        assert_eq!(fmt, WavFormat::Pcm16);
        assert_eq!(y, x);
    }

    #[test]
    fn stereo_is_averaged() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.wav");
        let spec = WavSpec { channels: 2, sample_rate: 8000, bits_per_sample: 32, sample_format: SampleFormat::Float };
        let mut w = WavWriter::create(&path, spec).unwrap();
        for _ in 0..10 {
            w.write_sample(0.5f32).unwrap();
            w.write_sample(-0.25f32).unwrap();
        }
        w.finalize().unwrap();
        let (y, _) = read_wav(&path).unwrap();
        assert_eq!(y.len(), 10);
        assert!(y.samples().iter().all(|&v| (v - 0.125).abs() < 1e-9));
    }

    #[test]
    fn resampled_sine_keeps_frequency_and_level() {
        let f = 440.0;
        let x = AudioBuffer::new(
            (0..44100).map(|n| (2.0 * PI * f * n as f64 / 44100.0).sin()).collect(),
            44100,
        )
        .unwrap();
        let y = resample(&x, 16000).unwrap();
        assert_eq!(y.len(), 16000);
        let max_err = (1000..15000)
            .map(|n| (y.samples()[n] - (2.0 * PI * f * n as f64 / 16000.0).sin()).abs())
            .fold(0.0, f64::max);
        assert!(max_err < 1e-2, "{max_err}");
    }
}
