//! Fundamental-frequency tracks and the providers that produce them.

pub mod file;
pub mod multi;
pub mod yin;

use std::path::PathBuf;

use crate::dsp::stft::frame_count;
use crate::dsp::AudioBuffer;
use crate::error::{BweError, Result};

pub use file::{load_pitch_file, save_pitch_file};
pub use multi::{estimate_multi_f0, MultiF0Config};
pub use yin::{estimate_f0_mono, YinConfig};

/// Frame hop shared by every pitch provider and the synthesizers.
pub const PITCH_HOP: usize = 256;

pub fn midi_to_hz(midi: f64) -> f64 {
    440.0 * 2f64.powf((midi - 69.0) / 12.0)
}

pub fn hz_to_midi(hz: f64) -> f64 {
    69.0 + 12.0 * (hz / 440.0).log2()
}

/// Per-frame f0 in Hz (0 = unvoiced) with a confidence in `[0, 1]`.
/// Frame `t` is centered on sample `t * hop`.
#[derive(Debug, Clone, PartialEq)]
pub struct PitchTrack {
    pub f0: Vec<f64>,
    pub confidence: Vec<f64>,
    pub hop: usize,
    pub sample_rate: u32,
}

impl PitchTrack {
    pub fn new(f0: Vec<f64>, confidence: Vec<f64>, hop: usize, sample_rate: u32) -> Result<Self> {
        if f0.len() != confidence.len() {
            return Err(BweError::LengthMismatch { left: f0.len(), right: confidence.len() });
        }
        let nyq = sample_rate as f64 / 2.0;
        if let Some(&bad) = f0.iter().find(|f| !f.is_finite() || **f < 0.0 || **f >= nyq) {
            return Err(BweError::InvalidArgument(format!("f0 value {bad} outside [0, {nyq})")));
        }
        Ok(Self { f0, confidence, hop, sample_rate })
    }

    /// Constant, fully confident track.
    pub fn constant(hz: f64, n_frames: usize, hop: usize, sample_rate: u32) -> Result<Self> {
        Self::new(vec![hz; n_frames], vec![1.0; n_frames], hop, sample_rate)
    }

    pub fn unvoiced(n_frames: usize, hop: usize, sample_rate: u32) -> Self {
        Self { f0: vec![0.0; n_frames], confidence: vec![0.0; n_frames], hop, sample_rate }
    }

    pub fn len(&self) -> usize {
        self.f0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.f0.is_empty()
    }

    pub fn voiced_frames(&self) -> usize {
        self.f0.iter().filter(|&&f| f > 0.0).count()
    }

    pub fn is_silent(&self) -> bool {
        self.voiced_frames() == 0
    }

    /// Mean f0 over voiced frames, 0 when none.
    pub fn mean_voiced_f0(&self) -> f64 {
        let v = self.voiced_frames();
        if v == 0 {
            0.0
        } else {
            self.f0.iter().filter(|&&f| f > 0.0).sum::<f64>() / v as f64
        }
    }

    /// Unvoiced gaps filled with the previous voiced value (leading gaps take
    /// the first voiced value). A fully unvoiced track is returned unchanged.
    pub fn held(&self) -> Self {
        let mut out = self.clone();
        let Some(first) = self.f0.iter().copied().find(|&f| f > 0.0) else {
            return out;
        };
        let mut last = first;
        for f in &mut out.f0 {
            if *f > 0.0 {
                last = *f;
            } else {
                *f = last;
            }
        }
        out
    }
}

/// Up to `max_voices` simultaneous tracks, strongest first.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiPitchTrack {
    pub tracks: Vec<PitchTrack>,
    pub max_voices: usize,
}

impl MultiPitchTrack {
    pub fn new(tracks: Vec<PitchTrack>, max_voices: usize) -> Result<Self> {
        if tracks.len() > max_voices {
            return Err(BweError::InvalidArgument(format!(
                "{} pitch tracks exceed the maximum of {max_voices}",
                tracks.len()
            )));
        }
        if let Some(t) = tracks.first() {
            if tracks.iter().any(|u| u.len() != t.len() || u.hop != t.hop) {
                return Err(BweError::Shape("pitch tracks must share framing".into()));
            }
        }
        Ok(Self { tracks, max_voices })
    }

    pub fn n_voices(&self) -> usize {
        self.tracks.len()
    }

    pub fn n_frames(&self) -> usize {
        self.tracks.first().map_or(0, PitchTrack::len)
    }

    /// Tracks reordered by descending mean f0, the slot order the polyphonic
    /// decoder is trained with.
    pub fn sorted_by_pitch_desc(&self) -> Self {
        let mut tracks = self.tracks.clone();
        tracks.sort_by(|a, b| b.mean_voiced_f0().total_cmp(&a.mean_voiced_f0()));
        Self { tracks, max_voices: self.max_voices }
    }
}

/// Constant ground-truth tracks for generator frequencies, framed for a clip
/// of `n_samples`.
pub fn oracle_pitch(freqs_hz: &[f64], n_samples: usize, hop: usize, sample_rate: u32) -> Result<MultiPitchTrack> {
    if freqs_hz.is_empty() {
        return Err(BweError::Data("oracle pitch needs generator frequencies".into()));
    }
    let n_frames = frame_count(n_samples, hop);
    let tracks = freqs_hz
        .iter()
        .map(|&f| PitchTrack::constant(f, n_frames, hop, sample_rate))
        .collect::<Result<Vec<_>>>()?;
    MultiPitchTrack::new(tracks, freqs_hz.len())
}

/// Where f0 information comes from when running a pipeline.
#[derive(Debug, Clone, PartialEq)]
pub enum PitchSource {
    /// Ground truth supplied by the caller.
    Oracle(MultiPitchTrack),
    /// Precomputed CSV track (see [`load_pitch_file`]).
    File(PathBuf),
    /// Built-in estimators.
    Estimate,
}

impl PitchSource {
    /// Multi-pitch tracks for `x`, capped at `max_voices` and framed with `hop`.
    pub fn multi(&self, x: &AudioBuffer, max_voices: usize, hop: usize) -> Result<MultiPitchTrack> {
        let n_frames = frame_count(x.len(), hop);
        let mut m = match self {
            PitchSource::Oracle(m) => m.clone(),
            PitchSource::File(path) => load_pitch_file(path, x.sample_rate(), hop, Some(n_frames))?,
            PitchSource::Estimate => {
                let cfg = MultiF0Config { hop, ..MultiF0Config::default() };
                if max_voices == 1 {
                    let yin = YinConfig { hop, ..YinConfig::default() };
                    MultiPitchTrack::new(vec![estimate_f0_mono(x, &yin)?], 1)?
                } else {
                    estimate_multi_f0(x, max_voices, &cfg)?
                }
            }
        };
        if m.n_voices() > 0 && (m.n_frames() != n_frames || m.tracks[0].hop != hop) {
            return Err(BweError::Shape(format!(
                "pitch track has {} frames of hop {}, clip needs {n_frames} of hop {hop}",
                m.n_frames(),
                m.tracks[0].hop
            )));
        }
        m.tracks.truncate(max_voices);
        m.max_voices = max_voices;
        Ok(m)
    }

    /// Single track for the monophonic pipelines: the strongest voice,
    /// or an unvoiced track when nothing was found.
    pub fn mono(&self, x: &AudioBuffer, hop: usize) -> Result<PitchTrack> {
        let m = self.multi(x, 1, hop)?;
        Ok(m.tracks.into_iter().next().unwrap_or_else(|| PitchTrack::unvoiced(frame_count(x.len(), hop), hop, x.sample_rate())))
    }
}
