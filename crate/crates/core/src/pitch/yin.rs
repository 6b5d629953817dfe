//! YIN monophonic f0 estimation.

use super::PitchTrack;
use crate::dsp::stft::frame_count;
use crate::dsp::AudioBuffer;
use crate::error::{BweError, Result};

#[derive(Debug, Clone)]
pub struct YinConfig {
    pub fmin: f64,
    pub fmax: f64,
    /// Analysis span per frame; the integration window is half of it.
    pub frame_size: usize,
    pub hop: usize,
    /// Cumulative-mean-normalized difference threshold.
    pub threshold: f64,
    /// Frames with RMS below this are unvoiced.
    pub min_rms: f64,
}

impl Default for YinConfig {
    fn default() -> Self {
        Self { fmin: 65.0, fmax: 1800.0, frame_size: 2048, hop: super::PITCH_HOP, threshold: 0.15, min_rms: 1e-4 }
    }
}

fn frame_at(x: &[f64], center: usize, size: usize) -> Vec<f64> {
    let start = center as isize - (size / 2) as isize;
    (0..size)
        .map(|i| {
            let p = start + i as isize;
            if p >= 0 && (p as usize) < x.len() {
                x[p as usize]
            } else {
                0.0
            }
        })
        .collect()
}

/// Cumulative-mean-normalized difference for lags `0..=tau_max`.
fn cmnd(frame: &[f64], window: usize, tau_max: usize) -> Vec<f64> {
    let mut d = vec![0.0; tau_max + 1];
    for (tau, dv) in d.iter_mut().enumerate().skip(1) {
        *dv = frame[..window].iter().zip(&frame[tau..tau + window]).map(|(a, b)| (a - b) * (a - b)).sum();
    }
    let mut out = vec![1.0; tau_max + 1];
    let mut running = 0.0;
    for tau in 1..=tau_max {
        running += d[tau];
        out[tau] = if running > 0.0 { d[tau] * tau as f64 / running } else { 1.0 };
    }
    out
}

fn parabolic(y: &[f64], i: usize) -> f64 {
    if i == 0 || i + 1 >= y.len() {
        return i as f64;
    }
    let (a, b, c) = (y[i - 1], y[i], y[i + 1]);
    let den = a - 2.0 * b + c;
    if den.abs() < 1e-15 {
        i as f64
    } else {
        i as f64 + 0.5 * (a - c) / den
    }
}

/// Per-frame f0 with voicing; unvoiced frames carry f0 = 0.
pub fn estimate_f0_mono(x: &AudioBuffer, cfg: &YinConfig) -> Result<PitchTrack> {
    let sr = x.sample_rate() as f64;
    if !(cfg.fmin > 0.0 && cfg.fmax > cfg.fmin && cfg.fmax < sr / 2.0) {
        return Err(BweError::InvalidArgument(format!("bad YIN range {}..{} Hz", cfg.fmin, cfg.fmax)));
    }
    let window = cfg.frame_size / 2;
    let tau_max = ((sr / cfg.fmin).ceil() as usize).min(cfg.frame_size - window - 1);
    let tau_min = ((sr / cfg.fmax).floor() as usize).max(2);
    let n_frames = frame_count(x.len(), cfg.hop);
    let mut f0 = vec![0.0; n_frames];
    let mut conf = vec![0.0; n_frames];
    for t in 0..n_frames {
        let frame = frame_at(x.samples(), t * cfg.hop, cfg.frame_size);
        let rms = (frame[..window].iter().map(|v| v * v).sum::<f64>() / window as f64).sqrt();
        if rms < cfg.min_rms {
            continue;
        }
        let d = cmnd(&frame, window, tau_max);
        let mut pick = None;
        let mut tau = tau_min;
        while tau < tau_max {
            if d[tau] < cfg.threshold {
                while tau + 1 < tau_max && d[tau + 1] < d[tau] {
                    tau += 1;
                }
                pick = Some(tau);
                break;
            }
            tau += 1;
        }
        match pick {
            Some(tau) => {
                let lag = parabolic(&d, tau);
                let hz = sr / lag;
                if hz.is_finite() && hz >= cfg.fmin * 0.97 && hz <= cfg.fmax * 1.03 && hz < sr / 2.0 {
                    f0[t] = hz;
                    conf[t] = (1.0 - d[tau]).clamp(0.0, 1.0);
                }
            }
            None => {
                let best = d[tau_min..tau_max].iter().cloned().fold(f64::INFINITY, f64::min);
                conf[t] = (1.0 - best).clamp(0.0, 1.0) * 0.5;
            }
        }
    }
    PitchTrack::new(f0, conf, cfg.hop, x.sample_rate())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn tone(freqs: &[(f64, f64)], n: usize) -> AudioBuffer {
        let s = (0..n).map(|i| freqs.iter().map(|(f, a)| a * (2.0 * PI * f * i as f64 / 16000.0).sin()).sum()).collect();
        AudioBuffer::new(s, 16000).unwrap()
    }

    #[test]
    fn pure_sine_within_one_hz() {
        let track = estimate_f0_mono(&tone(&[(440.0, 0.5)], 32000), &YinConfig::default()).unwrap();
        let voiced: Vec<f64> = track.f0.iter().copied().filter(|&f| f > 0.0).collect();
        assert!(voiced.len() as f64 >= 0.9 * track.len() as f64);
        let good = voiced.iter().filter(|&&f| (f - 440.0).abs() <= 1.0).count();
        assert!(good as f64 >= 0.95 * voiced.len() as f64, "{good}/{}", voiced.len());
    }

    #[test]
    fn silence_is_unvoiced() {
        let track = estimate_f0_mono(&AudioBuffer::zeros(8000, 16000), &YinConfig::default()).unwrap();
        assert!(track.is_silent());
        assert_eq!(track.len(), frame_count(8000, 256));
    }

    #[test]
    fn harmonic_tone_with_weak_fundamental() {
        let f = super::super::midi_to_hz(68.0);
        let x = tone(&[(f, 0.3), (2.0 * f, 0.4), (3.0 * f, 0.2)], 16000);
        let track = estimate_f0_mono(&x, &YinConfig::default()).unwrap();
        for &v in track.f0.iter().filter(|&&v| v > 0.0) {
            assert!((super::super::hz_to_midi(v) - 68.0).abs() < 1.0, "{v}");
        }
        assert!(track.voiced_frames() > track.len() / 2);
    }
}
