//! Greedy harmonic-salience multi-pitch estimation.
//!
//! Per frame: pick the candidate f0 whose harmonics collect the most
//! magnitude (harmonic `h` weighted by `1/h`), zero its harmonic comb in the
//! spectrum and repeat. Frame picks are then linked into tracks by nearest
//! pitch and the tracks ordered by total salience.

use super::{hz_to_midi, midi_to_hz, MultiPitchTrack, PitchTrack};
use crate::dsp::stft::{StftPlan, Window};
use crate::dsp::AudioBuffer;
use crate::error::Result;

#[derive(Debug, Clone)]
pub struct MultiF0Config {
    pub fmin: f64,
    pub fmax: f64,
    pub fft_size: usize,
    pub hop: usize,
    /// Harmonics summed per candidate.
    pub n_harmonics: usize,
    /// Candidate grid resolution in semitones.
    pub resolution_st: f64,
    /// Minimum salience as a fraction of the strongest pick in the frame.
    pub relative_floor: f64,
    /// Minimum fundamental-equivalent amplitude for any pick.
    pub absolute_floor: f64,
    /// Largest jump, in semitones, still linked to an existing track.
    pub link_st: f64,
}

impl Default for MultiF0Config {
    fn default() -> Self {
        Self {
            fmin: 65.0,
            fmax: 1800.0,
            fft_size: 2048,
            hop: super::PITCH_HOP,
            n_harmonics: 10,
            resolution_st: 0.125,
            relative_floor: 0.2,
            absolute_floor: 1e-3,
            link_st: 1.0,
        }
    }
}

struct Pick {
    hz: f64,
    salience: f64,
}

fn salience(mag: &[f64], f0: f64, bin_hz: f64, n_harm: usize) -> f64 {
    let mut s = 0.0;
    for h in 1..=n_harm {
        let pos = h as f64 * f0 / bin_hz;
        let k = pos.round() as usize;
        if k + 1 >= mag.len() {
            break;
        }
        let peak = mag[k.saturating_sub(1)].max(mag[k]).max(mag[k + 1]);
        s += peak / h as f64;
    }
    s
}

/// Pitch refined from the interpolated peaks of its harmonics, weighted like
/// the salience sum.
fn refine(mag: &[f64], f0: f64, bin_hz: f64, n_harm: usize) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for h in 1..=n_harm {
        let k = (h as f64 * f0 / bin_hz).round() as usize;
        if k + 3 >= mag.len() || k < 3 {
            break;
        }
        let j = (k - 1..=k + 1).max_by(|&a, &b| mag[a].total_cmp(&mag[b])).unwrap();
        let (a, b, c) = (mag[j - 1].max(1e-12).ln(), mag[j].max(1e-12).ln(), mag[j + 1].max(1e-12).ln());
        let d = a - 2.0 * b + c;
        let offset = if d < 0.0 { (0.5 * (a - c) / d).clamp(-0.5, 0.5) } else { 0.0 };
        let w = mag[j] / h as f64;
        num += w * (j as f64 + offset) * bin_hz / h as f64;
        den += w;
    }
    if den > 0.0 {
        num / den
    } else {
        f0
    }
}

fn frame_picks(mag: &mut [f64], candidates: &[f64], bin_hz: f64, max_voices: usize, cfg: &MultiF0Config) -> Vec<Pick> {
    let mut picks: Vec<Pick> = Vec::new();
    for _ in 0..max_voices {
        let best = candidates
            .iter()
            .map(|&f| (f, salience(mag, f, bin_hz, cfg.n_harmonics)))
            .max_by(|a, b| a.1.total_cmp(&b.1));
        let Some((hz, s)) = best else { break };
        if s < cfg.absolute_floor || picks.first().is_some_and(|p| s < cfg.relative_floor * p.salience) {
            break;
        }
        let hz = refine(mag, hz, bin_hz, cfg.n_harmonics);
        // Remove the comb, main lobe of each harmonic included.
        for h in 1..=cfg.n_harmonics {
            let k = (h as f64 * hz / bin_hz).round() as isize;
            for d in -2..=2 {
                let j = k + d;
                if j >= 0 && (j as usize) < mag.len() {
                    mag[j as usize] = 0.0;
                }
            }
        }
        picks.push(Pick { hz, salience: s });
    }
    picks
}

/// Up to `max_voices` tracks, strongest total salience first. Tracks that
/// never sound are dropped, so silence yields no tracks.
pub fn estimate_multi_f0(x: &AudioBuffer, max_voices: usize, cfg: &MultiF0Config) -> Result<MultiPitchTrack> {
    let sr = x.sample_rate();
    let plan = StftPlan::new(cfg.fft_size, cfg.hop, Window::Hann)?;
    let frames = plan.analyze(x.samples());
    let n_frames = frames.nrows();
    let bin_hz = sr as f64 / cfg.fft_size as f64;
    // A sine of amplitude A peaks at A * sum(w) / 2 under the window.
    let norm = 2.0 / Window::Hann.coefficients(cfg.fft_size).iter().sum::<f64>();
    let fmax = cfg.fmax.min(sr as f64 / 2.0 - bin_hz);
    let (m_lo, m_hi) = (hz_to_midi(cfg.fmin), hz_to_midi(fmax));
    let n_cand = ((m_hi - m_lo) / cfg.resolution_st).floor() as usize + 1;
    let candidates: Vec<f64> = (0..n_cand).map(|i| midi_to_hz(m_lo + i as f64 * cfg.resolution_st)).collect();

    let mut f0 = vec![vec![0.0; n_frames]; max_voices];
    let mut sal = vec![vec![0.0; n_frames]; max_voices];
    let mut last: Vec<Option<f64>> = vec![None; max_voices];
    for (t, row) in frames.outer_iter().enumerate() {
        let mut mag: Vec<f64> = row.iter().map(|c| c.norm() * norm).collect();
        let picks = frame_picks(&mut mag, &candidates, bin_hz, max_voices, cfg);
        let mut taken = vec![false; max_voices];
        for p in &picks {
            let dist = |slot: usize| last[slot].map_or(f64::INFINITY, |l| (hz_to_midi(p.hz) - hz_to_midi(l)).abs());
            let free: Vec<usize> = (0..max_voices).filter(|&s| !taken[s]).collect();
            let near = free.iter().copied().filter(|&s| dist(s) <= cfg.link_st).min_by(|&a, &b| dist(a).total_cmp(&dist(b)));
            let slot = near
                .or_else(|| free.iter().copied().find(|&s| last[s].is_none()))
                .or_else(|| free.iter().copied().min_by(|&a, &b| dist(a).total_cmp(&dist(b))));
            if let Some(s) = slot {
                taken[s] = true;
                f0[s][t] = p.hz;
                sal[s][t] = p.salience;
                last[s] = Some(p.hz);
            }
        }
    }
    let mut order: Vec<usize> = (0..max_voices).filter(|&s| f0[s].iter().any(|&f| f > 0.0)).collect();
    let total = |s: usize| sal[s].iter().sum::<f64>();
    order.sort_by(|&a, &b| total(b).total_cmp(&total(a)));
    let peak = sal.iter().flatten().cloned().fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let tracks = order
        .into_iter()
        .map(|s| PitchTrack::new(f0[s].clone(), sal[s].iter().map(|v| (v / peak).min(1.0)).collect(), cfg.hop, sr))
        .collect::<Result<Vec<_>>>()?;
    MultiPitchTrack::new(tracks, max_voices)
}
