//! Spectral band replication baseline.
//!
//! Bins `[0, B)` (B = cutoff bin) are copied to `[jB, (j + 1)B)` for
//! `j = 1..=n_replications`, each copy scaled by `g_j` so that the energy in
//! the `alpha B` bins just below the frontier `jB` equals the energy in the
//! `alpha B` bins just above it.

use ndarray::Array2;
use rustfft::num_complex::Complex64;

use crate::dsp::band::{cutoff_bin, BAND_FFT_SIZE, BAND_HOP};
use crate::dsp::stft::{StftPlan, Window};
use crate::dsp::{AudioBuffer, Spectrogram};
use crate::error::{BweError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PhaseMode {
    /// Ground-truth phase from a reference spectrogram.
    Oracle,
    /// Phase of the replicated low-band bins.
    Replicated,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SbrConfig {
    pub n_replications: usize,
    /// Width of the matched regions as a fraction of B.
    pub match_fraction: f64,
    pub phase_mode: PhaseMode,
    pub cutoff_hz: f64,
}

impl Default for SbrConfig {
    fn default() -> Self {
        Self { n_replications: 3, match_fraction: 0.5, phase_mode: PhaseMode::Replicated, cutoff_hz: 2000.0 }
    }
}

impl SbrConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_replications == 0 {
            return Err(BweError::InvalidArgument("SBR needs at least one replication".into()));
        }
        if !(self.match_fraction > 0.0 && self.match_fraction <= 1.0) {
            return Err(BweError::InvalidArgument(format!("SBR match fraction {} outside (0, 1]", self.match_fraction)));
        }
        Ok(())
    }
}

/// Replicated spectrum and the per-frame gains `[T x n_replications]`.
#[derive(Debug, Clone)]
pub struct SbrOutput {
    pub frames: Array2<Complex64>,
    pub gains: Array2<f64>,
    /// Cutoff bin B.
    pub band_bins: usize,
    /// Matched-region width in bins.
    pub match_bins: usize,
}

fn energy(row: &[Complex64]) -> f64 {
    row.iter().map(|c| c.norm_sqr()).sum()
}

/// Bins copied past the last bin (or onto Nyquist) are dropped; Nyquist stays 0.
pub fn sbr_extend_frames(
    frames: &Array2<Complex64>,
    band_bins: usize,
    cfg: &SbrConfig,
    oracle: Option<&Array2<Complex64>>,
) -> Result<SbrOutput> {
    cfg.validate()?;
    let (t, bins) = frames.dim();
    let b = band_bins;
    if b == 0 || b >= bins {
        return Err(BweError::InvalidArgument(format!("cutoff bin {b} outside a {bins}-bin spectrum")));
    }
    if cfg.phase_mode == PhaseMode::Oracle {
        match oracle {
            Some(o) if o.dim() == frames.dim() => {}
            Some(o) => return Err(BweError::Shape(format!("oracle spectrogram {:?}, input {:?}", o.dim(), frames.dim()))),
            None => return Err(BweError::InvalidArgument("oracle phase mode needs a reference spectrogram".into())),
        }
    }
    let m = ((cfg.match_fraction * b as f64).round() as usize).clamp(1, b);
    let top = bins - 1;
    let mut out = frames.clone();
    let mut gains = Array2::zeros((t, cfg.n_replications));
    for r in 0..t {
        let src: Vec<Complex64> = frames.row(r).iter().take(b).copied().collect();
        let mut row: Vec<Complex64> = out.row(r).to_vec();
        row[b..].iter_mut().for_each(|c| *c = Complex64::new(0.0, 0.0));
        let e_src = energy(&src[..m]);
        for j in 1..=cfg.n_replications {
            let start = j * b;
            if start >= top {
                break;
            }
            let e_below = energy(&row[start - m..start]);
            let g = if e_src > 0.0 { (e_below / e_src).sqrt() } else { 0.0 };
            gains[[r, j - 1]] = g;
            for (k, s) in src.iter().enumerate() {
                let dst = start + k;
                if dst >= top {
                    break;
                }
                row[dst] = match cfg.phase_mode {
                    PhaseMode::Replicated => *s * g,
                    PhaseMode::Oracle => {
                        let o = oracle.expect("checked above")[[r, dst]];
                        let n = o.norm();
                        let unit = if n > 0.0 { o / n } else { Complex64::new(1.0, 0.0) };
                        unit * (s.norm() * g)
                    }
                };
            }
        }
        out.row_mut(r).iter_mut().zip(row).for_each(|(o, v)| *o = v);
    }
    Ok(SbrOutput { frames: out, gains, band_bins: b, match_bins: m })
}

/// Full SBR extension of a low-band signal. `oracle` is the wide-band
/// reference, required in [`PhaseMode::Oracle`].
pub fn bwe_sbr_detailed(x_lb: &AudioBuffer, cfg: &SbrConfig, oracle: Option<&AudioBuffer>) -> Result<(AudioBuffer, SbrOutput)> {
    let plan = StftPlan::new(BAND_FFT_SIZE, BAND_HOP, Window::Hann)?;
    let frames = plan.analyze(x_lb.samples());
    let oracle_frames = match oracle {
        Some(o) => {
            x_lb.check_compatible(o)?;
            Some(plan.analyze(o.samples()))
        }
        None => None,
    };
    let b = cutoff_bin(cfg.cutoff_hz, BAND_FFT_SIZE, x_lb.sample_rate());
    let out = sbr_extend_frames(&frames, b, cfg, oracle_frames.as_ref())?;
    let y = AudioBuffer::new(plan.synthesize(&out.frames, x_lb.len()), x_lb.sample_rate())?;
    Ok((y, out))
}

pub fn bwe_sbr(x_lb: &AudioBuffer, cfg: &SbrConfig, oracle: Option<&AudioBuffer>) -> Result<AudioBuffer> {
    Ok(bwe_sbr_detailed(x_lb, cfg, oracle)?.0)
}

/// SBR from an existing spectrogram; returns the replicated spectrogram.
pub fn sbr_spectrogram(x: &Spectrogram, cfg: &SbrConfig, oracle: Option<&Spectrogram>) -> Result<Spectrogram> {
    let b = cutoff_bin(cfg.cutoff_hz, x.fft_size, x.sample_rate);
    let out = sbr_extend_frames(&x.frames, b, cfg, oracle.map(|o| &o.frames))?;
    Ok(x.with_frames(out.frames))
}
