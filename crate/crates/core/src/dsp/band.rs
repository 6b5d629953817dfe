//! Low/high band split with complementary STFT masks.

use super::audio::{AudioBuffer, BandSplitSpec};
use super::stft::{StftPlan, Window};
use crate::error::Result;

pub const BAND_FFT_SIZE: usize = 1024;
pub const BAND_HOP: usize = 256;

/// First bin at or above `cutoff_hz`.
pub fn cutoff_bin(cutoff_hz: f64, fft_size: usize, sample_rate: u32) -> usize {
    let exact = cutoff_hz * fft_size as f64 / sample_rate as f64;
    // Guard against 127.99999 style rounding of exact multiples.
    (exact - 1e-9).ceil().max(0.0) as usize
}

/// Returns `(low_band, high_band)`; bins below the cutoff bin go low.
pub fn band_split(x: &AudioBuffer, spec: &BandSplitSpec) -> Result<(AudioBuffer, AudioBuffer)> {
    let plan = StftPlan::new(BAND_FFT_SIZE, BAND_HOP, Window::Hann)?;
    let kc = cutoff_bin(spec.cutoff_hz, BAND_FFT_SIZE, x.sample_rate()).min(plan.n_bins());
    let frames = plan.analyze(x.samples());
    let mut low = frames.clone();
    let mut high = frames;
    for mut row in low.outer_iter_mut() {
        row.iter_mut().skip(kc).for_each(|c| *c = Default::default());
    }
    for mut row in high.outer_iter_mut() {
        row.iter_mut().take(kc).for_each(|c| *c = Default::default());
    }
    let sr = x.sample_rate();
    Ok((
        AudioBuffer::new(plan.synthesize(&low, x.len()), sr)?,
        AudioBuffer::new(plan.synthesize(&high, x.len()), sr)?,
    ))
}

/// Convenience: the low band only.
pub fn low_pass(x: &AudioBuffer, cutoff_hz: f64) -> Result<AudioBuffer> {
    let spec = BandSplitSpec::new(cutoff_hz, x.sample_rate())?;
    Ok(band_split(x, &spec)?.0)
}
