//! A-weighted frame loudness.

use super::audio::AudioBuffer;
use super::stft::{StftPlan, Window};
use crate::error::Result;

/// Lowest loudness value emitted, in dB.
pub const LOUDNESS_FLOOR_DB: f64 = -90.0;

/// Power offset inside the log; equals the floor so silence lands exactly on it.
const POWER_EPS: f64 = 1e-9;

/// Per-frame loudness in dB.
#[derive(Debug, Clone, PartialEq)]
pub struct LoudnessTrack {
    pub values: Vec<f64>,
    pub hop: usize,
}

impl LoudnessTrack {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Decoder input scaling: `(dB + 90) / 90`.
    pub fn normalized(&self) -> Vec<f64> {
        self.values.iter().map(|v| (v - LOUDNESS_FLOOR_DB) / -LOUDNESS_FLOOR_DB).collect()
    }
}

fn ra(f: f64) -> f64 {
    let f2 = f * f;
    let c1 = 20.598997f64.powi(2);
    let c2 = 107.65265f64.powi(2);
    let c3 = 737.86223f64.powi(2);
    let c4 = 12194.217f64.powi(2);
    c4 * f2 * f2 / ((f2 + c1) * ((f2 + c2) * (f2 + c3)).sqrt() * (f2 + c4))
}

/// IEC 61672 A-weighting as a power (magnitude-squared) gain, 1.0 at 1 kHz.
pub fn a_weighting_power(f: f64) -> f64 {
    let g = ra(f) / ra(1000.0);
    g * g
}

pub fn a_weighting_db(f: f64) -> f64 {
    10.0 * a_weighting_power(f).max(1e-300).log10()
}

/// `10 log10(sum_k A(f_k) |X(n,k)|^2 + eps)` with the power normalized to a
/// mean-square estimate (a full-scale sine reads about -3 dB).
pub fn a_weighted_loudness(x: &AudioBuffer, fft_size: usize, hop: usize) -> Result<LoudnessTrack> {
    let plan = StftPlan::new(fft_size, hop, Window::Hann)?;
    if x.is_empty() {
        return Ok(LoudnessTrack { values: Vec::new(), hop });
    }
    let spec = plan.analyze(x.samples());
    let bin_hz = x.sample_rate() as f64 / fft_size as f64;
    let half = fft_size / 2;
    let norm = 1.0 / (fft_size as f64 * plan.window().iter().map(|w| w * w).sum::<f64>());
    let weights: Vec<f64> = (0..=half)
        .map(|k| {
            let sided = if k == 0 || k == half { 1.0 } else { 2.0 };
            sided * norm * a_weighting_power(k as f64 * bin_hz)
        })
        .collect();
    let values = spec
        .outer_iter()
        .map(|row| {
            let p: f64 = row.iter().zip(&weights).map(|(c, w)| c.norm_sqr() * w).sum();
            (10.0 * (p + POWER_EPS).log10()).max(LOUDNESS_FLOOR_DB)
        })
        .collect();
    Ok(LoudnessTrack { values, hop })
}
