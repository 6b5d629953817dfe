//! Time-varying filtered noise.
//!
//! Each frame's `K` magnitude coefficients define a zero-phase response that
//! is turned into a `2 (K - 1)`-tap linear-phase FIR (inverse real DFT,
//! rotated to the window centre, Hann-windowed). Frame `t` filters the slice
//! of white noise nearest to it, `[t hop - hop/2, t hop + hop/2)`, and the
//! filtered slices are overlap-added with the FIR delay removed.

use std::f64::consts::PI;

use ndarray::Array2;

use super::harmonic::SynthGrid;
use crate::dsp::stft::Window;
use crate::error::{BweError, Result};

/// Linear map from `K` magnitude coefficients to the windowed FIR taps.
#[derive(Debug, Clone)]
pub struct FirDesign {
    /// `[taps x K]`.
    pub matrix: Array2<f64>,
}

impl FirDesign {
    pub fn new(n_coeffs: usize) -> Result<Self> {
        if n_coeffs < 2 {
            return Err(BweError::InvalidArgument("noise filter needs at least 2 coefficients".into()));
        }
        let taps = 2 * (n_coeffs - 1);
        let window = Window::Hann.coefficients(taps);
        let half = taps / 2;
        let matrix = Array2::from_shape_fn((taps, n_coeffs), |(j, k)| {
            let weight = if k == 0 || k == n_coeffs - 1 { 1.0 } else { 2.0 };
            let m = j as f64 - half as f64;
            window[j] * weight * (2.0 * PI * k as f64 * m / taps as f64).cos() / taps as f64
        });
        Ok(Self { matrix })
    }

    pub fn taps(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn n_coeffs(&self) -> usize {
        self.matrix.ncols()
    }

    /// FIR taps for every frame, `[T x taps]`.
    pub fn impulse_responses(&self, coeffs: &Array2<f64>) -> Array2<f64> {
        coeffs.dot(&self.matrix.t())
    }
}

/// Sample range driven by frame `t`.
fn segment(t: usize, n_frames: usize, grid: &SynthGrid) -> (usize, usize) {
    let half = grid.hop / 2;
    let start = if t == 0 { 0 } else { (t * grid.hop).saturating_sub(half) };
    let end = if t + 1 == n_frames { grid.n_samples } else { (t * grid.hop + grid.hop - half).min(grid.n_samples) };
    (start.min(grid.n_samples), end)
}

fn check(coeffs: &Array2<f64>, design: &FirDesign, noise: &[f64], grid: &SynthGrid) -> Result<()> {
    if coeffs.ncols() != design.n_coeffs() {
        return Err(BweError::Shape(format!(
            "{} noise coefficients, filter designed for {}",
            coeffs.ncols(),
            design.n_coeffs()
        )));
    }
    if noise.len() != grid.n_samples {
        return Err(BweError::LengthMismatch { left: noise.len(), right: grid.n_samples });
    }
    Ok(())
}

/// Filter `noise` (one value per output sample) with per-frame responses.
pub fn noise_synth(coeffs: &Array2<f64>, design: &FirDesign, noise: &[f64], grid: &SynthGrid) -> Result<Vec<f64>> {
    check(coeffs, design, noise, grid)?;
    let n = grid.n_samples;
    let mut y = vec![0.0; n];
    let t_frames = coeffs.nrows();
    if t_frames == 0 {
        return Ok(y);
    }
    let firs = design.impulse_responses(coeffs);
    let delay = design.taps() / 2;
    for t in 0..t_frames {
        let (s, e) = segment(t, t_frames, grid);
        let h = firs.row(t);
        for m in s..e {
            let x = noise[m];
            // Output sample m + j - delay receives h[j] x[m].
            let j0 = delay.saturating_sub(m);
            let j1 = (n + delay - m).min(h.len());
            for j in j0..j1 {
                y[m + j - delay] += h[j] * x;
            }
        }
    }
    Ok(y)
}

/// Vector-Jacobian product of [`noise_synth`] with respect to the coefficients.
pub fn noise_synth_vjp(
    coeffs: &Array2<f64>,
    design: &FirDesign,
    noise: &[f64],
    grid: &SynthGrid,
    grad_y: &[f64],
) -> Result<Array2<f64>> {
    check(coeffs, design, noise, grid)?;
    if grad_y.len() != grid.n_samples {
        return Err(BweError::LengthMismatch { left: grad_y.len(), right: grid.n_samples });
    }
    let n = grid.n_samples;
    let t_frames = coeffs.nrows();
    let taps = design.taps();
    let delay = taps / 2;
    let mut g_fir = Array2::zeros((t_frames, taps));
    for t in 0..t_frames {
        let (s, e) = segment(t, t_frames, grid);
        let mut row = g_fir.row_mut(t);
        for m in s..e {
            let x = noise[m];
            let j0 = delay.saturating_sub(m);
            let j1 = (n + delay - m).min(taps);
            for j in j0..j1 {
                row[j] += grad_y[m + j - delay] * x;
            }
        }
    }
    Ok(g_fir.dot(&design.matrix))
}
