//! Additive harmonic oscillator bank.
//!
//! `y(n) = sum_h A_h(n) sin(h * phi(n) + phi0_h)` with
//! `phi(n) = 2 pi sum_{m<n} f0(m) / fs`, so `y(0) = sum_h A_h(0) sin(phi0_h)`.
//! Harmonics at or above Nyquist, and every harmonic on unvoiced samples
//! (`f0 <= 0`), are silent. The oscillators are evaluated by complex
//! rotation: `e^{i h phi}` is built from `e^{i phi}` by repeated products.

use std::f64::consts::TAU;

use ndarray::Array2;
use rustfft::num_complex::Complex64;

use super::upsample::{interpolate_linear, interpolate_linear_adjoint, locate, raised_cosine};
use super::PhaseState;
use crate::error::{BweError, Result};

/// Sample grid shared by the synthesizers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SynthGrid {
    pub sample_rate: u32,
    pub hop: usize,
    pub n_samples: usize,
}

impl SynthGrid {
    pub fn new(sample_rate: u32, hop: usize, n_samples: usize) -> Result<Self> {
        if sample_rate == 0 || hop == 0 {
            return Err(BweError::InvalidArgument("sample rate and hop must be positive".into()));
        }
        Ok(Self { sample_rate, hop, n_samples })
    }

    pub fn nyquist(&self) -> f64 {
        self.sample_rate as f64 / 2.0
    }
}

fn check_inputs(f0: &[f64], amps: &Array2<f64>, phase: &PhaseState, grid: &SynthGrid) -> Result<()> {
    if f0.len() != amps.nrows() {
        return Err(BweError::LengthMismatch { left: f0.len(), right: amps.nrows() });
    }
    if phase.initial.len() < amps.ncols() {
        return Err(BweError::Shape(format!(
            "{} initial phases for {} harmonics",
            phase.initial.len(),
            amps.ncols()
        )));
    }
    let nyq = grid.nyquist();
    for &f in f0 {
        if !f.is_finite() || f < 0.0 {
            return Err(BweError::InvalidArgument(format!("f0 must be finite and non-negative, got {f}")));
        }
        if f >= nyq {
            return Err(BweError::AboveNyquist { freq_hz: f, nyquist_hz: nyq });
        }
    }
    Ok(())
}

/// Walks the oscillator bank sample by sample, handing `visit` the sample
/// index and `e^{i (h phi + phi0_h)}` for every audible harmonic.
fn for_each_sample<F>(f0: &[f64], n_harm: usize, phase: &PhaseState, grid: &SynthGrid, mut visit: F)
where
    F: FnMut(usize, &[Complex64]),
{
    let f0_s = interpolate_linear(f0, grid.hop, grid.n_samples);
    let rot0: Vec<Complex64> = phase.initial[..n_harm].iter().map(|&p| Complex64::from_polar(1.0, p)).collect();
    let nyq = grid.nyquist();
    let step = TAU / grid.sample_rate as f64;
    let mut phi = 0.0f64;
    let mut osc = Vec::with_capacity(n_harm);
    for (n, &f) in f0_s.iter().enumerate() {
        osc.clear();
        if f > 0.0 {
            let z1 = Complex64::from_polar(1.0, phi);
            let mut zh = Complex64::new(1.0, 0.0);
            for (h, r0) in rot0.iter().enumerate() {
                if (h + 1) as f64 * f >= nyq {
                    break;
                }
                zh *= z1;
                osc.push(zh * r0);
            }
        }
        visit(n, &osc);
        phi = (phi + step * f) % TAU;
    }
}

/// Render the harmonic bank from frame-rate `f0` (`[T]`) and amplitudes (`[T x H]`).
pub fn harmonic_synth(f0: &[f64], amps: &Array2<f64>, phase: &PhaseState, grid: &SynthGrid) -> Result<Vec<f64>> {
    check_inputs(f0, amps, phase, grid)?;
    let mut y = vec![0.0; grid.n_samples];
    let t = amps.nrows();
    if t == 0 {
        return Ok(y);
    }
    for_each_sample(f0, amps.ncols(), phase, grid, |n, osc| {
        let (i, j, fr) = locate(n, grid.hop, t);
        let (w0, w1) = raised_cosine(fr);
        let (a, b) = (amps.row(i), amps.row(j));
        y[n] = osc.iter().enumerate().map(|(h, z)| (w0 * a[h] + w1 * b[h]) * z.im).sum();
    });
    Ok(y)
}

/// Gradients of `<grad_y, harmonic_synth(..)>`.
#[derive(Debug, Clone)]
pub struct HarmonicGrads {
    pub amps: Array2<f64>,
    pub f0: Option<Vec<f64>>,
}

/// Vector-Jacobian product of [`harmonic_synth`] with respect to the
/// amplitudes and, when `with_f0` is set, the f0 frames. The Nyquist and
/// voicing masks are treated as constants.
pub fn harmonic_synth_vjp(
    f0: &[f64],
    amps: &Array2<f64>,
    phase: &PhaseState,
    grid: &SynthGrid,
    grad_y: &[f64],
    with_f0: bool,
) -> Result<HarmonicGrads> {
    check_inputs(f0, amps, phase, grid)?;
    if grad_y.len() != grid.n_samples {
        return Err(BweError::LengthMismatch { left: grad_y.len(), right: grid.n_samples });
    }
    let (t, n_harm) = amps.dim();
    let mut g_amps = Array2::zeros((t, n_harm));
    if t == 0 {
        return Ok(HarmonicGrads { amps: g_amps, f0: with_f0.then(|| vec![0.0; t]) });
    }
    // d y(n) / d phi(n), only needed for the f0 path.
    let mut g_phi = if with_f0 { vec![0.0; grid.n_samples] } else { Vec::new() };
    for_each_sample(f0, n_harm, phase, grid, |n, osc| {
        let g = grad_y[n];
        if g == 0.0 {
            return;
        }
        let (i, j, fr) = locate(n, grid.hop, t);
        let (w0, w1) = raised_cosine(fr);
        for (h, z) in osc.iter().enumerate() {
            g_amps[[i, h]] += w0 * g * z.im;
            g_amps[[j, h]] += w1 * g * z.im;
        }
        if with_f0 {
            let (a, b) = (amps.row(i), amps.row(j));
            g_phi[n] = g * osc.iter().enumerate().map(|(h, z)| (w0 * a[h] + w1 * b[h]) * (h + 1) as f64 * z.re).sum::<f64>();
        }
    });
    let g_f0 = with_f0.then(|| {
        // phi(n) depends on f0(m) for m < n: reverse exclusive cumulative sum.
        let step = TAU / grid.sample_rate as f64;
        let mut g_f0_s = vec![0.0; grid.n_samples];
        let mut acc = 0.0;
        for n in (0..grid.n_samples).rev() {
            g_f0_s[n] = step * acc;
            acc += g_phi[n];
        }
        interpolate_linear_adjoint(&g_f0_s, grid.hop, t)
    });
    Ok(HarmonicGrads { amps: g_amps, f0: g_f0 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn grid(n: usize) -> SynthGrid {
        SynthGrid::new(16000, 256, n).unwrap()
    }

    fn dft_mag(x: &[f64], k: usize) -> f64 {
        let n = x.len() as f64;
        let (mut re, mut im) = (0.0, 0.0);
        for (i, &v) in x.iter().enumerate() {
            let a = -2.0 * PI * k as f64 * i as f64 / n;
            re += v * a.cos();
            im += v * a.sin();
        }
        (re * re + im * im).sqrt()
    }

    #[test]
    fn quarter_rate_sine_walks_the_unit_circle() {
        let amps = Array2::ones((4, 1));
        let y = harmonic_synth(&[4000.0; 4], &amps, &PhaseState::zeros(1), &grid(1024)).unwrap();
        for (n, v) in y.iter().take(8).enumerate() {
            let expect = [0.0, 1.0, 0.0, -1.0][n % 4];
            assert!((v - expect).abs() < 1e-12, "{n}: {v}");
        }
    }

    #[test]
    fn harmonic_peaks_follow_amplitudes() {
        let n = 16000;
        let t = n / 256 + 1;
        let amps = Array2::from_shape_fn((t, 3), |(_, h)| [1.0, 0.5, 0.25][h]);
        let y = harmonic_synth(&vec![1000.0; t], &amps, &PhaseState::random(3, 11), &grid(n)).unwrap();
        // 1600-sample window: 1, 2, 3 kHz fall exactly on bins 100, 200, 300.
        let seg = &y[4000..5600];
        let mags: Vec<f64> = [100, 200, 300].iter().map(|&k| dft_mag(seg, k) * 2.0 / 1600.0).collect();
        for (m, a) in mags.iter().zip([1.0, 0.5, 0.25]) {
            assert!((20.0 * (m / a).log10()).abs() < 0.5, "{mags:?}");
        }
        let step = 20.0 * (mags[1] / mags[0]).log10();
        assert!((step + 6.02).abs() < 0.5);
        let peak = (1..800).max_by(|&a, &b| dft_mag(seg, a).total_cmp(&dft_mag(seg, b))).unwrap();
        assert!((peak as i64 - 100).abs() <= 1);
    }

    #[test]
    fn zero_amplitudes_are_silent_and_scaling_is_linear() {
        let amps = Array2::from_shape_fn((5, 4), |(t, h)| 0.1 + 0.05 * (t + h) as f64);
        let ph = PhaseState::random(4, 3);
        let g = grid(1000);
        let f0 = [220.0, 230.0, 240.0, 250.0, 260.0];
        assert!(harmonic_synth(&f0, &Array2::zeros((5, 4)), &ph, &g).unwrap().iter().all(|&v| v == 0.0));
        let y = harmonic_synth(&f0, &amps, &ph, &g).unwrap();
        let y3 = harmonic_synth(&f0, &(&amps * 3.0), &ph, &g).unwrap();
        for (a, b) in y.iter().zip(&y3) {
            assert!((3.0 * a - b).abs() <= 1e-12 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn harmonics_above_nyquist_are_dropped() {
        let n = 3200;
        let t = n / 256 + 1;
        // 3 kHz fundamental: harmonic 2 (6 kHz) fits, harmonic 3 (9 kHz) does not.
        let amps = Array2::from_shape_fn((t, 3), |(_, h)| if h == 2 { 1.0 } else { 0.0 });
        let y = harmonic_synth(&vec![3000.0; t], &amps, &PhaseState::zeros(3), &grid(n)).unwrap();
        assert!(y.iter().all(|&v| v == 0.0));
        let err = harmonic_synth(&[9000.0], &Array2::ones((1, 1)), &PhaseState::zeros(1), &grid(10));
        assert!(matches!(err, Err(BweError::AboveNyquist { .. })));
    }

    #[test]
    fn vjp_matches_finite_differences() {
        let g = SynthGrid::new(8000, 32, 200).unwrap();
        let t = 200 / 32 + 1;
        let f0: Vec<f64> = (0..t).map(|i| 300.0 + 40.0 * i as f64).collect();
        let amps = Array2::from_shape_fn((t, 4), |(i, h)| 0.2 + 0.1 * ((i * 3 + h) % 5) as f64);
        let ph = PhaseState::random(4, 9);
        let w: Vec<f64> = (0..200).map(|n| (0.37 * n as f64).sin()).collect();
        let loss = |f0: &[f64], a: &Array2<f64>| -> f64 {
            harmonic_synth(f0, a, &ph, &g).unwrap().iter().zip(&w).map(|(y, w)| y * w).sum()
        };
        let grads = harmonic_synth_vjp(&f0, &amps, &ph, &g, &w, true).unwrap();
        let eps = 1e-5;
        for idx in [(0, 0), (2, 1), (t - 1, 3), (3, 2)] {
            let (mut p, mut m) = (amps.clone(), amps.clone());
            p[idx] += eps;
            m[idx] -= eps;
            let fd = (loss(&f0, &p) - loss(&f0, &m)) / (2.0 * eps);
            assert!((fd - grads.amps[idx]).abs() <= 1e-7 * (1.0 + fd.abs()), "{idx:?}");
        }
        let gf = grads.f0.unwrap();
        for i in 0..t {
            let (mut p, mut m) = (f0.clone(), f0.clone());
            p[i] += 1e-4;
            m[i] -= 1e-4;
            let fd = (loss(&p, &amps) - loss(&m, &amps)) / 2e-4;
            assert!((fd - gf[i]).abs() <= 1e-5 * (1.0 + fd.abs()), "frame {i}: {fd} vs {}", gf[i]);
        }
    }
}
