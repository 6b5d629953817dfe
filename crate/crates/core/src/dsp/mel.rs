//! Mel filterbank and MFCC features.

use std::f64::consts::PI;

use ndarray::Array2;

use super::audio::AudioBuffer;
use super::stft::{StftPlan, Window};
use crate::error::{BweError, Result};

/// Floor applied before every log.
pub const LOG_FLOOR: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq)]
pub struct MfccConfig {
    pub n_coeffs: usize,
    pub n_mels: usize,
    pub fmin: f64,
    pub fmax: f64,
    pub fft_size: usize,
    pub overlap: f64,
}

impl Default for MfccConfig {
    fn default() -> Self {
        Self { n_coeffs: 30, n_mels: 128, fmin: 20.0, fmax: 8000.0, fft_size: 1024, overlap: 0.75 }
    }
}

impl MfccConfig {
    pub fn hop(&self) -> usize {
        ((self.fft_size as f64) * (1.0 - self.overlap)).round().max(1.0) as usize
    }
}

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular HTK-style filters with unit peak, `[n_mels x n_bins]`.
pub fn mel_filterbank(n_mels: usize, fft_size: usize, sample_rate: u32, fmin: f64, fmax: f64) -> Array2<f64> {
    let n_bins = fft_size / 2 + 1;
    let lo = hz_to_mel(fmin);
    let hi = hz_to_mel(fmax);
    let edges: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (n_mels + 1) as f64))
        .collect();
    let bin_hz = sample_rate as f64 / fft_size as f64;
    let mut fb = Array2::zeros((n_mels, n_bins));
    for m in 0..n_mels {
        let (left, center, right) = (edges[m], edges[m + 1], edges[m + 2]);
        for k in 0..n_bins {
            let f = k as f64 * bin_hz;
            let w = if f > left && f <= center {
                (f - left) / (center - left)
            } else if f > center && f < right {
                (right - f) / (right - center)
            } else {
                0.0
            };
            fb[[m, k]] = w;
        }
    }
    fb
}

/// Orthonormal DCT-II matrix `[n_out x n_in]`.
pub fn dct2_matrix(n_out: usize, n_in: usize) -> Array2<f64> {
    let mut d = Array2::zeros((n_out, n_in));
    for k in 0..n_out {
        let scale = if k == 0 { (1.0 / n_in as f64).sqrt() } else { (2.0 / n_in as f64).sqrt() };
        for n in 0..n_in {
            d[[k, n]] = scale * (PI * k as f64 * (n as f64 + 0.5) / n_in as f64).cos();
        }
    }
    d
}

/// Per-frame DCT-II of log mel energies, `[T x n_coeffs]`.
pub fn mfcc(x: &AudioBuffer, cfg: &MfccConfig) -> Result<Array2<f64>> {
    let nyquist = x.nyquist();
    if cfg.fmax > nyquist + 1e-9 {
        return Err(BweError::AboveNyquist { freq_hz: cfg.fmax, nyquist_hz: nyquist });
    }
    if cfg.fmin < 0.0 || cfg.fmin >= cfg.fmax {
        return Err(BweError::InvalidArgument("mfcc needs 0 <= fmin < fmax".into()));
    }
    if cfg.n_coeffs > cfg.n_mels {
        return Err(BweError::InvalidArgument("more cepstral coefficients than mel bands".into()));
    }
    if x.is_empty() {
        return Err(BweError::InvalidArgument("mfcc of an empty signal".into()));
    }
    let plan = StftPlan::new(cfg.fft_size, cfg.hop(), Window::Hann)?;
    let spec = plan.analyze(x.samples());
    let norm = 1.0 / (cfg.fft_size as f64 * plan.window().iter().map(|w| w * w).sum::<f64>());
    let power = spec.mapv(|c| c.norm_sqr() * norm);
    let fb = mel_filterbank(cfg.n_mels, cfg.fft_size, x.sample_rate(), cfg.fmin, cfg.fmax);
    let mel = power.dot(&fb.t()).mapv(|v| v.max(LOG_FLOOR).ln());
    let dct = dct2_matrix(cfg.n_coeffs, cfg.n_mels);
    Ok(mel.dot(&dct.t()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn shape_for_four_seconds() {
        let x = AudioBuffer::zeros(64000, 16000);
        let m = mfcc(&x, &MfccConfig::default()).unwrap();
        assert_eq!(m.dim(), (250, 30));
    }

    #[test]
    fn silence_gives_constant_vectors() {
        let x = AudioBuffer::zeros(8000, 16000);
        let m = mfcc(&x, &MfccConfig::default()).unwrap();
        for row in m.outer_iter() {
            for (a, b) in row.iter().zip(m.row(0).iter()) {
                assert_eq!(a, b);
            }
        }
        // Constant log-mel only feeds the 0th coefficient.
        assert!(m[[0, 0]] < 0.0);
        assert!(m.row(0).iter().skip(1).all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn rejects_fmax_above_nyquist() {
        let x = AudioBuffer::zeros(8000, 8000);
        assert!(matches!(mfcc(&x, &MfccConfig::default()), Err(BweError::AboveNyquist { .. })));
    }

    /// Brute-force oracle: naive DFT, explicit triangle evaluation and DCT sums.
    fn oracle_c1(x: &[f64], frame_center: usize) -> f64 {
        let n = 1024;
        let start = frame_center - n / 2;
        let w: Vec<f64> = (0..n).map(|j| 0.5 - 0.5 * (2.0 * PI * j as f64 / n as f64).cos()).collect();
        let wsum: f64 = w.iter().map(|v| v * v).sum();
        let power: Vec<f64> = (0..=n / 2)
            .map(|k| {
                let (mut re, mut im) = (0.0, 0.0);
                for j in 0..n {
                    let a = -2.0 * PI * (j * k) as f64 / n as f64;
                    re += x[start + j] * w[j] * a.cos();
                    im += x[start + j] * w[j] * a.sin();
                }
                (re * re + im * im) / (n as f64 * wsum)
            })
            .collect();
        let (lo, hi) = (hz_to_mel(20.0), hz_to_mel(8000.0));
        let logmel: Vec<f64> = (0..128)
            .map(|m| {
                let e = |i: usize| mel_to_hz(lo + (hi - lo) * i as f64 / 129.0);
                let (l, c, r) = (e(m), e(m + 1), e(m + 2));
                let mut acc = 0.0;
                for (k, p) in power.iter().enumerate() {
                    let f = k as f64 * 16000.0 / n as f64;
                    let tri = if f > l && f <= c {
                        (f - l) / (c - l)
                    } else if f > c && f < r {
                        (r - f) / (r - c)
                    } else {
                        0.0
                    };
                    acc += tri * p;
                }
                acc.max(LOG_FLOOR).ln()
            })
            .collect();
        (2.0f64 / 128.0).sqrt()
            * logmel.iter().enumerate().map(|(i, v)| v * (PI * (i as f64 + 0.5) / 128.0).cos()).sum::<f64>()
    }

    #[test]
    fn noise_and_low_sine_have_opposite_tilt() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let noise: Vec<f64> = (0..8000).map(|_| rng.random_range(-0.5..0.5)).collect();
        let sine: Vec<f64> = (0..8000).map(|n| 0.5 * (2.0 * PI * 200.0 * n as f64 / 16000.0).sin()).collect();
        let cfg = MfccConfig::default();
        let m_noise = mfcc(&AudioBuffer::new(noise.clone(), 16000).unwrap(), &cfg).unwrap();
        let m_sine = mfcc(&AudioBuffer::new(sine.clone(), 16000).unwrap(), &cfg).unwrap();
        let (on, os) = (oracle_c1(&noise, 10 * 256), oracle_c1(&sine, 10 * 256));
        assert!((m_noise[[10, 1]] - on).abs() < 1e-6 * on.abs().max(1.0));
        assert!((m_sine[[10, 1]] - os).abs() < 1e-6 * os.abs().max(1.0));
        assert!(on.signum() != os.signum(), "noise c1 {on}, sine c1 {os}");
    }
}
