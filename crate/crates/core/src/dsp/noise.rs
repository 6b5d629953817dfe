//! Noise sources and SNR mixing.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use super::audio::AudioBuffer;
use crate::error::{BweError, Result};

/// Pink (1/f power) noise with unit RMS, shaped in the frequency domain.
pub fn pink_noise(n_samples: usize, sample_rate: u32, seed: u64) -> Result<AudioBuffer> {
    if n_samples == 0 {
        return Err(BweError::InvalidArgument("pink noise needs at least one sample".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = n_samples;
    let mut spec = vec![Complex64::new(0.0, 0.0); n];
    for (k, bin) in spec.iter_mut().enumerate().take(n / 2 + 1).skip(1) {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        *bin = Complex64::new(re, im) / (k as f64).sqrt();
    }
    for k in 1..n.div_ceil(2) {
        spec[n - k] = spec[k].conj();
    }
    if n.is_multiple_of(2) && n > 1 {
        spec[n / 2] = Complex64::new(spec[n / 2].re, 0.0);
    }
    let fft = FftPlanner::new().plan_fft_inverse(n);
    fft.process(&mut spec);
    let mut out: Vec<f64> = spec.iter().map(|c| c.re).collect();
    let rms = (out.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
    if rms > 0.0 {
        out.iter_mut().for_each(|v| *v /= rms);
    }
    AudioBuffer::new(out, sample_rate)
}

/// Unit-variance uniform white noise.
pub fn white_noise(n_samples: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = 3f64.sqrt();
    (0..n_samples).map(|_| rng.random_range(-1.0..1.0) * scale).collect()
}

/// `signal + g * noise` with `g` chosen so the power ratio equals `snr_db`.
/// An infinite SNR returns the signal unchanged.
pub fn mix_at_snr(signal: &AudioBuffer, noise: &AudioBuffer, snr_db: f64) -> Result<AudioBuffer> {
    signal.check_compatible(noise)?;
    if snr_db == f64::INFINITY {
        return Ok(signal.clone());
    }
    let ps = signal.power();
    if ps <= 0.0 {
        return Err(BweError::InvalidArgument("signal has zero power".into()));
    }
    let pn = noise.power();
    if pn <= 0.0 {
        return Err(BweError::InvalidArgument("noise has zero power".into()));
    }
    let gain = (ps / (pn * 10f64.powf(snr_db / 10.0))).sqrt();
    signal.add(&noise.scaled(gain))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Welch PSD with Hann segments; returns (freq, power) pairs.
    fn welch(x: &[f64], seg: usize, sr: f64) -> Vec<(f64, f64)> {
        let w: Vec<f64> = (0..seg)
            .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / seg as f64).cos())
            .collect();
        let fft = FftPlanner::new().plan_fft_forward(seg);
        let mut acc = vec![0.0; seg / 2 + 1];
        let mut count = 0;
        let mut start = 0;
        while start + seg <= x.len() {
            let mut buf: Vec<Complex64> = (0..seg).map(|j| Complex64::new(x[start + j] * w[j], 0.0)).collect();
            fft.process(&mut buf);
            for (a, c) in acc.iter_mut().zip(&buf) {
                *a += c.norm_sqr();
            }
            count += 1;
            start += seg / 2;
        }
        acc.iter().enumerate().map(|(k, p)| (k as f64 * sr / seg as f64, p / count as f64)).collect()
    }

    #[test]
    fn deterministic_and_unit_rms() {
        let a = pink_noise(10000, 16000, 42).unwrap();
        let b = pink_noise(10000, 16000, 42).unwrap();
        assert_eq!(a.samples(), b.samples());
        assert!((a.power().sqrt() - 1.0).abs() < 1e-12);
        assert_ne!(pink_noise(10000, 16000, 43).unwrap().samples(), a.samples());
    }

    #[test]
    fn psd_slope_is_minus_ten_db_per_decade() {
        let x = pink_noise(16000 * 30, 16000, 7).unwrap();
        let psd = welch(x.samples(), 4096, 16000.0);
        let pts: Vec<(f64, f64)> = psd
            .iter()
            .filter(|(f, _)| *f >= 100.0 && *f <= 6000.0)
            .map(|(f, p)| (f.log10(), 10.0 * p.log10()))
            .collect();
        let n = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let slope = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>()
            / pts.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>();
        assert!((slope + 10.0).abs() <= 1.5, "slope {slope}");
    }

    #[test]
    fn snr_mixing() {
        let s = AudioBuffer::new((0..1000).map(|i| (i as f64 * 0.1).sin()).collect(), 16000).unwrap();
        let n = pink_noise(1000, 16000, 1).unwrap();
        for snr in [0.0, 10.0] {
            let m = mix_at_snr(&s, &n, snr).unwrap();
            let noise_part: Vec<f64> = m.samples().iter().zip(s.samples()).map(|(a, b)| a - b).collect();
            let pn = noise_part.iter().map(|v| v * v).sum::<f64>() / 1000.0;
            let ratio = s.power() / pn;
            assert!((ratio - 10f64.powf(snr / 10.0)).abs() < 1e-9);
        }
        assert_eq!(mix_at_snr(&s, &n, f64::INFINITY).unwrap(), s);
        assert!(mix_at_snr(&AudioBuffer::zeros(1000, 16000), &n, 10.0).is_err());
    }

    #[test]
    fn white_noise_has_unit_variance() {
        let w = white_noise(200_000, 3);
        let var = w.iter().map(|v| v * v).sum::<f64>() / w.len() as f64;
        assert!((var - 1.0).abs() < 0.02);
    }
}
