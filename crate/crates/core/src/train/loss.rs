//! Multi-scale spectral loss and log-spectral distance.

use ndarray::Array2;
use rustfft::num_complex::Complex64;

use crate::dsp::band::cutoff_bin;
use crate::dsp::stft::{StftPlan, Window};
use crate::dsp::AudioBuffer;
use crate::error::{BweError, Result};

/// Floor applied before every logarithm.
pub const LOG_EPS: f64 = 1e-7;

pub const DEFAULT_MSS_FFT_SIZES: [usize; 6] = [2048, 1024, 512, 256, 128, 64];

/// Sum over scales of mean L1 magnitude distance plus mean L1 log-magnitude
/// distance, optionally restricted to bins at or above a cutoff. Each scale
/// uses a Hann window with hop `fft_size / 4`.
#[derive(Debug, Clone)]
pub struct MssLoss {
    scales: Vec<(StftPlan, usize)>,
    sample_rate: u32,
}

impl MssLoss {
    pub fn new(fft_sizes: &[usize], cutoff_hz: Option<f64>, sample_rate: u32) -> Result<Self> {
        if fft_sizes.is_empty() {
            return Err(BweError::InvalidArgument("no MSS fft sizes".into()));
        }
        let scales = fft_sizes
            .iter()
            .map(|&n| {
                if !n.is_power_of_two() || n < 8 {
                    return Err(BweError::InvalidArgument(format!("MSS fft size {n} is not a power of two >= 8")));
                }
                let plan = StftPlan::new(n, n / 4, Window::Hann)?;
                let k0 = cutoff_hz.map_or(0, |c| cutoff_bin(c, n, sample_rate));
                Ok((plan, k0.min(n / 2 + 1)))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { scales, sample_rate })
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn loss(&self, target: &AudioBuffer, pred: &AudioBuffer) -> Result<f64> {
        target.check_compatible(pred)?;
        Ok(self.eval(target.samples(), pred.samples(), false)?.0)
    }

    /// Loss and its gradient with respect to `pred`.
    pub fn loss_and_grad(&self, target: &[f64], pred: &[f64]) -> Result<(f64, Vec<f64>)> {
        let (l, g) = self.eval(target, pred, true)?;
        Ok((l, g.expect("gradient requested")))
    }

    fn eval(&self, target: &[f64], pred: &[f64], want_grad: bool) -> Result<(f64, Option<Vec<f64>>)> {
        if target.len() != pred.len() {
            return Err(BweError::LengthMismatch { left: target.len(), right: pred.len() });
        }
        let n = pred.len();
        let mut total = 0.0;
        let mut grad = want_grad.then(|| vec![0.0; n]);
        for (plan, k0) in &self.scales {
            let yt = plan.analyze(target);
            let yp = plan.analyze(pred);
            let (t, bins) = yp.dim();
            let used = (bins - k0) * t;
            if used == 0 {
                continue;
            }
            let inv = 1.0 / used as f64;
            let mut g = want_grad.then(|| Array2::<Complex64>::zeros((t, bins)));
            let mut lin = 0.0;
            let mut log = 0.0;
            for r in 0..t {
                for k in *k0..bins {
                    let a = yt[[r, k]].norm();
                    let zp = yp[[r, k]];
                    let b = zp.norm();
                    let la = a.max(LOG_EPS).ln();
                    let lb = b.max(LOG_EPS).ln();
                    lin += (b - a).abs();
                    log += (lb - la).abs();
                    if let Some(g) = g.as_mut() {
                        let mut d = sign(b - a);
                        if b > LOG_EPS {
                            d += sign(lb - la) / b;
                        }
                        if b > 0.0 {
                            g[[r, k]] = zp * (d * inv / b);
                        }
                    }
                }
            }
            total += (lin + log) * inv;
            if let (Some(g), Some(acc)) = (g, grad.as_mut()) {
                for (o, v) in acc.iter_mut().zip(plan.analyze_adjoint(&g, n)) {
                    *o += v;
                }
            }
        }
        Ok((total, grad))
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

pub const LSD_FFT_SIZE: usize = 1024;
pub const LSD_HOP: usize = 256;

/// Frame-averaged RMS difference of log10 power spectra.
///
/// With `literal` set the inner square is dropped and the square root is
/// taken of the absolute mean difference instead.
pub fn lsd_with(target: &AudioBuffer, est: &AudioBuffer, literal: bool) -> Result<f64> {
    target.check_compatible(est)?;
    if target.is_empty() {
        return Err(BweError::InvalidArgument("LSD of empty signals".into()));
    }
    let plan = StftPlan::new(LSD_FFT_SIZE, LSD_HOP, Window::Hann)?;
    let a = plan.analyze(target.samples());
    let b = plan.analyze(est.samples());
    let (t, k) = a.dim();
    let mut sum = 0.0;
    for r in 0..t {
        let mut acc = 0.0;
        for c in 0..k {
            let d = a[[r, c]].norm_sqr().max(LOG_EPS).log10() - b[[r, c]].norm_sqr().max(LOG_EPS).log10();
            acc += if literal { d } else { d * d };
        }
        sum += (acc / k as f64).abs().sqrt();
    }
    Ok(sum / t as f64)
}

pub fn lsd(target: &AudioBuffer, est: &AudioBuffer) -> Result<f64> {
    lsd_with(target, est, false)
}
