//! Centered short-time Fourier transform with reflect padding and a
//! normalized overlap-add inverse.
//!
//! Frame `t` is centered on sample `t * hop`; a signal of `n` samples yields
//! `ceil(n / hop)` frames. The inverse divides by the summed squared window
//! actually present at each output sample, so any window/hop pair that passes
//! the overlap-add check reconstructs exactly.

use std::f64::consts::PI;
use std::sync::Arc;

use ndarray::Array2;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use super::audio::AudioBuffer;
use crate::error::{BweError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Window {
    /// Periodic Hann.
    Hann,
    Rectangular,
}

impl Window {
    pub fn coefficients(self, len: usize) -> Vec<f64> {
        match self {
            Window::Hann => (0..len)
                .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / len as f64).cos())
                .collect(),
            Window::Rectangular => vec![1.0; len],
        }
    }
}

/// Complex STFT frames `[T x (fft_size / 2 + 1)]` plus the analysis parameters.
#[derive(Debug, Clone)]
pub struct Spectrogram {
    pub frames: Array2<Complex64>,
    pub fft_size: usize,
    pub hop: usize,
    pub window: Window,
    pub sample_rate: u32,
    /// Length of the analysed signal, used by the inverse.
    pub signal_len: usize,
}

impl Spectrogram {
    pub fn n_frames(&self) -> usize {
        self.frames.nrows()
    }

    pub fn n_bins(&self) -> usize {
        self.frames.ncols()
    }

    pub fn magnitude(&self) -> Array2<f64> {
        self.frames.mapv(|c| c.norm())
    }

    pub fn power(&self) -> Array2<f64> {
        self.frames.mapv(|c| c.norm_sqr())
    }

    pub fn bin_hz(&self) -> f64 {
        self.sample_rate as f64 / self.fft_size as f64
    }

    /// Copy with new frame data and the same analysis parameters.
    pub fn with_frames(&self, frames: Array2<Complex64>) -> Self {
        Self { frames, ..self.clone() }
    }
}

/// Number of frames produced for a signal of `len` samples.
pub fn frame_count(len: usize, hop: usize) -> usize {
    len.div_ceil(hop)
}

/// Mirror an out-of-range index back into `[0, len)` (numpy "reflect" mode,
/// repeated as often as needed).
pub fn reflect_index(p: isize, len: usize) -> usize {
    if len == 1 {
        return 0;
    }
    let period = 2 * (len as isize - 1);
    let mut q = p.rem_euclid(period);
    if q >= len as isize {
        q = period - q;
    }
    q as usize
}

/// Reusable FFT plans and window for one `(fft_size, hop, window)` triple.
#[derive(Clone)]
pub struct StftPlan {
    fft_size: usize,
    hop: usize,
    window_kind: Window,
    window: Vec<f64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for StftPlan {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("StftPlan")
            .field("fft_size", &self.fft_size)
            .field("hop", &self.hop)
            .field("window", &self.window_kind)
            .finish()
    }
}

impl StftPlan {
    pub fn new(fft_size: usize, hop: usize, window: Window) -> Result<Self> {
        if fft_size < 2 || !fft_size.is_power_of_two() {
            return Err(BweError::InvalidArgument(format!(
                "fft size {fft_size} must be a power of two"
            )));
        }
        if hop == 0 || hop > fft_size {
            return Err(BweError::NotCola { fft_size, hop });
        }
        let coeffs = window.coefficients(fft_size);
        // Nonzero overlap-add of the squared window at every phase.
        let mut sums = vec![0.0; hop];
        for (j, w) in coeffs.iter().enumerate() {
            sums[j % hop] += w * w;
        }
        let max = sums.iter().cloned().fold(0.0, f64::max);
        if sums.iter().any(|&s| s <= 1e-10 * max.max(1e-300)) {
            return Err(BweError::NotCola { fft_size, hop });
        }
        let mut planner = FftPlanner::new();
        Ok(Self {
            fft_size,
            hop,
            window_kind: window,
            window: coeffs,
            forward: planner.plan_fft_forward(fft_size),
            inverse: planner.plan_fft_inverse(fft_size),
        })
    }

    pub fn fft_size(&self) -> usize {
        self.fft_size
    }

    pub fn hop(&self) -> usize {
        self.hop
    }

    pub fn n_bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    pub fn window(&self) -> &[f64] {
        &self.window
    }

    fn frame_start(&self, t: usize) -> isize {
        (t * self.hop) as isize - (self.fft_size / 2) as isize
    }

    /// Forward transform of raw samples.
    pub fn analyze(&self, x: &[f64]) -> Array2<Complex64> {
        let n = self.fft_size;
        let k = self.n_bins();
        let t_count = frame_count(x.len(), self.hop);
        let mut out = Array2::zeros((t_count, k));
        if x.is_empty() {
            return out;
        }
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        let mut scratch = vec![Complex64::new(0.0, 0.0); self.forward.get_inplace_scratch_len()];
        for t in 0..t_count {
            let start = self.frame_start(t);
            for j in 0..n {
                let p = start + j as isize;
                let s = if p >= 0 && (p as usize) < x.len() {
                    x[p as usize]
                } else {
                    x[reflect_index(p, x.len())]
                };
                buf[j] = Complex64::new(s * self.window[j], 0.0);
            }
            self.forward.process_with_scratch(&mut buf, &mut scratch);
            for (dst, src) in out.row_mut(t).iter_mut().zip(&buf[..k]) {
                *dst = *src;
            }
        }
        out
    }

    /// Inverse real DFT of one one-sided spectrum (imaginary parts of DC and
    /// Nyquist are ignored), unnormalized by `1/N` on purpose: callers scale.
    fn inverse_real(&self, spec: &[Complex64], buf: &mut [Complex64], scratch: &mut [Complex64]) {
        let n = self.fft_size;
        let half = n / 2;
        buf[0] = Complex64::new(spec[0].re, 0.0);
        buf[half] = Complex64::new(spec[half].re, 0.0);
        for k in 1..half {
            buf[k] = spec[k];
            buf[n - k] = spec[k].conj();
        }
        self.inverse.process_with_scratch(buf, scratch);
    }

    /// Normalized overlap-add inverse producing `len` samples.
    pub fn synthesize(&self, frames: &Array2<Complex64>, len: usize) -> Vec<f64> {
        let n = self.fft_size;
        let mut out = vec![0.0; len];
        let mut weight = vec![0.0; len];
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        let mut scratch = vec![Complex64::new(0.0, 0.0); self.inverse.get_inplace_scratch_len()];
        let spec_row = &mut vec![Complex64::new(0.0, 0.0); self.n_bins()];
        let scale = 1.0 / n as f64;
        for (t, row) in frames.outer_iter().enumerate() {
            for (d, s) in spec_row.iter_mut().zip(row.iter()) {
                *d = *s;
            }
            self.inverse_real(spec_row, &mut buf, &mut scratch);
            let start = self.frame_start(t);
            for j in 0..n {
                let p = start + j as isize;
                if p < 0 || p as usize >= len {
                    continue;
                }
                let w = self.window[j];
                out[p as usize] += buf[j].re * scale * w;
                weight[p as usize] += w * w;
            }
        }
        for (o, w) in out.iter_mut().zip(&weight) {
            if *w > 1e-12 {
                *o /= *w;
            } else {
                *o = 0.0;
            }
        }
        out
    }

    /// Vector-Jacobian product of [`analyze`](Self::analyze).
    ///
    /// `grad` holds dL/dRe in the real part and dL/dIm in the imaginary part
    /// of each bin. Returns dL/dx for a signal of length `len`, folding the
    /// reflect padding back onto the samples it was copied from.
    pub fn analyze_adjoint(&self, grad: &Array2<Complex64>, len: usize) -> Vec<f64> {
        let n = self.fft_size;
        let half = n / 2;
        let mut out = vec![0.0; len];
        if len == 0 {
            return out;
        }
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        let mut scratch = vec![Complex64::new(0.0, 0.0); self.inverse.get_inplace_scratch_len()];
        let mut spec = vec![Complex64::new(0.0, 0.0); self.n_bins()];
        for (t, row) in grad.outer_iter().enumerate() {
            // d/df_j = Re(sum_k g_k e^{+i 2 pi jk/N}); the Hermitian inverse
            // doubles interior bins, so halve them first.
            for (k, (d, g)) in spec.iter_mut().zip(row.iter()).enumerate() {
                *d = if k == 0 || k == half { *g } else { *g * 0.5 };
            }
            self.inverse_real(&spec, &mut buf, &mut scratch);
            let start = self.frame_start(t);
            for j in 0..n {
                let p = start + j as isize;
                let idx = if p >= 0 && (p as usize) < len {
                    p as usize
                } else {
                    reflect_index(p, len)
                };
                out[idx] += buf[j].re * self.window[j];
            }
        }
        out
    }
}

pub fn stft(x: &AudioBuffer, fft_size: usize, hop: usize, window: Window) -> Result<Spectrogram> {
    if x.is_empty() {
        return Err(BweError::InvalidArgument("stft of an empty signal".into()));
    }
    let plan = StftPlan::new(fft_size, hop, window)?;
    Ok(Spectrogram {
        frames: plan.analyze(x.samples()),
        fft_size,
        hop,
        window,
        sample_rate: x.sample_rate(),
        signal_len: x.len(),
    })
}

pub fn istft(s: &Spectrogram) -> Result<AudioBuffer> {
    let plan = StftPlan::new(s.fft_size, s.hop, s.window)?;
    if s.n_bins() != plan.n_bins() {
        return Err(BweError::Shape(format!(
            "spectrogram has {} bins, fft size {} needs {}",
            s.n_bins(),
            s.fft_size,
            plan.n_bins()
        )));
    }
    AudioBuffer::new(plan.synthesize(&s.frames, s.signal_len), s.sample_rate)
}
