//! Frame-rate to sample-rate control interpolation.
//!
//! Frame `t` sits at sample `t * hop`, matching centered STFT framing.
//! Amplitudes are blended between neighbouring frames with raised-cosine
//! weights (`cos^2`, `sin^2` of the fractional position), which is the same as
//! overlap-adding 50 % Hann windows placed on the frames. Positions past the
//! last frame hold the last value.

use std::f64::consts::FRAC_PI_2;

use ndarray::Array2;

/// Left frame, right frame and fractional position of sample `n`.
#[inline]
pub(crate) fn locate(n: usize, hop: usize, n_frames: usize) -> (usize, usize, f64) {
    let i = n / hop;
    if i + 1 >= n_frames {
        let last = n_frames - 1;
        return (last, last, 0.0);
    }
    (i, i + 1, (n % hop) as f64 / hop as f64)
}

#[inline]
pub(crate) fn raised_cosine(frac: f64) -> (f64, f64) {
    let c = (FRAC_PI_2 * frac).cos();
    let w0 = c * c;
    (w0, 1.0 - w0)
}

/// Smooth amplitude upsampling of every column of `frames` (`[T x C]`).
pub fn upsample_controls(frames: &Array2<f64>, hop: usize, n_samples: usize) -> Array2<f64> {
    let (t, c) = frames.dim();
    let mut out = Array2::zeros((n_samples, c));
    if t == 0 || hop == 0 {
        return out;
    }
    for n in 0..n_samples {
        let (i, j, f) = locate(n, hop, t);
        let (w0, w1) = raised_cosine(f);
        let (a, b) = (frames.row(i), frames.row(j));
        for (k, o) in out.row_mut(n).iter_mut().enumerate() {
            *o = w0 * a[k] + w1 * b[k];
        }
    }
    out
}

/// Transpose of [`upsample_controls`]: maps a sample-rate gradient back onto frames.
pub fn upsample_controls_adjoint(grad: &Array2<f64>, hop: usize, n_frames: usize) -> Array2<f64> {
    let (n_samples, c) = grad.dim();
    let mut out = Array2::zeros((n_frames, c));
    if n_frames == 0 || hop == 0 {
        return out;
    }
    for n in 0..n_samples {
        let (i, j, f) = locate(n, hop, n_frames);
        let (w0, w1) = raised_cosine(f);
        for k in 0..c {
            let g = grad[[n, k]];
            out[[i, k]] += w0 * g;
            out[[j, k]] += w1 * g;
        }
    }
    out
}

/// Linear interpolation of a per-frame contour (used for f0).
pub fn interpolate_linear(frames: &[f64], hop: usize, n_samples: usize) -> Vec<f64> {
    if frames.is_empty() || hop == 0 {
        return vec![0.0; n_samples];
    }
    (0..n_samples)
        .map(|n| {
            let (i, j, f) = locate(n, hop, frames.len());
            (1.0 - f) * frames[i] + f * frames[j]
        })
        .collect()
}

/// Transpose of [`interpolate_linear`].
pub fn interpolate_linear_adjoint(grad: &[f64], hop: usize, n_frames: usize) -> Vec<f64> {
    let mut out = vec![0.0; n_frames];
    if n_frames == 0 || hop == 0 {
        return out;
    }
    for (n, &g) in grad.iter().enumerate() {
        let (i, j, f) = locate(n, hop, n_frames);
        out[i] += (1.0 - f) * g;
        out[j] += f * g;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn constant_frames_stay_constant() {
        let frames = Array2::from_elem((5, 3), 0.7);
        let up = upsample_controls(&frames, 64, 300);
        assert!(up.iter().all(|&v| (v - 0.7).abs() < 1e-15));
        assert!(interpolate_linear(&[220.0; 5], 64, 300).iter().all(|&v| v == 220.0));
    }

    #[test]
    fn ramps_stay_monotone() {
        let frames = Array2::from_shape_fn((8, 1), |(t, _)| t as f64);
        let up = upsample_controls(&frames, 32, 8 * 32);
        assert!(up.column(0).windows(2).into_iter().all(|w| w[1] >= w[0]));
    }

    #[test]
    fn sampling_on_frame_positions_recovers_frames() {
        let frames = Array2::from_shape_fn((20, 2), |(t, c)| (0.3 * t as f64 + c as f64).sin());
        let hop = 16;
        let up = upsample_controls(&frames, hop, 20 * hop);
        for t in 0..20 {
            for c in 0..2 {
                assert!((up[[t * hop, c]] - frames[[t, c]]).abs() < 1e-12);
            }
        }
        // Mid-hop values of a smooth contour stay within 1 % of the
        // midpoint of the neighbouring frames.
        let smooth: Vec<f64> = (0..20).map(|t| 1.0 + 0.05 * (0.2 * t as f64).sin()).collect();
        let fr = Array2::from_shape_vec((20, 1), smooth.clone()).unwrap();
        let up = upsample_controls(&fr, hop, 20 * hop);
        for t in 0..19 {
            let mid = 0.5 * (smooth[t] + smooth[t + 1]);
            assert!((up[[t * hop + hop / 2, 0]] - mid).abs() / mid < 0.01);
        }
    }

    proptest! {
        #[test]
        fn adjoints_match(
            frames in proptest::collection::vec(-1.0f64..1.0, 6),
            grad in proptest::collection::vec(-1.0f64..1.0, 50),
        ) {
            let hop = 10;
            let fr = Array2::from_shape_vec((6, 1), frames.clone()).unwrap();
            let g = Array2::from_shape_vec((50, 1), grad.clone()).unwrap();
            let lhs: f64 = (upsample_controls(&fr, hop, 50) * &g).sum();
            let rhs: f64 = (upsample_controls_adjoint(&g, hop, 6) * &fr).sum();
            prop_assert!((lhs - rhs).abs() < 1e-10);
            let lhs: f64 = interpolate_linear(&frames, hop, 50).iter().zip(&grad).map(|(a, b)| a * b).sum();
            let rhs: f64 = interpolate_linear_adjoint(&grad, hop, 6).iter().zip(&frames).map(|(a, b)| a * b).sum();
            prop_assert!((lhs - rhs).abs() < 1e-10);
        }
    }
}
