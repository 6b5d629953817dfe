//! Harmonic-plus-noise synthesis driven by frame-rate controls.

pub mod envelope;
pub mod filtered_noise;
pub mod harmonic;
pub mod upsample;

use std::f64::consts::TAU;
use std::io::Write;
use std::path::Path;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dsp::noise::white_noise;
use crate::error::{BweError, Result};

pub use envelope::asd_envelope;
pub use filtered_noise::{noise_synth, noise_synth_vjp, FirDesign};
pub use harmonic::{harmonic_synth, harmonic_synth_vjp, HarmonicGrads, SynthGrid};
pub use upsample::{interpolate_linear, upsample_controls};

/// Decoder output for one clip.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlFrames {
    /// `[T x H]` linear amplitude per harmonic.
    pub harmonic_amps: Array2<f64>,
    /// `[T x K]` noise filter magnitudes.
    pub noise_coeffs: Array2<f64>,
    pub hop: usize,
}

impl ControlFrames {
    pub fn new(harmonic_amps: Array2<f64>, noise_coeffs: Array2<f64>, hop: usize) -> Result<Self> {
        if harmonic_amps.nrows() != noise_coeffs.nrows() {
            return Err(BweError::LengthMismatch { left: harmonic_amps.nrows(), right: noise_coeffs.nrows() });
        }
        let mut values = harmonic_amps.iter().chain(noise_coeffs.iter());
        if values.clone().any(|v| !v.is_finite()) {
            return Err(BweError::Numeric("control values are not finite".into()));
        }
        if values.any(|v| *v < 0.0) {
            return Err(BweError::InvalidArgument("control values must be non-negative".into()));
        }
        Ok(Self { harmonic_amps, noise_coeffs, hop })
    }

    pub fn n_frames(&self) -> usize {
        self.harmonic_amps.nrows()
    }

    /// Header `frame,a1..aH,n1..nK`, one row per frame.
    pub fn write_csv<W: Write>(&self, w: &mut W) -> Result<()> {
        let h = self.harmonic_amps.ncols();
        let k = self.noise_coeffs.ncols();
        let mut header = vec!["frame".to_string()];
        header.extend((1..=h).map(|i| format!("a{i}")));
        header.extend((1..=k).map(|i| format!("n{i}")));
        writeln!(w, "{}", header.join(","))?;
        for t in 0..self.n_frames() {
            let mut row = vec![t.to_string()];
            row.extend(self.harmonic_amps.row(t).iter().chain(self.noise_coeffs.row(t)).map(|v| format!("{v:e}")));
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_csv(&mut f)?;
        f.flush()?;
        Ok(())
    }
}

/// Initial oscillator phases, one per harmonic, in `[0, 2 pi)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseState {
    pub initial: Vec<f64>,
}

impl PhaseState {
    pub fn zeros(n_harmonics: usize) -> Self {
        Self { initial: vec![0.0; n_harmonics] }
    }

    pub fn random(n_harmonics: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self { initial: (0..n_harmonics).map(|_| rng.random_range(0.0..TAU)).collect() }
    }
}

// Keeps the noise draw independent of the phase draw for the same seed.
const NOISE_SEED_OFFSET: u64 = 0x6e6f_6973_655f_7331;

/// Harmonic-plus-noise synthesizer bound to one clip: fixed grid, phases and
/// noise draw, so forward and backward passes see identical randomness.
#[derive(Debug, Clone)]
pub struct HpnSynth {
    pub grid: SynthGrid,
    pub design: FirDesign,
    pub phase: PhaseState,
    pub noise: Vec<f64>,
}

/// Gradients of an [`HpnSynth`] output with respect to its controls.
#[derive(Debug, Clone)]
pub struct ControlGrads {
    pub harmonic_amps: Array2<f64>,
    pub noise_coeffs: Array2<f64>,
}

impl HpnSynth {
    pub fn new(grid: SynthGrid, n_harmonics: usize, n_noise: usize, seed: u64) -> Result<Self> {
        Ok(Self {
            grid,
            design: FirDesign::new(n_noise)?,
            phase: PhaseState::random(n_harmonics, seed),
            noise: white_noise(grid.n_samples, seed.wrapping_add(NOISE_SEED_OFFSET)),
        })
    }

    pub fn harmonic(&self, f0: &[f64], amps: &Array2<f64>) -> Result<Vec<f64>> {
        harmonic_synth(f0, amps, &self.phase, &self.grid)
    }

    pub fn noise(&self, coeffs: &Array2<f64>) -> Result<Vec<f64>> {
        noise_synth(coeffs, &self.design, &self.noise, &self.grid)
    }

    /// Sum of the harmonic and noise parts.
    pub fn render(&self, f0: &[f64], controls: &ControlFrames) -> Result<Vec<f64>> {
        let mut y = self.harmonic(f0, &controls.harmonic_amps)?;
        for (a, b) in y.iter_mut().zip(self.noise(&controls.noise_coeffs)?) {
            *a += b;
        }
        Ok(y)
    }

    pub fn render_vjp(&self, f0: &[f64], controls: &ControlFrames, grad_y: &[f64]) -> Result<ControlGrads> {
        let h = harmonic_synth_vjp(f0, &controls.harmonic_amps, &self.phase, &self.grid, grad_y, false)?;
        let n = noise_synth_vjp(&controls.noise_coeffs, &self.design, &self.noise, &self.grid, grad_y)?;
        Ok(ControlGrads { harmonic_amps: h.amps, noise_coeffs: n })
    }
}

/// One-shot harmonic-plus-noise rendering.
pub fn hpn_synth(f0: &[f64], controls: &ControlFrames, sample_rate: u32, n_samples: usize, seed: u64) -> Result<Vec<f64>> {
    let grid = SynthGrid::new(sample_rate, controls.hop, n_samples)?;
    HpnSynth::new(grid, controls.harmonic_amps.ncols(), controls.noise_coeffs.ncols(), seed)?.render(f0, controls)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn controls(t: usize, amp: f64, noise: f64) -> ControlFrames {
        let a = Array2::from_shape_fn((t, 6), |(_, h)| amp / (h + 1) as f64);
        ControlFrames::new(a, Array2::from_elem((t, 17), noise), 256).unwrap()
    }

    #[test]
    fn parts_add_up() {
        let n = 8000;
        let t = n / 256 + 1;
        let f0 = vec![330.0; t];
        let grid = SynthGrid::new(16000, 256, n).unwrap();
        let s = HpnSynth::new(grid, 6, 17, 5).unwrap();
        let only_h = s.render(&f0, &controls(t, 0.5, 0.0)).unwrap();
        assert_eq!(only_h, s.harmonic(&f0, &controls(t, 0.5, 0.0).harmonic_amps).unwrap());
        let only_n = s.render(&f0, &controls(t, 0.0, 0.2)).unwrap();
        assert_eq!(only_n, s.noise(&controls(t, 0.0, 0.2).noise_coeffs).unwrap());
        assert_eq!(hpn_synth(&f0, &controls(t, 0.5, 0.2), 16000, n, 5).unwrap(), s.render(&f0, &controls(t, 0.5, 0.2)).unwrap());
    }

    #[test]
    fn energies_of_uncorrelated_parts_add() {
        let n = 16000;
        let t = n / 256 + 1;
        let f0 = vec![440.0; t];
        let grid = SynthGrid::new(16000, 256, n).unwrap();
        let energy = |x: &[f64]| x.iter().map(|v| v * v).sum::<f64>();
        let (mut sum, mut parts) = (0.0, 0.0);
        for seed in 0..8 {
            let s = HpnSynth::new(grid, 6, 17, seed).unwrap();
            let c = controls(t, 0.4, 0.1);
            sum += energy(&s.render(&f0, &c).unwrap());
            parts += energy(&s.harmonic(&f0, &c.harmonic_amps).unwrap()) + energy(&s.noise(&c.noise_coeffs).unwrap());
        }
        assert!((sum / parts - 1.0).abs() < 0.05);
    }

    #[test]
    fn seeds_are_reproducible() {
        assert_eq!(PhaseState::random(10, 3), PhaseState::random(10, 3));
        assert_ne!(PhaseState::random(10, 3), PhaseState::random(10, 4));
        assert!(PhaseState::random(50, 1).initial.iter().all(|p| (0.0..TAU).contains(p)));
    }

    #[test]
    fn csv_dump_layout() {
        let mut buf = Vec::new();
        controls(2, 1.0, 0.5).write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[0].starts_with("frame,a1,"));
        assert_eq!(lines[1].split(',').count(), 1 + 6 + 17);
        assert!(ControlFrames::new(Array2::from_elem((1, 1), -1.0), Array2::zeros((1, 1)), 4).is_err());
    }
}
