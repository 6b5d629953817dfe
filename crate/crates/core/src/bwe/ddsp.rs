//! DDSP pipelines: monophonic, noise-only, cyclic and polyphonic.

use std::io::Write;
use std::path::Path;

use ndarray::Array2;
use rustfft::num_complex::Complex64;

use super::combine_bands;
use crate::controller::{extract_features, Features, Model, Variant};
use crate::dsp::band::{cutoff_bin, BAND_FFT_SIZE, BAND_HOP};
use crate::dsp::stft::{StftPlan, Window};
use crate::dsp::AudioBuffer;
use crate::error::{BweError, Result};
use crate::pitch::{MultiPitchTrack, PitchSource, PitchTrack};
use crate::synth::{HpnSynth, PhaseState, SynthGrid};

/// Full-band synthesizer output split into its parts.
#[derive(Debug, Clone)]
pub struct Rendered {
    pub harmonic: Vec<f64>,
    pub noise: Vec<f64>,
}

impl Rendered {
    pub fn sum(&self) -> Vec<f64> {
        self.harmonic.iter().zip(&self.noise).map(|(a, b)| a + b).collect()
    }
}

fn synth_for(model: &Model, n: usize, seed: u64) -> Result<HpnSynth> {
    let grid = SynthGrid::new(model.cfg.sample_rate, model.cfg.hop, n)?;
    HpnSynth::new(grid, model.cfg.n_harmonics, model.cfg.n_noise, seed)
}

fn check_frames(feats: &Features, f0: &PitchTrack) -> Result<()> {
    if f0.len() != feats.n_frames() {
        return Err(BweError::LengthMismatch { left: f0.len(), right: feats.n_frames() });
    }
    Ok(())
}

/// Run a mono-dec or noise-only model on `x` and synthesize the full band.
/// The decoder sees the held f0 contour; the oscillators follow the raw one.
pub fn render_mono(model: &Model, x: &AudioBuffer, f0: &PitchTrack, seed: u64) -> Result<Rendered> {
    let feats = extract_features(x, &model.cfg)?;
    let z = model.encode(&feats)?;
    let synth = synth_for(model, x.len(), seed)?;
    match model.variant() {
        Variant::MonoDec => {
            check_frames(&feats, f0)?;
            let c = model.decode_mono(&z, &f0.held(), &feats.loudness)?;
            Ok(Rendered { harmonic: synth.harmonic(&f0.f0, &c.harmonic_amps)?, noise: synth.noise(&c.noise_coeffs)? })
        }
        Variant::NoiseOnly => {
            let c = model.decode_noise(&z, &feats.loudness)?;
            Ok(Rendered { harmonic: vec![0.0; x.len()], noise: synth.noise(&c.noise_coeffs)? })
        }
        Variant::PolyDec => Err(BweError::VariantMismatch {
            expected: "mono_dec or noise_only".into(),
            found: Variant::PolyDec.to_string(),
        }),
    }
}

/// Run a poly-dec model; voice `i` uses oscillator phases seeded with `seed + i`.
pub fn render_poly(model: &Model, x: &AudioBuffer, tracks: &MultiPitchTrack, seed: u64) -> Result<Rendered> {
    let feats = extract_features(x, &model.cfg)?;
    let z = model.encode(&feats)?;
    if let Some(t) = tracks.tracks.first() {
        check_frames(&feats, t)?;
    }
    let held = MultiPitchTrack { tracks: tracks.tracks.iter().map(PitchTrack::held).collect(), max_voices: tracks.max_voices };
    let c = model.decode_poly(&z, &held, &feats.loudness)?;
    let mut synth = synth_for(model, x.len(), seed)?;
    let mut harmonic = vec![0.0; x.len()];
    for (i, track) in tracks.tracks.iter().enumerate() {
        synth.phase = PhaseState::random(model.cfg.n_harmonics, seed.wrapping_add(i as u64));
        for (a, b) in harmonic.iter_mut().zip(synth.harmonic(&track.f0, &c.harmonic_amps[i])?) {
            *a += b;
        }
    }
    Ok(Rendered { harmonic, noise: synth.noise(&c.noise_coeffs)? })
}

fn finish(x_lb: &AudioBuffer, y: Vec<f64>, cutoff_hz: f64) -> Result<AudioBuffer> {
    combine_bands(x_lb, &AudioBuffer::new(y, x_lb.sample_rate())?, cutoff_hz)
}

pub fn bwe_ddsp_mono(x_lb: &AudioBuffer, model: &Model, pitch: &PitchSource, seed: u64) -> Result<AudioBuffer> {
    let f0 = match model.variant() {
        Variant::NoiseOnly => PitchTrack::unvoiced(0, model.cfg.hop, x_lb.sample_rate()),
        _ => pitch.mono(x_lb, model.cfg.hop)?,
    };
    let y = render_mono(model, x_lb, &f0, seed)?;
    finish(x_lb, y.sum(), model.cfg.cutoff_hz)
}

pub fn bwe_ddsp_poly(x_lb: &AudioBuffer, model: &Model, pitch: &PitchSource, seed: u64) -> Result<AudioBuffer> {
    if model.variant() != Variant::PolyDec {
        return Err(BweError::VariantMismatch { expected: Variant::PolyDec.to_string(), found: model.variant().to_string() });
    }
    let tracks = pitch.multi(x_lb, model.cfg.max_voices, model.cfg.hop)?.sorted_by_pitch_desc();
    let y = render_poly(model, x_lb, &tracks, seed)?;
    finish(x_lb, y.sum(), model.cfg.cutoff_hz)
}

/// Loop state of the cyclic pipeline between iterations.
#[derive(Debug, Clone)]
pub struct CyclicState {
    /// 1-based index of the next iteration.
    pub iteration: usize,
    /// Low-band residual magnitude `[T x bins]`, never negative.
    pub residual_mag: Array2<f64>,
    /// Sum of the harmonic outputs so far.
    pub harmonic: Vec<f64>,
    /// Noise output of the latest iteration.
    pub noise: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct CyclicReport {
    pub iterations: usize,
    /// L1 norm of the residual magnitude before iteration 1 and after each
    /// iteration.
    pub residual_l1: Vec<f64>,
    /// Residual magnitudes, same indexing, when requested.
    pub residuals: Vec<Array2<f64>>,
}

impl CyclicReport {
    /// One CSV per residual (`<prefix>_<i>.csv`): a row per frame, a column per bin.
    pub fn write_residual_csvs(&self, dir: &Path, prefix: &str) -> Result<()> {
        for (i, r) in self.residuals.iter().enumerate() {
            let mut f = std::io::BufWriter::new(std::fs::File::create(dir.join(format!("{prefix}_{i}.csv")))?);
            let header: Vec<String> = (0..r.ncols()).map(|k| format!("bin{k}")).collect();
            writeln!(f, "frame,{}", header.join(","))?;
            for (t, row) in r.outer_iter().enumerate() {
                let vals: Vec<String> = row.iter().map(|v| v.to_string()).collect();
                writeln!(f, "{t},{}", vals.join(","))?;
            }
            f.flush()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct CyclicOptions {
    pub iterations: usize,
    pub seed: u64,
    pub keep_residuals: bool,
}

impl Default for CyclicOptions {
    fn default() -> Self {
        Self { iterations: 5, seed: 0, keep_residuals: false }
    }
}

/// Iteratively explain the low band one voice at a time with a mono model.
///
/// Iteration `i` runs the model on the residual with track `i`, subtracts
/// the low-band magnitude of its output from the residual (clamped at 0,
/// phase kept) and accumulates its harmonic part. The noise part of the last
/// iteration is added once at the end.
pub fn bwe_ddsp_cyclic(
    x_lb: &AudioBuffer,
    model: &Model,
    pitch: &PitchSource,
    opts: &CyclicOptions,
) -> Result<(AudioBuffer, CyclicReport)> {
    if model.variant() != Variant::MonoDec {
        return Err(BweError::VariantMismatch { expected: Variant::MonoDec.to_string(), found: model.variant().to_string() });
    }
    if opts.iterations == 0 {
        return Err(BweError::InvalidArgument("cyclic pipeline needs at least one iteration".into()));
    }
    let hop = model.cfg.hop;
    let sr = x_lb.sample_rate();
    let tracks = pitch.multi(x_lb, opts.iterations, hop)?;
    let plan = StftPlan::new(BAND_FFT_SIZE, BAND_HOP, Window::Hann)?;
    let kc = cutoff_bin(model.cfg.cutoff_hz, BAND_FFT_SIZE, sr).min(plan.n_bins());
    let x_spec = plan.analyze(x_lb.samples());
    let phase = x_spec.mapv(|c| if c.norm() > 0.0 { c / c.norm() } else { Complex64::new(0.0, 0.0) });
    let mut state = CyclicState {
        iteration: 1,
        residual_mag: x_spec.mapv(|c| c.norm()),
        harmonic: vec![0.0; x_lb.len()],
        noise: vec![0.0; x_lb.len()],
    };
    let mut report = CyclicReport { iterations: 0, residual_l1: vec![state.residual_mag.sum()], residuals: Vec::new() };
    if opts.keep_residuals {
        report.residuals.push(state.residual_mag.clone());
    }
    let plan_iters = tracks.n_voices().min(opts.iterations);
    if plan_iters == 0 {
        log::warn!("no pitch tracks found; cyclic pipeline falls back to noise only");
        let f0 = PitchTrack::unvoiced(crate::dsp::stft::frame_count(x_lb.len(), hop), hop, sr);
        let y = render_mono(model, x_lb, &f0, opts.seed)?;
        return Ok((finish(x_lb, y.noise, model.cfg.cutoff_hz)?, report));
    }
    for i in 1..=plan_iters {
        let residual = if i == 1 {
            x_lb.clone()
        } else {
            let frames = &state.residual_mag.mapv(|m| Complex64::new(m, 0.0)) * &phase;
            AudioBuffer::new(plan.synthesize(&frames, x_lb.len()), sr)?
        };
        let y = render_mono(model, &residual, &tracks.tracks[i - 1], opts.seed.wrapping_add(i as u64 - 1))?;
        let y_full = y.sum();
        let y_spec = plan.analyze(&y_full);
        for ((mut res, ys), _) in state.residual_mag.outer_iter_mut().zip(y_spec.outer_iter()).zip(0..) {
            for k in 0..kc {
                res[k] = (res[k] - ys[k].norm()).max(0.0);
            }
        }
        for (a, b) in state.harmonic.iter_mut().zip(&y.harmonic) {
            *a += b;
        }
        state.noise = y.noise;
        state.iteration = i + 1;
        report.iterations = i;
        report.residual_l1.push(state.residual_mag.sum());
        if opts.keep_residuals {
            report.residuals.push(state.residual_mag.clone());
        }
    }
    let y: Vec<f64> = state.harmonic.iter().zip(&state.noise).map(|(a, b)| a + b).collect();
    Ok((finish(x_lb, y, model.cfg.cutoff_hz)?, report))
}
