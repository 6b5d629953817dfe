//! Bandwidth-extension pipelines and band recombination.

pub mod ddsp;
pub mod sbr;

use std::str::FromStr;

use crate::controller::Model;
use crate::dsp::band::{cutoff_bin, BAND_FFT_SIZE, BAND_HOP};
use crate::dsp::stft::{StftPlan, Window};
use crate::dsp::AudioBuffer;
use crate::error::{BweError, Result};
use crate::pitch::PitchSource;

pub use ddsp::{bwe_ddsp_cyclic, bwe_ddsp_mono, bwe_ddsp_poly, render_mono, render_poly, CyclicOptions, CyclicReport, CyclicState, Rendered};
pub use sbr::{bwe_sbr, bwe_sbr_detailed, sbr_extend_frames, PhaseMode, SbrConfig, SbrOutput};

/// Adds nothing.
pub fn bwe_null(x_lb: &AudioBuffer) -> AudioBuffer {
    x_lb.clone()
}

/// Low band of `x_lb` plus high band of `y_full`, mixed in the STFT domain
/// with an equal-weight crossfade on the cutoff bin.
pub fn combine_bands(x_lb: &AudioBuffer, y_full: &AudioBuffer, cutoff_hz: f64) -> Result<AudioBuffer> {
    x_lb.check_compatible(y_full)?;
    if x_lb.is_empty() {
        return Ok(x_lb.clone());
    }
    let plan = StftPlan::new(BAND_FFT_SIZE, BAND_HOP, Window::Hann)?;
    let kc = cutoff_bin(cutoff_hz, BAND_FFT_SIZE, x_lb.sample_rate());
    let mut a = plan.analyze(x_lb.samples());
    let b = plan.analyze(y_full.samples());
    for (mut ra, rb) in a.outer_iter_mut().zip(b.outer_iter()) {
        for (k, (ca, cb)) in ra.iter_mut().zip(rb.iter()).enumerate() {
            let w = match k.cmp(&kc) {
                std::cmp::Ordering::Less => 1.0,
                std::cmp::Ordering::Equal => 0.5,
                std::cmp::Ordering::Greater => 0.0,
            };
            *ca = *ca * w + *cb * (1.0 - w);
        }
    }
    AudioBuffer::new(plan.synthesize(&a, x_lb.len()), x_lb.sample_rate())
}

/// Pipeline names as used on the command line and in metric files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PipelineKind {
    Null,
    Sbr,
    DdspMono,
    DdspNoise,
    DdspCyclic,
    DdspPoly,
}

impl PipelineKind {
    pub const ALL: [PipelineKind; 6] = [
        PipelineKind::Null,
        PipelineKind::Sbr,
        PipelineKind::DdspMono,
        PipelineKind::DdspNoise,
        PipelineKind::DdspCyclic,
        PipelineKind::DdspPoly,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PipelineKind::Null => "null",
            PipelineKind::Sbr => "sbr",
            PipelineKind::DdspMono => "ddsp-mono",
            PipelineKind::DdspNoise => "ddsp-noise",
            PipelineKind::DdspCyclic => "ddsp-cyclic",
            PipelineKind::DdspPoly => "ddsp-poly",
        }
    }

    pub fn needs_model(self) -> bool {
        !matches!(self, PipelineKind::Null | PipelineKind::Sbr)
    }
}

impl std::fmt::Display for PipelineKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PipelineKind {
    type Err = BweError;

    fn from_str(s: &str) -> Result<Self> {
        PipelineKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| BweError::InvalidArgument(format!("unknown model `{s}`")))
    }
}

/// A ready-to-run extension method.
#[derive(Debug, Clone)]
pub enum Pipeline {
    Null,
    Sbr(SbrConfig),
    DdspMono(Box<Model>),
    DdspNoise(Box<Model>),
    DdspCyclic { model: Box<Model>, iterations: usize },
    DdspPoly(Box<Model>),
}

impl Pipeline {
    pub fn kind(&self) -> PipelineKind {
        match self {
            Pipeline::Null => PipelineKind::Null,
            Pipeline::Sbr(_) => PipelineKind::Sbr,
            Pipeline::DdspMono(_) => PipelineKind::DdspMono,
            Pipeline::DdspNoise(_) => PipelineKind::DdspNoise,
            Pipeline::DdspCyclic { .. } => PipelineKind::DdspCyclic,
            Pipeline::DdspPoly(_) => PipelineKind::DdspPoly,
        }
    }

    /// Build a pipeline, checking that the model variant fits it.
    pub fn new(kind: PipelineKind, model: Option<Model>, sbr: SbrConfig, iterations: usize) -> Result<Self> {
        use crate::controller::Variant;
        let need = |v: Variant| -> Result<Box<Model>> {
            let m = model.clone().ok_or_else(|| BweError::InvalidArgument(format!("{kind} needs a model checkpoint")))?;
            if m.variant() != v {
                return Err(BweError::VariantMismatch { expected: v.to_string(), found: m.variant().to_string() });
            }
            Ok(Box::new(m))
        };
        Ok(match kind {
            PipelineKind::Null => Pipeline::Null,
            PipelineKind::Sbr => {
                sbr.validate()?;
                Pipeline::Sbr(sbr)
            }
            PipelineKind::DdspMono => Pipeline::DdspMono(need(Variant::MonoDec)?),
            PipelineKind::DdspNoise => Pipeline::DdspNoise(need(Variant::NoiseOnly)?),
            PipelineKind::DdspCyclic => Pipeline::DdspCyclic { model: need(Variant::MonoDec)?, iterations },
            PipelineKind::DdspPoly => Pipeline::DdspPoly(need(Variant::PolyDec)?),
        })
    }

    /// Extend `x_lb`. `reference` is the wide-band signal, used only by
    /// oracle-phase SBR.
    pub fn run(&self, x_lb: &AudioBuffer, pitch: &PitchSource, reference: Option<&AudioBuffer>, seed: u64) -> Result<AudioBuffer> {
        match self {
            Pipeline::Null => Ok(bwe_null(x_lb)),
            Pipeline::Sbr(cfg) => bwe_sbr(x_lb, cfg, reference),
            Pipeline::DdspMono(m) | Pipeline::DdspNoise(m) => bwe_ddsp_mono(x_lb, m, pitch, seed),
            Pipeline::DdspCyclic { model, iterations } => {
                let opts = CyclicOptions { iterations: *iterations, seed, keep_residuals: false };
                Ok(bwe_ddsp_cyclic(x_lb, model, pitch, &opts)?.0)
            }
            Pipeline::DdspPoly(m) => bwe_ddsp_poly(x_lb, m, pitch, seed),
        }
    }
}
