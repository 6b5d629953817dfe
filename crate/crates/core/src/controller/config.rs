use std::fmt;
use std::str::FromStr;

use crate::error::{BweError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    /// Harmonic-plus-noise decoder driven by one f0 track.
    MonoDec,
    /// Noise synthesizer only, no f0 input.
    NoiseOnly,
    /// One f0 branch and harmonic head per voice slot.
    PolyDec,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::MonoDec => "mono_dec",
            Variant::NoiseOnly => "noise_only",
            Variant::PolyDec => "poly_dec",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = BweError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mono_dec" => Ok(Variant::MonoDec),
            "noise_only" => Ok(Variant::NoiseOnly),
            "poly_dec" => Ok(Variant::PolyDec),
            other => Err(BweError::InvalidArgument(format!(
                "unknown model variant `{other}` (expected mono_dec, noise_only or poly_dec)"
            ))),
        }
    }
}

pub const MODEL_CONFIG_FORMAT: &str = "bwe-model-config/1";

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub variant: Variant,
    pub n_harmonics: usize,
    pub n_noise: usize,
    pub gru_units: usize,
    pub mlp_width: usize,
    pub z_dim: usize,
    /// Voice slots of the polyphonic decoder.
    pub max_voices: usize,
    pub n_mfcc: usize,
    pub hop: usize,
    pub sample_rate: u32,
    pub cutoff_hz: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            variant: Variant::MonoDec,
            n_harmonics: 100,
            n_noise: 65,
            gru_units: 512,
            mlp_width: 512,
            z_dim: 512,
            max_voices: 5,
            n_mfcc: 30,
            hop: 256,
            sample_rate: 16000,
            cutoff_hz: 2000.0,
        }
    }
}

impl ModelConfig {
    pub fn with_variant(variant: Variant) -> Self {
        Self { variant, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let sizes = [
            ("n_harmonics", self.n_harmonics),
            ("gru_units", self.gru_units),
            ("mlp_width", self.mlp_width),
            ("z_dim", self.z_dim),
            ("max_voices", self.max_voices),
            ("n_mfcc", self.n_mfcc),
            ("hop", self.hop),
        ];
        if let Some((name, _)) = sizes.iter().find(|(_, v)| *v == 0) {
            return Err(BweError::InvalidArgument(format!("{name} must be positive")));
        }
        if self.n_noise < 2 {
            return Err(BweError::InvalidArgument("n_noise must be at least 2".into()));
        }
        if !(self.cutoff_hz > 0.0 && self.cutoff_hz < self.sample_rate as f64 / 2.0) {
            return Err(BweError::InvalidArgument(format!("cutoff {} Hz outside (0, Nyquist)", self.cutoff_hz)));
        }
        Ok(())
    }

    /// f0 branches (and harmonic heads) the decoder carries.
    pub fn n_f0_inputs(&self) -> usize {
        match self.variant {
            Variant::MonoDec => 1,
            Variant::NoiseOnly => 0,
            Variant::PolyDec => self.max_voices,
        }
    }

    /// Flat `key=value` text, one entry per line.
    pub fn to_text(&self) -> String {
        format!(
            "format={MODEL_CONFIG_FORMAT}\nvariant={}\nn_harmonics={}\nn_noise={}\ngru_units={}\nmlp_width={}\nz_dim={}\nmax_voices={}\nn_mfcc={}\nhop={}\nsample_rate={}\ncutoff_hz={:?}\n",
            self.variant,
            self.n_harmonics,
            self.n_noise,
            self.gru_units,
            self.mlp_width,
            self.z_dim,
            self.max_voices,
            self.n_mfcc,
            self.hop,
            self.sample_rate,
            self.cutoff_hz
        )
    }

    /// Parses [`ModelConfig::to_text`] output; unknown keys are rejected and
    /// missing keys keep their defaults.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |msg: String| BweError::Checkpoint(format!("model config line {}: {msg}", i + 1));
            let (key, value) = line.split_once('=').ok_or_else(|| bad(format!("expected key=value, got `{line}`")))?;
            let (key, value) = (key.trim(), value.trim());
            let uint = || value.parse::<usize>().map_err(|e| bad(format!("{key}: {e}")));
            match key {
                "format" if value == MODEL_CONFIG_FORMAT => {}
                "format" => return Err(bad(format!("unsupported format `{value}`"))),
                "variant" => cfg.variant = value.parse()?,
                "n_harmonics" => cfg.n_harmonics = uint()?,
                "n_noise" => cfg.n_noise = uint()?,
                "gru_units" => cfg.gru_units = uint()?,
                "mlp_width" => cfg.mlp_width = uint()?,
                "z_dim" => cfg.z_dim = uint()?,
                "max_voices" => cfg.max_voices = uint()?,
                "n_mfcc" => cfg.n_mfcc = uint()?,
                "hop" => cfg.hop = uint()?,
                "sample_rate" => cfg.sample_rate = value.parse().map_err(|e| bad(format!("{key}: {e}")))?,
                "cutoff_hz" => cfg.cutoff_hz = value.parse().map_err(|e| bad(format!("{key}: {e}")))?,
                other => return Err(bad(format!("unknown key `{other}`"))),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}
