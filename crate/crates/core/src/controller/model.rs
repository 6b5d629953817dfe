//! Encoder-decoder networks producing synthesizer controls.
//!
//! Encoder: MFCC -> layer norm + affine -> GRU -> dense, giving `z` per frame.
//! Decoder: one 3-layer MLP per input (z, loudness, each f0 slot), outputs
//! concatenated -> GRU -> 3-layer MLP -> heads. A harmonic head emits `H + 1`
//! values: a softmax over the first `H` gives the distribution `c_h`, the
//! last goes through the modified sigmoid as the global amplitude `a`, and
//! `A_h = a c_h`. The noise head is a dense layer with the modified sigmoid.
//!
//! Batched tensors are time-major: row `t * batch + b` is frame `t` of item `b`.

use std::path::Path;

use ndarray::{s, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::config::{ModelConfig, Variant};
use crate::dsp::loudness::a_weighted_loudness;
use crate::dsp::mel::{mfcc, MfccConfig};
use crate::dsp::AudioBuffer;
use crate::error::{BweError, Result};
use crate::nn::{Adam, Checkpoint, Dense, Gru, Mlp3, NormAffine, ParamStore, Tape, Var};
use crate::pitch::{hz_to_midi, MultiPitchTrack, PitchTrack};
use crate::synth::ControlFrames;

/// FFT size of the MFCC and loudness analysis.
pub const FEATURE_FFT_SIZE: usize = 1024;

/// Per-frame encoder and decoder inputs for one clip.
#[derive(Debug, Clone, PartialEq)]
pub struct Features {
    /// `[T x n_mfcc]`.
    pub mfcc: Array2<f64>,
    /// Loudness scaled as `(dB + 90) / 90`.
    pub loudness: Vec<f64>,
}

impl Features {
    pub fn n_frames(&self) -> usize {
        self.mfcc.nrows()
    }

    /// Frames `[start, start + len)`.
    pub fn slice(&self, start: usize, len: usize) -> Self {
        Self {
            mfcc: self.mfcc.slice(s![start..start + len, ..]).to_owned(),
            loudness: self.loudness[start..start + len].to_vec(),
        }
    }
}

pub fn extract_features(x: &AudioBuffer, cfg: &ModelConfig) -> Result<Features> {
    if x.sample_rate() != cfg.sample_rate {
        return Err(BweError::InvalidArgument(format!(
            "input at {} Hz, model expects {} Hz",
            x.sample_rate(),
            cfg.sample_rate
        )));
    }
    let mcfg = MfccConfig {
        n_coeffs: cfg.n_mfcc,
        fmax: (x.sample_rate() as f64 / 2.0).min(8000.0),
        overlap: 1.0 - cfg.hop as f64 / FEATURE_FFT_SIZE as f64,
        fft_size: FEATURE_FFT_SIZE,
        ..MfccConfig::default()
    };
    let m = mfcc(x, &mcfg)?;
    let loud = a_weighted_loudness(x, FEATURE_FFT_SIZE, cfg.hop)?;
    if loud.len() != m.nrows() {
        return Err(BweError::LengthMismatch { left: m.nrows(), right: loud.len() });
    }
    Ok(Features { mfcc: m, loudness: loud.normalized() })
}

/// Decoder scaling of an f0 value: MIDI number / 127, with 0 for unvoiced.
pub fn f0_input(hz: f64) -> f64 {
    if hz > 0.0 {
        hz_to_midi(hz) / 127.0
    } else {
        0.0
    }
}

/// Stacked network inputs for a batch of equally long items.
#[derive(Debug, Clone)]
pub struct Batch {
    pub steps: usize,
    pub batch: usize,
    pub mfcc: Array2<f64>,
    pub loudness: Array2<f64>,
    /// One `[steps * batch x 1]` column per f0 slot, already scaled.
    pub f0: Vec<Array2<f64>>,
}

/// One batch item: features plus one f0 contour (Hz) per decoder slot.
pub struct BatchItem<'a> {
    pub features: &'a Features,
    pub f0: Vec<&'a [f64]>,
}

impl Batch {
    pub fn new(items: &[BatchItem<'_>]) -> Result<Self> {
        let first = items.first().ok_or_else(|| BweError::InvalidArgument("empty batch".into()))?;
        let steps = first.features.n_frames();
        let n_mfcc = first.features.mfcc.ncols();
        let n_f0 = first.f0.len();
        let batch = items.len();
        let mut mfcc = Array2::zeros((steps * batch, n_mfcc));
        let mut loudness = Array2::zeros((steps * batch, 1));
        let mut f0 = vec![Array2::zeros((steps * batch, 1)); n_f0];
        for (b, item) in items.iter().enumerate() {
            let fr = item.features;
            if fr.n_frames() != steps || fr.loudness.len() != steps || item.f0.len() != n_f0 {
                return Err(BweError::Shape("batch items differ in frame count or f0 slots".into()));
            }
            if let Some(bad) = item.f0.iter().find(|c| c.len() != steps) {
                return Err(BweError::LengthMismatch { left: bad.len(), right: steps });
            }
            for t in 0..steps {
                let r = t * batch + b;
                mfcc.row_mut(r).assign(&fr.mfcc.row(t));
                loudness[[r, 0]] = fr.loudness[t];
                for (slot, contour) in item.f0.iter().enumerate() {
                    f0[slot][[r, 0]] = f0_input(contour[t]);
                }
            }
        }
        Ok(Self { steps, batch, mfcc, loudness, f0 })
    }

    /// Rows of item `b` from a batched `[steps * batch x C]` matrix.
    pub fn item_rows(&self, m: &Array2<f64>, b: usize) -> Array2<f64> {
        let rows: Vec<usize> = (0..self.steps).map(|t| t * self.batch + b).collect();
        m.select(ndarray::Axis(0), &rows)
    }

    /// Scatter an item's `[steps x C]` matrix into batched layout.
    pub fn scatter_item(&self, dst: &mut Array2<f64>, src: &Array2<f64>, b: usize) {
        for t in 0..self.steps {
            dst.row_mut(t * self.batch + b).assign(&src.row(t));
        }
    }
}

/// Tape handles of the network outputs, in batched layout.
#[derive(Debug, Clone)]
pub struct Outputs {
    /// One `[steps * batch x H]` amplitude matrix per harmonic head.
    pub harmonic: Vec<Var>,
    /// `[steps * batch x K]`.
    pub noise: Var,
}

/// Encoder output for one clip.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentSequence {
    /// `[T x z_dim]`.
    pub z: Array2<f64>,
}

/// Polyphonic decoder output: one amplitude matrix per voice slot.
#[derive(Debug, Clone, PartialEq)]
pub struct PolyControls {
    pub harmonic_amps: Vec<Array2<f64>>,
    pub noise_coeffs: Array2<f64>,
    pub hop: usize,
}

#[derive(Debug, Clone)]
struct Encoder {
    norm: NormAffine,
    gru: Gru,
    out: Dense,
}

#[derive(Debug, Clone)]
struct Decoder {
    f0_mlps: Vec<Mlp3>,
    loud_mlp: Mlp3,
    z_mlp: Mlp3,
    gru: Gru,
    mlp: Mlp3,
    harmonic_heads: Vec<Dense>,
    noise_head: Dense,
}

#[derive(Debug, Clone)]
pub struct Model {
    pub cfg: ModelConfig,
    pub store: ParamStore,
    enc: Encoder,
    dec: Decoder,
}

impl Model {
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new(seed);
        let st = &mut store;
        let w = cfg.mlp_width;
        let enc = Encoder {
            norm: NormAffine::new(st, "enc.norm", cfg.n_mfcc),
            gru: Gru::new(st, "enc.gru", cfg.n_mfcc, cfg.gru_units, &mut rng),
            out: Dense::new(st, "enc.out", cfg.gru_units, cfg.z_dim, &mut rng),
        };
        let n_f0 = cfg.n_f0_inputs();
        let f0_mlps = (0..n_f0).map(|i| Mlp3::new(st, &format!("dec.f0_{i}"), 1, w, &mut rng)).collect();
        let loud_mlp = Mlp3::new(st, "dec.loud", 1, w, &mut rng);
        let z_mlp = Mlp3::new(st, "dec.z", cfg.z_dim, w, &mut rng);
        let gru = Gru::new(st, "dec.gru", (n_f0 + 2) * w, cfg.gru_units, &mut rng);
        let mlp = Mlp3::new(st, "dec.mlp", cfg.gru_units, w, &mut rng);
        let harmonic_heads = (0..n_f0)
            .map(|i| Dense::new(st, &format!("dec.harm_{i}"), w, cfg.n_harmonics + 1, &mut rng))
            .collect();
        let noise_head = Dense::new(st, "dec.noise", w, cfg.n_noise, &mut rng);
        let dec = Decoder { f0_mlps, loud_mlp, z_mlp, gru, mlp, harmonic_heads, noise_head };
        Ok(Self { cfg, store, enc, dec })
    }

    pub fn variant(&self) -> Variant {
        self.cfg.variant
    }

    pub fn param_count(&self) -> usize {
        self.store.param_count()
    }

    /// Hash of the configuration and tensor layout; checkpoints only load
    /// into a model with the same hash.
    pub fn arch_hash(&self) -> u64 {
        let mut h = Sha256::new();
        h.update(self.cfg.to_text().as_bytes());
        for (name, r, c) in self.store.layout() {
            h.update(format!("{name}:{r}x{c}\n").as_bytes());
        }
        let digest = h.finalize();
        u64::from_le_bytes(digest[..8].try_into().expect("sha256 digest has 32 bytes"))
    }

    fn encode_vars(&self, tape: &mut Tape, mfcc: Var, steps: usize, batch: usize) -> Result<Var> {
        let x = self.enc.norm.forward(tape, &self.store, mfcc)?;
        let h = self.enc.gru.forward_seq(tape, &self.store, x, steps, batch)?;
        self.enc.out.forward(tape, &self.store, h)
    }

    fn decode_vars(&self, tape: &mut Tape, z: Var, f0: &[Var], loud: Var, steps: usize, batch: usize) -> Result<Outputs> {
        let st = &self.store;
        if f0.len() != self.dec.f0_mlps.len() {
            return Err(BweError::Shape(format!(
                "{} f0 inputs for a decoder with {} slots",
                f0.len(),
                self.dec.f0_mlps.len()
            )));
        }
        let mut parts = Vec::with_capacity(f0.len() + 2);
        for (mlp, &v) in self.dec.f0_mlps.iter().zip(f0) {
            parts.push(mlp.forward(tape, st, v)?);
        }
        parts.push(self.dec.z_mlp.forward(tape, st, z)?);
        parts.push(self.dec.loud_mlp.forward(tape, st, loud)?);
        let cat = tape.concat_cols(&parts)?;
        let g = self.dec.gru.forward_seq(tape, st, cat, steps, batch)?;
        let hidden = self.dec.mlp.forward(tape, st, g)?;
        let n_h = self.cfg.n_harmonics;
        let mut harmonic = Vec::with_capacity(self.dec.harmonic_heads.len());
        for head in &self.dec.harmonic_heads {
            let o = head.forward(tape, st, hidden)?;
            let logits = tape.slice_cols(o, 0, n_h)?;
            let amp = tape.slice_cols(o, n_h, n_h + 1)?;
            let dist = tape.softmax(logits);
            let a = tape.modified_sigmoid(amp);
            harmonic.push(tape.mul_col(dist, a)?);
        }
        let n = self.dec.noise_head.forward(tape, st, hidden)?;
        let noise = tape.modified_sigmoid(n);
        Ok(Outputs { harmonic, noise })
    }

    /// Full forward pass over a batch.
    pub fn forward(&self, tape: &mut Tape, batch: &Batch) -> Result<Outputs> {
        if batch.mfcc.ncols() != self.cfg.n_mfcc {
            return Err(BweError::Shape(format!("{} MFCCs, model expects {}", batch.mfcc.ncols(), self.cfg.n_mfcc)));
        }
        let mfcc = tape.input(batch.mfcc.clone());
        let z = self.encode_vars(tape, mfcc, batch.steps, batch.batch)?;
        let f0: Vec<Var> = batch.f0.iter().map(|c| tape.input(c.clone())).collect();
        let loud = tape.input(batch.loudness.clone());
        self.decode_vars(tape, z, &f0, loud, batch.steps, batch.batch)
    }

    pub fn encode(&self, features: &Features) -> Result<LatentSequence> {
        let mut tape = Tape::new();
        let m = tape.input(features.mfcc.clone());
        let z = self.encode_vars(&mut tape, m, features.n_frames(), 1)?;
        Ok(LatentSequence { z: tape.value(z).clone() })
    }

    fn decode_values(&self, z: &LatentSequence, f0: &[&[f64]], loudness: &[f64]) -> Result<(Vec<Array2<f64>>, Array2<f64>)> {
        let t = z.z.nrows();
        if loudness.len() != t {
            return Err(BweError::LengthMismatch { left: loudness.len(), right: t });
        }
        if let Some(bad) = f0.iter().find(|c| c.len() != t) {
            return Err(BweError::LengthMismatch { left: bad.len(), right: t });
        }
        let mut tape = Tape::new();
        let zv = tape.input(z.z.clone());
        let fv: Vec<Var> =
            f0.iter().map(|c| tape.input(Array2::from_shape_fn((t, 1), |(i, _)| f0_input(c[i])))).collect();
        let lv = tape.input(Array2::from_shape_vec((t, 1), loudness.to_vec()).expect("t x 1"));
        let out = self.decode_vars(&mut tape, zv, &fv, lv, t, 1)?;
        let harm = out.harmonic.iter().map(|&v| tape.value(v).clone()).collect();
        Ok((harm, tape.value(out.noise).clone()))
    }

    fn expect_variant(&self, v: Variant) -> Result<()> {
        if self.cfg.variant != v {
            return Err(BweError::VariantMismatch { expected: v.to_string(), found: self.cfg.variant.to_string() });
        }
        Ok(())
    }

    /// Controls for a monophonic model. `f0` is the decoder input contour
    /// (unvoiced gaps are expected to be held already).
    pub fn decode_mono(&self, z: &LatentSequence, f0: &PitchTrack, loudness: &[f64]) -> Result<ControlFrames> {
        self.expect_variant(Variant::MonoDec)?;
        let (mut harm, noise) = self.decode_values(z, &[&f0.f0], loudness)?;
        ControlFrames::new(harm.remove(0), noise, self.cfg.hop)
    }

    /// Controls for the noise-only model; harmonic amplitudes are all zero.
    pub fn decode_noise(&self, z: &LatentSequence, loudness: &[f64]) -> Result<ControlFrames> {
        self.expect_variant(Variant::NoiseOnly)?;
        let (_, noise) = self.decode_values(z, &[], loudness)?;
        let t = noise.nrows();
        ControlFrames::new(Array2::zeros((t, self.cfg.n_harmonics)), noise, self.cfg.hop)
    }

    /// Controls for every voice slot; slots beyond the given tracks see f0 = 0.
    pub fn decode_poly(&self, z: &LatentSequence, tracks: &MultiPitchTrack, loudness: &[f64]) -> Result<PolyControls> {
        self.expect_variant(Variant::PolyDec)?;
        let slots = self.cfg.max_voices;
        if tracks.n_voices() > slots {
            return Err(BweError::InvalidArgument(format!("{} tracks for {slots} voice slots", tracks.n_voices())));
        }
        let zeros = vec![0.0; z.z.nrows()];
        let f0: Vec<&[f64]> =
            (0..slots).map(|i| tracks.tracks.get(i).map_or(zeros.as_slice(), |t| t.f0.as_slice())).collect();
        let (harmonic_amps, noise_coeffs) = self.decode_values(z, &f0, loudness)?;
        Ok(PolyControls { harmonic_amps, noise_coeffs, hop: self.cfg.hop })
    }

    pub fn checkpoint(&self, adam: Option<&Adam>) -> Checkpoint {
        Checkpoint::from_store(&self.store, self.arch_hash(), self.cfg.to_text(), adam)
    }

    pub fn save(&self, path: &Path, adam: Option<&Adam>) -> Result<()> {
        self.checkpoint(adam).save(path)
    }

    /// Rebuild a model from a checkpoint's embedded configuration.
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let cfg = ModelConfig::from_text(&ck.config)?;
        let mut model = Self::new(cfg, ck.seed)?;
        let hash = model.arch_hash();
        ck.restore(&mut model.store, hash)?;
        Ok(model)
    }

    pub fn load(path: &Path) -> Result<(Self, Checkpoint)> {
        let ck = Checkpoint::load(path)?;
        Ok((Self::from_checkpoint(&ck)?, ck))
    }

    /// Load, insisting on a variant.
    pub fn load_variant(path: &Path, variant: Variant) -> Result<Self> {
        let (model, _) = Self::load(path)?;
        model.expect_variant(variant)?;
        Ok(model)
    }

    /// Load into an explicitly configured model; the checkpoint must match it.
    pub fn load_with_config(path: &Path, cfg: ModelConfig) -> Result<Self> {
        let ck = Checkpoint::load(path)?;
        let found = ModelConfig::from_text(&ck.config)?;
        if found.variant != cfg.variant {
            return Err(BweError::VariantMismatch { expected: cfg.variant.to_string(), found: found.variant.to_string() });
        }
        let mut model = Self::new(cfg, ck.seed)?;
        let hash = model.arch_hash();
        ck.restore(&mut model.store, hash)?;
        Ok(model)
    }
}
