//! Training loop.
//!
//! Each step draws `batch` random crops of `crop_frames` frames from the
//! training clips, runs the controller on cached low-band features, renders
//! the full band with the harmonic-plus-noise synthesizer and scores it
//! against the wide-band target with the multi-scale spectral loss. The
//! synthesizer and loss sit outside the tape: their vector-Jacobian products
//! seed the tape's reverse pass at the control outputs.

use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::loss::{MssLoss, DEFAULT_MSS_FFT_SIZES};
use super::schedule::PlateauSchedule;
use crate::controller::{extract_features, Batch, BatchItem, Features, Model, ModelConfig, Variant};
use crate::data::{load_clip, DatasetManifest, Split};
use crate::dsp::low_pass;
use crate::error::{BweError, Result};
use crate::nn::{Adam, Checkpoint, Tape};
use crate::pitch::{MultiPitchTrack, PitchSource, PitchTrack};
use crate::synth::{ControlFrames, HpnSynth, PhaseState, SynthGrid};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch: usize,
    pub lr0: f64,
    pub plateau_steps: usize,
    pub max_halvings: usize,
    pub mss_fft_sizes: Vec<usize>,
    /// Restrict the loss to the band above the model cutoff.
    pub loss_high_band: bool,
    /// Frames per training crop; a clip shorter than this is used whole.
    pub crop_frames: usize,
    /// Global gradient-norm ceiling.
    pub clip_grad_norm: Option<f64>,
    pub checkpoint_every: usize,
    pub seed: u64,
    /// Worker threads for the per-item synthesis and loss.
    pub jobs: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 25000,
            batch: 32,
            lr0: 1e-3,
            plateau_steps: 2500,
            max_halvings: 4,
            mss_fft_sizes: DEFAULT_MSS_FFT_SIZES.to_vec(),
            loss_high_band: true,
            crop_frames: 250,
            clip_grad_norm: Some(3.0),
            checkpoint_every: 1000,
            seed: 0,
            jobs: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("steps", self.steps),
            ("batch", self.batch),
            ("plateau_steps", self.plateau_steps),
            ("crop_frames", self.crop_frames),
            ("checkpoint_every", self.checkpoint_every),
            ("jobs", self.jobs),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(BweError::InvalidArgument(format!("{name} must be positive")));
        }
        if !(self.lr0 > 0.0) {
            return Err(BweError::InvalidArgument("lr0 must be positive".into()));
        }
        if self.mss_fft_sizes.is_empty() || self.mss_fft_sizes.iter().any(|n| !n.is_power_of_two()) {
            return Err(BweError::InvalidArgument("MSS fft sizes must be powers of two".into()));
        }
        Ok(())
    }
}

/// How f0 tracks for training are obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainPitch {
    Oracle,
    Estimate,
}

/// A training clip with everything a step needs precomputed.
#[derive(Debug, Clone)]
pub struct TrainClip {
    pub id: String,
    pub wideband: Vec<f64>,
    pub features: Features,
    /// Raw f0 per decoder slot (drives the oscillators).
    pub f0: Vec<Vec<f64>>,
    /// Held f0 per decoder slot (decoder input).
    pub f0_held: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct TrainData {
    pub clips: Vec<TrainClip>,
}

fn slot_tracks(variant: Variant, max_voices: usize, tracks: &MultiPitchTrack, n_frames: usize, hop: usize, sr: u32) -> Vec<PitchTrack> {
    match variant {
        Variant::NoiseOnly => Vec::new(),
        Variant::MonoDec => {
            vec![tracks.tracks.first().cloned().unwrap_or_else(|| PitchTrack::unvoiced(n_frames, hop, sr))]
        }
        Variant::PolyDec => {
            let sorted = tracks.sorted_by_pitch_desc();
            (0..max_voices)
                .map(|i| sorted.tracks.get(i).cloned().unwrap_or_else(|| PitchTrack::unvoiced(n_frames, hop, sr)))
                .collect()
        }
    }
}

/// Cache of per-clip features keyed by the low-band audio and feature settings.
#[derive(Debug, Clone)]
pub struct FeatureCache {
    pub dir: PathBuf,
}

impl FeatureCache {
    /// Cache rooted at `$BWE_LAB_CACHE`, if set.
    pub fn from_env() -> Option<Self> {
        std::env::var_os("BWE_LAB_CACHE").map(|d| Self { dir: PathBuf::from(d) })
    }

    fn key(x: &[f64], cfg: &ModelConfig) -> String {
        let mut h = Sha256::new();
        h.update(format!("feat/1 {} {} {}\n", cfg.n_mfcc, cfg.hop, cfg.sample_rate).as_bytes());
        for v in x {
            h.update(v.to_le_bytes());
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    fn read(path: &Path, n_mfcc: usize) -> Option<Features> {
        let bytes = std::fs::read(path).ok()?;
        let vals: Vec<f64> = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        let t = vals.len() / (n_mfcc + 1);
        if t * (n_mfcc + 1) != vals.len() {
            return None;
        }
        let mfcc = Array2::from_shape_vec((t, n_mfcc), vals[..t * n_mfcc].to_vec()).ok()?;
        Some(Features { mfcc, loudness: vals[t * n_mfcc..].to_vec() })
    }

    pub fn features(&self, x: &crate::dsp::AudioBuffer, cfg: &ModelConfig) -> Result<Features> {
        let path = self.dir.join(format!("{}.feat", Self::key(x.samples(), cfg)));
        if let Some(f) = Self::read(&path, cfg.n_mfcc) {
            return Ok(f);
        }
        let f = extract_features(x, cfg)?;
        std::fs::create_dir_all(&self.dir)?;
        let mut bytes = Vec::with_capacity((f.mfcc.len() + f.loudness.len()) * 8);
        for v in f.mfcc.iter().chain(&f.loudness) {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, bytes)?;
        std::fs::rename(&tmp, &path)?;
        Ok(f)
    }
}

impl TrainData {
    /// Load a split, low-pass it and compute features and f0 slots.
    pub fn prepare(
        manifest: &DatasetManifest,
        base_dir: &Path,
        split: Split,
        cfg: &ModelConfig,
        pitch: TrainPitch,
        cache: Option<&FeatureCache>,
    ) -> Result<Self> {
        let entries = manifest.split(split);
        if entries.is_empty() {
            return Err(BweError::Data(format!("{} split of the manifest is empty", split.as_str())));
        }
        let mut clips = Vec::with_capacity(entries.len());
        for e in entries {
            let clip = load_clip(e, base_dir, cfg.hop)?;
            clips.push(Self::clip_from_audio(&clip.id, &clip.wideband, clip.pitch.as_ref(), cfg, pitch, cache)?);
        }
        Ok(Self { clips })
    }

    pub fn clip_from_audio(
        id: &str,
        wideband: &crate::dsp::AudioBuffer,
        oracle: Option<&MultiPitchTrack>,
        cfg: &ModelConfig,
        pitch: TrainPitch,
        cache: Option<&FeatureCache>,
    ) -> Result<TrainClip> {
        let x_lb = low_pass(wideband, cfg.cutoff_hz)?;
        let features = match cache {
            Some(c) => c.features(&x_lb, cfg)?,
            None => extract_features(&x_lb, cfg)?,
        };
        let t = features.n_frames();
        let tracks = match (pitch, oracle) {
            (TrainPitch::Oracle, Some(p)) => p.clone(),
            (TrainPitch::Oracle, None) => {
                return Err(BweError::Data(format!("clip {id} has no ground-truth pitch; use estimated pitch")))
            }
            (TrainPitch::Estimate, _) => {
                let voices = if cfg.variant == Variant::PolyDec { cfg.max_voices } else { 1 };
                PitchSource::Estimate.multi(&x_lb, voices, cfg.hop)?
            }
        };
        let slots = slot_tracks(cfg.variant, cfg.max_voices, &tracks, t, cfg.hop, cfg.sample_rate);
        if let Some(bad) = slots.iter().find(|s| s.len() != t) {
            return Err(BweError::LengthMismatch { left: bad.len(), right: t });
        }
        Ok(TrainClip {
            id: id.to_string(),
            wideband: wideband.samples().to_vec(),
            f0_held: slots.iter().map(|s| s.held().f0).collect(),
            f0: slots.into_iter().map(|s| s.f0).collect(),
            features,
        })
    }
}

/// One crop: clip index and first frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Crop {
    pub clip: usize,
    pub start: usize,
    pub frames: usize,
}

/// Deterministic crops and synthesizer seed for a step.
pub fn draw_crops(data: &TrainData, cfg: &TrainConfig, step: usize) -> (Vec<Crop>, u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (step as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    let crops = (0..cfg.batch)
        .map(|_| {
            let clip = rng.random_range(0..data.clips.len());
            let t = data.clips[clip].features.n_frames();
            let frames = cfg.crop_frames.min(t);
            let start = rng.random_range(0..=t - frames);
            Crop { clip, start, frames }
        })
        .collect();
    (crops, rng.random())
}

struct ItemResult {
    loss: f64,
    harmonic: Vec<Array2<f64>>,
    noise: Array2<f64>,
}

/// Synthesis, loss and control gradients for one crop.
fn item_loss(
    model: &Model,
    clip: &TrainClip,
    crop: Crop,
    harmonic: &[Array2<f64>],
    noise: &Array2<f64>,
    mss: &MssLoss,
    seed: u64,
    want_grad: bool,
) -> Result<ItemResult> {
    let cfg = &model.cfg;
    let hop = cfg.hop;
    let n = crop.frames * hop;
    let a = crop.start * hop;
    let mut target = vec![0.0; n];
    let end = (a + n).min(clip.wideband.len());
    target[..end - a].copy_from_slice(&clip.wideband[a..end]);
    let grid = SynthGrid::new(cfg.sample_rate, hop, n)?;
    let mut synth = HpnSynth::new(grid, cfg.n_harmonics, cfg.n_noise, seed)?;
    let f0: Vec<&[f64]> = clip.f0.iter().map(|f| &f[crop.start..crop.start + crop.frames]).collect();
    let mut y = synth.noise(noise)?;
    for (i, (amps, f)) in harmonic.iter().zip(&f0).enumerate() {
        synth.phase = PhaseState::random(cfg.n_harmonics, seed.wrapping_add(i as u64));
        for (o, v) in y.iter_mut().zip(synth.harmonic(f, amps)?) {
            *o += v;
        }
    }
    let (loss, grad_y) = if want_grad { mss.loss_and_grad(&target, &y)? } else { (mss_value(mss, &target, &y)?, Vec::new()) };
    if !want_grad {
        return Ok(ItemResult { loss, harmonic: Vec::new(), noise: Array2::zeros((0, 0)) });
    }
    let mut gh = Vec::with_capacity(harmonic.len());
    let mut gn = Array2::zeros(noise.dim());
    for (i, (amps, f)) in harmonic.iter().zip(&f0).enumerate() {
        synth.phase = PhaseState::random(cfg.n_harmonics, seed.wrapping_add(i as u64));
        let g = synth.render_vjp(f, &ControlFrames::new(amps.clone(), noise.clone(), hop)?, &grad_y)?;
        gh.push(g.harmonic_amps);
        gn = g.noise_coeffs;
    }
    if harmonic.is_empty() {
        gn = crate::synth::noise_synth_vjp(noise, &synth.design, &synth.noise, &synth.grid, &grad_y)?;
    }
    Ok(ItemResult { loss, harmonic: gh, noise: gn })
}

fn mss_value(mss: &MssLoss, target: &[f64], pred: &[f64]) -> Result<f64> {
    let sr = mss.sample_rate();
    mss.loss(&crate::dsp::AudioBuffer::new(target.to_vec(), sr)?, &crate::dsp::AudioBuffer::new(pred.to_vec(), sr)?)
}

/// Mean loss over the crops. With `want_grad`, parameter gradients of that
/// mean are left in `model.store` (zeroed first).
pub fn batch_loss(
    model: &mut Model,
    data: &TrainData,
    crops: &[Crop],
    mss: &MssLoss,
    seed: u64,
    want_grad: bool,
    jobs: usize,
) -> Result<f64> {
    let frames = crops.first().map_or(0, |c| c.frames);
    if crops.iter().any(|c| c.frames != frames) {
        return Err(BweError::Shape("crops in a batch must have equal length".into()));
    }
    let feats: Vec<Features> = crops.iter().map(|c| data.clips[c.clip].features.slice(c.start, c.frames)).collect();
    let items: Vec<BatchItem<'_>> = crops
        .iter()
        .zip(&feats)
        .map(|(c, f)| BatchItem {
            features: f,
            f0: data.clips[c.clip].f0_held.iter().map(|v| &v[c.start..c.start + c.frames]).collect(),
        })
        .collect();
    let batch = Batch::new(&items)?;
    let mut tape = Tape::new();
    let out = model.forward(&mut tape, &batch)?;
    let harm_all: Vec<Array2<f64>> = out.harmonic.iter().map(|&v| tape.value(v).clone()).collect();
    let noise_all = tape.value(out.noise).clone();
    let per_item: Vec<(Vec<Array2<f64>>, Array2<f64>)> = (0..crops.len())
        .map(|b| (harm_all.iter().map(|h| batch.item_rows(h, b)).collect(), batch.item_rows(&noise_all, b)))
        .collect();
    let run = |b: usize| -> Result<ItemResult> {
        let c = crops[b];
        let (h, n) = &per_item[b];
        item_loss(model, &data.clips[c.clip], c, h, n, mss, seed.wrapping_add(b as u64 * 7919), want_grad)
    };
    let results: Vec<ItemResult> = if jobs > 1 && crops.len() > 1 {
        let chunk = crops.len().div_ceil(jobs);
        let run = &run;
        std::thread::scope(|sc| {
            let handles: Vec<_> = (0..crops.len())
                .collect::<Vec<_>>()
                .chunks(chunk)
                .map(|ix| {
                    let ix = ix.to_vec();
                    sc.spawn(move || ix.into_iter().map(run).collect::<Result<Vec<_>>>())
                })
                .collect();
            let mut all = Vec::with_capacity(crops.len());
            for h in handles {
                all.extend(h.join().map_err(|_| BweError::Numeric("worker thread panicked".into()))??);
            }
            Ok::<_, BweError>(all)
        })?
    } else {
        (0..crops.len()).map(run).collect::<Result<Vec<_>>>()?
    };
    let inv = 1.0 / crops.len() as f64;
    let loss = results.iter().map(|r| r.loss).sum::<f64>() * inv;
    if !loss.is_finite() {
        return Err(BweError::Numeric(format!("loss became {loss}")));
    }
    if want_grad {
        let mut g_harm: Vec<Array2<f64>> = harm_all.iter().map(|h| Array2::zeros(h.dim())).collect();
        let mut g_noise = Array2::zeros(noise_all.dim());
        for (b, r) in results.iter().enumerate() {
            for (dst, src) in g_harm.iter_mut().zip(&r.harmonic) {
                batch.scatter_item(dst, &(src * inv), b);
            }
            batch.scatter_item(&mut g_noise, &(&r.noise * inv), b);
        }
        let mut seeds: Vec<_> = out.harmonic.iter().copied().zip(g_harm).collect();
        seeds.push((out.noise, g_noise));
        let grads = tape.backward(&seeds)?;
        model.store.zero_grad();
        tape.accumulate_param_grads(&grads, &mut model.store)?;
    }
    Ok(loss)
}

/// One row of the loss log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    pub step: usize,
    pub loss: f64,
    pub lr: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    pub log: Vec<LossRecord>,
}

/// Where checkpoints and logs go.
#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub dir: PathBuf,
}

impl TrainOutput {
    pub fn checkpoint_path(&self) -> PathBuf {
        self.dir.join("model.ckpt")
    }

    pub fn state_path(&self) -> PathBuf {
        self.dir.join("model.ckpt.state")
    }

    pub fn loss_log_path(&self) -> PathBuf {
        self.dir.join("loss_log.csv")
    }
}

fn save_state(out: &TrainOutput, model: &Model, adam: &Adam, sched: &PlateauSchedule, log: &[LossRecord]) -> Result<()> {
    std::fs::create_dir_all(&out.dir)?;
    model.save(&out.checkpoint_path(), Some(adam))?;
    let (lr, halvings, best, since) = sched.state();
    std::fs::write(out.state_path(), format!("lr={lr:?}\nhalvings={halvings}\nbest={best:?}\nsince_best={since}\n"))?;
    let mut f = std::io::BufWriter::new(std::fs::File::create(out.loss_log_path())?);
    writeln!(f, "step,loss,lr")?;
    for r in log {
        writeln!(f, "{},{:?},{:?}", r.step, r.loss, r.lr)?;
    }
    f.flush()?;
    Ok(())
}

fn load_state(out: &TrainOutput, cfg: &TrainConfig) -> Result<(Model, Adam, PlateauSchedule, Vec<LossRecord>)> {
    let ck = Checkpoint::load(&out.checkpoint_path())?;
    let model = Model::from_checkpoint(&ck)?;
    let adam = ck.adam_for(&model.store)?;
    let mut sched = PlateauSchedule::new(cfg.lr0, cfg.plateau_steps, cfg.max_halvings);
    let text = std::fs::read_to_string(out.state_path())?;
    let mut kv = std::collections::HashMap::new();
    for line in text.lines() {
        if let Some((k, v)) = line.split_once('=') {
            kv.insert(k.trim().to_string(), v.trim().to_string());
        }
    }
    let get = |k: &str| kv.get(k).ok_or_else(|| BweError::Checkpoint(format!("training state lacks `{k}`")));
    let bad = |k: &str| BweError::Checkpoint(format!("bad `{k}` in training state"));
    sched.restore(
        get("lr")?.parse().map_err(|_| bad("lr"))?,
        get("halvings")?.parse().map_err(|_| bad("halvings"))?,
        get("best")?.parse().map_err(|_| bad("best"))?,
        get("since_best")?.parse().map_err(|_| bad("since_best"))?,
    );
    let mut log = Vec::new();
    let csv = std::fs::read_to_string(out.loss_log_path())?;
    for line in csv.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() == 3 {
            log.push(LossRecord {
                step: f[0].parse().map_err(|_| bad("loss log"))?,
                loss: f[1].parse().map_err(|_| bad("loss log"))?,
                lr: f[2].parse().map_err(|_| bad("loss log"))?,
            });
        }
    }
    log.truncate(ck.step as usize);
    Ok((model, adam, sched, log))
}

/// Train from scratch (or resume from `output` when `resume` is set).
/// `model_seed` sets the initial weights.
pub fn train(
    model_cfg: &ModelConfig,
    model_seed: u64,
    data: &TrainData,
    cfg: &TrainConfig,
    output: Option<&TrainOutput>,
    resume: bool,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.clips.is_empty() {
        return Err(BweError::Data("no training clips".into()));
    }
    let (mut model, mut adam, mut sched, mut log) = match (resume, output) {
        (true, Some(out)) => {
            let (m, a, s, l) = load_state(out, cfg)?;
            if m.cfg != *model_cfg {
                return Err(BweError::ArchitectureMismatch {
                    expected: Model::new(model_cfg.clone(), model_seed)?.arch_hash(),
                    found: m.arch_hash(),
                });
            }
            (m, a, s, l)
        }
        (true, None) => return Err(BweError::InvalidArgument("resume needs an output directory".into())),
        (false, _) => {
            let m = Model::new(model_cfg.clone(), model_seed)?;
            let a = Adam::new(&m.store);
            (m, a, PlateauSchedule::new(cfg.lr0, cfg.plateau_steps, cfg.max_halvings), Vec::new())
        }
    };
    let cutoff = cfg.loss_high_band.then_some(model_cfg.cutoff_hz);
    let mss = MssLoss::new(&cfg.mss_fft_sizes, cutoff, model_cfg.sample_rate)?;
    let start = model.store.step as usize;
    for step in start..cfg.steps {
        let (crops, seed) = draw_crops(data, cfg, step);
        let lr = sched.lr();
        let loss = batch_loss(&mut model, data, &crops, &mss, seed, true, cfg.jobs)?;
        if let Some(max) = cfg.clip_grad_norm {
            let norm = model.store.clip_grad_norm(max);
            if !norm.is_finite() {
                return Err(BweError::Numeric(format!("gradient norm became {norm} at step {}", step + 1)));
            }
        }
        adam.step(&mut model.store, lr)?;
        sched.observe(loss);
        log.push(LossRecord { step: step + 1, loss, lr });
        if (step + 1) % 100 == 0 {
            log::info!("step {} loss {loss:.4} lr {lr:.2e}", step + 1);
        }
        if let Some(out) = output {
            if (step + 1) % cfg.checkpoint_every == 0 || step + 1 == cfg.steps {
                save_state(out, &model, &adam, &sched, &log)?;
            }
        }
    }
    Ok(TrainOutcome { model, log })
}
