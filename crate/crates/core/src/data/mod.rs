//! Synthetic datasets, corpus ingestion and clip loading.

pub mod manifest;
pub mod synth;

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dsp::wav::load_audio;
use crate::dsp::AudioBuffer;
use crate::error::{BweError, Result};
use crate::pitch::MultiPitchTrack;

pub use manifest::{ClipEntry, ClipSource, DatasetManifest, Split, MANIFEST_FORMAT};
pub use synth::{
    chord_pitches, gen_mono_clip, gen_poly_clip, render_clip, render_note, render_note_parts, NoteMeta, SynthClipMeta,
    CLIP_SECONDS, HARMONIC_COUNTS, MIDI_HIGH, MIDI_LOW, SAMPLE_RATE,
};

pub const TRAIN_FRACTION: f64 = 0.9;

const SPLIT_SALT: u64 = 0x5350_4c49_545f_3031;

/// `floor(fraction * n)` items go to train, chosen by a seeded shuffle.
pub fn assign_splits(n: usize, fraction: f64, seed: u64) -> Vec<Split> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ SPLIT_SALT));
    let n_train = (fraction * n as f64 + 1e-9).floor() as usize;
    let mut out = vec![Split::Test; n];
    for &i in &idx[..n_train.min(n)] {
        out[i] = Split::Train;
    }
    out
}

fn synth_manifest(kind: &str, seed: u64, clips: Vec<(String, SynthClipMeta)>) -> Result<DatasetManifest> {
    let splits = assign_splits(clips.len(), TRAIN_FRACTION, seed);
    let clips = clips
        .into_iter()
        .zip(splits)
        .map(|((id, meta), split)| {
            Ok(ClipEntry {
                id,
                split,
                duration_s: CLIP_SECONDS,
                source: ClipSource::Synth(synth::with_norm_gain(meta)?),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DatasetManifest { kind: kind.into(), seed, sample_rate: SAMPLE_RATE, clips })
}

/// Every MIDI pitch in range with every harmonic count: 135 clips.
pub fn gen_mono_dataset(seed: u64) -> Result<DatasetManifest> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut clips = Vec::new();
    for midi in MIDI_LOW..=MIDI_HIGH {
        for &h in &HARMONIC_COUNTS {
            let note = NoteMeta::random(midi, h, &mut rng);
            clips.push((
                format!("mono_m{midi:03}_h{h:02}"),
                SynthClipMeta { notes: vec![note], note_gains: vec![1.0], norm_gain: 1.0 },
            ));
        }
    }
    synth_manifest("mono", seed, clips)
}

/// One chord per root pitch and note count 2..=5: 180 clips.
pub fn gen_poly_dataset(seed: u64) -> Result<DatasetManifest> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut clips = Vec::new();
    for root in MIDI_LOW..=MIDI_HIGH {
        for n in 2..=5 {
            let notes: Vec<NoteMeta> = chord_pitches(root, n)?
                .into_iter()
                .map(|m| {
                    let h = HARMONIC_COUNTS[rng.random_range(0..HARMONIC_COUNTS.len())];
                    NoteMeta::random(m, h, &mut rng)
                })
                .collect();
            let gains = (0..n).map(|_| rng.random_range(0.5..=1.0)).collect();
            clips.push((format!("poly_r{root:03}_n{n}"), SynthClipMeta { notes, note_gains: gains, norm_gain: 1.0 }));
        }
    }
    synth_manifest("poly", seed, clips)
}

fn audio_files(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)?.filter_map(|e| e.ok().map(|e| e.path())).collect();
    entries.sort();
    for p in entries {
        if p.is_dir() {
            audio_files(&p, out)?;
        } else if p.extension().and_then(|e| e.to_str()).is_some_and(|e| e.eq_ignore_ascii_case("wav")) {
            out.push(p);
        }
    }
    Ok(())
}

/// Cut every WAV under `dir` into `clip_seconds` segments at 16 kHz mono.
/// Whole files go to one split; unreadable files are skipped with a warning.
pub fn ingest_corpus(dir: &Path, clip_seconds: f64, split_ratio: f64, seed: u64) -> Result<DatasetManifest> {
    if !(clip_seconds > 0.0) || !(0.0..=1.0).contains(&split_ratio) {
        return Err(BweError::InvalidArgument(format!("bad clip length {clip_seconds} s or split ratio {split_ratio}")));
    }
    let mut files = Vec::new();
    audio_files(dir, &mut files)?;
    let clip_len = (clip_seconds * SAMPLE_RATE as f64).round() as usize;
    let mut usable = Vec::new();
    for path in files {
        match load_audio(&path, SAMPLE_RATE) {
            Ok(x) if x.len() >= clip_len => usable.push((path, x.len() / clip_len)),
            Ok(_) => log::warn!("{} is shorter than one clip; skipped", path.display()),
            Err(e) => log::warn!("cannot read {}: {e}; skipped", path.display()),
        }
    }
    let splits = assign_splits(usable.len(), split_ratio, seed);
    let mut clips = Vec::new();
    for ((path, n), split) in usable.into_iter().zip(splits) {
        let abs = std::fs::canonicalize(&path).unwrap_or(path);
        let stem = abs.file_stem().and_then(|s| s.to_str()).unwrap_or("clip").to_string();
        for c in 0..n {
            clips.push(ClipEntry {
                id: format!("{stem}_{c:04}"),
                split,
                duration_s: clip_len as f64 / SAMPLE_RATE as f64,
                source: ClipSource::File { path: abs.clone(), start: c * clip_len, len: clip_len },
            });
        }
    }
    Ok(DatasetManifest { kind: "corpus".into(), seed, sample_rate: SAMPLE_RATE, clips })
}

/// A clip ready for training or evaluation.
#[derive(Debug, Clone)]
pub struct LoadedClip {
    pub id: String,
    pub wideband: AudioBuffer,
    /// Ground-truth tracks, available for synthetic clips.
    pub pitch: Option<MultiPitchTrack>,
}

pub fn load_clip(entry: &ClipEntry, base_dir: &Path, hop: usize) -> Result<LoadedClip> {
    let (wideband, pitch) = match &entry.source {
        ClipSource::Synth(meta) => {
            let (x, p) = render_clip(meta, hop)?;
            (x, Some(p))
        }
        ClipSource::File { path, start, len } => {
            let full = if path.is_absolute() { path.clone() } else { base_dir.join(path) };
            let x = load_audio(&full, SAMPLE_RATE).map_err(|e| BweError::Data(format!("{}: {e}", full.display())))?;
            (x.segment(*start, *len), None)
        }
    };
    Ok(LoadedClip { id: entry.id.clone(), wideband, pitch })
}
