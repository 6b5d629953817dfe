//! Synthetic harmonic-plus-noise note and chord generator.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dsp::stft::frame_count;
use crate::dsp::{mix_at_snr, pink_noise, AudioBuffer};
use crate::error::{BweError, Result};
use crate::pitch::{midi_to_hz, MultiPitchTrack, PitchTrack};
use crate::synth::asd_envelope;

pub const MIDI_LOW: u8 = 48;
pub const MIDI_HIGH: u8 = 92;
pub const HARMONIC_COUNTS: [usize; 3] = [10, 15, 20];
pub const NOISE_SNR_DB: f64 = 10.0;
pub const CLIP_SECONDS: f64 = 4.0;
pub const SAMPLE_RATE: u32 = 16000;
/// Peak level generated audio is normalized to when it would exceed it.
pub const PEAK_LIMIT: f64 = 0.99;

/// One synthetic note: harmonic series with `1/h^2` amplitudes plus pink
/// noise, shaped by an attack/sustain/decay envelope and a gain.
#[derive(Debug, Clone, PartialEq)]
pub struct NoteMeta {
    pub midi: u8,
    pub n_harmonics: usize,
    pub attack_s: f64,
    pub decay_s: f64,
    pub sustain_level: f64,
    pub sustain_s: f64,
    pub gain: f64,
    pub seed: u64,
}

impl NoteMeta {
    /// Envelope and gain drawn from the generator ranges.
    pub fn random<R: Rng>(midi: u8, n_harmonics: usize, rng: &mut R) -> Self {
        Self {
            midi,
            n_harmonics,
            attack_s: rng.random_range(0.0..=0.3),
            decay_s: rng.random_range(0.0..=0.3),
            sustain_level: rng.random_range(0.5..=1.0),
            sustain_s: rng.random_range(0.0..=2.0),
            gain: rng.random_range(0.75..=1.0),
            seed: rng.next_u64(),
        }
    }

    pub fn f0_hz(&self) -> f64 {
        midi_to_hz(self.midi as f64)
    }

    pub fn validate(&self) -> Result<()> {
        if !(MIDI_LOW..=MIDI_HIGH).contains(&self.midi) {
            return Err(BweError::Data(format!("MIDI pitch {} outside [{MIDI_LOW}, {MIDI_HIGH}]", self.midi)));
        }
        if self.n_harmonics == 0 {
            return Err(BweError::Data("note needs at least one harmonic".into()));
        }
        if !(0.0..=1.0).contains(&self.sustain_level) || !(self.gain > 0.0 && self.gain <= 1.0) {
            return Err(BweError::Data(format!("note level {} / gain {} out of range", self.sustain_level, self.gain)));
        }
        Ok(())
    }
}

/// A generated clip: one note (monophonic) or a chord of 2 to 5 notes.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthClipMeta {
    pub notes: Vec<NoteMeta>,
    /// Mixing gain per note; `[1.0]` for monophonic clips.
    pub note_gains: Vec<f64>,
    /// Scale applied after mixing to keep the peak at or below [`PEAK_LIMIT`].
    pub norm_gain: f64,
}

/// Separately rendered parts of a note, before envelope and gain.
pub struct NoteParts {
    pub harmonic: AudioBuffer,
    /// Pink noise already scaled to the target SNR.
    pub noise: AudioBuffer,
    pub envelope: AudioBuffer,
}

pub fn render_note_parts(note: &NoteMeta) -> Result<NoteParts> {
    note.validate()?;
    let n = (CLIP_SECONDS * SAMPLE_RATE as f64).round() as usize;
    let f0 = note.f0_hz();
    let nyquist = SAMPLE_RATE as f64 / 2.0;
    let mut rng = ChaCha8Rng::seed_from_u64(note.seed);
    let phases: Vec<f64> = (0..note.n_harmonics).map(|_| rng.random_range(0.0..TAU)).collect();
    let mut h = vec![0.0; n];
    for (k, phase) in phases.iter().enumerate() {
        let hn = (k + 1) as f64;
        if hn * f0 >= nyquist {
            break;
        }
        let w = TAU * hn * f0 / SAMPLE_RATE as f64;
        let a = 1.0 / (hn * hn);
        for (i, v) in h.iter_mut().enumerate() {
            *v += a * (w * i as f64 + phase).sin();
        }
    }
    let harmonic = AudioBuffer::new(h, SAMPLE_RATE)?;
    let pink = pink_noise(n, SAMPLE_RATE, note.seed.wrapping_add(1))?;
    let mixed = mix_at_snr(&harmonic, &pink, NOISE_SNR_DB)?;
    let noise: Vec<f64> = mixed.samples().iter().zip(harmonic.samples()).map(|(m, s)| m - s).collect();
    let envelope = asd_envelope(note.attack_s, note.decay_s, note.sustain_level, note.sustain_s, CLIP_SECONDS, SAMPLE_RATE)?;
    Ok(NoteParts { harmonic, noise: AudioBuffer::new(noise, SAMPLE_RATE)?, envelope })
}

/// `(harmonic + noise) * envelope * gain`.
pub fn render_note(note: &NoteMeta) -> Result<AudioBuffer> {
    let p = render_note_parts(note)?;
    let s = p
        .harmonic
        .samples()
        .iter()
        .zip(p.noise.samples())
        .zip(p.envelope.samples())
        .map(|((h, w), e)| (h + w) * e * note.gain)
        .collect();
    AudioBuffer::new(s, SAMPLE_RATE)
}

/// Ground-truth track of a note: its f0 where the envelope is non-zero.
pub fn note_pitch(note: &NoteMeta, hop: usize) -> Result<PitchTrack> {
    let env = asd_envelope(note.attack_s, note.decay_s, note.sustain_level, note.sustain_s, CLIP_SECONDS, SAMPLE_RATE)?;
    let n_frames = frame_count(env.len(), hop);
    let f0 = note.f0_hz();
    let on: Vec<bool> = (0..n_frames).map(|t| env.samples()[(t * hop).min(env.len() - 1)] > 0.0).collect();
    let track: Vec<f64> = on.iter().map(|&v| if v { f0 } else { 0.0 }).collect();
    let conf = on.iter().map(|&v| if v { 1.0 } else { 0.0 }).collect();
    PitchTrack::new(track, conf, hop, SAMPLE_RATE)
}

fn check_pitch_classes(notes: &[NoteMeta]) -> Result<()> {
    for (i, a) in notes.iter().enumerate() {
        if let Some(b) = notes[i + 1..].iter().find(|b| b.midi % 12 == a.midi % 12) {
            return Err(BweError::Data(format!("pitch class repeated in chord: MIDI {} and {}", a.midi, b.midi)));
        }
    }
    Ok(())
}

fn peak_normalize(mut s: Vec<f64>) -> (Vec<f64>, f64) {
    let peak = s.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let g = if peak > PEAK_LIMIT { PEAK_LIMIT / peak } else { 1.0 };
    if g != 1.0 {
        s.iter_mut().for_each(|v| *v *= g);
    }
    (s, g)
}

/// Mix the notes with their gains, without peak normalization.
pub fn mix_notes(meta: &SynthClipMeta) -> Result<AudioBuffer> {
    if meta.notes.is_empty() || meta.notes.len() != meta.note_gains.len() {
        return Err(BweError::Data("clip needs one gain per note and at least one note".into()));
    }
    check_pitch_classes(&meta.notes)?;
    let n = (CLIP_SECONDS * SAMPLE_RATE as f64).round() as usize;
    let mut out = vec![0.0; n];
    for (note, g) in meta.notes.iter().zip(&meta.note_gains) {
        for (o, v) in out.iter_mut().zip(render_note(note)?.samples()) {
            *o += g * v;
        }
    }
    AudioBuffer::new(out, SAMPLE_RATE)
}

/// Audio (with `norm_gain` applied) and one ground-truth track per note,
/// in note order.
pub fn render_clip(meta: &SynthClipMeta, hop: usize) -> Result<(AudioBuffer, MultiPitchTrack)> {
    let mix = mix_notes(meta)?;
    let audio = AudioBuffer::new(mix.samples().iter().map(|v| v * meta.norm_gain).collect(), SAMPLE_RATE)?;
    let tracks = meta.notes.iter().map(|n| note_pitch(n, hop)).collect::<Result<Vec<_>>>()?;
    Ok((audio, MultiPitchTrack::new(tracks, meta.notes.len())?))
}

/// Fill in `norm_gain` for a clip from its rendered mix.
pub fn with_norm_gain(mut meta: SynthClipMeta) -> Result<SynthClipMeta> {
    let (_, g) = peak_normalize(mix_notes(&meta)?.into_samples());
    meta.norm_gain = g;
    Ok(meta)
}

pub fn gen_mono_clip(note: NoteMeta) -> Result<(AudioBuffer, PitchTrack)> {
    let meta = with_norm_gain(SynthClipMeta { notes: vec![note], note_gains: vec![1.0], norm_gain: 1.0 })?;
    let (audio, mut tracks) = render_clip(&meta, crate::pitch::PITCH_HOP)?;
    Ok((audio, tracks.tracks.remove(0)))
}

/// Notes of the `n_notes`-note chord built on `root` by stacking diatonic
/// thirds of its major scale (1, 3, 5, 7, 9), folded down by octaves into
/// the generator range.
pub fn chord_pitches(root: u8, n_notes: usize) -> Result<Vec<u8>> {
    const STACK: [u8; 5] = [0, 4, 7, 11, 14];
    if !(2..=STACK.len()).contains(&n_notes) {
        return Err(BweError::Data(format!("chords have 2 to 5 notes, got {n_notes}")));
    }
    if !(MIDI_LOW..=MIDI_HIGH).contains(&root) {
        return Err(BweError::Data(format!("chord root {root} outside [{MIDI_LOW}, {MIDI_HIGH}]")));
    }
    Ok(STACK[..n_notes]
        .iter()
        .map(|s| {
            let mut m = root + s;
            while m > MIDI_HIGH {
                m -= 12;
            }
            m
        })
        .collect())
}

pub fn gen_poly_clip(notes: Vec<NoteMeta>, note_gains: Vec<f64>) -> Result<(AudioBuffer, MultiPitchTrack)> {
    if !(2..=5).contains(&notes.len()) {
        return Err(BweError::Data(format!("chords have 2 to 5 notes, got {}", notes.len())));
    }
    if note_gains.iter().any(|g| !(0.5..=1.0).contains(g)) {
        return Err(BweError::Data("note gains must lie in [0.5, 1]".into()));
    }
    let meta = with_norm_gain(SynthClipMeta { notes, note_gains, norm_gain: 1.0 })?;
    render_clip(&meta, crate::pitch::PITCH_HOP)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::stft::{StftPlan, Window};

    fn note(midi: u8, h: usize) -> NoteMeta {
        NoteMeta { midi, n_harmonics: h, attack_s: 0.1, decay_s: 0.2, sustain_level: 0.8, sustain_s: 1.5, gain: 0.9, seed: 11 }
    }

    #[test]
    fn c3_frequency() {
        assert!((note(48, 10).f0_hz() - 130.82).abs() < 0.1);
        assert!(render_note(&note(47, 10)).is_err());
        assert!(render_note(&note(93, 10)).is_err());
    }

    #[test]
    fn second_harmonic_is_quarter_amplitude() {
        let p = render_note_parts(&note(57, 10)).unwrap();
        let plan = StftPlan::new(4096, 1024, Window::Hann).unwrap();
        let s = plan.analyze(p.harmonic.samples());
        let row = s.row(30);
        let bin = |f: f64| (f * 4096.0 / 16000.0).round() as usize;
        let peak = |k: usize| (k - 2..=k + 2).map(|j| row[j].norm()).fold(0.0, f64::max);
        let db = 20.0 * (peak(bin(440.0)) / peak(bin(220.0))).log10();
        assert!((db + 12.04).abs() < 0.3, "{db}");
    }

    #[test]
    fn noise_sits_ten_db_below_harmonics() {
        let p = render_note_parts(&note(60, 15)).unwrap();
        let snr = 10.0 * (p.harmonic.power() / p.noise.power()).log10();
        assert!((snr - 10.0).abs() <= 0.1, "{snr}");
    }

    #[test]
    fn chords_have_distinct_pitch_classes() {
        for root in MIDI_LOW..=MIDI_HIGH {
            for n in 2..=5 {
                let c = chord_pitches(root, n).unwrap();
                assert_eq!(c.len(), n);
                assert!(c.iter().all(|m| (MIDI_LOW..=MIDI_HIGH).contains(m)));
                let mut pcs: Vec<u8> = c.iter().map(|m| m % 12).collect();
                pcs.sort();
                pcs.dedup();
                assert_eq!(pcs.len(), n);
            }
        }
        assert!(gen_poly_clip(vec![note(48, 10), note(60, 10)], vec![1.0, 1.0]).is_err());
    }

    #[test]
    fn poly_mix_is_linear() {
        let notes = vec![note(60, 10), NoteMeta { seed: 12, ..note(64, 15) }];
        let gains = vec![0.6, 0.9];
        let (mix, tracks) = gen_poly_clip(notes.clone(), gains.clone()).unwrap();
        assert_eq!(tracks.n_voices(), 2);
        let a = render_note(&notes[0]).unwrap();
        let b = render_note(&notes[1]).unwrap();
        let meta = with_norm_gain(SynthClipMeta { notes, note_gains: gains.clone(), norm_gain: 1.0 }).unwrap();
        for i in (0..mix.len()).step_by(101) {
            let expect = meta.norm_gain * (gains[0] * a.samples()[i] + gains[1] * b.samples()[i]);
            assert_eq!(mix.samples()[i], expect);
        }
        assert!(mix.peak() <= 1.0);
    }

    #[test]
    fn pitch_track_follows_envelope() {
        let n = note(69, 10);
        let t = note_pitch(&n, 256).unwrap();
        assert_eq!(t.len(), 250);
        assert_eq!(t.f0[0], 0.0);
        assert!((t.f0[10] - 440.0).abs() < 1e-9);
        // Note ends at 1.8 s = frame 112.5.
        assert_eq!(t.f0[120], 0.0);
    }
}
