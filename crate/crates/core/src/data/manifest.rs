//! Dataset manifests.
//!
//! Plain text, one `key=value` per line. A header block is followed by one
//! block per clip, each opened by a `[clip]` line. Synthetic clips carry one
//! `note=` line per note with the fields
//! `midi,n_harmonics,attack_s,decay_s,sustain_level,sustain_s,gain,seed`.
//! Floats are written in shortest round-trip form.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use super::synth::{NoteMeta, SynthClipMeta};
use crate::error::{BweError, Result};

pub const MANIFEST_FORMAT: &str = "bwe-manifest/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = BweError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(BweError::InvalidArgument(format!("unknown split `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ClipSource {
    Synth(SynthClipMeta),
    /// Segment `[start, start + len)` (samples at the manifest rate) of an
    /// audio file; relative paths resolve against the manifest directory.
    File { path: PathBuf, start: usize, len: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClipEntry {
    pub id: String,
    pub split: Split,
    pub duration_s: f64,
    pub source: ClipSource,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    /// `mono`, `poly` or `corpus`.
    pub kind: String,
    pub seed: u64,
    pub sample_rate: u32,
    pub clips: Vec<ClipEntry>,
}

impl DatasetManifest {
    pub fn split(&self, split: Split) -> Vec<&ClipEntry> {
        self.clips.iter().filter(|c| c.split == split).collect()
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "format={MANIFEST_FORMAT}");
        let _ = writeln!(s, "kind={}", self.kind);
        let _ = writeln!(s, "seed={}", self.seed);
        let _ = writeln!(s, "sample_rate={}", self.sample_rate);
        let _ = writeln!(s, "clips={}", self.clips.len());
        for c in &self.clips {
            let _ = writeln!(s, "\n[clip]");
            let _ = writeln!(s, "id={}", c.id);
            let _ = writeln!(s, "split={}", c.split.as_str());
            let _ = writeln!(s, "duration_s={:?}", c.duration_s);
            match &c.source {
                ClipSource::Synth(m) => {
                    let _ = writeln!(s, "source=synth");
                    for n in &m.notes {
                        let _ = writeln!(
                            s,
                            "note={},{},{:?},{:?},{:?},{:?},{:?},{}",
                            n.midi, n.n_harmonics, n.attack_s, n.decay_s, n.sustain_level, n.sustain_s, n.gain, n.seed
                        );
                    }
                    let gains: Vec<String> = m.note_gains.iter().map(|g| format!("{g:?}")).collect();
                    let _ = writeln!(s, "note_gains={}", gains.join(","));
                    let _ = writeln!(s, "norm_gain={:?}", m.norm_gain);
                }
                ClipSource::File { path, start, len } => {
                    let _ = writeln!(s, "source=file");
                    let _ = writeln!(s, "path={}", path.display());
                    let _ = writeln!(s, "start={start}");
                    let _ = writeln!(s, "len={len}");
                }
            }
        }
        s
    }

    pub fn from_text(text: &str, origin: &Path) -> Result<Self> {
        let perr = |line: usize, msg: String| BweError::Parse { path: origin.to_path_buf(), line, msg };
        let mut m = DatasetManifest { kind: String::new(), seed: 0, sample_rate: 16000, clips: Vec::new() };
        let mut declared = None;
        let mut cur: Option<ClipBuilder> = None;
        for (i, raw) in text.lines().enumerate() {
            let ln = i + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if line == "[clip]" {
                if let Some(b) = cur.take() {
                    m.clips.push(b.build().map_err(|e| perr(ln, e))?);
                }
                cur = Some(ClipBuilder::default());
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| perr(ln, format!("expected key=value, got `{line}`")))?;
            let num = |v: &str| v.parse::<f64>().map_err(|e| perr(ln, format!("{k}: {e}")));
            let uint = |v: &str| v.parse::<u64>().map_err(|e| perr(ln, format!("{k}: {e}")));
            match cur.as_mut() {
                None => match k {
                    "format" if v == MANIFEST_FORMAT => {}
                    "format" => return Err(perr(ln, format!("unsupported manifest format `{v}`"))),
                    "kind" => m.kind = v.to_string(),
                    "seed" => m.seed = uint(v)?,
                    "sample_rate" => m.sample_rate = uint(v)? as u32,
                    "clips" => declared = Some(uint(v)? as usize),
                    other => return Err(perr(ln, format!("unknown header key `{other}`"))),
                },
                Some(b) => match k {
                    "id" => b.id = Some(v.to_string()),
                    "split" => b.split = Some(v.parse().map_err(|e: BweError| perr(ln, e.to_string()))?),
                    "duration_s" => b.duration_s = Some(num(v)?),
                    "source" => b.source = Some(v.to_string()),
                    "note" => {
                        let f: Vec<&str> = v.split(',').collect();
                        if f.len() != 8 {
                            return Err(perr(ln, format!("note needs 8 fields, found {}", f.len())));
                        }
                        b.notes.push(NoteMeta {
                            midi: uint(f[0])? as u8,
                            n_harmonics: uint(f[1])? as usize,
                            attack_s: num(f[2])?,
                            decay_s: num(f[3])?,
                            sustain_level: num(f[4])?,
                            sustain_s: num(f[5])?,
                            gain: num(f[6])?,
                            seed: uint(f[7])?,
                        });
                    }
                    "note_gains" => b.note_gains = v.split(',').map(num).collect::<Result<_>>()?,
                    "norm_gain" => b.norm_gain = Some(num(v)?),
                    "path" => b.path = Some(PathBuf::from(v)),
                    "start" => b.start = Some(uint(v)? as usize),
                    "len" => b.len = Some(uint(v)? as usize),
                    other => return Err(perr(ln, format!("unknown clip key `{other}`"))),
                },
            }
        }
        if let Some(b) = cur.take() {
            m.clips.push(b.build().map_err(|e| perr(text.lines().count(), e))?);
        }
        if let Some(n) = declared {
            if n != m.clips.len() {
                return Err(perr(0, format!("header declares {n} clips, found {}", m.clips.len())));
            }
        }
        Ok(m)
    }

    /// Hex SHA-256 of the text form.
    pub fn hash(&self) -> String {
        Sha256::digest(self.to_text().as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?, path)
    }
}

#[derive(Default)]
struct ClipBuilder {
    id: Option<String>,
    split: Option<Split>,
    duration_s: Option<f64>,
    source: Option<String>,
    notes: Vec<NoteMeta>,
    note_gains: Vec<f64>,
    norm_gain: Option<f64>,
    path: Option<PathBuf>,
    start: Option<usize>,
    len: Option<usize>,
}

impl ClipBuilder {
    fn build(self) -> std::result::Result<ClipEntry, String> {
        let id = self.id.ok_or("clip without id")?;
        let split = self.split.ok_or_else(|| format!("clip {id} without split"))?;
        let duration_s = self.duration_s.ok_or_else(|| format!("clip {id} without duration"))?;
        let source = match self.source.as_deref() {
            Some("synth") => {
                if self.notes.is_empty() || self.notes.len() != self.note_gains.len() {
                    return Err(format!("clip {id}: notes and note_gains disagree"));
                }
                ClipSource::Synth(SynthClipMeta {
                    notes: self.notes,
                    note_gains: self.note_gains,
                    norm_gain: self.norm_gain.unwrap_or(1.0),
                })
            }
            Some("file") => ClipSource::File {
                path: self.path.ok_or_else(|| format!("clip {id} without path"))?,
                start: self.start.unwrap_or(0),
                len: self.len.ok_or_else(|| format!("clip {id} without len"))?,
            },
            other => return Err(format!("clip {id}: unknown source {other:?}")),
        };
        Ok(ClipEntry { id, split, duration_s, source })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> DatasetManifest {
        let note = NoteMeta {
            midi: 61,
            n_harmonics: 15,
            attack_s: 0.1234567890123,
            decay_s: 0.3,
            sustain_level: 2.0 / 3.0,
            sustain_s: 1.0,
            gain: 0.8,
            seed: u64::MAX,
        };
        DatasetManifest {
            kind: "poly".into(),
            seed: 3,
            sample_rate: 16000,
            clips: vec![
                ClipEntry {
                    id: "a".into(),
                    split: Split::Train,
                    duration_s: 4.0,
                    source: ClipSource::Synth(SynthClipMeta {
                        notes: vec![note.clone(), NoteMeta { midi: 65, ..note }],
                        note_gains: vec![0.5, 0.1 + 0.2],
                        norm_gain: 0.97,
                    }),
                },
                ClipEntry {
                    id: "b".into(),
                    split: Split::Test,
                    duration_s: 4.0,
                    source: ClipSource::File { path: "x/y.wav".into(), start: 64000, len: 64000 },
                },
            ],
        }
    }

    #[test]
    fn text_round_trip_is_exact() {
        let m = sample();
        let back = DatasetManifest::from_text(&m.to_text(), Path::new("m.txt")).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.hash(), m.hash());
        assert_eq!(m.hash().len(), 64);
    }

    #[test]
    fn malformed_manifests_are_rejected() {
        let p = Path::new("m.txt");
        assert!(DatasetManifest::from_text("format=other/9\n", p).is_err());
        assert!(DatasetManifest::from_text("clips=2\n[clip]\nid=a\nsplit=train\nduration_s=4\nsource=file\npath=a\nlen=1\n", p).is_err());
        assert!(matches!(
            DatasetManifest::from_text("[clip]\nid=a\nsplit=val\n", p),
            Err(BweError::Parse { line: 3, .. })
        ));
    }
}
