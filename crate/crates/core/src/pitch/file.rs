//! Pitch CSV files.
//!
//! UTF-8 text, `.` as decimal point, one header line:
//!
//! ```text
//! time_s,f0_hz,voice_index,confidence
//! 0,130.8127826502993,0,1
//! ```
//!
//! `voice_index` (default 0) and `confidence` (default 1) may be omitted.
//! Times must increase within each voice. On load, each model frame takes
//! the row nearest in time.

use std::io::Write;
use std::path::Path;

use super::{MultiPitchTrack, PitchTrack};
use crate::error::{BweError, Result};

pub const PITCH_CSV_HEADER: &str = "time_s,f0_hz,voice_index,confidence";

pub fn save_pitch_file(path: &Path, tracks: &MultiPitchTrack) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "{PITCH_CSV_HEADER}")?;
    for (v, track) in tracks.tracks.iter().enumerate() {
        for (t, (f0, c)) in track.f0.iter().zip(&track.confidence).enumerate() {
            let time = (t * track.hop) as f64 / track.sample_rate as f64;
            writeln!(f, "{time},{f0},{v},{c}")?;
        }
    }
    f.flush()?;
    Ok(())
}

/// Load and reframe to `hop`. `n_frames` defaults to the span of the file.
pub fn load_pitch_file(path: &Path, sample_rate: u32, hop: usize, n_frames: Option<usize>) -> Result<MultiPitchTrack> {
    let text = std::fs::read_to_string(path)?;
    let perr = |line: usize, msg: String| BweError::Parse { path: path.to_path_buf(), line, msg };
    let mut voices: Vec<Vec<(f64, f64, f64)>> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || (i == 0 && line.starts_with("time")) {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() < 2 || fields.len() > 4 {
            return Err(perr(i + 1, format!("expected 2 to 4 fields, found {}", fields.len())));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|e| perr(i + 1, format!("bad number `{s}`: {e}")));
        let time = num(fields[0])?;
        let f0 = num(fields[1])?;
        let voice = match fields.get(2) {
            Some(s) => s.parse::<usize>().map_err(|e| perr(i + 1, format!("bad voice index `{s}`: {e}")))?,
            None => 0,
        };
        let conf = fields.get(3).map(|s| num(s)).transpose()?.unwrap_or(1.0);
        if !time.is_finite() || time < 0.0 || !f0.is_finite() || f0 < 0.0 {
            return Err(perr(i + 1, "time and f0 must be finite and non-negative".into()));
        }
        if voice >= voices.len() {
            voices.resize(voice + 1, Vec::new());
        }
        if voices[voice].last().is_some_and(|&(t, _, _)| time <= t) {
            return Err(perr(i + 1, format!("time {time} does not increase for voice {voice}")));
        }
        voices[voice].push((time, f0, conf));
    }
    if voices.iter().all(Vec::is_empty) {
        log::warn!("pitch file {} has no rows; using an empty track", path.display());
        return MultiPitchTrack::new(Vec::new(), 1);
    }
    let sr = sample_rate as f64;
    let span = voices.iter().filter_map(|v| v.last()).map(|r| r.0).fold(0.0, f64::max);
    let n_frames = n_frames.unwrap_or((span * sr / hop as f64).round() as usize + 1);
    let n_voices = voices.len();
    let tracks = voices
        .into_iter()
        .map(|rows| {
            let mut f0 = vec![0.0; n_frames];
            let mut conf = vec![0.0; n_frames];
            if !rows.is_empty() {
                let mut j = 0;
                for t in 0..n_frames {
                    let time = (t * hop) as f64 / sr;
                    while j + 1 < rows.len() && (rows[j + 1].0 - time).abs() <= (rows[j].0 - time).abs() {
                        j += 1;
                    }
                    f0[t] = rows[j].1;
                    conf[t] = rows[j].2;
                }
            }
            PitchTrack::new(f0, conf, hop, sample_rate)
        })
        .collect::<Result<Vec<_>>>()?;
    MultiPitchTrack::new(tracks, n_voices)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.csv");
        let a = PitchTrack::new(vec![130.8127826502993, 0.0, 131.5], vec![1.0, 0.25, 0.875], 256, 16000).unwrap();
        let b = PitchTrack::constant(440.0, 3, 256, 16000).unwrap();
        let m = MultiPitchTrack::new(vec![a, b], 2).unwrap();
        save_pitch_file(&path, &m).unwrap();
        assert_eq!(load_pitch_file(&path, 16000, 256, Some(3)).unwrap(), m);
        assert_eq!(load_pitch_file(&path, 16000, 256, None).unwrap(), m);
    }

    #[test]
    fn nearest_frame_reframing() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.csv");
        std::fs::write(&path, "time_s,f0_hz\n0.0,100\n0.01,200\n0.045,300\n").unwrap();
        let m = load_pitch_file(&path, 16000, 160, Some(6)).unwrap();
        assert_eq!(m.tracks[0].f0, vec![100.0, 200.0, 200.0, 300.0, 300.0, 300.0]);
    }

    #[test]
    fn malformed_and_empty_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.csv");
        std::fs::write(&path, "time_s,f0_hz\n0.1,100\n0.05,100\n").unwrap();
        assert!(matches!(load_pitch_file(&path, 16000, 256, None), Err(BweError::Parse { line: 3, .. })));
        std::fs::write(&path, "time_s,f0_hz\n0.1,abc\n").unwrap();
        assert!(matches!(load_pitch_file(&path, 16000, 256, None), Err(BweError::Parse { line: 2, .. })));
        std::fs::write(&path, "time_s,f0_hz,voice_index,confidence\n").unwrap();
        assert_eq!(load_pitch_file(&path, 16000, 256, None).unwrap().n_voices(), 0);
    }
}
