//! Scoring pipelines on a dataset split and timing them.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use crate::bwe::Pipeline;
use crate::data::LoadedClip;
use crate::dsp::{low_pass, AudioBuffer};
use crate::error::{BweError, Result};
use crate::pitch::PitchSource;

use super::loss::lsd;

pub const METRICS_CSV_HEADER: [&str; 5] = ["clip_id", "model", "lsd", "runtime_ms", "realtime_pct"];

#[derive(Debug, Clone, PartialEq)]
pub struct MetricRecord {
    pub clip_id: String,
    pub model: String,
    pub lsd: f64,
    pub runtime_ms: f64,
    pub realtime_pct: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalPitch {
    /// Ground-truth tracks stored with each clip.
    Oracle,
    /// Built-in estimators run on the low band.
    Estimate,
}

#[derive(Debug, Clone)]
pub struct EvalReport {
    pub model: String,
    pub records: Vec<MetricRecord>,
}

impl EvalReport {
    pub fn mean_lsd(&self) -> f64 {
        self.records.iter().map(|r| r.lsd).sum::<f64>() / self.records.len() as f64
    }

    pub fn std_lsd(&self) -> f64 {
        let m = self.mean_lsd();
        (self.records.iter().map(|r| (r.lsd - m).powi(2)).sum::<f64>() / self.records.len() as f64).sqrt()
    }

    pub fn mean_realtime_pct(&self) -> f64 {
        self.records.iter().map(|r| r.realtime_pct).sum::<f64>() / self.records.len() as f64
    }
}

fn pitch_for(clip: &LoadedClip, mode: EvalPitch) -> Result<PitchSource> {
    match mode {
        EvalPitch::Oracle => clip
            .pitch
            .clone()
            .map(PitchSource::Oracle)
            .ok_or_else(|| BweError::Data(format!("clip {} has no ground-truth pitch", clip.id))),
        EvalPitch::Estimate => Ok(PitchSource::Estimate),
    }
}

fn score_clip(name: &str, pipeline: &Pipeline, clip: &LoadedClip, pitch: EvalPitch, cutoff_hz: f64, seed: u64) -> Result<MetricRecord> {
    let x_lb = low_pass(&clip.wideband, cutoff_hz)?;
    let source = pitch_for(clip, pitch)?;
    let t0 = Instant::now();
    let y = pipeline.run(&x_lb, &source, Some(&clip.wideband), seed)?;
    let runtime = t0.elapsed().as_secs_f64();
    let d = lsd(&clip.wideband, &y)?;
    if !d.is_finite() {
        return Err(BweError::Numeric(format!("LSD of clip {} is {d}", clip.id)));
    }
    Ok(MetricRecord {
        clip_id: clip.id.clone(),
        model: name.to_string(),
        lsd: d,
        runtime_ms: runtime * 1e3,
        realtime_pct: 100.0 * runtime / clip.wideband.duration_s(),
    })
}

/// Extend the low band of every clip and score it against the wide band.
/// With `jobs > 1` clips are spread over threads; records keep clip order.
pub fn evaluate(
    name: &str,
    pipeline: &Pipeline,
    clips: &[LoadedClip],
    pitch: EvalPitch,
    cutoff_hz: f64,
    seed: u64,
    jobs: usize,
) -> Result<EvalReport> {
    if clips.is_empty() {
        return Err(BweError::Data("evaluation split is empty".into()));
    }
    let score = |c: &LoadedClip| score_clip(name, pipeline, c, pitch, cutoff_hz, seed);
    let records = if jobs > 1 && clips.len() > 1 {
        let chunk = clips.len().div_ceil(jobs);
        std::thread::scope(|sc| {
            let handles: Vec<_> = clips
                .chunks(chunk)
                .map(|part| sc.spawn(move || part.iter().map(score).collect::<Result<Vec<_>>>()))
                .collect();
            let mut all = Vec::with_capacity(clips.len());
            for h in handles {
                all.extend(h.join().map_err(|_| BweError::Numeric("evaluation worker panicked".into()))??);
            }
            Ok::<_, BweError>(all)
        })?
    } else {
        clips.iter().map(score).collect::<Result<Vec<_>>>()?
    };
    Ok(EvalReport { model: name.to_string(), records })
}

pub fn write_metrics_csv(path: &Path, records: &[MetricRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| BweError::Data(e.to_string()))?;
    let err = |e: csv::Error| BweError::Data(e.to_string());
    w.write_record(METRICS_CSV_HEADER).map_err(err)?;
    for r in records {
        w.write_record([
            r.clip_id.clone(),
            r.model.clone(),
            format!("{:?}", r.lsd),
            format!("{:?}", r.runtime_ms),
            format!("{:?}", r.realtime_pct),
        ])
        .map_err(err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_metrics_jsonl(path: &Path, records: &[MetricRecord]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for r in records {
        let v = serde_json::json!({
            "clip_id": r.clip_id,
            "model": r.model,
            "lsd": r.lsd,
            "runtime_ms": r.runtime_ms,
            "realtime_pct": r.realtime_pct,
        });
        writeln!(f, "{v}")?;
    }
    f.flush()?;
    Ok(())
}

/// Host description stored next to benchmark numbers.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvFingerprint {
    pub os: String,
    pub arch: String,
    pub cpus: usize,
    pub cpu_model: String,
    pub crate_version: String,
}

impl EnvFingerprint {
    pub fn current() -> Self {
        let cpu_model = std::fs::read_to_string("/proc/cpuinfo")
            .ok()
            .and_then(|t| t.lines().find(|l| l.starts_with("model name")).and_then(|l| l.split_once(':')).map(|(_, v)| v.trim().to_string()))
            .unwrap_or_else(|| "unknown".into());
        Self {
            os: std::env::consts::OS.into(),
            arch: std::env::consts::ARCH.into(),
            cpus: std::thread::available_parallelism().map_or(1, |n| n.get()),
            cpu_model,
            crate_version: env!("CARGO_PKG_VERSION").into(),
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "os": self.os,
            "arch": self.arch,
            "cpus": self.cpus,
            "cpu_model": self.cpu_model,
            "crate_version": self.crate_version,
        })
    }
}

/// Real-time percentages of one pipeline over repeated runs.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub model: String,
    /// One value per repetition: 100 * total wall time / total audio duration.
    pub runs_pct: Vec<f64>,
    pub median_pct: f64,
    pub q1_pct: f64,
    pub q3_pct: f64,
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.len() == 1 {
        return sorted[0];
    }
    let pos = q * (sorted.len() - 1) as f64;
    let (i, frac) = (pos.floor() as usize, pos.fract());
    if i + 1 < sorted.len() {
        sorted[i] * (1.0 - frac) + sorted[i + 1] * frac
    } else {
        sorted[i]
    }
}

impl BenchRow {
    pub fn from_runs(model: &str, runs_pct: Vec<f64>) -> Self {
        let mut s = runs_pct.clone();
        s.sort_by(f64::total_cmp);
        Self { model: model.into(), median_pct: quantile(&s, 0.5), q1_pct: quantile(&s, 0.25), q3_pct: quantile(&s, 0.75), runs_pct }
    }

    pub fn iqr_pct(&self) -> f64 {
        self.q3_pct - self.q1_pct
    }
}

#[derive(Debug, Clone)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    pub env: EnvFingerprint,
    pub repetitions: usize,
    pub warmup: usize,
}

impl BenchReport {
    pub fn row(&self, model: &str) -> Option<&BenchRow> {
        self.rows.iter().find(|r| r.model == model)
    }

    pub fn to_json(&self) -> serde_json::Value {
        let rows: Vec<_> = self
            .rows
            .iter()
            .map(|r| {
                serde_json::json!({
                    "model": r.model,
                    "realtime_pct": r.median_pct,
                    "q1_pct": r.q1_pct,
                    "q3_pct": r.q3_pct,
                    "runs_pct": r.runs_pct,
                })
            })
            .collect();
        serde_json::json!({
            "repetitions": self.repetitions,
            "warmup": self.warmup,
            "env": self.env.to_json(),
            "models": rows,
        })
    }
}

/// Time each pipeline over `inputs` (low-band clip plus its pitch source);
/// `warmup` passes run first and are discarded.
pub fn bench_inference(
    pipelines: &[(String, Pipeline)],
    inputs: &[(AudioBuffer, PitchSource)],
    repetitions: usize,
    warmup: usize,
    seed: u64,
) -> Result<BenchReport> {
    if inputs.is_empty() || repetitions == 0 {
        return Err(BweError::InvalidArgument("benchmark needs clips and at least one repetition".into()));
    }
    let duration: f64 = inputs.iter().map(|(x, _)| x.duration_s()).sum();
    let mut rows = Vec::with_capacity(pipelines.len());
    for (name, p) in pipelines {
        for _ in 0..warmup {
            for (x, src) in inputs {
                std::hint::black_box(p.run(x, src, None, seed)?);
            }
        }
        let mut runs = Vec::with_capacity(repetitions);
        for _ in 0..repetitions {
            let t0 = Instant::now();
            for (x, src) in inputs {
                std::hint::black_box(p.run(x, src, None, seed)?);
            }
            runs.push(100.0 * t0.elapsed().as_secs_f64() / duration);
        }
        rows.push(BenchRow::from_runs(name, runs));
    }
    Ok(BenchReport { rows, env: EnvFingerprint::current(), repetitions, warmup })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bwe::SbrConfig;
    use crate::data::{gen_mono_clip, NoteMeta};
    use crate::pitch::MultiPitchTrack;

    fn clips(n: usize) -> Vec<LoadedClip> {
        (0..n)
            .map(|i| {
                let note = NoteMeta {
                    midi: 55 + i as u8,
                    n_harmonics: 20,
                    attack_s: 0.1,
                    decay_s: 0.1,
                    sustain_level: 0.9,
                    sustain_s: 2.0,
                    gain: 0.9,
                    seed: i as u64,
                };
                let (x, p) = gen_mono_clip(note).unwrap();
                LoadedClip { id: format!("c{i}"), wideband: x, pitch: Some(MultiPitchTrack::new(vec![p], 1).unwrap()) }
            })
            .collect()
    }

    #[test]
    fn null_is_worse_than_sbr_on_harmonic_clips() {
        let c = clips(3);
        let null = evaluate("null", &Pipeline::Null, &c, EvalPitch::Oracle, 2000.0, 0, 1).unwrap();
        let sbr = evaluate("sbr", &Pipeline::Sbr(SbrConfig::default()), &c, EvalPitch::Oracle, 2000.0, 0, 1).unwrap();
        assert!(null.mean_lsd().is_finite() && sbr.mean_lsd() < null.mean_lsd());
        assert!(null.records.iter().all(|r| r.lsd >= 0.0 && r.runtime_ms >= 0.0));
        let threaded = evaluate("sbr", &Pipeline::Sbr(SbrConfig::default()), &c, EvalPitch::Oracle, 2000.0, 0, 2).unwrap();
        let ids = |r: &EvalReport| r.records.iter().map(|m| (m.clip_id.clone(), m.lsd)).collect::<Vec<_>>();
        assert_eq!(ids(&threaded), ids(&sbr));
        assert!(evaluate("null", &Pipeline::Null, &[], EvalPitch::Oracle, 2000.0, 0, 1).is_err());
        let no_pitch = vec![LoadedClip { pitch: None, ..c[0].clone() }];
        assert!(evaluate("null", &Pipeline::Null, &no_pitch, EvalPitch::Oracle, 2000.0, 0, 1).is_err());
    }

    #[test]
    fn metric_files() {
        let dir = tempfile::tempdir().unwrap();
        let recs = vec![MetricRecord { clip_id: "a,b".into(), model: "sbr".into(), lsd: 1.5, runtime_ms: 2.0, realtime_pct: 0.05 }];
        write_metrics_csv(&dir.path().join("m.csv"), &recs).unwrap();
        let text = std::fs::read_to_string(dir.path().join("m.csv")).unwrap();
        assert_eq!(text.lines().next().unwrap(), "clip_id,model,lsd,runtime_ms,realtime_pct");
        assert_eq!(text.lines().nth(1).unwrap(), "\"a,b\",sbr,1.5,2.0,0.05");
        write_metrics_jsonl(&dir.path().join("m.jsonl"), &recs).unwrap();
        let line = std::fs::read_to_string(dir.path().join("m.jsonl")).unwrap();
        let v: serde_json::Value = serde_json::from_str(line.trim()).unwrap();
        assert_eq!(v["lsd"], 1.5);
        assert_eq!(v["clip_id"], "a,b");
    }

    #[test]
    fn bench_statistics() {
        let r = BenchRow::from_runs("x", vec![4.0, 1.0, 3.0, 2.0, 5.0]);
        assert_eq!((r.median_pct, r.q1_pct, r.q3_pct), (3.0, 2.0, 4.0));
        assert_eq!(r.iqr_pct(), 2.0);
        let c = clips(1);
        let inputs = vec![(low_pass(&c[0].wideband, 2000.0).unwrap(), PitchSource::Estimate)];
        let ps = vec![("null".to_string(), Pipeline::Null), ("sbr".to_string(), Pipeline::Sbr(SbrConfig::default()))];
        let rep = bench_inference(&ps, &inputs, 3, 1, 0).unwrap();
        assert_eq!(rep.rows.len(), 2);
        assert!(rep.row("null").unwrap().median_pct < rep.row("sbr").unwrap().median_pct);
        assert_eq!(rep.to_json()["models"][1]["model"], "sbr");
    }
}
