use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use bwe_core::bwe::{bwe_ddsp_cyclic, CyclicOptions, Pipeline, PipelineKind};
use bwe_core::controller::Model;
use bwe_core::data::{gen_mono_dataset, gen_poly_dataset, ingest_corpus, load_clip, DatasetManifest, LoadedClip, Split};
use bwe_core::dsp::wav::{read_wav, resample, write_wav, WavFormat};
use bwe_core::dsp::low_pass;
use bwe_core::pitch::{save_pitch_file, PitchSource};
use bwe_core::train::{
    bench_inference, evaluate, train as run_training, write_metrics_csv, write_metrics_jsonl, EvalPitch, EvalReport,
    FeatureCache, MetricRecord, TrainData, TrainOutput, TrainPitch,
};

use crate::config::{RunConfig, RUN_CONFIG_FILE};
use crate::{CliError, CliResult};

pub const MANIFEST_FILE: &str = "manifest.txt";

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn required<'a>(v: &'a Option<PathBuf>, flag: &str) -> CliResult<&'a Path> {
    v.as_deref().ok_or_else(|| usage(format!("{flag} is required")))
}

fn write_config(cfg: &RunConfig, path: &Path) -> CliResult<()> {
    std::fs::write(path, cfg.to_text())?;
    Ok(())
}

/// Manifest path and the directory relative clip paths resolve against.
fn manifest_location(data: &Path) -> (PathBuf, PathBuf) {
    if data.is_dir() {
        (data.join(MANIFEST_FILE), data.to_path_buf())
    } else {
        (data.to_path_buf(), data.parent().map(Path::to_path_buf).unwrap_or_default())
    }
}

fn load_split(cfg: &RunConfig) -> CliResult<(DatasetManifest, Vec<LoadedClip>)> {
    let (path, base) = manifest_location(required(&cfg.data, "--data")?);
    let manifest = DatasetManifest::load(&path)?;
    let split = if cfg.split == "train" { Split::Train } else { Split::Test };
    let clips = manifest
        .split(split)
        .into_iter()
        .map(|e| load_clip(e, &base, cfg.model.hop))
        .collect::<bwe_core::Result<Vec<_>>>()?;
    Ok((manifest, clips))
}

// ------------------------------------------------------------ gen-data

pub fn gen_data(cfg: &RunConfig, force: bool, manifest_only: bool) -> CliResult<()> {
    let out = required(&cfg.out, "--out")?;
    if out.is_dir() && std::fs::read_dir(out)?.next().is_some() {
        if !force {
            return Err(usage(format!("{} is not empty; pass --force to replace it", out.display())));
        }
        std::fs::remove_dir_all(out)?;
    }
    std::fs::create_dir_all(out)?;
    let manifest = match cfg.kind.as_str() {
        "mono" => gen_mono_dataset(cfg.seed)?,
        "poly" => gen_poly_dataset(cfg.seed)?,
        _ => {
            let dir = required(&cfg.corpus, "--corpus")?;
            ingest_corpus(dir, cfg.clip_seconds, cfg.split_ratio, cfg.seed)?
        }
    };
    if !manifest_only && cfg.kind != "corpus" {
        let (audio, pitch) = (out.join("audio"), out.join("pitch"));
        std::fs::create_dir_all(&audio)?;
        std::fs::create_dir_all(&pitch)?;
        for e in &manifest.clips {
            let clip = load_clip(e, out, cfg.model.hop)?;
            write_wav(&audio.join(format!("{}.wav", e.id)), &clip.wideband, WavFormat::Float32)?;
            if let Some(p) = &clip.pitch {
                save_pitch_file(&pitch.join(format!("{}.csv", e.id)), p)?;
            }
        }
    }
    manifest.save(&out.join(MANIFEST_FILE))?;
    write_config(cfg, &out.join(RUN_CONFIG_FILE))?;
    println!(
        "{} clips ({} train, {} test) in {}; manifest sha256 {}",
        manifest.clips.len(),
        manifest.split(Split::Train).len(),
        manifest.split(Split::Test).len(),
        out.display(),
        manifest.hash()
    );
    Ok(())
}

// ------------------------------------------------------------ train

pub fn train(cfg: &RunConfig) -> CliResult<()> {
    let out = required(&cfg.out, "--out")?;
    let (path, base) = manifest_location(required(&cfg.data, "--data")?);
    let manifest = DatasetManifest::load(&path)?;
    let pitch = match cfg.pitch.as_str() {
        "oracle" => TrainPitch::Oracle,
        "estimate" => TrainPitch::Estimate,
        other => return Err(usage(format!("training supports oracle or estimate pitch, not {other}"))),
    };
    let cache = FeatureCache::from_env();
    let data = TrainData::prepare(&manifest, &base, Split::Train, &cfg.model, pitch, cache.as_ref())?;
    std::fs::create_dir_all(out)?;
    write_config(cfg, &out.join(RUN_CONFIG_FILE))?;
    let output = TrainOutput { dir: out.to_path_buf() };
    let outcome = run_training(&cfg.model, cfg.seed, &data, &cfg.train, Some(&output), cfg.resume)?;
    match outcome.log.last() {
        Some(r) => println!("{} steps on {} clips; final loss {:.4} at lr {:.2e}", r.step, data.clips.len(), r.loss, r.lr),
        None => println!("nothing to do: checkpoint already at {} steps", cfg.train.steps),
    }
    println!("checkpoint {}", output.checkpoint_path().display());
    Ok(())
}

// ------------------------------------------------------------ pipelines

fn load_model(cfg: &RunConfig, kind: PipelineKind) -> CliResult<Model> {
    let key = kind.as_str();
    let path = cfg
        .checkpoints
        .get(key)
        .or_else(|| (kind == PipelineKind::DdspCyclic).then(|| cfg.checkpoints.get("ddsp-mono")).flatten())
        .ok_or_else(|| usage(format!("{key} needs --checkpoint {key}=PATH")))?;
    let (model, _) = Model::load(path)?;
    if (model.cfg.cutoff_hz - cfg.model.cutoff_hz).abs() > 1e-9 {
        log::warn!("{} was trained with cutoff {} Hz, run uses {} Hz", path.display(), model.cfg.cutoff_hz, cfg.model.cutoff_hz);
    }
    Ok(model)
}

fn build_pipelines(cfg: &RunConfig, default: &[&str]) -> CliResult<Vec<(String, Pipeline)>> {
    let mut names: Vec<String> = cfg.models.clone();
    if names.is_empty() {
        names = default.iter().map(|s| s.to_string()).collect();
        for kind in cfg.checkpoints.keys() {
            if !names.contains(kind) {
                names.push(kind.clone());
            }
        }
    }
    names
        .iter()
        .map(|n| {
            let kind: PipelineKind = n.parse().map_err(|e| usage(format!("{e}")))?;
            let model = if kind.needs_model() { Some(load_model(cfg, kind)?) } else { None };
            Ok((n.clone(), Pipeline::new(kind, model, cfg.sbr, cfg.iterations)?))
        })
        .collect()
}

fn pitch_source(cfg: &RunConfig) -> CliResult<PitchSource> {
    match cfg.pitch.as_str() {
        "estimate" => Ok(PitchSource::Estimate),
        "file" => Ok(PitchSource::File(required(&cfg.pitch_file, "--pitch-file")?.to_path_buf())),
        _ => Err(usage("a single file has no ground-truth pitch; use --pitch estimate or --pitch-file")),
    }
}

fn sibling_config(output: &Path) -> PathBuf {
    let stem = output.file_stem().and_then(|s| s.to_str()).unwrap_or("output");
    output.with_file_name(format!("{stem}.{RUN_CONFIG_FILE}"))
}

pub fn extend(cfg: &RunConfig, residuals: Option<&Path>) -> CliResult<()> {
    let input = required(&cfg.input, "input path")?;
    let output = required(&cfg.output, "output path")?;
    let name = match cfg.models.as_slice() {
        [one] => one.clone(),
        [] => return Err(usage("--model is required")),
        _ => return Err(usage("extend takes exactly one --model")),
    };
    let (pipeline_name, pipeline) = build_pipelines(cfg, &[])?.remove(0);
    let (x, format) = read_wav(input)?;
    let rate = cfg.model.sample_rate;
    let x = if x.sample_rate() == rate {
        x
    } else {
        log::info!("resampling {} from {} Hz to {rate} Hz", input.display(), x.sample_rate());
        resample(&x, rate)?
    };
    let pitch = pitch_source(cfg)?;
    let y = match (&pipeline, residuals) {
        (Pipeline::DdspCyclic { model, iterations }, Some(dir)) => {
            let opts = CyclicOptions { iterations: *iterations, seed: cfg.seed, keep_residuals: true };
            let (y, report) = bwe_ddsp_cyclic(&x, model, &pitch, &opts)?;
            std::fs::create_dir_all(dir)?;
            report.write_residual_csvs(dir, "residual")?;
            println!("residual L1 per iteration: {:?}", report.residual_l1);
            y
        }
        (_, Some(_)) => return Err(usage("--residuals only applies to ddsp-cyclic")),
        _ => pipeline.run(&x, &pitch, None, cfg.seed)?,
    };
    write_wav(output, &y, format)?;
    write_config(cfg, &sibling_config(output))?;
    println!("{name}: wrote {} ({:.2} s) with {pipeline_name}", output.display(), y.duration_s());
    Ok(())
}

// ------------------------------------------------------------ eval

fn eval_pitch(cfg: &RunConfig) -> CliResult<EvalPitch> {
    match cfg.pitch.as_str() {
        "oracle" => Ok(EvalPitch::Oracle),
        "estimate" => Ok(EvalPitch::Estimate),
        _ => Err(usage("evaluation supports oracle or estimate pitch")),
    }
}

fn write_summary(path: &Path, reports: &[EvalReport]) -> CliResult<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "model,clips,mean_lsd,std_lsd,mean_realtime_pct")?;
    for r in reports {
        writeln!(f, "{},{},{:?},{:?},{:?}", r.model, r.records.len(), r.mean_lsd(), r.std_lsd(), r.mean_realtime_pct())?;
    }
    f.flush()?;
    Ok(())
}

/// Checks an ordering such as `a<b<c` against mean LSDs.
fn check_ordering(expr: &str, means: &BTreeMap<String, f64>) -> CliResult<(bool, String)> {
    let names: Vec<&str> = expr.split('<').map(str::trim).collect();
    if names.len() < 2 {
        return Err(usage(format!("--expect needs at least two models, got `{expr}`")));
    }
    let vals = names
        .iter()
        .map(|n| means.get(*n).copied().ok_or_else(|| usage(format!("--expect names `{n}`, which was not evaluated"))))
        .collect::<CliResult<Vec<f64>>>()?;
    let pass = vals.windows(2).all(|w| w[0] < w[1]);
    let shown: Vec<String> = names.iter().zip(&vals).map(|(n, v)| format!("{n} {v:.3}")).collect();
    Ok((pass, shown.join(" < ")))
}

pub fn eval(cfg: &RunConfig, compare: bool, expect: &[String]) -> CliResult<()> {
    let out = required(&cfg.out, "--out")?;
    let (_, clips) = load_split(cfg)?;
    if clips.is_empty() {
        return Err(CliError::Core(bwe_core::BweError::Data(format!("{} split is empty", cfg.split))));
    }
    let pipelines = build_pipelines(cfg, &["null", "sbr"])?;
    let pitch = eval_pitch(cfg)?;
    std::fs::create_dir_all(out)?;
    write_config(cfg, &out.join(RUN_CONFIG_FILE))?;
    let mut reports = Vec::new();
    for (name, p) in &pipelines {
        let r = evaluate(name, p, &clips, pitch, cfg.model.cutoff_hz, cfg.seed, cfg.effective_jobs())?;
        println!("{name:<12} LSD {:.4} +/- {:.4} over {} clips", r.mean_lsd(), r.std_lsd(), r.records.len());
        reports.push(r);
    }
    let records: Vec<MetricRecord> = reports.iter().flat_map(|r| r.records.iter().cloned()).collect();
    write_metrics_csv(&out.join("metrics.csv"), &records)?;
    write_metrics_jsonl(&out.join("metrics.jsonl"), &records)?;
    write_summary(&out.join("summary.csv"), &reports)?;
    if compare {
        let mut ranked: Vec<&EvalReport> = reports.iter().collect();
        ranked.sort_by(|a, b| a.mean_lsd().total_cmp(&b.mean_lsd()));
        let mut f = std::io::BufWriter::new(std::fs::File::create(out.join("ranking.csv"))?);
        writeln!(f, "rank,model,mean_lsd,std_lsd")?;
        println!("\nrank  model         mean LSD   std");
        for (i, r) in ranked.iter().enumerate() {
            println!("{:>4}  {:<12} {:>9.4} {:>7.4}", i + 1, r.model, r.mean_lsd(), r.std_lsd());
            writeln!(f, "{},{},{:?},{:?}", i + 1, r.model, r.mean_lsd(), r.std_lsd())?;
        }
        f.flush()?;
    }
    let means: BTreeMap<String, f64> = reports.iter().map(|r| (r.model.clone(), r.mean_lsd())).collect();
    for e in expect {
        let (pass, shown) = check_ordering(e, &means)?;
        println!("{} ordering {shown}", if pass { "PASS" } else { "FAIL" });
    }
    Ok(())
}

// ------------------------------------------------------------ bench

pub fn bench(cfg: &RunConfig, plot_data: bool) -> CliResult<()> {
    let out = required(&cfg.out, "--out")?;
    let (_, clips) = load_split(cfg)?;
    let clips: Vec<LoadedClip> = clips.into_iter().take(cfg.bench_clips.max(1)).collect();
    if clips.is_empty() {
        return Err(CliError::Core(bwe_core::BweError::Data(format!("{} split is empty", cfg.split))));
    }
    let pipelines = build_pipelines(cfg, &["null", "sbr"])?;
    let inputs = clips
        .iter()
        .map(|c| {
            let src = match (cfg.pitch.as_str(), &c.pitch) {
                ("oracle", Some(p)) => PitchSource::Oracle(p.clone()),
                ("oracle", None) => return Err(usage(format!("clip {} has no ground-truth pitch", c.id))),
                _ => PitchSource::Estimate,
            };
            Ok((low_pass(&c.wideband, cfg.model.cutoff_hz)?, src))
        })
        .collect::<CliResult<Vec<_>>>()?;
    std::fs::create_dir_all(out)?;
    write_config(cfg, &out.join(RUN_CONFIG_FILE))?;
    let report = bench_inference(&pipelines, &inputs, cfg.repetitions, cfg.warmup, cfg.seed)?;
    let mut f = std::io::BufWriter::new(std::fs::File::create(out.join("bench.csv"))?);
    writeln!(f, "model,realtime_pct,q1_pct,q3_pct")?;
    println!("model         realtime %     IQR");
    for r in &report.rows {
        println!("{:<12} {:>10.3} {:>7.3}", r.model, r.median_pct, r.iqr_pct());
        writeln!(f, "{},{:?},{:?},{:?}", r.model, r.median_pct, r.q1_pct, r.q3_pct)?;
    }
    f.flush()?;
    std::fs::write(out.join("bench.json"), serde_json::to_string_pretty(&report.to_json()).unwrap_or_default())?;
    println!("{} cpus, {} {}", report.env.cpus, report.env.os, report.env.arch);
    if plot_data {
        let pitch = if cfg.pitch == "oracle" { EvalPitch::Oracle } else { EvalPitch::Estimate };
        let mut f = std::io::BufWriter::new(std::fs::File::create(out.join("lsd_vs_time.csv"))?);
        writeln!(f, "model,realtime_pct,lsd")?;
        for ((name, p), row) in pipelines.iter().zip(&report.rows) {
            let r = evaluate(name, p, &clips, pitch, cfg.model.cutoff_hz, cfg.seed, cfg.effective_jobs())?;
            writeln!(f, "{name},{:?},{:?}", row.median_pct, r.mean_lsd())?;
        }
        f.flush()?;
    }
    Ok(())
}
