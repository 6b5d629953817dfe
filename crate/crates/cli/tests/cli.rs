use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use bwe_core::dsp::wav::{read_wav, write_wav, WavFormat};
use bwe_core::dsp::AudioBuffer;

fn bwe(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bwe")).args(args).env_remove("BWE_LAB_CACHE").output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = bwe(args);
    assert!(out.status.success(), "bwe {args:?} failed:\n{}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str]) -> i32 {
    bwe(args).status.code().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Mono dataset plus a tiny trained mono model, shared by the tests.
struct Fixture {
    _dir: tempfile::TempDir,
    data: PathBuf,
    run: PathBuf,
}

const TINY: [&str; 14] = [
    "--gru-units", "8", "--mlp-width", "8", "--z-dim", "8", "--n-harmonics", "10", "--n-noise", "9", "--batch", "2", "--crop-frames",
    "16",
];

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let data = dir.path().join("mono");
        let run = dir.path().join("run");
        ok(&["gen-data", "--kind", "mono", "--seed", "3", "--out", s(&data), "--manifest-only"]);
        let mut args = vec!["train", "--data", s(&data), "--out", s(&run), "--variant", "mono_dec", "--steps", "4"];
        args.extend(TINY);
        ok(&args);
        Fixture { _dir: dir, data, run }
    })
}

fn tone(path: &Path, format: WavFormat) {
    let x: Vec<f64> = (0..16000).map(|i| 0.3 * (2.0 * std::f64::consts::PI * 220.0 * i as f64 / 16000.0).sin()).collect();
    let lb = bwe_core::dsp::low_pass(&AudioBuffer::new(x, 16000).unwrap(), 2000.0).unwrap();
    write_wav(path, &lb, format).unwrap();
}

#[test]
fn gen_data_counts_hash_and_force() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let out = ok(&["gen-data", "--kind", "mono", "--seed", "7", "--out", s(&a), "--manifest-only"]);
    assert!(out.starts_with("135 clips (121 train, 14 test)"), "{out}");
    ok(&["gen-data", "--kind", "mono", "--seed", "7", "--out", s(&b), "--manifest-only"]);
    let read = |p: &Path| std::fs::read_to_string(p.join("manifest.txt")).unwrap();
    assert_eq!(read(&a), read(&b));
    assert_eq!(code(&["gen-data", "--kind", "mono", "--out", s(&a), "--manifest-only"]), 1);
    ok(&["gen-data", "--kind", "poly", "--out", s(&a), "--manifest-only", "--force"]);
    assert_eq!(read(&a).matches("[clip]").count(), 180);
    assert!(std::fs::read_to_string(a.join("run_config.txt")).unwrap().contains("kind=poly"));
}

#[test]
fn gen_data_writes_audio_and_pitch() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    std::fs::create_dir_all(&corpus).unwrap();
    tone(&corpus.join("t.wav"), WavFormat::Pcm16);
    let out = dir.path().join("c");
    let text = ok(&["gen-data", "--kind", "corpus", "--corpus", s(&corpus), "--clip-seconds", "0.5", "--out", s(&out)]);
    assert!(text.starts_with("2 clips"), "{text}");
    assert_eq!(code(&["gen-data", "--kind", "corpus", "--out", s(&dir.path().join("d"))]), 1);
}

#[test]
fn extend_null_is_sample_identical() {
    let dir = tempfile::tempdir().unwrap();
    let (input, output) = (dir.path().join("in.wav"), dir.path().join("out.wav"));
    tone(&input, WavFormat::Pcm16);
    ok(&["extend", "--model", "null", s(&input), s(&output)]);
    assert_eq!(read_wav(&input).unwrap(), read_wav(&output).unwrap());
    assert!(dir.path().join("out.run_config.txt").exists());
    ok(&["extend", "--model", "sbr", "--sbr-alpha", "0.5", s(&input), s(&output)]);
    let (y, _) = read_wav(&output).unwrap();
    assert_eq!(y.len(), 16000);
}

#[test]
fn extend_with_trained_models() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let (input, output) = (dir.path().join("in.wav"), dir.path().join("out.wav"));
    tone(&input, WavFormat::Float32);
    let ck = f.run.join("model.ckpt");
    ok(&["extend", "--model", "ddsp-mono", "--checkpoint", s(&ck), s(&input), s(&output)]);
    let res = dir.path().join("res");
    let text = ok(&["extend", "--model", "ddsp-cyclic", "--iterations", "5", "--checkpoint", s(&ck), "--residuals", s(&res), s(&input), s(&output)]);
    assert!(text.contains("residual L1"), "{text}");
    assert!(res.join("residual_0.csv").exists());
    // Variant pairing is checked.
    assert_eq!(code(&["extend", "--model", "ddsp-poly", "--checkpoint", s(&ck), s(&input), s(&output)]), 2);
    assert_eq!(code(&["extend", "--model", "ddsp-mono", s(&input), s(&output)]), 1);
}

#[test]
fn train_resume_matches_straight_run() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let train = |out: &Path, steps: &str, resume: bool| {
        let mut args = vec!["train", "--data", s(&f.data), "--out", s(out), "--steps", steps, "--checkpoint-every", "2", "--seed", "4"];
        args.extend(TINY);
        if resume {
            args.push("--resume");
        }
        ok(&args);
    };
    train(&a, "6", false);
    train(&b, "3", false);
    train(&b, "6", true);
    let log = |p: &Path| std::fs::read_to_string(p.join("loss_log.csv")).unwrap();
    assert_eq!(log(&a), log(&b));
    assert!(log(&a).starts_with("step,loss,lr\n"));
    assert!(a.join("model.ckpt").exists() && a.join("run_config.txt").exists());
}

#[test]
fn eval_compare_and_reproduce_from_config() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("eval");
    let ck = format!("ddsp-mono={}", f.run.join("model.ckpt").display());
    let text = ok(&[
        "eval", "--data", s(&f.data), "--out", s(&out), "--models", "null,sbr,ddsp-mono", "--checkpoint", &ck, "--compare", "--expect",
        "sbr<null",
    ]);
    assert!(text.contains("PASS ordering sbr"), "{text}");
    assert!(text.contains("rank"), "{text}");
    let metrics = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert!(metrics.starts_with("clip_id,model,lsd,runtime_ms,realtime_pct\n"));
    assert_eq!(metrics.lines().count(), 1 + 3 * 14);
    assert_eq!(std::fs::read_to_string(out.join("metrics.jsonl")).unwrap().lines().count(), 3 * 14);

    let again = dir.path().join("again");
    ok(&["eval", "--config", s(&out.join("run_config.txt")), "--out", s(&again)]);
    let lsd_column = |p: &Path| -> Vec<String> {
        std::fs::read_to_string(p.join("metrics.csv")).unwrap().lines().map(|l| l.split(',').take(3).collect::<Vec<_>>().join(",")).collect()
    };
    assert_eq!(lsd_column(&out), lsd_column(&again));
}

#[test]
fn bench_reports_realtime_and_plot_data() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("bench");
    let ck = format!("ddsp-mono={}", f.run.join("model.ckpt").display());
    let text = ok(&[
        "bench", "--data", s(&f.data), "--out", s(&out), "--models", "null,sbr,ddsp-mono", "--checkpoint", &ck, "--clips", "1",
        "--repetitions", "2", "--plot-data",
    ]);
    assert!(text.contains("realtime"), "{text}");
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("bench.json")).unwrap()).unwrap();
    assert_eq!(json["models"].as_array().unwrap().len(), 3);
    assert!(json["models"][2]["realtime_pct"].as_f64().unwrap() > 0.0);
    let plot = std::fs::read_to_string(out.join("lsd_vs_time.csv")).unwrap();
    assert!(plot.starts_with("model,realtime_pct,lsd\n"));
    assert_eq!(plot.lines().count(), 4);
}

#[test]
fn exit_codes() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&["frobnicate"]), 1);
    assert_eq!(code(&["eval", "--set", "bogus=1", "--data", s(&f.data), "--out", s(dir.path())]), 1);
    assert_eq!(code(&["eval", "--data", s(&dir.path().join("missing")), "--out", s(dir.path())]), 2);
    assert_eq!(code(&["--help"]), 0);
    // Non-finite weights end in a numeric failure.
    let (mut model, _) = bwe_core::controller::Model::load(&f.run.join("model.ckpt")).unwrap();
    model.store.iter_mut().for_each(|p| p.value.fill(f64::NAN));
    let bad = dir.path().join("nan.ckpt");
    model.save(&bad, None).unwrap();
    let ck = format!("ddsp-mono={}", bad.display());
    let out = dir.path().join("e");
    let r = bwe(&["eval", "--data", s(&f.data), "--out", s(&out), "--models", "ddsp-mono", "--checkpoint", &ck]);
    assert_eq!(r.status.code(), Some(3), "{}", String::from_utf8_lossy(&r.stderr));
}
