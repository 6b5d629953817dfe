//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! `cargo test -p bwe-core --test acceptance` runs everything (tens of
//! minutes, most of it training). Pass criterion numbers (`1 4 5`) to run a
//! subset. `BWE_ACCEPTANCE_STEPS` overrides the training length. Failures
//! set a non-zero exit status only with `BWE_ACCEPTANCE_STRICT=1`.

use std::f64::consts::PI;
use std::path::Path;
use std::time::Instant;

use bwe_core::bwe::{bwe_ddsp_cyclic, bwe_sbr_detailed, sbr_extend_frames, CyclicOptions, Pipeline, PipelineKind, SbrConfig};
use bwe_core::controller::{Model, ModelConfig, Variant};
use bwe_core::data::{gen_mono_dataset, gen_poly_dataset, load_clip, DatasetManifest, LoadedClip, Split};
use bwe_core::dsp::stft::{StftPlan, Window};
use bwe_core::dsp::{band_split, low_pass, pink_noise, AudioBuffer, BandSplitSpec};
use bwe_core::nn::{grad_check, GradCheckConfig};
use bwe_core::pitch::{MultiPitchTrack, PitchSource, PitchTrack};
use bwe_core::synth::{harmonic_synth, PhaseState, SynthGrid};
use bwe_core::train::{
    batch_loss, bench_inference, draw_crops, evaluate, lsd, train, EvalPitch, MssLoss, TrainConfig, TrainData, TrainPitch,
};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex64;

const SR: u32 = 16000;
const CUTOFF: f64 = 2000.0;

struct Verdicts {
    lines: Vec<(bool, String)>,
}

impl Verdicts {
    fn record(&mut self, id: &str, pass: bool, detail: String) {
        let line = format!("{} {id}: {detail}", if pass { "PASS" } else { "FAIL" });
        println!("{line}");
        self.lines.push((pass, line));
    }
}

fn random_signal(n: usize, seed: u64) -> AudioBuffer {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    AudioBuffer::new((0..n).map(|_| rng.random_range(-1.0..1.0)).collect(), SR).unwrap()
}

// ---------------------------------------------------------------- 1

fn criterion_gradients(v: &mut Verdicts) {
    let t0 = Instant::now();
    let cfg = ModelConfig { gru_units: 8, mlp_width: 8, z_dim: 8, n_harmonics: 10, n_noise: 9, ..ModelConfig::default() };
    let n = SR as usize / 4;
    let f0 = 311.0;
    let x: Vec<f64> = (0..n)
        .map(|i| {
            let t = i as f64 / SR as f64;
            (1..=20).map(|h| 0.5 / (h * h) as f64 * (2.0 * PI * f0 * h as f64 * t + 0.3 * h as f64).sin()).sum::<f64>()
        })
        .collect();
    let x = AudioBuffer::new(x, SR).unwrap();
    let frames = n.div_ceil(cfg.hop);
    let pitch = MultiPitchTrack::new(vec![PitchTrack::constant(f0, frames, cfg.hop, SR).unwrap()], 1).unwrap();
    let clip = TrainData::clip_from_audio("tone", &x, Some(&pitch), &cfg, TrainPitch::Oracle, None).unwrap();
    let data = TrainData { clips: vec![clip] };
    let tc = TrainConfig { batch: 1, crop_frames: frames, seed: 3, ..TrainConfig::default() };
    let (crops, seed) = draw_crops(&data, &tc, 0);
    let mss = MssLoss::new(&tc.mss_fft_sizes, Some(CUTOFF), SR).unwrap();
    let mut model = Model::new(cfg, 11).unwrap();
    let mut store = model.store.clone();
    let gc = GradCheckConfig { eps: 1e-4, abs_floor: 1e-6, max_per_tensor: None };
    let report = grad_check(&mut store, &gc, |s, want| {
        std::mem::swap(&mut model.store, s);
        let r = batch_loss(&mut model, &data, &crops, &mss, seed, want, 1);
        std::mem::swap(&mut model.store, s);
        r
    })
    .unwrap();
    let within = report.fraction_within(1e-3);
    let worst = report.max_rel_err();
    let secs = t0.elapsed().as_secs_f64();
    v.record(
        "1 gradient check",
        within >= 0.95 && worst <= 1e-2 && secs < 120.0,
        format!(
            "{} parameters, {:.2}% within 1e-3 (need 95%), worst {worst:.2e} (need <= 1e-2), {secs:.1} s",
            report.checked(),
            100.0 * within
        ),
    );
}

// ---------------------------------------------------------------- 4

fn criterion_sbr(v: &mut Verdicts) {
    let cfg = SbrConfig::default();
    let mut worst: f64 = 0.0;
    let mut frames_checked = 0;
    for s in 0..100 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + s);
        let len = rng.random_range(4000..20000);
        let tilt = rng.random_range(-0.99..0.99);
        let raw = random_signal(len, s);
        let mut prev = 0.0;
        let coloured: Vec<f64> = raw
            .samples()
            .iter()
            .map(|&u| {
                prev = u + tilt * prev;
                prev
            })
            .collect();
        let x_lb = low_pass(&AudioBuffer::new(coloured, SR).unwrap(), CUTOFF).unwrap();
        let (_, out) = bwe_sbr_detailed(&x_lb, &cfg, None).unwrap();
        let (b, m) = (out.band_bins, out.match_bins);
        for row in out.frames.outer_iter() {
            let e = |lo: usize, hi: usize| row.iter().skip(lo).take(hi - lo).map(|c| c.norm_sqr()).sum::<f64>();
            for j in 1..=cfg.n_replications {
                let below = e(j * b - m, j * b);
                let above = e(j * b, j * b + m);
                if e(0, m) > 0.0 && below > 0.0 {
                    worst = worst.max((above - below).abs() / below);
                    frames_checked += 1;
                }
            }
        }
    }
    let b = 128;
    let mut flat = Array2::from_elem((20, 513), Complex64::new(0.0, 0.0));
    for mut row in flat.outer_iter_mut() {
        row.iter_mut().take(b).enumerate().for_each(|(k, c)| *c = Complex64::from_polar(1.0, 0.37 * k as f64));
    }
    let gains = sbr_extend_frames(&flat, b, &cfg, None).unwrap().gains;
    let gain_err = gains.iter().map(|g| (g - 1.0).abs()).fold(0.0, f64::max);
    v.record(
        "4 SBR energy match",
        worst <= 1e-6 && gain_err <= 1e-12,
        format!("{frames_checked} band checks over 100 signals, worst relative mismatch {worst:.2e}; flat input gain error {gain_err:.1e}"),
    );
}

// ---------------------------------------------------------------- 5

fn naive_lsd(a: &[f64], b: &[f64]) -> f64 {
    let (n, hop) = (1024usize, 256usize);
    let bins = n / 2 + 1;
    let w: Vec<f64> = (0..n).map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos()).collect();
    let cos: Vec<f64> = (0..n).map(|i| (2.0 * PI * i as f64 / n as f64).cos()).collect();
    let sin: Vec<f64> = (0..n).map(|i| (2.0 * PI * i as f64 / n as f64).sin()).collect();
    let frames = a.len().div_ceil(hop);
    let pad = |x: &[f64], p: isize| -> f64 {
        let len = x.len() as isize;
        let mut q = p;
        while q < 0 || q >= len {
            q = if q < 0 { -q } else { 2 * (len - 1) - q };
        }
        x[q as usize]
    };
    let power = |x: &[f64], t: usize| -> Vec<f64> {
        let seg: Vec<f64> = (0..n).map(|i| w[i] * pad(x, (t * hop + i) as isize - (n / 2) as isize)).collect();
        (0..bins)
            .map(|k| {
                let (mut re, mut im) = (0.0, 0.0);
                for (i, s) in seg.iter().enumerate() {
                    let idx = (k * i) % n;
                    re += s * cos[idx];
                    im -= s * sin[idx];
                }
                re * re + im * im
            })
            .collect()
    };
    let mut total = 0.0;
    for t in 0..frames {
        let (pa, pb) = (power(a, t), power(b, t));
        let d: f64 = pa.iter().zip(&pb).map(|(x, y)| (x.max(1e-7).log10() - y.max(1e-7).log10()).powi(2)).sum();
        total += (d / bins as f64).sqrt();
    }
    total / frames as f64
}

fn criterion_dsp(v: &mut Verdicts) {
    // STFT round trip.
    let x = random_signal(16000, 1);
    let plan = StftPlan::new(1024, 256, Window::Hann).unwrap();
    let y = plan.synthesize(&plan.analyze(x.samples()), x.len());
    let err: f64 = x.samples().iter().zip(&y).map(|(a, b)| (a - b).powi(2)).sum();
    let snr = 10.0 * (x.energy() / err.max(1e-300)).log10();

    // Band split complementarity.
    let (lo, hi) = band_split(&x, &BandSplitSpec::new(CUTOFF, SR).unwrap()).unwrap();
    let comp = x.samples().iter().zip(lo.samples().iter().zip(hi.samples())).map(|(a, (l, h))| (a - l - h).abs()).fold(0.0, f64::max);

    // Harmonic peak placement and level, at 1 Hz resolution.
    let f0 = 440.0;
    let amps_target: Vec<f64> = (1..=10).map(|h| 0.5 / h as f64).collect();
    let n = 32000;
    let grid = SynthGrid::new(SR, 256, n).unwrap();
    let frames = n.div_ceil(256) + 1;
    let amps = Array2::from_shape_fn((frames, 10), |(_, h)| amps_target[h]);
    let tone = harmonic_synth(&vec![f0; frames], &amps, &PhaseState::zeros(10), &grid).unwrap();
    let fft_n = 16000;
    let seg = &tone[8000..8000 + fft_n];
    let w = Window::Hann.coefficients(fft_n);
    let mut buf: Vec<Complex64> = seg.iter().zip(&w).map(|(s, w)| Complex64::new(s * w, 0.0)).collect();
    rustfft::FftPlanner::new().plan_fft_forward(fft_n).process(&mut buf);
    let norm = 2.0 / w.iter().sum::<f64>();
    let (mut worst_bin, mut worst_db) = (0usize, 0.0f64);
    for (h, &a) in amps_target.iter().enumerate() {
        let k = ((h + 1) as f64 * f0) as usize;
        let (peak_k, peak) =
            (k - 5..=k + 5).map(|j| (j, buf[j].norm() * norm)).max_by(|a, b| a.1.total_cmp(&b.1)).unwrap();
        worst_bin = worst_bin.max(peak_k.abs_diff(k));
        worst_db = worst_db.max((20.0 * (peak / a).log10()).abs());
    }

    // Pink-noise slope from averaged periodograms.
    let pink = pink_noise(16000 * 8, SR, 9).unwrap();
    let pplan = StftPlan::new(4096, 1024, Window::Hann).unwrap();
    let spec = pplan.analyze(pink.samples());
    let psd: Vec<f64> = (0..spec.ncols()).map(|k| spec.column(k).iter().map(|c| c.norm_sqr()).sum::<f64>()).collect();
    let bin_hz = SR as f64 / 4096.0;
    let pts: Vec<(f64, f64)> = (1..psd.len() - 1)
        .map(|k| (k as f64 * bin_hz, psd[k]))
        .filter(|(f, _)| (50.0..=7000.0).contains(f))
        .map(|(f, p)| (f.log10(), 10.0 * p.log10()))
        .collect();
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / pts.len() as f64;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / pts.len() as f64;
    let slope = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>() / pts.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>();

    // LSD against the brute-force reference above.
    let mut lsd_err: f64 = 0.0;
    for s in 0..100 {
        let len = 4000 + 37 * s as usize;
        let a = random_signal(len, 2 * s);
        let b = random_signal(len, 2 * s + 1).scaled(0.1 + 0.01 * s as f64);
        lsd_err = lsd_err.max((lsd(&a, &b).unwrap() - naive_lsd(a.samples(), b.samples())).abs());
    }

    let pass = snr >= 60.0 && comp <= 1e-6 && worst_bin <= 1 && worst_db <= 0.5 && (slope + 10.0).abs() <= 1.5 && lsd_err <= 1e-9;
    v.record(
        "5 DSP invariants",
        pass,
        format!(
            "STFT round trip {snr:.0} dB; band split residual {comp:.1e}; harmonic peaks off by <= {worst_bin} bin and {worst_db:.3} dB; pink slope {slope:.2} dB/decade; LSD vs reference {lsd_err:.1e}"
        ),
    );
}

// ---------------------------------------------------------------- 2, 3, 6, 7

struct Trained {
    mono: Model,
    noise: Model,
    mono_poly: Model,
    poly: Model,
}

fn acceptance_model(variant: Variant) -> ModelConfig {
    ModelConfig { variant, gru_units: 128, mlp_width: 128, z_dim: 128, ..ModelConfig::default() }
}

fn train_config(steps: usize) -> TrainConfig {
    TrainConfig { steps, batch: 8, crop_frames: 32, seed: 7, ..TrainConfig::default() }
}

fn train_on(manifest: &DatasetManifest, variant: Variant, steps: usize) -> Model {
    let t0 = Instant::now();
    let cfg = acceptance_model(variant);
    let data = TrainData::prepare(manifest, Path::new("."), Split::Train, &cfg, TrainPitch::Oracle, None).unwrap();
    let out = train(&cfg, 1, &data, &train_config(steps), None, false).unwrap();
    let head = out.log.iter().take(50).map(|r| r.loss).sum::<f64>() / 50f64.min(out.log.len() as f64);
    let tail = out.log.iter().rev().take(50).map(|r| r.loss).sum::<f64>() / 50f64.min(out.log.len() as f64);
    println!(
        "  trained {variant} on {} clips ({}): {steps} steps, loss {head:.2} -> {tail:.2}, {:.0} s",
        data.clips.len(),
        manifest.kind,
        t0.elapsed().as_secs_f64()
    );
    out.model
}

fn test_clips(manifest: &DatasetManifest) -> Vec<LoadedClip> {
    manifest.split(Split::Test).into_iter().map(|e| load_clip(e, Path::new("."), 256).unwrap()).collect()
}

fn mean_lsd(name: &str, p: &Pipeline, clips: &[LoadedClip]) -> f64 {
    let r = evaluate(name, p, clips, EvalPitch::Oracle, CUTOFF, 0, 1).unwrap();
    println!("  {name:<12} LSD {:.3} +/- {:.3} over {} clips", r.mean_lsd(), r.std_lsd(), clips.len());
    r.mean_lsd()
}

fn pipeline(kind: PipelineKind, model: &Model) -> Pipeline {
    Pipeline::new(kind, Some(model.clone()), SbrConfig::default(), 5).unwrap()
}

fn criterion_mono(v: &mut Verdicts, m: &Trained, mono: &DatasetManifest) {
    let clips = test_clips(mono);
    let null = mean_lsd("null", &Pipeline::Null, &clips);
    let sbr = mean_lsd("sbr", &Pipeline::Sbr(SbrConfig::default()), &clips);
    let ddsp = mean_lsd("ddsp-mono", &pipeline(PipelineKind::DdspMono, &m.mono), &clips);
    let noise = mean_lsd("ddsp-noise", &pipeline(PipelineKind::DdspNoise, &m.noise), &clips);
    v.record(
        "2 synthetic mono ordering",
        ddsp < sbr && sbr < null && ddsp < noise,
        format!("ddsp-mono {ddsp:.3} < sbr {sbr:.3} < null {null:.3}; ddsp-mono < ddsp-noise {noise:.3}"),
    );
}

fn criterion_poly(v: &mut Verdicts, m: &Trained, poly: &DatasetManifest) {
    let clips = test_clips(poly);
    mean_lsd("null", &Pipeline::Null, &clips);
    let sbr = mean_lsd("sbr", &Pipeline::Sbr(SbrConfig::default()), &clips);
    let mono = mean_lsd("ddsp-mono", &pipeline(PipelineKind::DdspMono, &m.mono_poly), &clips);
    let cyclic = mean_lsd("ddsp-cyclic", &pipeline(PipelineKind::DdspCyclic, &m.mono_poly), &clips);
    let poly_l = mean_lsd("ddsp-poly", &pipeline(PipelineKind::DdspPoly, &m.poly), &clips);
    v.record(
        "3 synthetic poly ordering",
        poly_l < mono && poly_l < sbr && cyclic < mono,
        format!("ddsp-poly {poly_l:.3} < ddsp-mono {mono:.3}; ddsp-poly < sbr {sbr:.3}; ddsp-cyclic {cyclic:.3} < ddsp-mono"),
    );
}

fn criterion_cyclic(v: &mut Verdicts, m: &Trained, poly: &DatasetManifest) {
    let clips = test_clips(poly);
    let mut violations = 0;
    let mut iters = Vec::new();
    for c in &clips {
        let x_lb = low_pass(&c.wideband, CUTOFF).unwrap();
        let src = PitchSource::Oracle(c.pitch.clone().unwrap());
        let opts = CyclicOptions { iterations: 5, seed: 0, keep_residuals: false };
        let (_, report) = bwe_ddsp_cyclic(&x_lb, &m.mono_poly, &src, &opts).unwrap();
        violations += report.residual_l1.windows(2).filter(|w| w[1] > w[0]).count();
        iters.push(report.iterations);
    }
    v.record(
        "6 cyclic residual monotone",
        violations == 0,
        format!(
            "{} clips, {} to {} iterations each, {violations} increases of the residual L1 norm",
            clips.len(),
            iters.iter().min().unwrap(),
            iters.iter().max().unwrap()
        ),
    );
}

fn criterion_bench(v: &mut Verdicts, m: &Trained, poly: &DatasetManifest) {
    let clips = test_clips(poly);
    let inputs: Vec<(AudioBuffer, PitchSource)> =
        clips.iter().take(4).map(|c| (low_pass(&c.wideband, CUTOFF).unwrap(), PitchSource::Estimate)).collect();
    let pipes = vec![
        ("null".to_string(), Pipeline::Null),
        ("sbr".to_string(), Pipeline::Sbr(SbrConfig::default())),
        ("ddsp-mono".to_string(), pipeline(PipelineKind::DdspMono, &m.mono)),
        ("ddsp-noise".to_string(), pipeline(PipelineKind::DdspNoise, &m.noise)),
        ("ddsp-poly".to_string(), pipeline(PipelineKind::DdspPoly, &m.poly)),
        ("ddsp-cyclic".to_string(), pipeline(PipelineKind::DdspCyclic, &m.mono_poly)),
    ];
    let report = bench_inference(&pipes, &inputs, 5, 1, 0).unwrap();
    for r in &report.rows {
        println!("  {:<12} realtime {:7.3}% (IQR {:.3})", r.model, r.median_pct, r.iqr_pct());
    }
    let pct = |name: &str| report.row(name).unwrap().median_pct;
    let (sbr, mono, cyclic) = (pct("sbr"), pct("ddsp-mono"), pct("ddsp-cyclic"));
    v.record(
        "7 inference benchmark",
        mono <= 100.0 && sbr < mono && mono < cyclic,
        format!("sbr {sbr:.2}% < ddsp-mono {mono:.2}% < ddsp-cyclic {cyclic:.2}%; ddsp-mono within real time ({} cpus)", report.env.cpus),
    );
}

fn main() {
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let wanted = |id: &str| filters.is_empty() || filters.iter().any(|f| f == id);
    let steps: usize = std::env::var("BWE_ACCEPTANCE_STEPS").ok().and_then(|s| s.parse().ok()).unwrap_or(2500);
    let mut v = Verdicts { lines: Vec::new() };
    let t0 = Instant::now();

    if wanted("1") {
        criterion_gradients(&mut v);
    }
    if wanted("4") {
        criterion_sbr(&mut v);
    }
    if wanted("5") {
        criterion_dsp(&mut v);
    }
    if ["2", "3", "6", "7"].iter().any(|id| wanted(id)) {
        let mono = gen_mono_dataset(0).unwrap();
        let poly = gen_poly_dataset(0).unwrap();
        let m = Trained {
            mono: train_on(&mono, Variant::MonoDec, steps),
            noise: train_on(&mono, Variant::NoiseOnly, steps),
            mono_poly: train_on(&poly, Variant::MonoDec, steps),
            poly: train_on(&poly, Variant::PolyDec, steps),
        };
        if wanted("2") {
            criterion_mono(&mut v, &m, &mono);
        }
        if wanted("3") {
            criterion_poly(&mut v, &m, &poly);
        }
        if wanted("6") {
            criterion_cyclic(&mut v, &m, &poly);
        }
        if wanted("7") {
            criterion_bench(&mut v, &m, &poly);
        }
    }
    println!("8 excluded: real-world LSD table, Resnet comparison and listening test are not run");

    let failed = v.lines.iter().filter(|(p, _)| !p).count();
    println!("\nacceptance: {} passed, {failed} failed, {:.0} s", v.lines.len() - failed, t0.elapsed().as_secs_f64());
    if failed > 0 && std::env::var("BWE_ACCEPTANCE_STRICT").is_ok_and(|s| s == "1") {
        std::process::exit(1);
    }
}
