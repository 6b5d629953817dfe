//! `bwe`: dataset generation, training, extension, evaluation and benchmarks.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use bwe_core::BweError;
use clap::{Args, Parser, Subcommand};

use config::RunConfig;

#[derive(Parser, Debug)]
#[command(name = "bwe", version, about = "Bandwidth extension with differentiable harmonic-plus-noise models")]
struct Cli {
    /// Flat key=value settings file; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Extra key=value setting, repeatable; applied after the file.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Cap on worker threads.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Single-threaded numeric paths.
    #[arg(long, global = true)]
    deterministic: bool,
    #[arg(long, global = true)]
    cutoff_hz: Option<f64>,
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset or ingest a WAV corpus.
    GenData(GenDataArgs),
    /// Train a model on a dataset's train split.
    Train(TrainArgs),
    /// Extend the bandwidth of one WAV file.
    Extend(ExtendArgs),
    /// Score pipelines on a dataset split.
    Eval(EvalArgs),
    /// Time pipelines and report real-time percentages.
    Bench(BenchArgs),
}

#[derive(Args, Debug)]
struct GenDataArgs {
    /// mono, poly or corpus.
    #[arg(long)]
    kind: Option<String>,
    #[arg(long)]
    out: PathBuf,
    /// Replace a non-empty output directory.
    #[arg(long)]
    force: bool,
    /// Source directory for --kind corpus.
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    clip_seconds: Option<f64>,
    #[arg(long)]
    split_ratio: Option<f64>,
    /// Write only the manifest, not the WAV and pitch files.
    #[arg(long)]
    manifest_only: bool,
}

#[derive(Args, Debug)]
struct ModelArgs {
    /// mono_dec, noise_only or poly_dec.
    #[arg(long)]
    variant: Option<String>,
    #[arg(long)]
    n_harmonics: Option<usize>,
    #[arg(long)]
    n_noise: Option<usize>,
    #[arg(long)]
    gru_units: Option<usize>,
    #[arg(long)]
    mlp_width: Option<usize>,
    #[arg(long)]
    z_dim: Option<usize>,
    #[arg(long)]
    max_voices: Option<usize>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Dataset directory (or manifest file).
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    lr0: Option<f64>,
    #[arg(long)]
    crop_frames: Option<usize>,
    #[arg(long)]
    checkpoint_every: Option<usize>,
    /// oracle or estimate.
    #[arg(long)]
    pitch: Option<String>,
    /// Continue from the checkpoint in --out.
    #[arg(long)]
    resume: bool,
}

#[derive(Args, Debug)]
struct PipelineArgs {
    /// Pipeline kind to checkpoint (`kind=path`), or a bare path for the
    /// selected model. Repeatable.
    #[arg(long = "checkpoint")]
    checkpoints: Vec<String>,
    /// Match-region fraction of the SBR gain rule.
    #[arg(long)]
    sbr_alpha: Option<f64>,
    #[arg(long)]
    iterations: Option<usize>,
    /// oracle, estimate or file.
    #[arg(long)]
    pitch: Option<String>,
    #[arg(long)]
    pitch_file: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ExtendArgs {
    input: Option<PathBuf>,
    output: Option<PathBuf>,
    /// null, sbr, ddsp-mono, ddsp-noise, ddsp-cyclic or ddsp-poly.
    #[arg(long)]
    model: Option<String>,
    #[command(flatten)]
    pipeline: PipelineArgs,
    /// Directory for per-iteration residual CSVs of ddsp-cyclic.
    #[arg(long)]
    residuals: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated pipeline kinds.
    #[arg(long)]
    models: Option<String>,
    /// train or test.
    #[arg(long)]
    split: Option<String>,
    #[command(flatten)]
    pipeline: PipelineArgs,
    /// Print and write a ranking table across models.
    #[arg(long)]
    compare: bool,
    /// Expected ordering such as `ddsp-mono<sbr<null`; reported PASS/FAIL.
    #[arg(long)]
    expect: Vec<String>,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    models: Option<String>,
    #[arg(long)]
    split: Option<String>,
    #[command(flatten)]
    pipeline: PipelineArgs,
    #[arg(long)]
    repetitions: Option<usize>,
    #[arg(long)]
    warmup: Option<usize>,
    /// Clips timed per repetition.
    #[arg(long)]
    clips: Option<usize>,
    /// Also score the models and write an LSD-versus-time table.
    #[arg(long)]
    plot_data: bool,
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core(BweError),
}

impl From<BweError> for CliError {
    fn from(e: BweError) -> Self {
        CliError::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(e.into())
    }
}

impl CliError {
    /// 1 usage, 2 data, 3 numeric.
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Core(BweError::InvalidArgument(_)) => 1,
            CliError::Core(BweError::Numeric(_)) => 3,
            CliError::Core(_) => 2,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

struct Overrides(Vec<(&'static str, String)>);

impl Overrides {
    fn opt<T: ToString>(&mut self, key: &'static str, v: &Option<T>) {
        if let Some(v) = v {
            self.0.push((key, v.to_string()));
        }
    }

    fn flag(&mut self, key: &'static str, on: bool) {
        if on {
            self.0.push((key, "true".into()));
        }
    }

    fn path(&mut self, key: &'static str, v: &Option<PathBuf>) {
        if let Some(p) = v {
            self.0.push((key, p.display().to_string()));
        }
    }

    fn model(&mut self, m: &ModelArgs) {
        self.opt("variant", &m.variant);
        self.opt("n_harmonics", &m.n_harmonics);
        self.opt("n_noise", &m.n_noise);
        self.opt("gru_units", &m.gru_units);
        self.opt("mlp_width", &m.mlp_width);
        self.opt("z_dim", &m.z_dim);
        self.opt("max_voices", &m.max_voices);
    }

    fn pipeline(&mut self, p: &PipelineArgs, default_kind: Option<&str>) {
        for c in &p.checkpoints {
            match (c.split_once('='), default_kind) {
                (Some(_), _) => self.0.push(("checkpoint", c.clone())),
                (None, Some(kind)) => self.0.push(("checkpoint", format!("{kind}={c}"))),
                (None, None) => self.0.push(("checkpoint", format!("ddsp-mono={c}"))),
            }
        }
        self.opt("sbr_alpha", &p.sbr_alpha);
        self.opt("iterations", &p.iterations);
        self.opt("pitch", &p.pitch);
        if p.pitch_file.is_some() && p.pitch.is_none() {
            self.0.push(("pitch", "file".into()));
        }
        self.path("pitch_file", &p.pitch_file);
    }
}

fn resolve(cli: &Cli) -> CliResult<RunConfig> {
    let name = match &cli.command {
        Command::GenData(_) => "gen-data",
        Command::Train(_) => "train",
        Command::Extend(_) => "extend",
        Command::Eval(_) => "eval",
        Command::Bench(_) => "bench",
    };
    let mut cfg = RunConfig::new(name);
    match &cli.command {
        Command::Eval(_) | Command::Train(_) => cfg.pitch = "oracle".into(),
        _ => {}
    }
    if let Some(path) = &cli.config {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
        cfg.apply_text(&text, path).map_err(CliError::Usage)?;
        cfg.command = name.into();
    }
    for kv in &cli.set {
        let (k, v) = kv.split_once('=').ok_or_else(|| CliError::Usage(format!("--set expects key=value, got `{kv}`")))?;
        cfg.set(k.trim(), v.trim()).map_err(CliError::Usage)?;
    }
    let mut o = Overrides(Vec::new());
    o.opt("seed", &cli.seed);
    o.opt("jobs", &cli.jobs);
    o.flag("deterministic", cli.deterministic);
    o.opt("cutoff_hz", &cli.cutoff_hz);
    match &cli.command {
        Command::GenData(a) => {
            o.opt("kind", &a.kind);
            o.path("out", &Some(a.out.clone()));
            o.path("corpus", &a.corpus);
            o.opt("clip_seconds", &a.clip_seconds);
            o.opt("split_ratio", &a.split_ratio);
        }
        Command::Train(a) => {
            o.path("data", &a.data);
            o.path("out", &a.out);
            o.model(&a.model);
            o.opt("steps", &a.steps);
            o.opt("batch", &a.batch);
            o.opt("lr0", &a.lr0);
            o.opt("crop_frames", &a.crop_frames);
            o.opt("checkpoint_every", &a.checkpoint_every);
            o.opt("pitch", &a.pitch);
            o.flag("resume", a.resume);
        }
        Command::Extend(a) => {
            o.path("input", &a.input);
            o.path("output", &a.output);
            if let Some(m) = &a.model {
                o.0.push(("models", m.clone()));
            }
            o.pipeline(&a.pipeline, a.model.as_deref());
        }
        Command::Eval(a) => {
            o.path("data", &a.data);
            o.path("out", &a.out);
            o.opt("models", &a.models);
            o.opt("split", &a.split);
            o.pipeline(&a.pipeline, None);
        }
        Command::Bench(a) => {
            o.path("data", &a.data);
            o.path("out", &a.out);
            o.opt("models", &a.models);
            o.opt("split", &a.split);
            o.pipeline(&a.pipeline, None);
            o.opt("repetitions", &a.repetitions);
            o.opt("warmup", &a.warmup);
            o.opt("bench_clips", &a.clips);
        }
    }
    for (k, v) in o.0 {
        cfg.set(k, &v).map_err(CliError::Usage)?;
    }
    if cfg.deterministic {
        cfg.jobs = 1;
    }
    cfg.train.jobs = cfg.effective_jobs();
    cfg.model.validate()?;
    cfg.train.validate()?;
    cfg.sbr.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> CliResult<()> {
    let cfg = resolve(&cli)?;
    match &cli.command {
        Command::GenData(a) => commands::gen_data(&cfg, a.force, a.manifest_only),
        Command::Train(_) => commands::train(&cfg),
        Command::Extend(a) => commands::extend(&cfg, a.residuals.as_deref()),
        Command::Eval(a) => commands::eval(&cfg, a.compare, &a.expect),
        Command::Bench(a) => commands::bench(&cfg, a.plot_data),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("bwe: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
