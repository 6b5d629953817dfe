//! Resolved run settings: defaults, then a `key=value` file, then flags.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use bwe_core::bwe::{PhaseMode, SbrConfig};
use bwe_core::controller::ModelConfig;
use bwe_core::train::TrainConfig;

pub const RUN_CONFIG_FORMAT: &str = "bwe-run-config/1";
pub const RUN_CONFIG_FILE: &str = "run_config.txt";

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub command: String,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub seed: u64,
    pub jobs: usize,
    pub deterministic: bool,
    /// `oracle`, `estimate` or `file`.
    pub pitch: String,
    pub pitch_file: Option<PathBuf>,
    pub sbr: SbrConfig,
    pub iterations: usize,
    pub repetitions: usize,
    pub warmup: usize,
    pub bench_clips: usize,
    /// `mono`, `poly` or `corpus`.
    pub kind: String,
    pub corpus: Option<PathBuf>,
    pub clip_seconds: f64,
    pub split_ratio: f64,
    pub split: String,
    pub models: Vec<String>,
    /// Pipeline kind to checkpoint path.
    pub checkpoints: BTreeMap<String, PathBuf>,
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub input: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub resume: bool,
}

impl RunConfig {
    pub fn new(command: &str) -> Self {
        Self {
            command: command.into(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            seed: 0,
            jobs: 1,
            deterministic: false,
            pitch: "estimate".into(),
            pitch_file: None,
            sbr: SbrConfig::default(),
            iterations: 5,
            repetitions: 5,
            warmup: 1,
            bench_clips: 4,
            kind: "mono".into(),
            corpus: None,
            clip_seconds: 4.0,
            split_ratio: 0.9,
            split: "test".into(),
            models: Vec::new(),
            checkpoints: BTreeMap::new(),
            data: None,
            out: None,
            input: None,
            output: None,
            resume: false,
        }
    }

    /// Set one key from its text form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, String>
        where
            T::Err: std::fmt::Display,
        {
            v.parse().map_err(|e| format!("{key}: cannot parse `{v}`: {e}"))
        }
        fn flag(key: &str, v: &str) -> Result<bool, String> {
            match v {
                "true" | "1" | "yes" => Ok(true),
                "false" | "0" | "no" => Ok(false),
                _ => Err(format!("{key}: expected true or false, got `{v}`")),
            }
        }
        let path = |v: &str| (!v.is_empty()).then(|| PathBuf::from(v));
        match key {
            "format" if value == RUN_CONFIG_FORMAT => {}
            "format" => return Err(format!("unsupported config format `{value}`")),
            "command" => self.command = value.into(),
            "variant" => self.model.variant = value.parse().map_err(|e| format!("{e}"))?,
            "n_harmonics" => self.model.n_harmonics = num(key, value)?,
            "n_noise" => self.model.n_noise = num(key, value)?,
            "gru_units" => self.model.gru_units = num(key, value)?,
            "mlp_width" => self.model.mlp_width = num(key, value)?,
            "z_dim" => self.model.z_dim = num(key, value)?,
            "max_voices" => self.model.max_voices = num(key, value)?,
            "n_mfcc" => self.model.n_mfcc = num(key, value)?,
            "hop" => self.model.hop = num(key, value)?,
            "sample_rate" => self.model.sample_rate = num(key, value)?,
            "cutoff_hz" => {
                self.model.cutoff_hz = num(key, value)?;
                self.sbr.cutoff_hz = self.model.cutoff_hz;
            }
            "steps" => self.train.steps = num(key, value)?,
            "batch" => self.train.batch = num(key, value)?,
            "lr0" => self.train.lr0 = num(key, value)?,
            "plateau_steps" => self.train.plateau_steps = num(key, value)?,
            "max_halvings" => self.train.max_halvings = num(key, value)?,
            "mss_fft_sizes" => {
                self.train.mss_fft_sizes =
                    value.split(',').map(|s| num(key, s.trim())).collect::<Result<Vec<usize>, _>>()?;
            }
            "loss_high_band" => self.train.loss_high_band = flag(key, value)?,
            "crop_frames" => self.train.crop_frames = num(key, value)?,
            "clip_grad_norm" => {
                self.train.clip_grad_norm = if value == "none" { None } else { Some(num(key, value)?) };
            }
            "checkpoint_every" => self.train.checkpoint_every = num(key, value)?,
            "seed" => {
                self.seed = num(key, value)?;
                self.train.seed = self.seed;
            }
            "jobs" => self.jobs = num(key, value)?,
            "deterministic" => self.deterministic = flag(key, value)?,
            "pitch" => match value {
                "oracle" | "estimate" | "file" => self.pitch = value.into(),
                _ => return Err(format!("pitch: expected oracle, estimate or file, got `{value}`")),
            },
            "pitch_file" => self.pitch_file = path(value),
            "sbr_alpha" => self.sbr.match_fraction = num(key, value)?,
            "sbr_replications" => self.sbr.n_replications = num(key, value)?,
            "sbr_phase" => {
                self.sbr.phase_mode = match value {
                    "replicated" => PhaseMode::Replicated,
                    "oracle" => PhaseMode::Oracle,
                    _ => return Err(format!("sbr_phase: expected replicated or oracle, got `{value}`")),
                }
            }
            "iterations" => self.iterations = num(key, value)?,
            "repetitions" => self.repetitions = num(key, value)?,
            "warmup" => self.warmup = num(key, value)?,
            "bench_clips" => self.bench_clips = num(key, value)?,
            "kind" => match value {
                "mono" | "poly" | "corpus" => self.kind = value.into(),
                _ => return Err(format!("kind: expected mono, poly or corpus, got `{value}`")),
            },
            "corpus" => self.corpus = path(value),
            "clip_seconds" => self.clip_seconds = num(key, value)?,
            "split_ratio" => self.split_ratio = num(key, value)?,
            "split" => match value {
                "train" | "test" => self.split = value.into(),
                _ => return Err(format!("split: expected train or test, got `{value}`")),
            },
            "models" => self.models = value.split(',').map(str::trim).filter(|s| !s.is_empty()).map(String::from).collect(),
            "checkpoint" => {
                let (kind, p) = value.split_once('=').ok_or_else(|| format!("checkpoint: expected kind=path, got `{value}`"))?;
                self.checkpoints.insert(kind.trim().into(), PathBuf::from(p.trim()));
            }
            "data" => self.data = path(value),
            "out" => self.out = path(value),
            "input" => self.input = path(value),
            "output" => self.output = path(value),
            "resume" => self.resume = flag(key, value)?,
            other => return Err(format!("unknown config key `{other}`")),
        }
        Ok(())
    }

    /// Apply a config file; `#` starts a comment line.
    pub fn apply_text(&mut self, text: &str, origin: &Path) -> Result<(), String> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| format!("{}:{}: expected key=value", origin.display(), i + 1))?;
            self.set(k.trim(), v.trim()).map_err(|e| format!("{}:{}: {e}", origin.display(), i + 1))?;
        }
        Ok(())
    }

    /// Worker threads actually used.
    pub fn effective_jobs(&self) -> usize {
        if self.deterministic {
            1
        } else {
            self.jobs.max(1)
        }
    }

    pub fn to_text(&self) -> String {
        let p = |v: &Option<PathBuf>| v.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        let m = &self.model;
        let t = &self.train;
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k}={v}");
        };
        kv("format", RUN_CONFIG_FORMAT.into());
        kv("command", self.command.clone());
        kv("variant", m.variant.to_string());
        kv("n_harmonics", m.n_harmonics.to_string());
        kv("n_noise", m.n_noise.to_string());
        kv("gru_units", m.gru_units.to_string());
        kv("mlp_width", m.mlp_width.to_string());
        kv("z_dim", m.z_dim.to_string());
        kv("max_voices", m.max_voices.to_string());
        kv("n_mfcc", m.n_mfcc.to_string());
        kv("hop", m.hop.to_string());
        kv("sample_rate", m.sample_rate.to_string());
        kv("cutoff_hz", format!("{:?}", m.cutoff_hz));
        kv("steps", t.steps.to_string());
        kv("batch", t.batch.to_string());
        kv("lr0", format!("{:?}", t.lr0));
        kv("plateau_steps", t.plateau_steps.to_string());
        kv("max_halvings", t.max_halvings.to_string());
        kv("mss_fft_sizes", t.mss_fft_sizes.iter().map(|n| n.to_string()).collect::<Vec<_>>().join(","));
        kv("loss_high_band", t.loss_high_band.to_string());
        kv("crop_frames", t.crop_frames.to_string());
        kv("clip_grad_norm", t.clip_grad_norm.map_or("none".into(), |v| format!("{v:?}")));
        kv("checkpoint_every", t.checkpoint_every.to_string());
        kv("seed", self.seed.to_string());
        kv("jobs", self.jobs.to_string());
        kv("deterministic", self.deterministic.to_string());
        kv("pitch", self.pitch.clone());
        kv("pitch_file", p(&self.pitch_file));
        kv("sbr_alpha", format!("{:?}", self.sbr.match_fraction));
        kv("sbr_replications", self.sbr.n_replications.to_string());
        kv(
            "sbr_phase",
            match self.sbr.phase_mode {
                PhaseMode::Replicated => "replicated".into(),
                PhaseMode::Oracle => "oracle".into(),
            },
        );
        kv("iterations", self.iterations.to_string());
        kv("repetitions", self.repetitions.to_string());
        kv("warmup", self.warmup.to_string());
        kv("bench_clips", self.bench_clips.to_string());
        kv("kind", self.kind.clone());
        kv("corpus", p(&self.corpus));
        kv("clip_seconds", format!("{:?}", self.clip_seconds));
        kv("split_ratio", format!("{:?}", self.split_ratio));
        kv("split", self.split.clone());
        kv("models", self.models.join(","));
        for (k, v) in &self.checkpoints {
            kv("checkpoint", format!("{k}={}", v.display()));
        }
        kv("data", p(&self.data));
        kv("out", p(&self.out));
        kv("input", p(&self.input));
        kv("output", p(&self.output));
        kv("resume", self.resume.to_string());
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let mut c = RunConfig::new("eval");
        for (k, v) in [
            ("gru_units", "64"),
            ("cutoff_hz", "2500.5"),
            ("mss_fft_sizes", "512,256"),
            ("clip_grad_norm", "none"),
            ("checkpoint", "ddsp-mono=runs/a b/model.ckpt"),
            ("models", "null,sbr"),
            ("data", "d"),
            ("sbr_phase", "oracle"),
        ] {
            c.set(k, v).unwrap();
        }
        let mut back = RunConfig::new("other");
        back.apply_text(&c.to_text(), Path::new("x")).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.sbr.cutoff_hz, 2500.5);
    }

    #[test]
    fn bad_keys_and_values() {
        let mut c = RunConfig::new("train");
        assert!(c.set("bogus", "1").is_err());
        assert!(c.set("steps", "many").is_err());
        assert!(c.set("pitch", "guess").is_err());
        let err = c.apply_text("steps=10\nbatch\n", Path::new("cfg.txt")).unwrap_err();
        assert!(err.contains("cfg.txt:2"), "{err}");
        assert_eq!(c.train.steps, 10);
    }
}
