//! Losses, metrics, the training loop, evaluation and benchmarking.

pub mod loss;
pub mod schedule;

pub use loss::{lsd, lsd_with, MssLoss, DEFAULT_MSS_FFT_SIZES};
pub use schedule::PlateauSchedule;
pub mod trainer;

pub use trainer::{
    batch_loss, draw_crops, train, Crop, FeatureCache, LossRecord, TrainClip, TrainConfig, TrainData, TrainOutcome, TrainOutput,
    TrainPitch,
};
pub mod eval;

pub use eval::{
    bench_inference, evaluate, write_metrics_csv, write_metrics_jsonl, BenchReport, BenchRow, EnvFingerprint, EvalPitch, EvalReport,
    MetricRecord,
};
