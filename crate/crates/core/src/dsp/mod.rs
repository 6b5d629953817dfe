//! Signal-processing primitives shared by every other module.

pub mod audio;
pub mod band;
pub mod loudness;
pub mod mel;
pub mod noise;
pub mod stft;
pub mod wav;

pub use audio::{AudioBuffer, BandSplitSpec};
pub use band::{band_split, cutoff_bin, low_pass};
pub use loudness::{a_weighted_loudness, LoudnessTrack};
pub use mel::{mfcc, MfccConfig};
pub use noise::{mix_at_snr, pink_noise, white_noise};
pub use stft::{istft, stft, Spectrogram, StftPlan, Window};
