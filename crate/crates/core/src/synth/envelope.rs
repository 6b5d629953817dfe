use crate::dsp::AudioBuffer;
use crate::error::{BweError, Result};

/// Piecewise-linear attack/sustain/decay gain curve: rises from 0 to
/// `sustain_level` over `attack_s`, holds for `sustain_s`, falls to 0 over
/// `decay_s`, then stays silent until `total_s`.
pub fn asd_envelope(
    attack_s: f64,
    decay_s: f64,
    sustain_level: f64,
    sustain_s: f64,
    total_s: f64,
    sample_rate: u32,
) -> Result<AudioBuffer> {
    for (name, v) in [("attack", attack_s), ("decay", decay_s), ("sustain", sustain_s), ("total", total_s)] {
        if !(v >= 0.0) || !v.is_finite() {
            return Err(BweError::InvalidArgument(format!("{name} duration must be >= 0, got {v}")));
        }
    }
    if !(0.0..=1.0).contains(&sustain_level) {
        return Err(BweError::InvalidArgument(format!("sustain level must be in [0, 1], got {sustain_level}")));
    }
    let sr = sample_rate as f64;
    let n_total = (total_s * sr).round() as usize;
    let n_attack = (attack_s * sr).round() as usize;
    let n_sustain = (sustain_s * sr).round() as usize;
    let n_decay = (decay_s * sr).round() as usize;
    let samples = (0..n_total)
        .map(|n| {
            if n < n_attack {
                sustain_level * n as f64 / n_attack as f64
            } else if n < n_attack + n_sustain {
                sustain_level
            } else if n < n_attack + n_sustain + n_decay {
                let k = n - n_attack - n_sustain;
                sustain_level * (1.0 - k as f64 / n_decay as f64)
            } else {
                0.0
            }
        })
        .collect();
    AudioBuffer::new(samples, sample_rate)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn no_attack_or_decay_is_rectangular() {
        let e = asd_envelope(0.0, 0.0, 0.7, 0.5, 1.0, 16000).unwrap();
        assert!(e.samples()[..8000].iter().all(|&v| v == 0.7));
        assert!(e.samples()[8000..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn attack_midpoint() {
        let e = asd_envelope(0.2, 0.1, 1.0, 0.5, 1.0, 16000).unwrap();
        assert!((e.samples()[1600] - 0.5).abs() < 1e-9);
        assert_eq!(e.len(), 16000);
    }

    #[test]
    fn clipped_to_total_and_bounded() {
        let e = asd_envelope(0.3, 0.3, 0.9, 2.0, 1.0, 8000).unwrap();
        assert_eq!(e.len(), 8000);
        assert!(e.samples().iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert!(asd_envelope(-0.1, 0.0, 0.5, 0.0, 1.0, 8000).is_err());
        assert!(asd_envelope(0.1, 0.0, 1.5, 0.0, 1.0, 8000).is_err());
    }
}
