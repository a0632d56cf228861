use ndarray::Array2;

use super::{AudioClip, DspError, FeatureTrack, MfccConfig};

pub const GLOTTAL_CHANNELS: [&str; 2] = ["periodicity", "aperiodicity"];

/// Average magnitude difference of the `len` samples starting at `start`
/// against the same stretch shifted by `lag`. Pairs running past the end of
/// the signal are dropped from the average; returns `None` if none remain.
pub fn amdf(signal: &[f32], start: usize, len: usize, lag: usize) -> Option<f64> {
    let end = (start + len).min(signal.len().saturating_sub(lag));
    if end <= start {
        return None;
    }
    let sum: f64 = (start..end)
        .map(|n| (signal[n] as f64 - signal[n + lag] as f64).abs())
        .sum();
    Some(sum / (end - start) as f64)
}

/// Frame-level periodicity/aperiodicity from the AMDF over lags of
/// 2.5–20 ms. Frames share the cepstral framing so the tracks line up.
pub fn estimate_glottal_tracks(clip: &AudioClip, cfg: &MfccConfig) -> Result<FeatureTrack, DspError> {
    if clip.sample_rate != cfg.sample_rate {
        return Err(DspError::SampleRate(clip.sample_rate));
    }
    if clip.samples.len() < cfg.window {
        return Err(DspError::TooShort {
            len: clip.samples.len(),
            need: cfg.window,
        });
    }
    let sr = clip.sample_rate as f64;
    let min_lag = ((0.0025 * sr).round() as usize).max(1);
    let max_lag = (0.020 * sr).round() as usize;
    let frames = cfg.frame_count(clip.samples.len());
    let mut data = Array2::zeros((2, frames));
    for t in 0..frames {
        let start = t * cfg.hop;
        let values: Vec<f64> = (min_lag..=max_lag)
            .filter_map(|lag| amdf(&clip.samples, start, cfg.window, lag))
            .collect();
        let periodicity = if values.is_empty() {
            0.0
        } else {
            let mean = values.iter().sum::<f64>() / values.len() as f64;
            let min = values.iter().copied().fold(f64::INFINITY, f64::min);
            if mean > 0.0 {
                (1.0 - min / mean).clamp(0.0, 1.0)
            } else {
                0.0
            }
        };
        data[[0, t]] = periodicity;
        data[[1, t]] = 1.0 - periodicity;
    }
    FeatureTrack::new(
        data,
        cfg.frame_rate(),
        GLOTTAL_CHANNELS.iter().map(|s| s.to_string()).collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sawtooth(freq: f64, seconds: f64) -> AudioClip {
        let n = (seconds * 8000.0) as usize;
        let period = 8000.0 / freq;
        let samples = (0..n)
            .map(|i| {
                let phase = (i as f64 % period) / period;
                (0.8 * (2.0 * phase - 1.0)) as f32
            })
            .collect();
        AudioClip::new(samples, 8000).unwrap()
    }

    fn interior_frames(clip: &AudioClip, cfg: &MfccConfig) -> std::ops::Range<usize> {
        // frames whose window plus the longest lag stays inside the clip
        let last = (clip.samples.len() - cfg.window - 160) / cfg.hop;
        0..last
    }

    #[test]
    fn sawtooth_is_periodic() {
        let cfg = MfccConfig::default();
        let clip = sawtooth(100.0, 0.5);
        let track = estimate_glottal_tracks(&clip, &cfg).unwrap();
        for t in interior_frames(&clip, &cfg) {
            assert!(track.data()[[0, t]] >= 0.9, "frame {t}: {}", track.data()[[0, t]]);
        }
    }

    #[test]
    fn noise_is_much_less_periodic() {
        let cfg = MfccConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let samples: Vec<f32> = (0..4000).map(|_| rng.random_range(-0.5f32..0.5)).collect();
        let clip = AudioClip::new(samples, 8000).unwrap();
        let track = estimate_glottal_tracks(&clip, &cfg).unwrap();
        let range = interior_frames(&clip, &cfg);
        let n = range.len() as f64;
        let mean: f64 = range.map(|t| track.data()[[0, t]]).sum::<f64>() / n;
        assert!(mean < 0.5, "mean periodicity {mean}");
    }

    #[test]
    fn channels_are_complementary_and_bounded() {
        let cfg = MfccConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let samples: Vec<f32> = (0..2400)
            .map(|i| ((i as f32) * 0.07).sin() * 0.3 + rng.random_range(-0.2f32..0.2))
            .collect();
        let track = estimate_glottal_tracks(&AudioClip::new(samples, 8000).unwrap(), &cfg).unwrap();
        for t in 0..track.frames() {
            let p = track.data()[[0, t]];
            let a = track.data()[[1, t]];
            assert!((0.0..=1.0).contains(&p) && (0.0..=1.0).contains(&a));
            assert_eq!(p + a, 1.0);
        }
    }

    #[test]
    fn amdf_vanishes_at_true_period() {
        let clip = sawtooth(100.0, 0.1);
        assert!(amdf(&clip.samples, 0, 160, 80).unwrap() < 1e-6);
        assert!(amdf(&clip.samples, 0, 160, 40).unwrap() > 0.1);
        assert_eq!(amdf(&clip.samples, 700, 160, 200), None);
    }
}
