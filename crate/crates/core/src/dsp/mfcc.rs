use std::f64::consts::PI;
use std::sync::Arc;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use super::{AudioClip, DspError, FeatureTrack, SAMPLE_RATE};

/// Number of cepstral channels kept after dropping c0.
pub const MFCC_CHANNELS: usize = 12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MfccConfig {
    pub sample_rate: u32,
    /// Analysis window length in samples (20 ms).
    pub window: usize,
    /// Frame shift in samples (10 ms).
    pub hop: usize,
    pub fft_size: usize,
    pub n_filters: usize,
    pub low_hz: f64,
    pub high_hz: f64,
    /// Cepstral coefficients computed, c0 included.
    pub n_ceps: usize,
    pub log_floor: f64,
}

impl Default for MfccConfig {
    fn default() -> Self {
        Self {
            sample_rate: SAMPLE_RATE,
            window: 160,
            hop: 80,
            fft_size: 256,
            n_filters: 26,
            low_hz: 0.0,
            high_hz: 4000.0,
            n_ceps: 13,
            log_floor: 1e-10,
        }
    }
}

impl MfccConfig {
    pub fn frame_count(&self, len: usize) -> usize {
        if len < self.window {
            0
        } else {
            (len - self.window) / self.hop + 1
        }
    }

    pub fn frame_rate(&self) -> f64 {
        self.sample_rate as f64 / self.hop as f64
    }
}

fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular filters evaluated at the FFT bin centre frequencies,
/// `n_filters × (fft_size/2 + 1)`.
fn mel_filterbank(cfg: &MfccConfig) -> Array2<f64> {
    let n_bins = cfg.fft_size / 2 + 1;
    let lo = hz_to_mel(cfg.low_hz);
    let hi = hz_to_mel(cfg.high_hz);
    let edges: Vec<f64> = (0..cfg.n_filters + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (cfg.n_filters + 1) as f64))
        .collect();
    let bin_hz = cfg.sample_rate as f64 / cfg.fft_size as f64;
    Array2::from_shape_fn((cfg.n_filters, n_bins), |(m, k)| {
        let f = k as f64 * bin_hz;
        let (left, centre, right) = (edges[m], edges[m + 1], edges[m + 2]);
        if f <= left || f >= right {
            0.0
        } else if f <= centre {
            (f - left) / (centre - left)
        } else {
            (right - f) / (right - centre)
        }
    })
}

fn hamming(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.54 - 0.46 * (2.0 * PI * i as f64 / (n - 1) as f64).cos())
        .collect()
}

struct Analyzer {
    cfg: MfccConfig,
    window: Vec<f64>,
    filters: Array2<f64>,
    fft: Arc<dyn Fft<f64>>,
}

impl Analyzer {
    fn new(cfg: &MfccConfig) -> Self {
        Self {
            cfg: cfg.clone(),
            window: hamming(cfg.window),
            filters: mel_filterbank(cfg),
            fft: FftPlanner::new().plan_fft_forward(cfg.fft_size),
        }
    }

    fn mel_frame(&self, frame: &[f32], scratch: &mut [Complex<f64>]) -> Vec<f64> {
        scratch.fill(Complex::new(0.0, 0.0));
        for (dst, (&s, &w)) in scratch.iter_mut().zip(frame.iter().zip(&self.window)) {
            dst.re = s as f64 * w;
        }
        self.fft.process(scratch);
        let n_bins = self.cfg.fft_size / 2 + 1;
        let power: Vec<f64> = scratch[..n_bins].iter().map(|c| c.norm_sqr()).collect();
        self.filters
            .rows()
            .into_iter()
            .map(|row| row.iter().zip(&power).map(|(w, p)| w * p).sum())
            .collect()
    }
}

fn check_clip(clip: &AudioClip, cfg: &MfccConfig) -> Result<(), DspError> {
    if clip.sample_rate != cfg.sample_rate {
        return Err(DspError::SampleRate(clip.sample_rate));
    }
    if clip.samples.len() < cfg.window {
        return Err(DspError::TooShort {
            len: clip.samples.len(),
            need: cfg.window,
        });
    }
    Ok(())
}

/// Mel filterbank energies (before the log), `n_filters × frames`.
pub fn mel_energies(clip: &AudioClip, cfg: &MfccConfig) -> Result<Array2<f64>, DspError> {
    check_clip(clip, cfg)?;
    let analyzer = Analyzer::new(cfg);
    let frames = cfg.frame_count(clip.samples.len());
    let mut scratch = vec![Complex::new(0.0, 0.0); cfg.fft_size];
    let mut out = Array2::zeros((cfg.n_filters, frames));
    for t in 0..frames {
        let start = t * cfg.hop;
        let energies = analyzer.mel_frame(&clip.samples[start..start + cfg.window], &mut scratch);
        for (m, e) in energies.into_iter().enumerate() {
            out[[m, t]] = e;
        }
    }
    Ok(out)
}

/// Twelve-channel cepstral track: Hamming-windowed frames, mel energies,
/// floored natural log, orthonormal DCT-II, c0 discarded.
pub fn compute_mfcc(clip: &AudioClip, cfg: &MfccConfig) -> Result<FeatureTrack, DspError> {
    let mel = mel_energies(clip, cfg)?;
    let (n_filters, frames) = mel.dim();
    let log_mel = mel.mapv(|e| e.max(cfg.log_floor).ln());
    let kept = cfg.n_ceps - 1;
    let norm0 = (1.0 / n_filters as f64).sqrt();
    let norm = (2.0 / n_filters as f64).sqrt();
    // c0 is never used, so only rows 1..n_ceps of the DCT are formed.
    let dct = Array2::from_shape_fn((kept, n_filters), |(k, m)| {
        let k = k + 1;
        let scale = if k == 0 { norm0 } else { norm };
        scale * (PI * k as f64 * (m as f64 + 0.5) / n_filters as f64).cos()
    });
    let ceps = dct.dot(&log_mel);
    debug_assert_eq!(ceps.dim(), (kept, frames));
    let names = (1..cfg.n_ceps).map(|k| format!("mfcc{k}")).collect();
    FeatureTrack::new(ceps, cfg.frame_rate(), names)
}
