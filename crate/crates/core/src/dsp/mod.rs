//! Audio decoding and frame-level feature extraction.

mod glottal;
mod mfcc;
mod segment;
mod track;
mod wav;

pub use glottal::{amdf, estimate_glottal_tracks, GLOTTAL_CHANNELS};
pub use mfcc::{compute_mfcc, mel_energies, MfccConfig, MFCC_CHANNELS};
pub use segment::{segment_count, segment_track, Segment, SegmentRules};
pub use track::{
    assemble_tv8, load_tv_track, normalize_channels, read_acft, tv_from_track, write_acft, FeatureTrack,
    TV_CHANNELS,
};
pub use wav::{decode_wav, encode_wav, AudioClip};

use thiserror::Error;

/// Sample rate of the interactive-voice-response recordings.
pub const SAMPLE_RATE: u32 = 8000;
/// Feature frame rate for 10 ms hops.
pub const FRAME_RATE: f64 = 100.0;

#[derive(Debug, Error)]
pub enum DspError {
    #[error("audio format: {0}")]
    Format(String),
    #[error("clip too short: {len} samples, need at least {need}")]
    TooShort { len: usize, need: usize },
    #[error("unsupported sample rate {0} Hz (expected {SAMPLE_RATE} Hz)")]
    SampleRate(u32),
    #[error("alignment: {0}")]
    Alignment(String),
    #[error("invalid track: {0}")]
    InvalidTrack(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
