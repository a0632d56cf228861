//! Synthetic multichannel corpora with class-dependent cross-channel delays.

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsp::{write_acft, FeatureTrack, DspError, TV_CHANNELS};
use crate::ingest::{write_manifest, ClinicalScore, Database, IngestError, Label, RecordingRecord};
use crate::nn::mix_seed;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synthetic spec: {0}")]
    Spec(String),
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Coupling of one group of channels: `x_j[t] = g·x_{j-1}[t-d] + noise`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coupling {
    pub channels: usize,
    pub delay_nondepressed: usize,
    pub delay_depressed: usize,
    pub gain: f64,
    pub noise: f64,
}

impl Coupling {
    pub fn delay(&self, label: Label) -> usize {
        match label {
            Label::NonDepressed => self.delay_nondepressed,
            Label::Depressed => self.delay_depressed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub speakers_per_class: usize,
    pub recordings_per_speaker: usize,
    pub duration_s: (f64, f64),
    pub frame_rate: f64,
    /// Coupling of the eight-channel tract-variable analog.
    pub tv: Coupling,
    /// Optional twelve-channel cepstral analog, generated independently.
    pub mfcc: Option<Coupling>,
    /// Relative per-speaker spread of the gain.
    pub gain_jitter: f64,
    pub ar_coefficient: f64,
    /// Largest correlation delay the corpus will be analysed with.
    pub max_delay: usize,
    /// Speakers alternate between this many database tags (1 or 2).
    pub sub_corpora: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            speakers_per_class: 40,
            recordings_per_speaker: 3,
            duration_s: (30.0, 60.0),
            frame_rate: 100.0,
            tv: Coupling {
                channels: 8,
                delay_nondepressed: 3,
                delay_depressed: 12,
                gain: 0.7,
                noise: 0.5,
            },
            mfcc: None,
            gain_jitter: 0.1,
            ar_coefficient: 0.95,
            max_delay: 50,
            sub_corpora: 1,
            seed: 0,
        }
    }
}

impl SynthSpec {
    /// Default corpus with a weaker, independent cepstral analog attached.
    pub fn with_mfcc_analog(self) -> Self {
        Self {
            mfcc: Some(Coupling {
                channels: 12,
                delay_nondepressed: 4,
                delay_depressed: 8,
                gain: 0.5,
                noise: 0.7,
            }),
            ..self
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::Spec(m));
        if self.speakers_per_class == 0 || self.recordings_per_speaker == 0 {
            return bad("need at least one speaker and recording per class".into());
        }
        let (lo, hi) = self.duration_s;
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
            return bad(format!("duration range {lo}..{hi}"));
        }
        if !(self.frame_rate > 0.0 && self.frame_rate.is_finite()) {
            return bad(format!("frame rate {}", self.frame_rate));
        }
        if !(0.0..1.0).contains(&self.ar_coefficient) || !(0.0..1.0).contains(&self.gain_jitter) {
            return bad("AR coefficient and gain jitter must lie in [0, 1)".into());
        }
        if !(1..=2).contains(&self.sub_corpora) {
            return bad(format!("{} sub-corpora (1 or 2 supported)", self.sub_corpora));
        }
        let min_frames = (lo * self.frame_rate).floor() as usize;
        for c in std::iter::once(&self.tv).chain(self.mfcc.as_ref()) {
            if c.channels < 2 {
                return bad("coupling needs at least two channels".into());
            }
            if c.delay_nondepressed == c.delay_depressed {
                return bad("class delays must differ".into());
            }
            if !(0.0..1.0).contains(&c.gain) {
                return bad(format!("gain {} outside [0, 1)", c.gain));
            }
            if !(c.noise >= 0.0 && c.noise.is_finite()) {
                return bad(format!("noise level {}", c.noise));
            }
            let d = c.delay_nondepressed.max(c.delay_depressed);
            if d >= self.max_delay {
                return bad(format!("delay {d} not below the analysis range {}", self.max_delay));
            }
            if d >= min_frames {
                return bad(format!("delay {d} frames exceeds the shortest recording"));
            }
        }
        Ok(())
    }
}

/// One generated recording.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthRecording {
    pub record: RecordingRecord,
    pub tv: FeatureTrack,
    pub mfcc: Option<FeatureTrack>,
}

fn coupled_series(c: &Coupling, label: Label, frames: usize, gain: f64, ar: f64, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let d = c.delay(label);
    let burn = d * c.channels + 200;
    let total = frames + burn;
    let innov = (1.0 - ar * ar).sqrt();
    let mut x = Array2::<f64>::zeros((c.channels, total));
    let mut prev = rng.sample::<f64, _>(StandardNormal);
    for t in 0..total {
        prev = ar * prev + innov * rng.sample::<f64, _>(StandardNormal);
        x[[0, t]] = prev;
    }
    for j in 1..c.channels {
        for t in 0..total {
            let lagged = if t >= d { x[[j - 1, t - d]] } else { 0.0 };
            x[[j, t]] = gain * lagged + c.noise * rng.sample::<f64, _>(StandardNormal);
        }
    }
    x.slice_move(ndarray::s![.., burn..])
}

fn tv_names() -> Vec<String> {
    TV_CHANNELS
        .iter()
        .map(|s| s.to_string())
        .chain(["periodicity".to_string(), "aperiodicity".to_string()])
        .collect()
}

fn names(prefix: &str, n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("{prefix}{i}")).collect()
}

/// Deterministic corpus for `spec.seed`; speakers are generated in parallel
/// from per-speaker sub-seeds.
pub fn generate(spec: &SynthSpec) -> Result<Vec<SynthRecording>, SynthError> {
    spec.validate()?;
    let speakers: Vec<(usize, Label)> = [Label::NonDepressed, Label::Depressed]
        .into_iter()
        .flat_map(|l| (0..spec.speakers_per_class).map(move |i| (i, l)))
        .collect();
    let per_speaker = speakers
        .par_iter()
        .enumerate()
        .map(|(k, &(i, label))| -> Result<Vec<SynthRecording>, SynthError> {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(spec.seed, k as u64));
            let tag = match label {
                Label::Depressed => 'd',
                Label::NonDepressed => 'n',
            };
            let speaker_id = format!("syn-{tag}{i:03}");
            let database = match (spec.sub_corpora, i % 2) {
                (1, _) => Database::Synth,
                (_, 0) => Database::Md1,
                _ => Database::Md2,
            };
            let jitter = |rng: &mut ChaCha8Rng| 1.0 + rng.random_range(-spec.gain_jitter..=spec.gain_jitter);
            let tv_gain = spec.tv.gain * jitter(&mut rng);
            let mfcc_gain = spec.mfcc.as_ref().map(|c| c.gain * jitter(&mut rng));
            let hamd = match label {
                Label::Depressed => rng.random_range(14..=30),
                Label::NonDepressed => rng.random_range(0..=7),
            };
            let mut out = Vec::with_capacity(spec.recordings_per_speaker);
            for r in 0..spec.recordings_per_speaker {
                let (lo, hi) = spec.duration_s;
                let seconds = if hi > lo { rng.random_range(lo..=hi) } else { lo };
                let frames = (seconds * spec.frame_rate).round() as usize;
                let tv_data = coupled_series(&spec.tv, label, frames, tv_gain, spec.ar_coefficient, &mut rng);
                let tv = FeatureTrack::new(tv_data, spec.frame_rate, tv_names())?;
                let mfcc = match (&spec.mfcc, mfcc_gain) {
                    (Some(c), Some(g)) => {
                        let data = coupled_series(c, label, frames, g, spec.ar_coefficient, &mut rng);
                        Some(FeatureTrack::new(data, spec.frame_rate, names("mfcc", c.channels))?)
                    }
                    _ => None,
                };
                let recording_id = format!("{speaker_id}-r{r}");
                out.push(SynthRecording {
                    record: RecordingRecord {
                        path: format!("{recording_id}.tv.acft"),
                        tv_path: Some(format!("{recording_id}.tv.acft")),
                        mfcc_path: mfcc.as_ref().map(|_| format!("{recording_id}.mfcc.acft")),
                        recording_id,
                        speaker_id: speaker_id.clone(),
                        database,
                        scores: vec![ClinicalScore::hamd(hamd)?],
                        label: Some(label),
                    },
                    tv,
                    mfcc,
                });
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(per_speaker.into_iter().flatten().collect())
}

/// Writes feature files and `manifest.jsonl` under `dir`; manifest paths
/// are relative to `dir`. Returns the manifest path.
pub fn write_corpus(recordings: &[SynthRecording], dir: &Path) -> Result<PathBuf, SynthError> {
    fs::create_dir_all(dir)?;
    for rec in recordings {
        let write = |name: &str, track: &FeatureTrack| -> Result<(), SynthError> {
            let mut bytes = Vec::new();
            write_acft(&mut bytes, track)?;
            crate::zoo::checkpoint::write_atomic(&dir.join(name), &bytes)?;
            Ok(())
        };
        write(&rec.record.path, &rec.tv)?;
        if let (Some(path), Some(track)) = (&rec.record.mfcc_path, &rec.mfcc) {
            write(path, track)?;
        }
    }
    let manifest = dir.join("manifest.jsonl");
    let records: Vec<RecordingRecord> = recordings.iter().map(|r| r.record.clone()).collect();
    let mut bytes = Vec::new();
    write_manifest(BufWriter::new(&mut bytes), &records)?;
    crate::zoo::checkpoint::write_atomic(&manifest, &bytes)?;
    Ok(manifest)
}
