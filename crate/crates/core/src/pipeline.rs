//! Recording-to-example plumbing: track loading, segmentation, correlation
//! matrices, the on-disk segment index, and train-only normalization.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::acf::{apply_norm, build_acf, fit_norm_stats, AcfError, ChannelDelayCorrelationMatrix, NormStats};
use crate::dsp::{
    assemble_tv8, compute_mfcc, decode_wav, estimate_glottal_tracks, normalize_channels, read_acft, segment_track,
    tv_from_track, write_acft, DspError, FeatureTrack, MfccConfig, SegmentRules, MFCC_CHANNELS,
};
use crate::ingest::{Database, DatasetSplit, IngestError, Label, RecordingRecord};
use crate::zoo::checkpoint::write_atomic;
use crate::zoo::{Example, ExampleSet, FeatureMode, ZooError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{path}: {source}")]
    Dsp { path: String, source: DspError },
    #[error(transparent)]
    Acf(#[from] AcfError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Zoo(#[from] ZooError),
    #[error("{0}")]
    Input(String),
    #[error("segment index line {line}: {msg}")]
    Index { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeaturizeOptions {
    pub mode: FeatureMode,
    pub max_delay: usize,
    pub rules: SegmentRules,
    pub mfcc: MfccConfig,
}

impl Default for FeaturizeOptions {
    fn default() -> Self {
        Self {
            mode: FeatureMode::Tv8,
            max_delay: 50,
            rules: SegmentRules::default(),
            mfcc: MfccConfig::default(),
        }
    }
}

enum Source {
    Audio(crate::dsp::AudioClip),
    Track(FeatureTrack),
}

fn resolve(base: &Path, p: &str) -> PathBuf {
    let path = Path::new(p);
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        base.join(path)
    }
}

fn read_source(path: &Path) -> Result<Source, PipelineError> {
    let dsp = |source| PipelineError::Dsp {
        path: path.display().to_string(),
        source,
    };
    let bytes = fs::read(path).map_err(|e| dsp(DspError::Io(e)))?;
    match bytes.get(..4) {
        Some(b"RIFF") => Ok(Source::Audio(decode_wav(&bytes).map_err(dsp)?)),
        Some(b"ACFT") => Ok(Source::Track(read_acft(&bytes[..]).map_err(dsp)?)),
        _ => Err(dsp(DspError::Format("neither RIFF/WAVE audio nor an ACFT track".into()))),
    }
}

fn audio_of(record: &RecordingRecord, base: &Path) -> Result<crate::dsp::AudioClip, PipelineError> {
    match read_source(&resolve(base, &record.path))? {
        Source::Audio(clip) => Ok(clip),
        Source::Track(_) => Err(PipelineError::Input(format!(
            "{}: audio needed but {} holds a feature track",
            record.recording_id, record.path
        ))),
    }
}

fn dsp_err(path: &str) -> impl Fn(DspError) -> PipelineError + '_ {
    move |source| PipelineError::Dsp {
        path: path.to_string(),
        source,
    }
}

/// The eight-channel tract-variable track of a recording.
pub fn load_tv8(record: &RecordingRecord, base: &Path, mfcc: &MfccConfig) -> Result<FeatureTrack, PipelineError> {
    let tv_file = record.tv_path.as_deref().unwrap_or(&record.path);
    let track = match read_source(&resolve(base, tv_file))? {
        Source::Track(t) => t,
        Source::Audio(_) => {
            return Err(PipelineError::Input(format!(
                "{}: tract variables cannot be derived from audio; supply tv_path",
                record.recording_id
            )))
        }
    };
    match track.channels() {
        8 => Ok(track),
        6 => {
            let tv = tv_from_track(track).map_err(dsp_err(tv_file))?;
            let clip = audio_of(record, base)?;
            let glottal = estimate_glottal_tracks(&clip, mfcc).map_err(dsp_err(&record.path))?;
            assemble_tv8(&tv, &glottal).map_err(dsp_err(tv_file))
        }
        m => Err(PipelineError::Input(format!(
            "{}: tract-variable track has {m} channels (expected 6 or 8)",
            record.recording_id
        ))),
    }
}

/// The twelve-channel cepstral track of a recording.
pub fn load_mfcc12(record: &RecordingRecord, base: &Path, cfg: &MfccConfig) -> Result<FeatureTrack, PipelineError> {
    let track = match &record.mfcc_path {
        Some(p) => match read_source(&resolve(base, p))? {
            Source::Track(t) => t,
            Source::Audio(clip) => compute_mfcc(&clip, cfg).map_err(dsp_err(p))?,
        },
        None => compute_mfcc(&audio_of(record, base)?, cfg).map_err(dsp_err(&record.path))?,
    };
    if track.channels() != MFCC_CHANNELS {
        return Err(PipelineError::Input(format!(
            "{}: cepstral track has {} channels (expected {MFCC_CHANNELS})",
            record.recording_id,
            track.channels()
        )));
    }
    Ok(track)
}

/// One track per tower, trimmed to a common length.
pub fn load_tracks(
    record: &RecordingRecord,
    base: &Path,
    opts: &FeaturizeOptions,
) -> Result<Vec<FeatureTrack>, PipelineError> {
    let mut tracks = opts
        .mode
        .components()
        .iter()
        .map(|m| match m {
            FeatureMode::Mfcc12 => load_mfcc12(record, base, &opts.mfcc),
            _ => load_tv8(record, base, &opts.mfcc),
        })
        .collect::<Result<Vec<_>, _>>()?;
    if tracks.len() > 1 {
        let rate = tracks[0].frame_rate();
        if tracks.iter().any(|t| t.frame_rate() != rate) {
            return Err(PipelineError::Input(format!(
                "{}: feature tracks have different frame rates",
                record.recording_id
            )));
        }
        let n = tracks.iter().map(FeatureTrack::frames).min().unwrap();
        let max = tracks.iter().map(FeatureTrack::frames).max().unwrap();
        if max - n > 2 {
            return Err(PipelineError::Input(format!(
                "{}: feature tracks differ by {} frames",
                record.recording_id,
                max - n
            )));
        }
        tracks = tracks
            .into_iter()
            .map(|t| t.slice_frames(0, n).map_err(dsp_err(&record.recording_id)))
            .collect::<Result<_, _>>()?;
    }
    Ok(tracks)
}

/// Index line linking a segment's matrix files to its metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentEntry {
    pub segment_id: String,
    pub recording_id: String,
    pub speaker_id: String,
    pub database: Database,
    pub label: Label,
    pub start_time: f64,
    pub end_time: f64,
    /// One ACFT file per tower, relative to the index.
    pub files: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentFeatures {
    pub entry: SegmentEntry,
    pub acfs: Vec<ChannelDelayCorrelationMatrix>,
}

/// Normalizes each channel over the whole recording, segments, and builds a
/// matrix per segment and tower.
pub fn featurize_recording(
    record: &RecordingRecord,
    tracks: &[FeatureTrack],
    opts: &FeaturizeOptions,
) -> Result<Vec<SegmentFeatures>, PipelineError> {
    let label = record
        .label
        .ok_or_else(|| PipelineError::Ingest(IngestError::Unlabeled(record.recording_id.clone())))?;
    let per_tower: Vec<_> = tracks
        .iter()
        .map(|t| segment_track(&record.recording_id, &normalize_channels(t), label, &opts.rules))
        .collect();
    let count = per_tower[0].len();
    if count == 0 {
        warn!(
            "{}: {:.1} s is below the {:.0} s minimum, no segments",
            record.recording_id,
            tracks[0].duration(),
            opts.rules.min_s
        );
    }
    let names = opts.mode.tower_names();
    (0..count)
        .map(|k| {
            let seg = &per_tower[0][k];
            let acfs = per_tower
                .iter()
                .map(|segs| build_acf(&segs[k].track, opts.max_delay))
                .collect::<Result<Vec<_>, _>>()?;
            let id = seg.id();
            let files = names
                .iter()
                .map(|n| format!("acf/{}.{n}.acft", id.replace(['#', '/', '\\'], "_")))
                .collect();
            Ok(SegmentFeatures {
                entry: SegmentEntry {
                    segment_id: id,
                    recording_id: record.recording_id.clone(),
                    speaker_id: record.speaker_id.clone(),
                    database: record.database,
                    label,
                    start_time: seg.start_time,
                    end_time: seg.end_time,
                    files,
                },
                acfs,
            })
        })
        .collect()
}

/// Featurized segments of a corpus, in manifest order.
#[derive(Debug, Clone, PartialEq)]
pub struct FeaturizedCorpus {
    pub mode: FeatureMode,
    pub segments: Vec<SegmentFeatures>,
}

/// Featurizes every labeled recording in parallel. Failures are collected
/// per recording and do not stop the run; unlabeled recordings are skipped.
pub fn featurize_corpus(
    records: &[RecordingRecord],
    base: &Path,
    opts: &FeaturizeOptions,
) -> (FeaturizedCorpus, Vec<(String, PipelineError)>) {
    let results: Vec<_> = records
        .par_iter()
        .filter(|r| {
            if r.label.is_none() {
                warn!("{}: scores disagree, recording left out", r.recording_id);
            }
            r.label.is_some()
        })
        .map(|r| {
            let out = load_tracks(r, base, opts).and_then(|t| featurize_recording(r, &t, opts));
            (r.recording_id.clone(), out)
        })
        .collect();
    let mut segments = Vec::new();
    let mut failures = Vec::new();
    for (id, res) in results {
        match res {
            Ok(s) => segments.extend(s),
            Err(e) => {
                warn!("{id}: {e}");
                failures.push((id, e));
            }
        }
    }
    (FeaturizedCorpus { mode: opts.mode, segments }, failures)
}

/// Header line of a segment index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct IndexHeader {
    feature_mode: FeatureMode,
    max_delay: usize,
}

impl FeaturizedCorpus {
    pub fn speaker_of(&self) -> HashMap<String, String> {
        self.segments
            .iter()
            .map(|s| (s.entry.recording_id.clone(), s.entry.speaker_id.clone()))
            .collect()
    }

    /// Segment count per recording.
    pub fn segment_counts(&self) -> HashMap<String, usize> {
        let mut out = HashMap::new();
        for s in &self.segments {
            *out.entry(s.entry.recording_id.clone()).or_insert(0) += 1;
        }
        out
    }

    /// Writes `index.jsonl` and one ACFT file per segment and tower.
    pub fn write(&self, dir: &Path, max_delay: usize) -> Result<PathBuf, PipelineError> {
        fs::create_dir_all(dir.join("acf"))?;
        let header = IndexHeader {
            feature_mode: self.mode,
            max_delay,
        };
        let mut index = Vec::new();
        writeln!(index, "{}", serde_json::to_string(&header).unwrap())?;
        for seg in &self.segments {
            for (acf, file) in seg.acfs.iter().zip(&seg.entry.files) {
                let names: Vec<String> = (0..acf.channels()).map(|i| format!("ch{i}")).collect();
                let mut bytes = Vec::new();
                write_acft(&mut bytes, &acf.to_track(&names)).map_err(dsp_err(file))?;
                write_atomic(&dir.join(file), &bytes)?;
            }
            writeln!(index, "{}", serde_json::to_string(&seg.entry).unwrap())?;
        }
        let path = dir.join("index.jsonl");
        write_atomic(&path, &index)?;
        Ok(path)
    }

    pub fn read(index_path: &Path) -> Result<Self, PipelineError> {
        let base = index_path.parent().unwrap_or(Path::new("."));
        let reader = BufReader::new(fs::File::open(index_path)?);
        let mut lines = reader.lines().enumerate();
        let header: IndexHeader = match lines.next() {
            Some((_, line)) => serde_json::from_str(&line?).map_err(|e| PipelineError::Index {
                line: 1,
                msg: e.to_string(),
            })?,
            None => {
                return Err(PipelineError::Index {
                    line: 1,
                    msg: "empty index".into(),
                })
            }
        };
        let mut segments = Vec::new();
        for (i, line) in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: SegmentEntry = serde_json::from_str(&line).map_err(|e| PipelineError::Index {
                line: i + 1,
                msg: e.to_string(),
            })?;
            let acfs = entry
                .files
                .iter()
                .map(|f| {
                    let file = fs::File::open(base.join(f))?;
                    let track = read_acft(BufReader::new(file)).map_err(dsp_err(f))?;
                    let acf = ChannelDelayCorrelationMatrix::from_track(&track)?;
                    if acf.max_delay() != header.max_delay {
                        return Err(PipelineError::Input(format!(
                            "{f}: {} delays, index declares {}",
                            acf.max_delay(),
                            header.max_delay
                        )));
                    }
                    Ok(acf)
                })
                .collect::<Result<Vec<_>, PipelineError>>()?;
            if acfs.len() != header.feature_mode.tower_channels().len() {
                return Err(PipelineError::Index {
                    line: i + 1,
                    msg: format!("{} matrix files for a {} index", acfs.len(), header.feature_mode),
                });
            }
            segments.push(SegmentFeatures { entry, acfs });
        }
        Ok(Self {
            mode: header.feature_mode,
            segments,
        })
    }
}

/// Normalized example sets plus the statistics that produced them.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub train: ExampleSet,
    pub validation: ExampleSet,
    pub test: ExampleSet,
    /// One per tower, fitted on training segments only.
    pub norm: Vec<NormStats>,
    /// Segment ids that contributed to `norm`.
    pub norm_fitted_on: BTreeSet<String>,
}

fn example_set(
    segments: &[&SegmentFeatures],
    norm: &[NormStats],
    shapes: &[[usize; 2]],
) -> Result<ExampleSet, PipelineError> {
    let mut set = ExampleSet::new(shapes.to_vec());
    for seg in segments {
        let normalized = seg
            .acfs
            .iter()
            .zip(norm)
            .map(|(a, s)| apply_norm(a, s))
            .collect::<Result<Vec<_>, _>>()?;
        let refs: Vec<&ChannelDelayCorrelationMatrix> = normalized.iter().collect();
        set.push_matrices(
            Example {
                id: seg.entry.segment_id.clone(),
                recording_id: seg.entry.recording_id.clone(),
                speaker_id: seg.entry.speaker_id.clone(),
                database: seg.entry.database,
                label: seg.entry.label,
                inputs: Vec::new(),
            },
            &refs,
        )?;
    }
    Ok(set)
}

/// Example set for scoring with statistics from a checkpoint.
pub fn normalized_set(corpus: &FeaturizedCorpus, norm: &[NormStats]) -> Result<ExampleSet, PipelineError> {
    let segs: Vec<&SegmentFeatures> = corpus.segments.iter().collect();
    let shapes: Vec<[usize; 2]> = match segs.first() {
        Some(s) => s.acfs.iter().map(|a| [a.shape().0, a.shape().1]).collect(),
        None => norm.iter().map(|n| [n.shape().0, n.shape().1]).collect(),
    };
    example_set(&segs, norm, &shapes)
}

/// Splits segments by recording, checks speaker-disjointness, fits the
/// normalization on the training part only, and applies it everywhere.
pub fn prepare(corpus: &FeaturizedCorpus, split: &DatasetSplit) -> Result<PreparedData, PipelineError> {
    split.check_disjoint(&corpus.speaker_of())?;
    let part_of: HashMap<&str, usize> = split
        .parts()
        .iter()
        .enumerate()
        .flat_map(|(p, ids)| ids.iter().map(move |id| (id.as_str(), p)))
        .collect();
    let mut parts: [Vec<&SegmentFeatures>; 3] = Default::default();
    for seg in &corpus.segments {
        if let Some(&p) = part_of.get(seg.entry.recording_id.as_str()) {
            parts[p].push(seg);
        }
    }
    if parts[0].is_empty() {
        return Err(PipelineError::Input("no training segments".into()));
    }
    let towers = corpus.mode.tower_channels().len();
    let norm = (0..towers)
        .map(|t| {
            let acfs: Vec<&ChannelDelayCorrelationMatrix> = parts[0].iter().map(|s| &s.acfs[t]).collect();
            fit_norm_stats(&acfs)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let norm_fitted_on: BTreeSet<String> = parts[0].iter().map(|s| s.entry.segment_id.clone()).collect();
    let shapes: Vec<[usize; 2]> = norm.iter().map(|n| [n.shape().0, n.shape().1]).collect();
    let [train, validation, test] = parts;
    Ok(PreparedData {
        train: example_set(&train, &norm, &shapes)?,
        validation: example_set(&validation, &norm, &shapes)?,
        test: example_set(&test, &norm, &shapes)?,
        norm,
        norm_fitted_on,
    })
}
