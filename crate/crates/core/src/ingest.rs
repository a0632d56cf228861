//! Dataset manifests, clinical-score labelling, speaker-disjoint splits and
//! class weights.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::io::BufRead;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{scale} score {value} outside [0, {max}]")]
    ScoreRange { scale: Scale, value: i64, max: u32 },
    #[error("recording {0} has no clinical scores")]
    MissingScores(String),
    #[error("infeasible split: {0}")]
    InfeasibleSplit(String),
    #[error("degenerate class distribution: {0}")]
    DegenerateClass(String),
    #[error("manifest line {line}: {msg}")]
    Manifest { line: usize, msg: String },
    #[error("duplicate recording id {0}")]
    DuplicateRecording(String),
    #[error("recording {0} is unlabeled")]
    Unlabeled(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Clinician-rated assessment scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Scale {
    Hamd,
    Qids,
}

impl Scale {
    pub fn max_points(self) -> u32 {
        match self {
            Scale::Hamd => 52,
            Scale::Qids => 27,
        }
    }

    /// Inclusive upper bounds of severity levels 1..=4; level 5 runs to `max_points`.
    fn level_upper_bounds(self) -> [u32; 4] {
        match self {
            Scale::Hamd => [7, 13, 18, 22],
            Scale::Qids => [5, 10, 15, 20],
        }
    }
}

impl fmt::Display for Scale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scale::Hamd => f.write_str("HAMD"),
            Scale::Qids => f.write_str("QIDS"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClinicalScore {
    pub scale: Scale,
    pub value: u32,
}

impl ClinicalScore {
    pub fn new(scale: Scale, value: i64) -> Result<Self, IngestError> {
        if value < 0 || value > scale.max_points() as i64 {
            return Err(IngestError::ScoreRange {
                scale,
                value,
                max: scale.max_points(),
            });
        }
        Ok(Self {
            scale,
            value: value as u32,
        })
    }

    pub fn hamd(value: i64) -> Result<Self, IngestError> {
        Self::new(Scale::Hamd, value)
    }

    pub fn qids(value: i64) -> Result<Self, IngestError> {
        Self::new(Scale::Qids, value)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SeverityLevel {
    Normal = 1,
    Mild = 2,
    Moderate = 3,
    Severe = 4,
    VerySevere = 5,
}

impl SeverityLevel {
    const ALL: [SeverityLevel; 5] = [
        SeverityLevel::Normal,
        SeverityLevel::Mild,
        SeverityLevel::Moderate,
        SeverityLevel::Severe,
        SeverityLevel::VerySevere,
    ];

    pub fn label(self) -> Label {
        match self {
            SeverityLevel::Normal => Label::NonDepressed,
            _ => Label::Depressed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Label {
    NonDepressed,
    Depressed,
}

impl Label {
    /// Binary target: depressed is the positive class.
    pub fn target(self) -> f64 {
        match self {
            Label::Depressed => 1.0,
            Label::NonDepressed => 0.0,
        }
    }

    pub fn index(self) -> usize {
        match self {
            Label::NonDepressed => 0,
            Label::Depressed => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Database {
    Md1,
    Md2,
    Synth,
}

impl fmt::Display for Database {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Database::Md1 => f.write_str("MD1"),
            Database::Md2 => f.write_str("MD2"),
            Database::Synth => f.write_str("SYNTH"),
        }
    }
}

impl FromStr for Database {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().replace('-', "").as_str() {
            "MD1" => Ok(Database::Md1),
            "MD2" => Ok(Database::Md2),
            "SYNTH" => Ok(Database::Synth),
            other => Err(format!("unknown database tag {other:?}")),
        }
    }
}

/// Table of clinical score intervals, boundaries inclusive.
pub fn score_to_severity(score: ClinicalScore) -> Result<SeverityLevel, IngestError> {
    if score.value > score.scale.max_points() {
        return Err(IngestError::ScoreRange {
            scale: score.scale,
            value: score.value as i64,
            max: score.scale.max_points(),
        });
    }
    let bounds = score.scale.level_upper_bounds();
    let idx = bounds
        .iter()
        .position(|&upper| score.value <= upper)
        .unwrap_or(4);
    Ok(SeverityLevel::ALL[idx])
}

/// How two scores on one recording must agree before a label is assigned.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgreementRule {
    /// Both scores must fall in the same five-way severity level.
    #[default]
    SameLevel,
    /// Both scores must map to the same binary class.
    SameClass,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordingRecord {
    pub recording_id: String,
    pub speaker_id: String,
    pub database: Database,
    pub path: String,
    /// Externally produced tract-variable track (6 or 8 channels, ACFT format).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tv_path: Option<String>,
    /// Precomputed 12-channel cepstral track (ACFT format).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mfcc_path: Option<String>,
    pub scores: Vec<ClinicalScore>,
    pub label: Option<Label>,
}

pub fn assign_label(
    record: &RecordingRecord,
    rule: AgreementRule,
) -> Result<Option<Label>, IngestError> {
    let levels = record
        .scores
        .iter()
        .map(|s| score_to_severity(*s))
        .collect::<Result<Vec<_>, _>>()?;
    let Some(first) = levels.first() else {
        return Err(IngestError::MissingScores(record.recording_id.clone()));
    };
    let agree = levels.iter().all(|l| match rule {
        AgreementRule::SameLevel => l == first,
        AgreementRule::SameClass => l.label() == first.label(),
    });
    Ok(agree.then(|| first.label()))
}

/// One manifest line as written on disk.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub recording_id: String,
    pub speaker_id: String,
    pub database: Database,
    pub path: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tv_path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mfcc_path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hamd: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub qids: Option<i64>,
}

impl ManifestEntry {
    pub fn from_record(record: &RecordingRecord) -> Self {
        let pick = |scale| {
            record
                .scores
                .iter()
                .find(|s| s.scale == scale)
                .map(|s| s.value as i64)
        };
        Self {
            recording_id: record.recording_id.clone(),
            speaker_id: record.speaker_id.clone(),
            database: record.database,
            path: record.path.clone(),
            tv_path: record.tv_path.clone(),
            mfcc_path: record.mfcc_path.clone(),
            hamd: pick(Scale::Hamd),
            qids: pick(Scale::Qids),
        }
    }
}

/// Parses a JSON-lines manifest. Blank lines and `#` comments are skipped.
/// Records whose scores disagree come back with `label: None`.
pub fn parse_manifest<R: BufRead>(
    reader: R,
    rule: AgreementRule,
) -> Result<Vec<RecordingRecord>, IngestError> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let entry: ManifestEntry =
            serde_json::from_str(trimmed).map_err(|e| IngestError::Manifest {
                line: lineno + 1,
                msg: e.to_string(),
            })?;
        if !seen.insert(entry.recording_id.clone()) {
            return Err(IngestError::DuplicateRecording(entry.recording_id));
        }
        let mut scores = Vec::new();
        if let Some(v) = entry.hamd {
            scores.push(ClinicalScore::hamd(v)?);
        }
        if let Some(v) = entry.qids {
            scores.push(ClinicalScore::qids(v)?);
        }
        let mut record = RecordingRecord {
            recording_id: entry.recording_id,
            speaker_id: entry.speaker_id,
            database: entry.database,
            path: entry.path,
            tv_path: entry.tv_path,
            mfcc_path: entry.mfcc_path,
            scores,
            label: None,
        };
        record.label = assign_label(&record, rule)?;
        out.push(record);
    }
    Ok(out)
}

pub fn write_manifest<W: std::io::Write>(
    mut writer: W,
    records: &[RecordingRecord],
) -> Result<(), IngestError> {
    for record in records {
        let line = serde_json::to_string(&ManifestEntry::from_record(record))
            .expect("manifest entry serializes");
        writeln!(writer, "{line}")?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<String>,
    pub validation: Vec<String>,
    pub test: Vec<String>,
    pub ratios: [f64; 3],
    pub seed: u64,
}

impl DatasetSplit {
    pub fn parts(&self) -> [&[String]; 3] {
        [&self.train, &self.validation, &self.test]
    }

    /// Checks that no recording id and no speaker occurs in more than one part.
    pub fn check_disjoint(&self, speaker_of: &HashMap<String, String>) -> Result<(), IngestError> {
        let mut ids = HashSet::new();
        for part in self.parts() {
            for id in part {
                if !ids.insert(id.as_str()) {
                    return Err(IngestError::InfeasibleSplit(format!(
                        "recording {id} appears in more than one part"
                    )));
                }
            }
        }
        let speaker_sets: Vec<BTreeSet<&str>> = self
            .parts()
            .iter()
            .map(|part| {
                part.iter()
                    .filter_map(|id| speaker_of.get(id).map(String::as_str))
                    .collect()
            })
            .collect();
        for a in 0..3 {
            for b in (a + 1)..3 {
                if let Some(s) = speaker_sets[a].intersection(&speaker_sets[b]).next() {
                    return Err(IngestError::InfeasibleSplit(format!(
                        "speaker {s} appears in parts {a} and {b}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Speaker-disjoint split with recording counts as stratification weights.
pub fn make_split(
    records: &[RecordingRecord],
    ratios: [f64; 3],
    seed: u64,
) -> Result<DatasetSplit, IngestError> {
    make_split_weighted(records, |_| 1, ratios, seed)
}

/// Speaker-disjoint, class-stratified split.
///
/// Speakers are shuffled with `seed`, stably sorted by total weight
/// (descending) and then assigned one at a time to the part whose squared
/// deviation from its per-class and total targets grows least. Parts with a
/// positive ratio are guaranteed at least one speaker. `weight` gives the
/// stratification weight of a recording (segment count when known).
pub fn make_split_weighted<F>(
    records: &[RecordingRecord],
    weight: F,
    ratios: [f64; 3],
    seed: u64,
) -> Result<DatasetSplit, IngestError>
where
    F: Fn(&RecordingRecord) -> usize,
{
    if ratios.iter().any(|r| !r.is_finite() || *r < 0.0)
        || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9
    {
        return Err(IngestError::InfeasibleSplit(format!(
            "ratios {ratios:?} must be non-negative and sum to 1"
        )));
    }
    // speaker -> (per-class weights, recording ids)
    let mut speakers: BTreeMap<&str, ([f64; 2], Vec<&str>)> = BTreeMap::new();
    for record in records {
        let label = record
            .label
            .ok_or_else(|| IngestError::Unlabeled(record.recording_id.clone()))?;
        let entry = speakers.entry(&record.speaker_id).or_default();
        entry.0[label.index()] += weight(record) as f64;
        entry.1.push(&record.recording_id);
    }
    let needed = ratios.iter().filter(|r| **r > 0.0).count();
    if speakers.len() < 3.max(needed) {
        return Err(IngestError::InfeasibleSplit(format!(
            "{} distinct speakers, need at least 3",
            speakers.len()
        )));
    }

    let mut order: Vec<_> = speakers.into_iter().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    order.sort_by(|a, b| {
        let wa = a.1 .0[0] + a.1 .0[1];
        let wb = b.1 .0[0] + b.1 .0[1];
        wb.partial_cmp(&wa).unwrap()
    });

    let class_totals = order.iter().fold([0.0; 2], |acc, (_, (w, _))| {
        [acc[0] + w[0], acc[1] + w[1]]
    });
    let grand_total = class_totals[0] + class_totals[1];
    let mut current = [[0.0f64; 2]; 3];
    let mut speaker_count = [0usize; 3];
    let mut assignment: [Vec<&str>; 3] = Default::default();

    for (idx, (_, (w, ids))) in order.iter().enumerate() {
        let remaining = order.len() - idx;
        let empty: Vec<usize> = (0..3)
            .filter(|&p| ratios[p] > 0.0 && speaker_count[p] == 0)
            .collect();
        let candidates: Vec<usize> = if remaining <= empty.len() {
            empty
        } else {
            (0..3).filter(|&p| ratios[p] > 0.0).collect()
        };
        let cost_delta = |p: usize| {
            let mut delta = 0.0;
            for c in 0..2 {
                let target = ratios[p] * class_totals[c];
                let before = current[p][c] - target;
                let after = before + w[c];
                delta += after * after - before * before;
            }
            let target = ratios[p] * grand_total;
            let before = current[p][0] + current[p][1] - target;
            let after = before + w[0] + w[1];
            delta + after * after - before * before
        };
        let best = candidates
            .iter()
            .copied()
            .min_by(|&a, &b| cost_delta(a).partial_cmp(&cost_delta(b)).unwrap())
            .expect("at least one candidate part");
        current[best][0] += w[0];
        current[best][1] += w[1];
        speaker_count[best] += 1;
        assignment[best].extend(ids.iter().copied());
    }

    let [train, validation, test] =
        assignment.map(|ids| ids.into_iter().map(str::to_owned).collect::<Vec<_>>());
    Ok(DatasetSplit {
        train,
        validation,
        test,
        ratios,
        seed,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights {
    pub depressed: f64,
    pub nondepressed: f64,
}

impl ClassWeights {
    pub fn uniform() -> Self {
        Self {
            depressed: 1.0,
            nondepressed: 1.0,
        }
    }

    pub fn weight(&self, label: Label) -> f64 {
        match label {
            Label::Depressed => self.depressed,
            Label::NonDepressed => self.nondepressed,
        }
    }
}

/// Balanced inverse-frequency weights, `N / (2 * N_c)`.
pub fn class_weights(train_labels: &[Label]) -> Result<ClassWeights, IngestError> {
    let n_dep = train_labels.iter().filter(|l| **l == Label::Depressed).count();
    let n_non = train_labels.len() - n_dep;
    if n_dep == 0 || n_non == 0 {
        return Err(IngestError::DegenerateClass(format!(
            "{n_dep} depressed / {n_non} non-depressed samples"
        )));
    }
    let total = train_labels.len() as f64;
    Ok(ClassWeights {
        depressed: total / (2.0 * n_dep as f64),
        nondepressed: total / (2.0 * n_non as f64),
    })
}
