use serde::{Deserialize, Serialize};

use super::FeatureTrack;
use crate::ingest::Label;

/// Windowing rules for turning a recording into training segments.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentRules {
    pub window_s: f64,
    pub shift_s: f64,
    pub min_s: f64,
}

impl Default for SegmentRules {
    fn default() -> Self {
        Self {
            window_s: 20.0,
            shift_s: 5.0,
            min_s: 10.0,
        }
    }
}

impl SegmentRules {
    fn frames(&self, frame_rate: f64) -> (usize, usize, usize) {
        let f = |s: f64| (s * frame_rate).round() as usize;
        (f(self.window_s), f(self.shift_s).max(1), f(self.min_s))
    }

    /// Frame ranges of the segments cut from a recording of `n` frames.
    pub fn ranges(&self, n: usize, frame_rate: f64) -> Vec<(usize, usize)> {
        let (window, shift, min) = self.frames(frame_rate);
        if n < min || n == 0 {
            Vec::new()
        } else if n <= window {
            vec![(0, n)]
        } else {
            (0..=(n - window) / shift)
                .map(|k| (k * shift, k * shift + window))
                .collect()
        }
    }
}

pub fn segment_count(n_frames: usize, frame_rate: f64, rules: &SegmentRules) -> usize {
    rules.ranges(n_frames, frame_rate).len()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub recording_id: String,
    pub index: usize,
    pub start_time: f64,
    pub end_time: f64,
    pub track: FeatureTrack,
    pub label: Label,
}

impl Segment {
    pub fn id(&self) -> String {
        format!("{}#{:03}", self.recording_id, self.index)
    }

    pub fn duration(&self) -> f64 {
        self.end_time - self.start_time
    }
}

/// Cuts a recording-level track into segments on frame indices: shorter
/// than the minimum → nothing; up to one window → the whole track; longer
/// → full windows every shift, dropping the trailing remainder.
pub fn segment_track(
    recording_id: &str,
    track: &FeatureTrack,
    label: Label,
    rules: &SegmentRules,
) -> Vec<Segment> {
    let rate = track.frame_rate();
    rules
        .ranges(track.frames(), rate)
        .into_iter()
        .enumerate()
        .map(|(index, (start, end))| Segment {
            recording_id: recording_id.to_owned(),
            index,
            start_time: start as f64 / rate,
            end_time: end as f64 / rate,
            track: track.slice_frames(start, end).expect("range within track"),
            label,
        })
        .collect()
}
