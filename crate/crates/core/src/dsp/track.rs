use std::collections::HashSet;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::{s, Array2, Axis};

use super::DspError;

/// Canonical ordering of the six tract variables produced by speech inversion.
pub const TV_CHANNELS: [&str; 6] = ["LA", "LP", "TBCL", "TBCD", "TTCL", "TTCD"];

const ACFT_MAGIC: &[u8; 4] = b"ACFT";
const ACFT_VERSION: u16 = 1;

/// Multichannel time series, channels along rows and frames along columns.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTrack {
    data: Array2<f64>,
    frame_rate: f64,
    channel_names: Vec<String>,
}

impl FeatureTrack {
    pub fn new(
        data: Array2<f64>,
        frame_rate: f64,
        channel_names: Vec<String>,
    ) -> Result<Self, DspError> {
        let (m, n) = data.dim();
        if m == 0 || n == 0 {
            return Err(DspError::InvalidTrack(format!("empty {m}x{n} matrix")));
        }
        if channel_names.len() != m {
            return Err(DspError::InvalidTrack(format!(
                "{} names for {m} channels",
                channel_names.len()
            )));
        }
        let unique: HashSet<_> = channel_names.iter().collect();
        if unique.len() != m {
            return Err(DspError::InvalidTrack("duplicate channel names".into()));
        }
        if !frame_rate.is_finite() || frame_rate < 0.0 {
            return Err(DspError::InvalidTrack(format!("frame rate {frame_rate}")));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(DspError::InvalidTrack("non-finite sample".into()));
        }
        Ok(Self {
            data,
            frame_rate,
            channel_names,
        })
    }

    /// Builds a track with generated channel names `ch0..`.
    pub fn unnamed(data: Array2<f64>, frame_rate: f64) -> Result<Self, DspError> {
        let names = (0..data.nrows()).map(|i| format!("ch{i}")).collect();
        Self::new(data, frame_rate, names)
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn into_data(self) -> Array2<f64> {
        self.data
    }

    pub fn frame_rate(&self) -> f64 {
        self.frame_rate
    }

    pub fn channel_names(&self) -> &[String] {
        &self.channel_names
    }

    pub fn channels(&self) -> usize {
        self.data.nrows()
    }

    pub fn frames(&self) -> usize {
        self.data.ncols()
    }

    /// Duration in seconds; zero for non-temporal data (frame rate 0).
    pub fn duration(&self) -> f64 {
        if self.frame_rate > 0.0 {
            self.frames() as f64 / self.frame_rate
        } else {
            0.0
        }
    }

    pub fn slice_frames(&self, start: usize, end: usize) -> Result<Self, DspError> {
        if start >= end || end > self.frames() {
            return Err(DspError::InvalidTrack(format!(
                "frame range {start}..{end} outside 0..{}",
                self.frames()
            )));
        }
        Ok(Self {
            data: self.data.slice(s![.., start..end]).to_owned(),
            frame_rate: self.frame_rate,
            channel_names: self.channel_names.clone(),
        })
    }
}

/// Per-channel mean/variance normalization with population standard
/// deviation. Zero-variance channels become all zeros.
pub fn normalize_channels(track: &FeatureTrack) -> FeatureTrack {
    let mut data = track.data.clone();
    for mut row in data.axis_iter_mut(Axis(0)) {
        let n = row.len() as f64;
        let mean = row.sum() / n;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let std = var.sqrt();
        if std > 1e-12 * (1.0 + mean.abs()) {
            row.mapv_inplace(|v| (v - mean) / std);
        } else {
            row.fill(0.0);
        }
    }
    FeatureTrack {
        data,
        frame_rate: track.frame_rate,
        channel_names: track.channel_names.clone(),
    }
}

/// Serializes a track in the little-endian ACFT layout. Samples are stored
/// as 32-bit floats.
pub fn write_acft<W: Write>(mut w: W, track: &FeatureTrack) -> Result<(), DspError> {
    let (m, n) = track.data.dim();
    let mut buf = Vec::with_capacity(22 + m * (n * 4 + 8));
    buf.extend_from_slice(ACFT_MAGIC);
    buf.extend_from_slice(&ACFT_VERSION.to_le_bytes());
    buf.extend_from_slice(&track.frame_rate.to_le_bytes());
    buf.extend_from_slice(&(m as u32).to_le_bytes());
    buf.extend_from_slice(&(n as u32).to_le_bytes());
    for name in &track.channel_names {
        let bytes = name.as_bytes();
        let len = u16::try_from(bytes.len())
            .map_err(|_| DspError::InvalidTrack(format!("channel name too long: {name}")))?;
        buf.extend_from_slice(&len.to_le_bytes());
        buf.extend_from_slice(bytes);
    }
    for v in track.data.iter() {
        buf.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], DspError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| DspError::Format("truncated ACFT file".into()))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N], DspError> {
        Ok(self.take(N)?.try_into().unwrap())
    }
}

pub fn read_acft<R: Read>(mut r: R) -> Result<FeatureTrack, DspError> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let mut cur = Cursor {
        bytes: &bytes,
        pos: 0,
    };
    if cur.take(4)? != ACFT_MAGIC {
        return Err(DspError::Format("bad magic, expected ACFT".into()));
    }
    let version = u16::from_le_bytes(cur.array()?);
    if version != ACFT_VERSION {
        return Err(DspError::Format(format!("unsupported ACFT version {version}")));
    }
    let frame_rate = f64::from_le_bytes(cur.array()?);
    let m = u32::from_le_bytes(cur.array()?) as usize;
    let n = u32::from_le_bytes(cur.array()?) as usize;
    let mut names = Vec::with_capacity(m);
    for _ in 0..m {
        let len = u16::from_le_bytes(cur.array()?) as usize;
        let name = std::str::from_utf8(cur.take(len)?)
            .map_err(|e| DspError::Format(format!("channel name: {e}")))?;
        names.push(name.to_owned());
    }
    let payload = cur.take(m * n * 4)?;
    if cur.pos != bytes.len() {
        return Err(DspError::Format("trailing bytes after ACFT payload".into()));
    }
    let values: Vec<f64> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    let data = Array2::from_shape_vec((m, n), values)
        .map_err(|e| DspError::Format(e.to_string()))?;
    FeatureTrack::new(data, frame_rate, names).map_err(|e| DspError::Format(e.to_string()))
}

/// Loads a six-channel tract-variable track. Channels named with the
/// canonical labels are reordered into canonical order; otherwise file order
/// is taken as canonical and the names replaced.
pub fn load_tv_track(path: &Path) -> Result<FeatureTrack, DspError> {
    let track = read_acft(std::fs::File::open(path)?)?;
    tv_from_track(track)
}

pub fn tv_from_track(track: FeatureTrack) -> Result<FeatureTrack, DspError> {
    if track.channels() != TV_CHANNELS.len() {
        return Err(DspError::Format(format!(
            "tract-variable track has {} channels, expected {}",
            track.channels(),
            TV_CHANNELS.len()
        )));
    }
    let positions: Option<Vec<usize>> = TV_CHANNELS
        .iter()
        .map(|c| {
            track
                .channel_names
                .iter()
                .position(|n| n.eq_ignore_ascii_case(c))
        })
        .collect();
    let data = match positions {
        Some(pos) => track.data.select(Axis(0), &pos),
        None => track.data,
    };
    FeatureTrack::new(
        data,
        track.frame_rate,
        TV_CHANNELS.iter().map(|s| s.to_string()).collect(),
    )
}

/// Stacks six tract variables and the two glottal channels into one
/// eight-channel track. Frame counts may differ by at most two; the longer
/// track is trimmed.
pub fn assemble_tv8(tv: &FeatureTrack, glottal: &FeatureTrack) -> Result<FeatureTrack, DspError> {
    if tv.channels() != TV_CHANNELS.len() || glottal.channels() != 2 {
        return Err(DspError::Alignment(format!(
            "expected 6 + 2 channels, got {} + {}",
            tv.channels(),
            glottal.channels()
        )));
    }
    if (tv.frame_rate - glottal.frame_rate).abs() > 1e-9 {
        return Err(DspError::Alignment(format!(
            "frame rates differ: {} vs {} Hz",
            tv.frame_rate, glottal.frame_rate
        )));
    }
    let diff = tv.frames().abs_diff(glottal.frames());
    if diff > 2 {
        return Err(DspError::Alignment(format!(
            "frame counts differ by {diff} ({} vs {})",
            tv.frames(),
            glottal.frames()
        )));
    }
    let n = tv.frames().min(glottal.frames());
    let data = ndarray::concatenate(
        Axis(0),
        &[tv.data.slice(s![.., ..n]), glottal.data.slice(s![.., ..n])],
    )
    .expect("row counts checked");
    let names = tv
        .channel_names
        .iter()
        .chain(glottal.channel_names.iter())
        .cloned()
        .collect();
    FeatureTrack::new(data, tv.frame_rate, names)
}
