//! Channel-delay correlation matrices.
//!
//! For an `M`-channel track every ordered channel pair `(i, j)` contributes
//! one row holding the delayed correlations `r[d] = Σ_t x_i[t]·x_j[t+d] / (N−d)`
//! for `d = 0..=D`. Rows are stacked row-major over ordered pairs (`i` outer,
//! `j` inner), giving an `M² × (D+1)` matrix. Negative lags are covered by
//! the transposed pair.

use ndarray::{Array2, Axis, Zip};
use thiserror::Error;

use crate::dsp::FeatureTrack;

#[derive(Debug, Error, PartialEq)]
pub enum AcfError {
    #[error("delay {delay} out of range for {len} frames")]
    DelayRange { delay: usize, len: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("segment too short: {frames} frames for max delay {max_delay}")]
    SegmentTooShort { frames: usize, max_delay: usize },
    #[error("no matrices to fit normalization statistics")]
    Empty,
}

pub fn delayed_correlation(x_i: &[f64], x_j: &[f64], delay: usize) -> Result<f64, AcfError> {
    if x_i.len() != x_j.len() {
        return Err(AcfError::Shape(format!(
            "channel lengths {} and {}",
            x_i.len(),
            x_j.len()
        )));
    }
    let n = x_i.len();
    if delay >= n {
        return Err(AcfError::DelayRange { delay, len: n });
    }
    Ok(lagged_dot(x_i, x_j, delay) / (n - delay) as f64)
}

#[inline]
fn lagged_dot(x_i: &[f64], x_j: &[f64], delay: usize) -> f64 {
    let n = x_i.len();
    x_i[..n - delay]
        .iter()
        .zip(&x_j[delay..])
        .map(|(a, b)| a * b)
        .sum()
}

pub fn correlation_vector(x_i: &[f64], x_j: &[f64], max_delay: usize) -> Result<Vec<f64>, AcfError> {
    (0..=max_delay)
        .map(|d| delayed_correlation(x_i, x_j, d))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelDelayCorrelationMatrix {
    data: Array2<f64>,
    channels: usize,
    max_delay: usize,
}

impl ChannelDelayCorrelationMatrix {
    pub fn from_data(data: Array2<f64>, channels: usize) -> Result<Self, AcfError> {
        if data.nrows() != channels * channels || data.ncols() == 0 {
            return Err(AcfError::Shape(format!(
                "{}x{} matrix for {channels} channels",
                data.nrows(),
                data.ncols()
            )));
        }
        let max_delay = data.ncols() - 1;
        Ok(Self {
            data,
            channels,
            max_delay,
        })
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn max_delay(&self) -> usize {
        self.max_delay
    }

    pub fn shape(&self) -> (usize, usize) {
        self.data.dim()
    }

    /// Row index of the ordered pair `(i, j)`, zero-based.
    pub fn row_of(&self, i: usize, j: usize) -> usize {
        i * self.channels + j
    }

    pub fn row_order(&self) -> Vec<(usize, usize)> {
        pair_order(self.channels)
    }

    /// Row names `"a|b"` built from the source track's channel names.
    pub fn row_names(channel_names: &[String]) -> Vec<String> {
        pair_order(channel_names.len())
            .into_iter()
            .map(|(i, j)| format!("{}|{}", channel_names[i], channel_names[j]))
            .collect()
    }

    /// Non-temporal track (frame rate 0) for ACFT caching.
    pub fn to_track(&self, channel_names: &[String]) -> FeatureTrack {
        FeatureTrack::new(self.data.clone(), 0.0, Self::row_names(channel_names))
            .expect("finite correlation matrix")
    }

    pub fn from_track(track: &FeatureTrack) -> Result<Self, AcfError> {
        let rows = track.channels();
        let m = (rows as f64).sqrt().round() as usize;
        Self::from_data(track.data().clone(), m)
    }
}

pub fn pair_order(channels: usize) -> Vec<(usize, usize)> {
    (0..channels)
        .flat_map(|i| (0..channels).map(move |j| (i, j)))
        .collect()
}

/// Builds the `M² × (D+1)` matrix from a (normalized) track.
pub fn build_acf(
    track: &FeatureTrack,
    max_delay: usize,
) -> Result<ChannelDelayCorrelationMatrix, AcfError> {
    let n = track.frames();
    if n <= max_delay {
        return Err(AcfError::SegmentTooShort {
            frames: n,
            max_delay,
        });
    }
    let m = track.channels();
    let rows: Vec<Vec<f64>> = track
        .data()
        .axis_iter(Axis(0))
        .map(|r| r.to_vec())
        .collect();
    let mut data = Array2::zeros((m * m, max_delay + 1));
    for (i, x_i) in rows.iter().enumerate() {
        for (j, x_j) in rows.iter().enumerate() {
            let mut out = data.row_mut(i * m + j);
            for d in 0..=max_delay {
                out[d] = lagged_dot(x_i, x_j, d) / (n - d) as f64;
            }
        }
    }
    ChannelDelayCorrelationMatrix::from_data(data, m)
}

/// Training-set z-normalization statistics, cell by cell.
#[derive(Debug, Clone, PartialEq)]
pub struct NormStats {
    pub mean: Array2<f64>,
    pub std: Array2<f64>,
}

/// Cells whose spread falls below this are mapped to zero.
pub const MIN_STD: f64 = 1e-8;

impl NormStats {
    pub fn shape(&self) -> (usize, usize) {
        self.mean.dim()
    }
}

/// Elementwise mean and population standard deviation over the list.
pub fn fit_norm_stats(acfs: &[&ChannelDelayCorrelationMatrix]) -> Result<NormStats, AcfError> {
    let first = acfs.first().ok_or(AcfError::Empty)?;
    let shape = first.shape();
    let mut sum = Array2::<f64>::zeros(shape);
    for acf in acfs {
        if acf.shape() != shape {
            return Err(AcfError::Shape(format!(
                "{:?} among {:?} matrices",
                acf.shape(),
                shape
            )));
        }
        sum += &acf.data;
    }
    let n = acfs.len() as f64;
    let mean = sum / n;
    let mut var = Array2::<f64>::zeros(shape);
    for acf in acfs {
        Zip::from(&mut var)
            .and(&acf.data)
            .and(&mean)
            .for_each(|v, &x, &mu| *v += (x - mu) * (x - mu));
    }
    let std = var.mapv(|v| (v / n).sqrt());
    Ok(NormStats { mean, std })
}

pub fn apply_norm(
    acf: &ChannelDelayCorrelationMatrix,
    stats: &NormStats,
) -> Result<ChannelDelayCorrelationMatrix, AcfError> {
    if acf.shape() != stats.shape() {
        return Err(AcfError::Shape(format!(
            "matrix {:?} vs statistics {:?}",
            acf.shape(),
            stats.shape()
        )));
    }
    let mut data = acf.data.clone();
    Zip::from(&mut data)
        .and(&stats.mean)
        .and(&stats.std)
        .for_each(|x, &mu, &sd| {
            *x = if sd < MIN_STD { 0.0 } else { (*x - mu) / sd };
        });
    ChannelDelayCorrelationMatrix::from_data(data, acf.channels)
}
