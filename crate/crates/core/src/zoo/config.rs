use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::nn::conv_output_extent;
use crate::nn::Padding;

/// Which correlation inputs a model consumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureMode {
    /// Six tract variables plus periodicity and aperiodicity.
    Tv8,
    /// Twelve cepstral coefficients.
    Mfcc12,
    /// Both, through two towers joined before the dense head.
    Fused,
}

impl FeatureMode {
    /// Feature channels per tower.
    pub fn tower_channels(self) -> &'static [usize] {
        match self {
            FeatureMode::Tv8 => &[8],
            FeatureMode::Mfcc12 => &[12],
            FeatureMode::Fused => &[8, 12],
        }
    }

    pub fn tower_names(self) -> &'static [&'static str] {
        match self {
            FeatureMode::Tv8 => &["tv8"],
            FeatureMode::Mfcc12 => &["mfcc12"],
            FeatureMode::Fused => &["tv8", "mfcc12"],
        }
    }

    /// Single-tower modes making up this mode.
    pub fn components(self) -> &'static [FeatureMode] {
        match self {
            FeatureMode::Tv8 => &[FeatureMode::Tv8],
            FeatureMode::Mfcc12 => &[FeatureMode::Mfcc12],
            FeatureMode::Fused => &[FeatureMode::Tv8, FeatureMode::Mfcc12],
        }
    }
}

impl fmt::Display for FeatureMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FeatureMode::Tv8 => "tv8",
            FeatureMode::Mfcc12 => "mfcc12",
            FeatureMode::Fused => "fused",
        })
    }
}

impl FromStr for FeatureMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "tv8" | "tv" => Ok(FeatureMode::Tv8),
            "mfcc12" | "mfcc" => Ok(FeatureMode::Mfcc12),
            "fused" => Ok(FeatureMode::Fused),
            other => Err(format!("unknown feature mode {other:?}")),
        }
    }
}

/// Positions of the auxiliary layers around the convolutional stack.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Placement {
    /// Batch norm between every convolution and its activation.
    pub batchnorm: bool,
    /// (2,1) max pooling after C6.
    pub maxpool_after_c6: bool,
    pub dropout_after_flatten: bool,
    pub dropout_after_d1: bool,
}

impl Default for Placement {
    fn default() -> Self {
        Self {
            batchnorm: true,
            maxpool_after_c6: true,
            dropout_after_flatten: true,
            dropout_after_d1: true,
        }
    }
}

/// Architecture and training hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub feature_mode: FeatureMode,
    /// Largest correlation delay; inputs have `delays + 1` columns.
    pub delays: usize,
    /// Filters per parallel dilated branch (C1–C4).
    pub o1: usize,
    /// C6 filters.
    pub o2: usize,
    /// C6 kernel height.
    pub k1: usize,
    /// D2 units.
    pub o3: usize,
    pub dropout: f64,
    pub d1_units: usize,
    pub c5_filters: usize,
    pub branch_kernel: usize,
    pub dilations: Vec<usize>,
    pub l2: f64,
    pub leaky_alpha: f64,
    pub placement: Placement,
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::best(FeatureMode::Tv8)
    }
}

/// Values searched per grid dimension.
pub const GRID_O1: [usize; 2] = [16, 32];
pub const GRID_O2: [usize; 2] = [8, 16];
pub const GRID_K1: [usize; 2] = [3, 4];
pub const GRID_O3: [usize; 2] = [8, 16];
pub const GRID_DROPOUT: [f64; 2] = [0.4, 0.5];

impl ModelConfig {
    fn base(feature_mode: FeatureMode, o1: usize, o2: usize, k1: usize, o3: usize, dropout: f64) -> Self {
        Self {
            feature_mode,
            delays: 50,
            o1,
            o2,
            k1,
            o3,
            dropout,
            d1_units: 32,
            c5_filters: 16,
            branch_kernel: 15,
            dilations: vec![1, 3, 7, 15],
            l2: 0.01,
            leaky_alpha: 0.01,
            placement: Placement::default(),
            lr: 1e-5,
            batch_size: 32,
            max_epochs: 300,
            patience: 15,
            seed: 0,
        }
    }

    /// Best grid point per feature set.
    pub fn best(mode: FeatureMode) -> Self {
        match mode {
            FeatureMode::Tv8 => Self::base(mode, 32, 16, 3, 8, 0.5),
            FeatureMode::Mfcc12 => Self::base(mode, 16, 8, 3, 16, 0.5),
            FeatureMode::Fused => Self::base(mode, 32, 8, 3, 8, 0.5),
        }
    }

    /// All 32 grid points for `base`'s feature mode, other fields copied.
    pub fn grid(base: &ModelConfig) -> Vec<ModelConfig> {
        let mut out = Vec::with_capacity(32);
        for o1 in GRID_O1 {
            for o2 in GRID_O2 {
                for k1 in GRID_K1 {
                    for o3 in GRID_O3 {
                        for dropout in GRID_DROPOUT {
                            out.push(ModelConfig {
                                o1,
                                o2,
                                k1,
                                o3,
                                dropout,
                                ..base.clone()
                            });
                        }
                    }
                }
            }
        }
        out
    }

    pub fn in_grid(&self) -> bool {
        GRID_O1.contains(&self.o1)
            && GRID_O2.contains(&self.o2)
            && GRID_K1.contains(&self.k1)
            && GRID_O3.contains(&self.o3)
            && GRID_DROPOUT.contains(&self.dropout)
    }

    pub fn input_height(&self) -> usize {
        self.delays + 1
    }

    /// Heights after the branches, C5, C6 and pooling.
    pub fn heights(&self) -> Result<[usize; 4], String> {
        let h = self.input_height();
        let c5 = conv_output_extent(h, 3, 1, 2, Padding::Same)
            .map_err(|e| e.to_string())?
            .0;
        let c6 = conv_output_extent(c5, self.k1, 1, 1, Padding::Valid)
            .map_err(|e| format!("C6: {e}"))?
            .0;
        let pooled = if self.placement.maxpool_after_c6 { c6 / 2 } else { c6 };
        if pooled == 0 {
            return Err(format!("C6 output height {c6} too small to pool"));
        }
        Ok([h, c5, c6, pooled])
    }

    /// Width of one tower's flattened output.
    pub fn tower_flat_width(&self) -> Result<usize, String> {
        Ok(self.heights()?[3] * self.o2)
    }

    pub fn head_input_width(&self) -> Result<usize, String> {
        Ok(self.tower_flat_width()? * self.feature_mode.tower_channels().len())
    }

    pub fn validate(&self) -> Result<(), String> {
        let positive = [
            ("delays", self.delays),
            ("o1", self.o1),
            ("o2", self.o2),
            ("k1", self.k1),
            ("o3", self.o3),
            ("d1_units", self.d1_units),
            ("c5_filters", self.c5_filters),
            ("branch_kernel", self.branch_kernel),
            ("batch_size", self.batch_size),
            ("max_epochs", self.max_epochs),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(format!("{name} must be positive"));
            }
        }
        if self.dilations.is_empty() || self.dilations.contains(&0) {
            return Err("dilations must be non-empty and positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(format!("dropout {} not in [0, 1)", self.dropout));
        }
        if self.l2 < 0.0 || self.leaky_alpha < 0.0 {
            return Err("l2 and leaky_alpha must be non-negative".into());
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(format!("learning rate {} must be positive", self.lr));
        }
        self.heights()?;
        Ok(())
    }

    /// Closed-form trainable parameter count.
    pub fn parameter_count(&self) -> Result<usize, String> {
        let bn = |c: usize| if self.placement.batchnorm { 2 * c } else { 0 };
        let conv = |cin: usize, f: usize, kh: usize| cin * f * kh + f;
        let mut total = 0;
        for &m in self.feature_mode.tower_channels() {
            let cin = m * m;
            let branches = self.dilations.len();
            total += branches * (conv(cin, self.o1, self.branch_kernel) + bn(self.o1));
            total += conv(branches * self.o1, self.c5_filters, 3) + bn(self.c5_filters);
            total += conv(self.c5_filters, self.o2, self.k1) + bn(self.o2);
        }
        let flat = self.head_input_width()?;
        total += flat * self.d1_units + self.d1_units;
        total += self.d1_units * self.o3 + self.o3;
        total += self.o3 + 1;
        Ok(total)
    }
}
