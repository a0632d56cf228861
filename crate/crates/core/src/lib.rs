//! Depression classification from channel-delay correlation matrices of
//! speech feature tracks, with a dilated convolutional classifier.

pub mod acf;
pub mod dsp;
pub mod eval;
pub mod ingest;
pub mod nn;
pub mod pipeline;
pub mod synth;
pub mod zoo;

pub use acf::{build_acf, ChannelDelayCorrelationMatrix, NormStats};
pub use dsp::{FeatureTrack, SegmentRules};
pub use eval::{EvaluationReport, Metrics};
pub use ingest::{ClassWeights, Database, DatasetSplit, Label, RecordingRecord};
pub use pipeline::{FeaturizeOptions, FeaturizedCorpus, PreparedData};
pub use synth::SynthSpec;
pub use zoo::{Checkpoint, FeatureMode, Model, ModelConfig, Trainer};
