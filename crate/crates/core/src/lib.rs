//! Speaker change detection on neural likelihood features.
//!
//! Audio is peak-normalized and stripped of silence, turned into stacked MFCC
//! super-frames, and mapped by a sigmoid network trained on in-domain speakers
//! to per-frame log-likelihood vectors. Distances between the mean vectors of
//! adjacent intervals are thresholded at a Bayes decision boundary to flag
//! speaker changes.

// negated comparisons double as NaN rejection
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod audio;
pub mod classifier;
pub mod config;
pub mod corpus;
pub mod error;
pub mod features;
pub mod pipeline;
pub mod scd;
pub mod vad;

pub use audio::{load_wav, normalize_peak, write_wav, AudioClip};
pub use classifier::{LikelihoodSequence, Model, NetworkShape, TrainConfig};
pub use config::PipelineConfig;
pub use corpus::{Conversation, SpeakerDataset};
pub use error::{Error, Result};
pub use features::{ConcatConfig, FeatureSequence, MfccConfig};
pub use pipeline::FeaturePipeline;
pub use scd::{Metrics, Norm, ScdConfig};
pub use vad::{VadConfig, VadMask};
