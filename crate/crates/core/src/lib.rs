//! Bearing remaining-useful-life estimation: Gaussian smoothing and Morlet
//! CWT feature extraction, the CARLE residual CNN / attention / LSTM network
//! with a random-forest head, prognostic metrics, and PCA + CORAL alignment
//! for cross-domain evaluation.

pub mod adapt;
pub mod cwt;
pub mod error;
pub mod features;
pub mod forest;
pub mod labels;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod signal;

pub use error::{Error, Result};
pub use features::{ExtractionConfig, FeatureMatrix, FeatureVector, TfrFeatures};
pub use forest::{Forest, ForestConfig};
pub use labels::{LabelScheme, RulLabels};
pub use metrics::MetricReport;
pub use nn::{CarleNet, NetConfig, Profile, TrainConfig, Variant};
pub use pipeline::{CarleModel, Checkpoint, ModelConfig, Normalization, Recording};
pub use signal::{MultiChannelSignal, NoiseKind, SynthConfig};
