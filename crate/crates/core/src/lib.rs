//! Cycle-level instruction-latency prediction at desk scale.
//!
//! The pipeline: generate synthetic instruction traces, label them with a
//! small out-of-order teacher simulator, encode microarchitecture-independent
//! features, train an LSTM latency predictor, and run the downstream
//! A/B-ranking and deployment-planning analyses.

pub mod downstream;
pub mod featurize;
pub mod nn;
pub mod seeds;
pub mod sim;
pub mod system;
pub mod trace;
pub mod train;

pub use featurize::{FeatureWindow, NormStats};
pub use nn::{ModelConfig, ModelParameters};
pub use sim::{MicroarchConfig, WorkloadKind, WorkloadSpec};
pub use system::{AcceleratorSpec, DeploymentParams, SamplingPlan};
pub use trace::{Epoch, EpochSignature, GtHistogram, InstructionRecord, OpClass, RegRef};
pub use train::{MetricsReport, TrainSpec};
