//! Speaker diarization for subtitled audiovisual programs.
//!
//! Every subtitle line is mapped to a speaker. On-screen faces anchor speaker
//! identities, timbre prototypes cover lines whose speaker is off screen, a
//! same-speaker scorer fused with timbre similarity finds speaker turns, and
//! groups that match no anchored speaker become new, supplemented speakers.
//!
//! The core is generic over the scalar type (`f32` or `f64`); the aliases at
//! the crate root fix it to `f64`.

pub mod clustering;
pub mod config;
pub mod error;
pub mod features;
pub mod kmeans;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod registration;
pub mod scalar;
pub mod subtitle;
pub mod supplement;
pub mod synth;
pub mod turn;

pub use error::{Error, Result};
pub use scalar::Real;

pub type Embedding = model::Embedding<f64>;
pub type Assignment = model::Assignment<f64>;
pub type LineFeatures = features::LineFeatures<f64>;
pub type FeatureMap = features::FeatureMap<f64>;
pub type SpeakerRegistry = registration::SpeakerRegistry<f64>;
pub type TurnDecision = turn::TurnDecision<f64>;
pub type GroupVerdict = supplement::GroupVerdict<f64>;
pub type SupplementParams = supplement::SupplementParams<f64>;
pub type DiarizationScore = metrics::DiarizationScore<f64>;
pub type SynthProgram = synth::SynthProgram<f64>;
pub type DiarizationResult = pipeline::DiarizationResult<f64>;
pub type MetricReport = pipeline::MetricReport<f64>;
pub type PipelineInputs = pipeline::PipelineInputs<f64>;

pub use config::{ClusteringMethod, Modality, PipelineConfig};
pub use model::{Line, Origin, Program, SpeakerId, Stage};
pub use synth::{GroundTruth, SynthConfig};
