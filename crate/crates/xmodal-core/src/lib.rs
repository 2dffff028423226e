//! Audio-visual deepfake detection with explicit cross-modal correlation learning.
//!
//! The crate implements a two-branch framework: a detection branch that fuses
//! per-frame audio and visual embeddings through cross-attention and classifies
//! clips as real or fake, and a correlation-distillation branch that trains the
//! per-frame audio-visual synchronization signal against content-level soft
//! labels derived from speech-recognition teacher distributions.
//!
//! Modules map onto the pipeline stages:
//! - [`dataio`]: manifests, MFCC extraction, stream alignment, synthetic corpus.
//! - [`encoders`]: audio/visual encoders producing per-frame embeddings.
//! - [`detector`]: cross-attention fusion and binary classification.
//! - [`teachers`]: teacher distributions, JS divergence, content soft labels.
//! - [`losses`]: classification, distillation and contrastive losses.
//! - [`trainer`]: deterministic joint optimization with checkpoint/resume.
//! - [`evaluator`]: AUC and the two generalization protocols.
//! - [`analyzer`]: per-class correlation distributions and histogram export.
//!
//! All numerics run in `f64`; gradients come from the small reverse-mode
//! engine in [`nn`].

pub mod analyzer;
pub mod dataio;
pub mod detector;
pub mod encoders;
pub mod error;
pub mod evaluator;
pub mod losses;
pub mod model;
pub mod nn;
pub mod selftest;
pub mod teachers;
pub mod trainer;

pub use analyzer::{CorrelationHistogram, CorrelationMap, Granularity};
pub use dataio::{
    AudioFeatures, FaceTrack, ForgeryCategory, ManifestEntry, Split, VideoSample, VoiceSource,
};
pub use detector::{DetectionOutput, DetectorConfig};
pub use encoders::{EmbeddingPair, EncoderConfig, Preset};
pub use error::{Error, Result};
pub use evaluator::{EvalReport, ProtocolKind, ProtocolSpec, ScoreRecord};
pub use losses::{ContraMode, CorrelationSignals, LossBreakdown, LossWeights};
pub use model::{CheckpointMeta, ModelConfig, TwoBranchModel};
pub use teachers::{ContentLabels, Teacher, TeacherDistributions};
pub use trainer::{lr_schedule, MetricsRecord, RunState, TrainConfig, TrainData, Trainer};
