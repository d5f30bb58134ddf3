//! Handcrafted frequency-domain features, a linear attack scorer,
//! presentation-attack metrics and score-level fusion.

pub mod detector;
pub mod error;
pub mod eval;
pub mod features;
pub mod fusion;
pub mod harness;
pub mod imageio;
pub mod preprocess;

pub use detector::{predict, train, vectorize, FeatureVector, LinearScorer, TrainConfig};
pub use error::{Error, Result};
pub use eval::{d_eer, det_curve, rates_at, threshold_for_bpcer, Label, ScoreRecord, ScoreSet};
pub use features::{extract, DctBlock, FeatureKind, FeatureMap};
pub use fusion::{apply_calibration, calibrate, fuse, CalibratedScorer, CalibrationProtocol, FusionRule};
pub use imageio::{Channels, FaceBox, ImageBuffer};
pub use preprocess::{AugmentConfig, PreprocessConfig};
