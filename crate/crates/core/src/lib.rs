//! Traveler alertness classification from 68-point facial landmark streams.
//!
//! The crate covers the whole offline and online path:
//!
//! - [`features`]: eye/mouth aspect ratios, pupil circularity, MOE, and
//!   per-subject baseline normalization
//! - [`kdtree`] and [`classifier`]: exact KNN over normalized features, K
//!   sweeps and binary metrics
//! - [`pipeline`]: the streaming monitor (calibration, smoothing, face-lost
//!   cues, escalation)
//! - [`dataset`]: ingestion, 1 fps sampling, splits and evaluation tables
//! - [`synth`]: seeded synthetic sessions with ground truth
//! - [`io`]: JSON Lines wire formats and model files
//!
//! Geometry, normalization, the kd-tree and the monitor are generic over
//! [`Scalar`] (`f32` or `f64`) with `f64` as the default type parameter.
//! Ingestion, generation and file formats work in `f64`.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod classifier;
pub mod dataset;
pub mod error;
pub mod features;
pub mod io;
pub mod kdtree;
pub mod pipeline;
pub mod rng;
pub mod scalar;
pub mod synth;
pub mod types;

pub use classifier::{
    evaluate, sweep_k, train, Confusion, KSweep, KnnModel, LabeledVector, MetricsReport,
    Prediction, DEFAULT_K,
};
pub use error::{Error, Result};
pub use features::{
    compute_ear, compute_features, compute_mar, compute_moe, compute_puc, fit_baseline, normalize,
    BaselineStats, Feature, FeatureMask, FeatureVector,
};
pub use pipeline::{
    run_monitor, smooth_window, DecisionMode, EventKind, Monitor, MonitorConfig, MonitorEvent,
    MonitorState,
};
pub use scalar::Scalar;
pub use types::{
    extract_eye_landmarks, extract_mouth_landmarks, AlertnessLabel, EyeLandmarks, EyeSide,
    LandmarkFrame, MouthLandmarks, Point2, SessionMeta,
};

pub type LandmarkFrameF32 = LandmarkFrame<f32>;
pub type LandmarkFrameF64 = LandmarkFrame<f64>;
pub type FeatureVectorF32 = FeatureVector<f32>;
pub type FeatureVectorF64 = FeatureVector<f64>;
pub type BaselineStatsF32 = BaselineStats<f32>;
pub type BaselineStatsF64 = BaselineStats<f64>;
pub type KnnModelF32 = KnnModel<f32>;
pub type KnnModelF64 = KnnModel<f64>;
pub type MonitorEventF32 = MonitorEvent<f32>;
pub type MonitorEventF64 = MonitorEvent<f64>;
