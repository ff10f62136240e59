//! Streaming alertness monitor.
//!
//! A [`Monitor`] is a deterministic transducer from landmark frames to
//! [`MonitorEvent`]s. State machine:
//!
//! ```text
//! Calibrating --(duration elapsed, baseline fitted)--> Tracking
//! Tracking --(drowsy streak spans escalation_windows)--> LowAlertness
//! LowAlertness --(alert decision)--> Tracking
//! any --(face absent >= face_lost_threshold_ms)--> FaceLost
//! FaceLost --(face present)--> state before the loss
//! ```

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::classifier::KnnModel;
use crate::error::{Error, Result};
use crate::features::{
    compute_features, fit_baseline, BaselineStats, FeatureMask, FeatureVector,
    DEFAULT_MIN_BASELINE_FRAMES,
};
use crate::scalar::Scalar;
use crate::types::{AlertnessLabel, LandmarkFrame};

/// Span of the trailing validity check.
const VALIDITY_SPAN_MS: u64 = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecisionMode {
    /// KNN on the trained model.
    Knn,
    /// Drowsy when the windowed normalized MOE reaches `deviation_threshold_z`.
    #[serde(alias = "deviation")]
    BaselineDeviation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MonitorConfig {
    pub calibration_duration_ms: u64,
    pub smoothing_window_frames: usize,
    /// Frames between decisions once the window is full; 1 is a sliding window.
    pub decision_stride: usize,
    pub face_lost_threshold_ms: u64,
    pub decision_mode: DecisionMode,
    pub deviation_threshold_z: f64,
    pub min_valid_fraction: f64,
    /// Drowsy decisions must cover this many windows' worth of frames to alert.
    pub escalation_windows: usize,
    pub min_baseline_frames: usize,
}

impl Default for MonitorConfig {
    fn default() -> Self {
        Self {
            calibration_duration_ms: 30_000,
            smoothing_window_frames: 10,
            decision_stride: 1,
            face_lost_threshold_ms: 2_000,
            decision_mode: DecisionMode::Knn,
            deviation_threshold_z: 2.0,
            min_valid_fraction: 0.5,
            escalation_windows: 2,
            min_baseline_frames: DEFAULT_MIN_BASELINE_FRAMES,
        }
    }
}

impl MonitorConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.to_string()));
        if self.calibration_duration_ms == 0 || self.face_lost_threshold_ms == 0 {
            return bad("durations must be positive");
        }
        if self.smoothing_window_frames == 0 || self.decision_stride == 0 {
            return bad("window and stride must be at least 1");
        }
        if !(self.deviation_threshold_z > 0.0) {
            return bad("deviation threshold must be positive");
        }
        if !(0.0..=1.0).contains(&self.min_valid_fraction) {
            return bad("min_valid_fraction must be in [0, 1]");
        }
        if self.escalation_windows == 0 || self.min_baseline_frames == 0 {
            return bad("escalation_windows and min_baseline_frames must be at least 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MonitorState {
    Calibrating,
    Tracking,
    FaceLost,
    LowAlertness,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EventKind {
    CalibrationStarted,
    CalibrationComplete,
    StateDecision,
    RepositionCue,
    FaceReacquired,
    LowAlertnessAlert,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::CalibrationStarted => "CalibrationStarted",
            EventKind::CalibrationComplete => "CalibrationComplete",
            EventKind::StateDecision => "StateDecision",
            EventKind::RepositionCue => "RepositionCue",
            EventKind::FaceReacquired => "FaceReacquired",
            EventKind::LowAlertnessAlert => "LowAlertnessAlert",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonitorEvent<T = f64> {
    pub t_ms: u64,
    pub kind: EventKind,
    /// Decided label, for `StateDecision` and `LowAlertnessAlert`.
    pub state: Option<AlertnessLabel>,
    /// Drowsy neighbor fraction (KNN) or MOE z-score (deviation mode).
    pub score: Option<T>,
    /// Set on `CalibrationComplete`.
    pub baseline: Option<BaselineStats<T>>,
}

impl<T> MonitorEvent<T> {
    fn bare(t_ms: u64, kind: EventKind) -> Self {
        Self {
            t_ms,
            kind,
            state: None,
            score: None,
            baseline: None,
        }
    }
}

/// Component-wise mean of a window of feature vectors.
pub fn smooth_window<T: Scalar>(features: &[FeatureVector<T>]) -> Result<FeatureVector<T>> {
    let first = features.first().ok_or(Error::EmptyWindow)?;
    if features.iter().any(|v| v.normalized != first.normalized) {
        return Err(Error::MixedNormalization);
    }
    let mut sum = [T::zero(); 4];
    let mut zero_std = FeatureMask::EMPTY;
    for v in features {
        for (s, x) in sum.iter_mut().zip(v.to_array()) {
            *s = *s + x;
        }
        for f in v.zero_std.features() {
            zero_std.insert(f);
        }
    }
    let n = T::of_usize(features.len());
    let mut mean = FeatureVector::from_array(sum.map(|s| s / n), first.normalized);
    mean.zero_std = zero_std;
    Ok(mean)
}

pub struct Monitor<'m, T = f64> {
    config: MonitorConfig,
    model: Option<&'m KnnModel<T>>,
    state: MonitorState,
    resume_state: MonitorState,
    last_t: Option<u64>,
    started: bool,
    calibration_start: Option<u64>,
    calibration_frames: Vec<FeatureVector<T>>,
    baseline: Option<BaselineStats<T>>,
    window: VecDeque<FeatureVector<T>>,
    pending: usize,
    recent_validity: VecDeque<(u64, bool)>,
    absent_since: Option<u64>,
    drowsy_streak: usize,
    alerted: bool,
}

impl<'m, T: Scalar> Monitor<'m, T> {
    pub fn new(config: MonitorConfig, model: Option<&'m KnnModel<T>>) -> Result<Self> {
        config.validate()?;
        if config.decision_mode == DecisionMode::Knn && model.is_none() {
            return Err(Error::InvalidConfig(
                "knn decision mode requires a model".into(),
            ));
        }
        Ok(Self {
            config,
            model,
            state: MonitorState::Calibrating,
            resume_state: MonitorState::Calibrating,
            last_t: None,
            started: false,
            calibration_start: None,
            calibration_frames: Vec::new(),
            baseline: None,
            window: VecDeque::new(),
            pending: 0,
            recent_validity: VecDeque::new(),
            absent_since: None,
            drowsy_streak: 0,
            alerted: false,
        })
    }

    pub fn state(&self) -> MonitorState {
        self.state
    }

    pub fn baseline(&self) -> Option<&BaselineStats<T>> {
        self.baseline.as_ref()
    }

    /// Feeds one frame and returns the events it produced, in time order.
    pub fn push(&mut self, frame: &LandmarkFrame<T>) -> Result<Vec<MonitorEvent<T>>> {
        let t = frame.t_ms;
        if let Some(prev) = self.last_t {
            if t < prev {
                return Err(Error::NonMonotonicTimestamps { prev, next: t });
            }
        }
        self.last_t = Some(t);

        let mut events = Vec::new();
        if !self.started {
            self.started = true;
            events.push(MonitorEvent::bare(t, EventKind::CalibrationStarted));
        }

        if !frame.face_present {
            self.on_face_absent(t, &mut events);
            return Ok(events);
        }

        self.absent_since = None;
        if self.state == MonitorState::FaceLost {
            self.state = self.resume_state;
            events.push(MonitorEvent::bare(t, EventKind::FaceReacquired));
        }

        let features = compute_features(frame).ok();
        self.track_validity(t, features.is_some());

        if self.state == MonitorState::Calibrating {
            match self.calibration_start {
                Some(start) if t - start >= self.config.calibration_duration_ms => {
                    self.complete_calibration(t, &mut events)?;
                }
                _ => {
                    if let Some(v) = features {
                        self.calibration_start.get_or_insert(t);
                        if self.calibration_frames.len() < crate::features::BASELINE_FRAMES {
                            self.calibration_frames.push(v);
                        }
                    }
                    return Ok(events);
                }
            }
        }

        if let Some(v) = features {
            self.window.push_back(v);
            if self.window.len() > self.config.smoothing_window_frames {
                self.window.pop_front();
            }
            self.pending += 1;
            if self.window.len() == self.config.smoothing_window_frames
                && self.pending >= self.config.decision_stride
            {
                self.pending = 0;
                self.decide(t, &mut events)?;
            }
        }
        Ok(events)
    }

    /// Signals end of stream. Fails if calibration never completed.
    pub fn finish(&self) -> Result<()> {
        if self.baseline.is_none() {
            return Err(Error::CalibrationFailed(format!(
                "stream ended during calibration with {} valid frames",
                self.calibration_frames.len()
            )));
        }
        Ok(())
    }

    fn on_face_absent(&mut self, t: u64, events: &mut Vec<MonitorEvent<T>>) {
        let since = *self.absent_since.get_or_insert(t);
        if self.state != MonitorState::FaceLost && t - since >= self.config.face_lost_threshold_ms {
            self.resume_state = match self.state {
                MonitorState::Calibrating => MonitorState::Calibrating,
                _ => MonitorState::Tracking,
            };
            self.state = MonitorState::FaceLost;
            self.reset_window();
            events.push(MonitorEvent::bare(t, EventKind::RepositionCue));
        }
    }

    fn track_validity(&mut self, t: u64, valid: bool) {
        self.recent_validity.push_back((t, valid));
        while let Some(&(front, _)) = self.recent_validity.front() {
            if front + VALIDITY_SPAN_MS <= t {
                self.recent_validity.pop_front();
            } else {
                break;
            }
        }
        let valid_count = self.recent_validity.iter().filter(|(_, v)| *v).count();
        let fraction = valid_count as f64 / self.recent_validity.len() as f64;
        if fraction < self.config.min_valid_fraction {
            self.reset_window();
        }
    }

    fn reset_window(&mut self) {
        self.window.clear();
        self.pending = 0;
        self.drowsy_streak = 0;
        self.alerted = false;
        if self.state == MonitorState::LowAlertness {
            self.state = MonitorState::Tracking;
        }
    }

    fn complete_calibration(&mut self, t: u64, events: &mut Vec<MonitorEvent<T>>) -> Result<()> {
        let baseline = fit_baseline(
            &self.calibration_frames,
            "session",
            self.config.min_baseline_frames,
        )
        .map_err(|e| Error::CalibrationFailed(e.to_string()))?;
        events.push(MonitorEvent {
            baseline: Some(baseline.clone()),
            ..MonitorEvent::bare(t, EventKind::CalibrationComplete)
        });
        self.baseline = Some(baseline);
        self.state = MonitorState::Tracking;
        self.reset_window();
        Ok(())
    }

    fn decide(&mut self, t: u64, events: &mut Vec<MonitorEvent<T>>) -> Result<()> {
        let baseline = self
            .baseline
            .as_ref()
            .expect("decisions only after calibration");
        let window: Vec<_> = self.window.iter().copied().collect();
        let z = baseline.normalize(&smooth_window(&window)?)?;
        let (label, score) = match self.config.decision_mode {
            DecisionMode::Knn => {
                let model = self.model.expect("checked at construction");
                let p = model.predict(&z)?;
                (p.label, p.drowsy_fraction)
            }
            DecisionMode::BaselineDeviation => {
                let label = if z.moe >= T::lit(self.config.deviation_threshold_z) {
                    AlertnessLabel::Drowsy
                } else {
                    AlertnessLabel::Alert
                };
                (label, z.moe)
            }
        };
        events.push(MonitorEvent {
            state: Some(label),
            score: Some(score),
            ..MonitorEvent::bare(t, EventKind::StateDecision)
        });

        match label {
            AlertnessLabel::Drowsy => {
                self.drowsy_streak += 1;
                let w = self.config.smoothing_window_frames;
                let span = w + (self.drowsy_streak - 1) * self.config.decision_stride;
                if !self.alerted && span >= self.config.escalation_windows * w {
                    self.alerted = true;
                    self.state = MonitorState::LowAlertness;
                    events.push(MonitorEvent {
                        state: Some(AlertnessLabel::Drowsy),
                        ..MonitorEvent::bare(t, EventKind::LowAlertnessAlert)
                    });
                }
            }
            AlertnessLabel::Alert => {
                self.drowsy_streak = 0;
                self.alerted = false;
                self.state = MonitorState::Tracking;
            }
        }
        Ok(())
    }
}

/// Runs a whole stream through a fresh monitor.
pub fn run_monitor<'a, T: Scalar>(
    frames: impl IntoIterator<Item = &'a LandmarkFrame<T>>,
    config: &MonitorConfig,
    model: Option<&KnnModel<T>>,
) -> Result<Vec<MonitorEvent<T>>> {
    let mut monitor = Monitor::new(config.clone(), model)?;
    let mut events = Vec::new();
    for frame in frames {
        events.extend(monitor.push(frame)?);
    }
    monitor.finish()?;
    Ok(events)
}
