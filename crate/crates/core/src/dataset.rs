//! Dataset ingestion, frame sampling, splitting and evaluation tables.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::{Path, PathBuf};

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifier::{self, LabeledVector, MetricsReport};
use crate::error::{Error, Result};
use crate::features::{
    compute_features, fit_baseline, BaselineStats, Feature, FeatureMask, FeatureVector,
    DEFAULT_MIN_BASELINE_FRAMES,
};
use crate::io;
use crate::rng::SplitMix64;
use crate::synth::CorpusSession;
use crate::types::{AlertnessLabel, LandmarkFrame};

/// Self-reported state of a recording, on the 0/5/10 sleepiness coding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum RecordingState {
    Alert = 0,
    LowVigilant = 5,
    Drowsy = 10,
}

impl From<RecordingState> for u8 {
    fn from(s: RecordingState) -> u8 {
        s as u8
    }
}

impl TryFrom<u8> for RecordingState {
    type Error = String;

    fn try_from(v: u8) -> std::result::Result<Self, String> {
        match v {
            0 => Ok(RecordingState::Alert),
            5 => Ok(RecordingState::LowVigilant),
            10 => Ok(RecordingState::Drowsy),
            other => Err(format!("label must be 0, 5 or 10, got {other}")),
        }
    }
}

impl From<AlertnessLabel> for RecordingState {
    fn from(l: AlertnessLabel) -> Self {
        match l {
            AlertnessLabel::Alert => RecordingState::Alert,
            AlertnessLabel::Drowsy => RecordingState::Drowsy,
        }
    }
}

impl RecordingState {
    /// Classification label, or `None` when the recording is excluded.
    pub fn to_label(self, include_low_vigilant: bool) -> Option<AlertnessLabel> {
        match self {
            RecordingState::Alert => Some(AlertnessLabel::Alert),
            RecordingState::Drowsy => Some(AlertnessLabel::Drowsy),
            RecordingState::LowVigilant => include_low_vigilant.then_some(AlertnessLabel::Drowsy),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub subject: String,
    pub session: String,
    pub label: RecordingState,
    /// Landmark JSONL path, relative to the manifest root.
    pub landmarks: String,
    pub fps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    /// Loads a manifest and checks its entries. A relative `root` is resolved
    /// against the manifest's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let mut manifest: DatasetManifest = io::load_json(path)?;
        if manifest.root.is_relative() {
            let dir = path.parent().unwrap_or(Path::new("."));
            manifest.root = dir.join(&manifest.root);
        }
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for e in &self.entries {
            if e.subject.is_empty() || e.session.is_empty() {
                return Err(Error::InvalidManifest("empty subject or session id".into()));
            }
            if !seen.insert(e.session.as_str()) {
                return Err(Error::InvalidManifest(format!(
                    "duplicate session {}",
                    e.session
                )));
            }
            if !(e.fps > 0.0) {
                return Err(Error::InvalidManifest(format!(
                    "session {}: fps must be positive",
                    e.session
                )));
            }
            let path = self.session_path(e);
            if !path.is_file() {
                return Err(Error::InvalidManifest(format!(
                    "session {}: {} does not exist",
                    e.session,
                    path.display()
                )));
            }
        }
        Ok(())
    }

    pub fn session_path(&self, entry: &ManifestEntry) -> PathBuf {
        self.root.join(&entry.landmarks)
    }

    /// Reads every session's frames, in manifest order.
    pub fn load_sessions(&self) -> Result<Vec<LabeledSession>> {
        self.entries
            .par_iter()
            .map(|e| {
                Ok(LabeledSession {
                    subject_id: e.subject.clone(),
                    session_id: e.session.clone(),
                    state: e.label,
                    frames: io::read_frames(&self.session_path(e))?,
                })
            })
            .collect()
    }
}

/// A recording's frames with its subject and state.
#[derive(Debug, Clone)]
pub struct LabeledSession {
    pub subject_id: String,
    pub session_id: String,
    pub state: RecordingState,
    pub frames: Vec<LandmarkFrame>,
}

impl From<CorpusSession> for LabeledSession {
    fn from(c: CorpusSession) -> Self {
        LabeledSession {
            subject_id: c.meta.subject_id,
            session_id: c.meta.session_id,
            state: c.session.label.into(),
            frames: c.session.frames,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingSpec {
    pub start_s: f64,
    pub rate_hz: f64,
}

impl Default for SamplingSpec {
    fn default() -> Self {
        Self {
            start_s: 40.0,
            rate_hz: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampledFrames {
    pub frames: Vec<LandmarkFrame>,
    pub warning: Option<String>,
}

/// Keeps the first frame of every sampling slot from `start_s` on. Slots are
/// `1 / rate_hz` seconds long; a slot without frames is skipped.
pub fn sample_frames(frames: &[LandmarkFrame], spec: &SamplingSpec) -> SampledFrames {
    let start_ms = spec.start_s * 1000.0;
    let period_ms = 1000.0 / spec.rate_hz;
    let mut out = Vec::new();
    let mut last_slot: Option<u64> = None;
    for f in frames {
        let t = f.t_ms as f64;
        if t < start_ms {
            continue;
        }
        let slot = ((t - start_ms) / period_ms).floor() as u64;
        if last_slot.is_none_or(|s| slot > s) {
            last_slot = Some(slot);
            out.push(f.clone());
        }
    }
    let warning = out.is_empty().then(|| {
        let end = frames.last().map_or(0, |f| f.t_ms);
        format!(
            "session ends at {:.3} s, before the {} s sampling start",
            end as f64 / 1000.0,
            spec.start_s
        )
    });
    SampledFrames {
        frames: out,
        warning,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    #[serde(alias = "frame")]
    FrameLevel,
    #[serde(alias = "subject")]
    SubjectLevel,
}

impl std::str::FromStr for SplitMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "frame" | "frame_level" => Ok(SplitMode::FrameLevel),
            "subject" | "subject_level" => Ok(SplitMode::SubjectLevel),
            other => Err(Error::InvalidConfig(format!(
                "unknown split mode {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSpec {
    pub mode: SplitMode,
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            mode: SplitMode::FrameLevel,
            train_fraction: 0.8,
            seed: 42,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "train_fraction must be in (0, 1), got {}",
                self.train_fraction
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BuildOptions {
    pub sampling: SamplingSpec,
    /// Map low-vigilant recordings to Drowsy instead of dropping them.
    pub include_low_vigilant: bool,
    pub min_baseline_frames: usize,
}

impl Default for BuildOptions {
    fn default() -> Self {
        Self {
            sampling: SamplingSpec::default(),
            include_low_vigilant: false,
            min_baseline_frames: DEFAULT_MIN_BASELINE_FRAMES,
        }
    }
}

/// One sampled, feature-valid frame of the dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub subject_id: String,
    pub session_id: String,
    pub frame_index: u64,
    pub t_ms: u64,
    pub raw: FeatureVector,
    pub normalized: FeatureVector,
    pub label: AlertnessLabel,
}

impl Sample {
    pub fn labeled(&self) -> LabeledVector {
        LabeledVector {
            features: self.normalized,
            label: self.label,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
    pub baselines: BTreeMap<String, BaselineStats>,
    pub warnings: Vec<String>,
}

impl Dataset {
    pub fn train_vectors(&self) -> Vec<LabeledVector> {
        self.train.iter().map(Sample::labeled).collect()
    }

    pub fn test_vectors(&self) -> Vec<LabeledVector> {
        self.test.iter().map(Sample::labeled).collect()
    }

    pub fn all_samples(&self) -> impl Iterator<Item = &Sample> {
        self.train.iter().chain(&self.test)
    }
}

/// Normalizes every subject against the baseline of their first alert
/// recording, then splits the samples.
pub fn build_dataset(
    sessions: &[LabeledSession],
    split: &SplitSpec,
    options: &BuildOptions,
) -> Result<Dataset> {
    split.validate()?;
    let mut warnings = Vec::new();

    // Sampled, feature-valid raw vectors per session.
    let extracted: Vec<Vec<(u64, u64, FeatureVector)>> = sessions
        .par_iter()
        .map(|s| {
            let sampled = sample_frames(&s.frames, &options.sampling);
            let rows = sampled
                .frames
                .iter()
                .filter_map(|f| compute_features(f).ok().map(|v| (f.frame_index, f.t_ms, v)))
                .collect();
            (rows, sampled.warning)
        })
        .collect::<Vec<_>>()
        .into_iter()
        .zip(sessions)
        .map(|((rows, warning), s)| {
            if let Some(w) = warning {
                let msg = format!("{}: {w}", s.session_id);
                warn!("{msg}");
                warnings.push(msg);
            }
            rows
        })
        .collect();

    let mut baselines = BTreeMap::new();
    for (s, rows) in sessions.iter().zip(&extracted) {
        if s.state == RecordingState::Alert && !baselines.contains_key(&s.subject_id) {
            let vectors: Vec<FeatureVector> = rows.iter().map(|r| r.2).collect();
            let b = fit_baseline(&vectors, &s.subject_id, options.min_baseline_frames)?;
            baselines.insert(s.subject_id.clone(), b);
        }
    }

    let mut samples = Vec::new();
    for (s, rows) in sessions.iter().zip(&extracted) {
        let Some(label) = s.state.to_label(options.include_low_vigilant) else {
            continue;
        };
        let baseline = baselines
            .get(&s.subject_id)
            .ok_or_else(|| Error::MissingAlertBaseline {
                subject: s.subject_id.clone(),
            })?;
        for &(frame_index, t_ms, raw) in rows {
            samples.push(Sample {
                subject_id: s.subject_id.clone(),
                session_id: s.session_id.clone(),
                frame_index,
                t_ms,
                raw,
                normalized: baseline.normalize(&raw)?,
                label,
            });
        }
    }
    for (label, name) in [
        (AlertnessLabel::Alert, "alert"),
        (AlertnessLabel::Drowsy, "drowsy"),
    ] {
        if !samples.iter().any(|s| s.label == label) {
            return Err(Error::MissingClass(name));
        }
    }

    let (train, test) = split_samples(samples, split);
    Ok(Dataset {
        train,
        test,
        baselines,
        warnings,
    })
}

fn split_count(n: usize, fraction: f64) -> usize {
    (n as f64 * fraction).round() as usize
}

/// Deterministic train/test split. Frame-level shuffles samples; subject-level
/// shuffles the sorted subject list so no subject lands on both sides.
pub fn split_samples(samples: Vec<Sample>, split: &SplitSpec) -> (Vec<Sample>, Vec<Sample>) {
    let mut rng = SplitMix64::new(split.seed);
    let in_train: Vec<bool> = match split.mode {
        SplitMode::FrameLevel => {
            let mut order: Vec<usize> = (0..samples.len()).collect();
            rng.shuffle(&mut order);
            let n_train = split_count(samples.len(), split.train_fraction);
            let mut flags = vec![false; samples.len()];
            for &i in &order[..n_train] {
                flags[i] = true;
            }
            flags
        }
        SplitMode::SubjectLevel => {
            let mut subjects: Vec<&str> = samples
                .iter()
                .map(|s| s.subject_id.as_str())
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect();
            rng.shuffle(&mut subjects);
            let n = subjects.len();
            let mut n_train = split_count(n, split.train_fraction);
            if n >= 2 {
                n_train = n_train.clamp(1, n - 1);
            }
            let train_subjects: BTreeSet<&str> = subjects[..n_train].iter().copied().collect();
            samples
                .iter()
                .map(|s| train_subjects.contains(s.subject_id.as_str()))
                .collect()
        }
    };
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (s, t) in samples.into_iter().zip(in_train) {
        if t {
            train.push(s);
        } else {
            test.push(s);
        }
    }
    (train, test)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSweepRow {
    pub mask: FeatureMask,
    pub metrics: MetricsReport,
}

/// Trains and evaluates one model per non-empty feature mask, in enumeration
/// order (singletons, pairs, triples, all four).
pub fn sweep_features(
    train: &[LabeledVector],
    test: &[LabeledVector],
    k: usize,
) -> Result<Vec<FeatureSweepRow>> {
    if train.is_empty() || test.is_empty() {
        return Err(Error::EmptyTestSet);
    }
    FeatureMask::all_combinations()
        .into_par_iter()
        .map(|mask| {
            let model = classifier::train(train, mask, k)?;
            Ok(FeatureSweepRow {
                mask,
                metrics: classifier::evaluate(&model, test)?,
            })
        })
        .collect()
}

#[derive(Serialize)]
struct SweepCsvRow {
    mask: String,
    accuracy: f64,
    precision: f64,
    recall: f64,
    f1: f64,
    tp: usize,
    fp: usize,
    #[serde(rename = "fn")]
    fn_: usize,
    tn: usize,
}

pub fn write_sweep_csv(w: impl Write, rows: &[FeatureSweepRow]) -> Result<()> {
    let mut csv = csv::Writer::from_writer(w);
    for r in rows {
        let m = &r.metrics;
        csv.serialize(SweepCsvRow {
            mask: r.mask.to_string(),
            accuracy: m.accuracy,
            precision: m.precision,
            recall: m.recall,
            f1: m.f1,
            tp: m.confusion.tp,
            fp: m.confusion.fp,
            fn_: m.confusion.fn_,
            tn: m.confusion.tn,
        })?;
    }
    csv.flush().map_err(|e| Error::io("<output>", e))
}

/// Writes one `k,accuracy,f1` row per swept K.
pub fn write_k_sweep_csv(w: impl Write, rows: &[crate::classifier::SweepRow]) -> Result<()> {
    let mut csv = csv::Writer::from_writer(w);
    for r in rows {
        csv.serialize(r)?;
    }
    csv.flush().map_err(|e| Error::io("<output>", e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassStatistics {
    pub n: usize,
    pub mean: [f64; 4],
    /// Population standard deviation.
    pub std: [f64; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateStatistics {
    pub alert: ClassStatistics,
    pub drowsy: ClassStatistics,
    /// `(drowsy - alert) / alert * 100` per feature.
    pub delta_percent: [f64; 4],
}

fn class_statistics(vectors: &[FeatureVector]) -> ClassStatistics {
    let n = vectors.len() as f64;
    let mut mean = [0.0; 4];
    for v in vectors {
        for (m, x) in mean.iter_mut().zip(v.to_array()) {
            *m += x / n;
        }
    }
    let mut std = [0.0; 4];
    for v in vectors {
        for ((s, x), m) in std.iter_mut().zip(v.to_array()).zip(mean) {
            *s += (x - m) * (x - m) / n;
        }
    }
    ClassStatistics {
        n: vectors.len(),
        mean,
        std: std.map(f64::sqrt),
    }
}

/// Per-state mean and std of each feature, with the drowsy-vs-alert change.
pub fn state_statistics(samples: &[(FeatureVector, AlertnessLabel)]) -> Result<StateStatistics> {
    let pick = |label| -> Vec<FeatureVector> {
        samples
            .iter()
            .filter(|(_, l)| *l == label)
            .map(|(v, _)| *v)
            .collect()
    };
    let alert = pick(AlertnessLabel::Alert);
    let drowsy = pick(AlertnessLabel::Drowsy);
    if alert.is_empty() {
        return Err(Error::MissingClass("alert"));
    }
    if drowsy.is_empty() {
        return Err(Error::MissingClass("drowsy"));
    }
    let alert = class_statistics(&alert);
    let drowsy = class_statistics(&drowsy);
    let delta_percent =
        std::array::from_fn(|i| (drowsy.mean[i] - alert.mean[i]) / alert.mean[i] * 100.0);
    Ok(StateStatistics {
        alert,
        drowsy,
        delta_percent,
    })
}

impl std::fmt::Display for StateStatistics {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:<8}", "")?;
        for feat in Feature::ALL {
            write!(f, " {:>9} {:>9}", format!("{feat} mean"), "std")?;
        }
        writeln!(f)?;
        for (name, c) in [("Alert", &self.alert), ("Drowsy", &self.drowsy)] {
            write!(f, "{name:<8}")?;
            for i in 0..4 {
                write!(f, " {:>9.4} {:>9.4}", c.mean[i], c.std[i])?;
            }
            writeln!(f)?;
        }
        write!(f, "{:<8}", "Delta")?;
        for d in self.delta_percent {
            write!(f, " {:>+8.1}% {:>9}", d, "")?;
        }
        Ok(())
    }
}

/// Fraction of frames with a detected face and valid features.
pub fn detection_rate(frames: &[LandmarkFrame]) -> Result<f64> {
    if frames.is_empty() {
        return Err(Error::EmptySession);
    }
    let ok = frames
        .iter()
        .filter(|f| f.face_present && compute_features(f).is_ok())
        .count();
    Ok(ok as f64 / frames.len() as f64)
}
