//! JSON Lines and JSON file formats.
//!
//! Landmark frame, one per line:
//!
//! ```text
//! {"frame":0,"t_ms":0,"face":true,"conf":0.98,"points":[[x,y], ... 68 pairs]}
//! {"frame":1,"t_ms":42,"face":false}
//! ```
//!
//! `conf` is optional and `points` is omitted when `face` is false.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::classifier::KnnModel;
use crate::classifier::MODEL_VERSION;
use crate::error::{Error, Result};
use crate::features::{BaselineStats, FeatureMask, FeatureVector};
use crate::pipeline::MonitorEvent;
use crate::synth::SynthProfile;
use crate::types::{AlertnessLabel, LandmarkFrame, Point2, LANDMARK_COUNT};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameRecord {
    pub frame: u64,
    pub t_ms: u64,
    pub face: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub conf: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub points: Option<Vec<[f64; 2]>>,
}

impl From<&LandmarkFrame> for FrameRecord {
    fn from(f: &LandmarkFrame) -> Self {
        FrameRecord {
            frame: f.frame_index,
            t_ms: f.t_ms,
            face: f.face_present,
            conf: f.confidence,
            points: f
                .face_present
                .then(|| f.points.iter().map(|p| [p.x, p.y]).collect()),
        }
    }
}

impl TryFrom<FrameRecord> for LandmarkFrame {
    type Error = String;

    fn try_from(r: FrameRecord) -> std::result::Result<Self, String> {
        if let Some(c) = r.conf {
            if !(0.0..=1.0).contains(&c) {
                return Err(format!("conf {c} outside [0, 1]"));
            }
        }
        let points = if r.face {
            let pts = r.points.ok_or("face frame without points")?;
            if pts.len() != LANDMARK_COUNT {
                return Err(format!(
                    "expected {LANDMARK_COUNT} points, found {}",
                    pts.len()
                ));
            }
            pts.into_iter().map(|[x, y]| Point2::new(x, y)).collect()
        } else {
            Vec::new()
        };
        Ok(LandmarkFrame {
            frame_index: r.frame,
            t_ms: r.t_ms,
            face_present: r.face,
            points,
            confidence: r.conf,
        })
    }
}

pub fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::io(path, e))
}

pub fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

/// Streams landmark frames from JSON Lines. Blank lines are skipped; any
/// other line that fails to parse is an error carrying its line number.
pub struct FrameReader<R> {
    lines: std::io::Lines<R>,
    source: String,
    line_no: usize,
}

impl<R: BufRead> FrameReader<R> {
    pub fn new(reader: R, source: impl Into<String>) -> Self {
        Self {
            lines: reader.lines(),
            source: source.into(),
            line_no: 0,
        }
    }

    fn parse_error(&self, reason: String) -> Error {
        Error::Parse {
            path: self.source.clone(),
            line: self.line_no,
            reason,
        }
    }
}

impl<R: BufRead> Iterator for FrameReader<R> {
    type Item = Result<LandmarkFrame>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            self.line_no += 1;
            let line = match self.lines.next()? {
                Ok(line) => line,
                Err(e) => return Some(Err(Error::io(&self.source, e))),
            };
            if line.trim().is_empty() {
                continue;
            }
            let parsed = serde_json::from_str::<FrameRecord>(&line)
                .map_err(|e| self.parse_error(e.to_string()))
                .and_then(|r| LandmarkFrame::try_from(r).map_err(|e| self.parse_error(e)));
            return Some(parsed);
        }
    }
}

pub fn read_frames_from(reader: impl BufRead, source: &str) -> Result<Vec<LandmarkFrame>> {
    FrameReader::new(reader, source).collect()
}

pub fn read_frames(path: &Path) -> Result<Vec<LandmarkFrame>> {
    read_frames_from(open(path)?, &path.display().to_string())
}

pub fn write_frame(mut w: impl Write, frame: &LandmarkFrame) -> Result<()> {
    serde_json::to_writer(&mut w, &FrameRecord::from(frame))?;
    writeln!(w).map_err(|e| Error::io("<output>", e))
}

pub fn write_frames(mut w: impl Write, frames: &[LandmarkFrame]) -> Result<()> {
    for f in frames {
        write_frame(&mut w, f)?;
    }
    w.flush().map_err(|e| Error::io("<output>", e))
}

/// One row of a feature dump (JSON Lines or CSV, same columns).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRecord {
    pub frame: u64,
    pub t_ms: u64,
    pub ear: f64,
    pub mar: f64,
    pub puc: f64,
    pub moe: f64,
    pub normalized: bool,
}

impl FeatureRecord {
    pub fn new(frame: &LandmarkFrame, v: &FeatureVector) -> Self {
        Self {
            frame: frame.frame_index,
            t_ms: frame.t_ms,
            ear: v.ear,
            mar: v.mar,
            puc: v.puc,
            moe: v.moe,
            normalized: v.normalized,
        }
    }
}

pub fn write_feature_jsonl(mut w: impl Write, rows: &[FeatureRecord]) -> Result<()> {
    for r in rows {
        serde_json::to_writer(&mut w, r)?;
        writeln!(w).map_err(|e| Error::io("<output>", e))?;
    }
    w.flush().map_err(|e| Error::io("<output>", e))
}

pub fn write_feature_csv(w: impl Write, rows: &[FeatureRecord]) -> Result<()> {
    let mut csv = csv::Writer::from_writer(w);
    for r in rows {
        csv.serialize(r)?;
    }
    csv.flush().map_err(|e| Error::io("<output>", e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub t_ms: u64,
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline: Option<BaselineStats>,
}

impl From<&MonitorEvent> for EventRecord {
    fn from(e: &MonitorEvent) -> Self {
        Self {
            t_ms: e.t_ms,
            kind: e.kind.as_str().to_string(),
            state: e.state.map(|s| s.as_str().to_string()),
            score: e.score,
            baseline: e.baseline.clone(),
        }
    }
}

pub fn write_event(mut w: impl Write, event: &MonitorEvent) -> Result<()> {
    serde_json::to_writer(&mut w, &EventRecord::from(event))?;
    writeln!(w).map_err(|e| Error::io("<output>", e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingData {
    pub vectors: Vec<Vec<f64>>,
    pub labels: Vec<AlertnessLabel>,
}

/// Versioned model file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub version: String,
    pub feature_mask: FeatureMask,
    pub k: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline: Option<BaselineStats>,
    pub train: TrainingData,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tie_label: Option<AlertnessLabel>,
}

impl From<&KnnModel> for ModelFile {
    fn from(m: &KnnModel) -> Self {
        Self {
            version: MODEL_VERSION.to_string(),
            feature_mask: m.mask(),
            k: m.k(),
            baseline: m.baseline.clone(),
            train: TrainingData {
                vectors: (0..m.len()).map(|i| m.train_row(i).to_vec()).collect(),
                labels: m.labels().to_vec(),
            },
            tie_label: (m.tie_label() != AlertnessLabel::Drowsy).then_some(m.tie_label()),
        }
    }
}

impl ModelFile {
    pub fn into_model(self) -> Result<KnnModel> {
        if self.version != MODEL_VERSION {
            return Err(Error::UnsupportedVersion(self.version));
        }
        let mut model = KnnModel::from_rows(
            &self.train.vectors,
            &self.train.labels,
            self.feature_mask,
            self.k,
        )?;
        if let Some(b) = self.baseline {
            model = model.with_baseline(b);
        }
        if let Some(t) = self.tie_label {
            model = model.with_tie_label(t);
        }
        Ok(model)
    }
}

pub fn save_model(path: &Path, model: &KnnModel) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer(&mut w, &ModelFile::from(model))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<KnnModel> {
    let file: ModelFile = serde_json::from_reader(open(path)?)?;
    file.into_model()
}

pub fn save_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    Ok(serde_json::from_reader(open(path)?)?)
}

/// Sidecar written next to each generated session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthRecord {
    pub session: String,
    pub label: AlertnessLabel,
    pub profile: SynthProfile,
}
