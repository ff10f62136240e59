//! Landmark frames, labels and the 68-point indexing convention.
//!
//! Landmark indices follow the common 68-point face annotation (1-based in the
//! literature, 0-based here): jaw 1-17, brows 18-27, nose 28-36, eyes 37-48,
//! outer lip 49-60 and inner lip 61-68.

use std::fmt;
use std::ops::Sub;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const LANDMARK_COUNT: usize = 68;

/// 0-based indices of the left eye, in p1..p6 order (landmarks 37-42).
pub const LEFT_EYE: [usize; 6] = [36, 37, 38, 39, 40, 41];
/// 0-based indices of the right eye, in p1..p6 order (landmarks 43-48).
pub const RIGHT_EYE: [usize; 6] = [42, 43, 44, 45, 46, 47];
/// 0-based inner-lip indices in A, B, C, D, E, F, G, H order
/// (landmarks 61, 65, 62, 68, 63, 67, 64, 66).
pub const INNER_MOUTH: [usize; 8] = [60, 64, 61, 67, 62, 66, 63, 65];

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point2<T = f64> {
    pub x: T,
    pub y: T,
}

impl<T: Scalar> Point2<T> {
    pub fn new(x: T, y: T) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &Self) -> T {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl<T: Scalar> Sub for Point2<T> {
    type Output = Point2<T>;

    fn sub(self, rhs: Self) -> Self {
        Point2::new(self.x - rhs.x, self.y - rhs.y)
    }
}

/// One timestamped observation from the landmark detector.
///
/// Construction is unchecked so that detector output can be carried around
/// as-is; the `extract_*` functions validate the points they read.
#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkFrame<T = f64> {
    pub frame_index: u64,
    /// Milliseconds since session start.
    pub t_ms: u64,
    pub face_present: bool,
    pub points: Vec<Point2<T>>,
    pub confidence: Option<T>,
}

impl<T: Scalar> LandmarkFrame<T> {
    pub fn with_face(frame_index: u64, t_ms: u64, points: Vec<Point2<T>>) -> Self {
        Self {
            frame_index,
            t_ms,
            face_present: true,
            points,
            confidence: None,
        }
    }

    pub fn without_face(frame_index: u64, t_ms: u64) -> Self {
        Self {
            frame_index,
            t_ms,
            face_present: false,
            points: Vec::new(),
            confidence: None,
        }
    }

    /// Checks the full frame invariant: 68 finite points when a face is present.
    pub fn validate(&self) -> Result<()> {
        if !self.face_present {
            return Ok(());
        }
        if self.points.len() != LANDMARK_COUNT {
            return Err(self.malformed(format!(
                "expected {LANDMARK_COUNT} points, found {}",
                self.points.len()
            )));
        }
        if let Some(i) = self.points.iter().position(|p| !p.is_finite()) {
            return Err(self.malformed(format!("non-finite coordinate at index {i}")));
        }
        Ok(())
    }

    /// Applies `f` to every point. Used for similarity transforms in tests and
    /// by the synthetic generator.
    pub fn map_points(&self, f: impl Fn(Point2<T>) -> Point2<T>) -> Self {
        Self {
            points: self.points.iter().copied().map(f).collect(),
            ..self.clone()
        }
    }

    fn malformed(&self, reason: String) -> Error {
        Error::MalformedFrame {
            frame: self.frame_index,
            reason,
        }
    }

    fn gather<const N: usize>(&self, indices: &[usize; N]) -> Result<[Point2<T>; N]> {
        if !self.face_present {
            return Err(Error::FaceNotPresent {
                frame: self.frame_index,
            });
        }
        if self.points.len() != LANDMARK_COUNT {
            return Err(self.malformed(format!(
                "expected {LANDMARK_COUNT} points, found {}",
                self.points.len()
            )));
        }
        let mut out = [Point2::default(); N];
        for (slot, &i) in out.iter_mut().zip(indices) {
            let p = self.points[i];
            if !p.is_finite() {
                return Err(self.malformed(format!("non-finite coordinate at index {i}")));
            }
            *slot = p;
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EyeSide {
    Left,
    Right,
}

/// Six eye landmarks ordered corner, upper, upper, corner, lower, lower.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EyeLandmarks<T = f64> {
    pub p: [Point2<T>; 6],
}

/// Inner-lip landmarks: corners `a`, `b` and three vertical (upper, lower) pairs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MouthLandmarks<T = f64> {
    pub a: Point2<T>,
    pub b: Point2<T>,
    pub pairs: [(Point2<T>, Point2<T>); 3],
}

pub fn extract_eye_landmarks<T: Scalar>(
    frame: &LandmarkFrame<T>,
    side: EyeSide,
) -> Result<EyeLandmarks<T>> {
    let indices = match side {
        EyeSide::Left => &LEFT_EYE,
        EyeSide::Right => &RIGHT_EYE,
    };
    Ok(EyeLandmarks {
        p: frame.gather(indices)?,
    })
}

pub fn extract_mouth_landmarks<T: Scalar>(frame: &LandmarkFrame<T>) -> Result<MouthLandmarks<T>> {
    let [a, b, c, d, e, f, g, h] = frame.gather(&INNER_MOUTH)?;
    Ok(MouthLandmarks {
        a,
        b,
        pairs: [(c, d), (e, f), (g, h)],
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum AlertnessLabel {
    Alert = 0,
    Drowsy = 1,
}

impl AlertnessLabel {
    pub fn as_u8(self) -> u8 {
        self as u8
    }

    pub fn as_str(self) -> &'static str {
        match self {
            AlertnessLabel::Alert => "ALERT",
            AlertnessLabel::Drowsy => "DROWSY",
        }
    }
}

impl From<AlertnessLabel> for u8 {
    fn from(label: AlertnessLabel) -> u8 {
        label.as_u8()
    }
}

impl TryFrom<u8> for AlertnessLabel {
    type Error = String;

    fn try_from(v: u8) -> std::result::Result<Self, String> {
        match v {
            0 => Ok(AlertnessLabel::Alert),
            1 => Ok(AlertnessLabel::Drowsy),
            other => Err(format!("label must be 0 or 1, got {other}")),
        }
    }
}

impl fmt::Display for AlertnessLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionMeta {
    pub subject_id: String,
    pub session_id: String,
    pub label: Option<AlertnessLabel>,
    pub fps_nominal: f64,
    pub source_path: String,
}

impl SessionMeta {
    pub fn validate(&self) -> Result<()> {
        if self.subject_id.is_empty() || self.session_id.is_empty() {
            return Err(Error::InvalidManifest(
                "subject and session ids must be non-empty".into(),
            ));
        }
        if !(self.fps_nominal > 0.0) {
            return Err(Error::InvalidManifest(format!(
                "session {}: fps must be positive",
                self.session_id
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn numbered_frame() -> LandmarkFrame {
        let points = (0..LANDMARK_COUNT)
            .map(|i| Point2::new(i as f64, -(i as f64)))
            .collect();
        LandmarkFrame::with_face(3, 100, points)
    }

    #[test]
    fn left_eye_is_identity_mapping_of_indices_36_to_41() {
        let frame = numbered_frame();
        let eye = extract_eye_landmarks(&frame, EyeSide::Left).unwrap();
        for (k, p) in eye.p.iter().enumerate() {
            assert_eq!(*p, frame.points[36 + k]);
        }
        let right = extract_eye_landmarks(&frame, EyeSide::Right).unwrap();
        assert_eq!(right.p[0], frame.points[42]);
        assert_eq!(right.p[5], frame.points[47]);
    }

    #[test]
    fn mouth_uses_inner_lip_octet() {
        let frame = numbered_frame();
        let m = extract_mouth_landmarks(&frame).unwrap();
        assert_eq!(m.a, frame.points[60]);
        assert_eq!(m.b, frame.points[64]);
        assert_eq!(m.pairs[0], (frame.points[61], frame.points[67]));
        assert_eq!(m.pairs[1], (frame.points[62], frame.points[66]));
        assert_eq!(m.pairs[2], (frame.points[63], frame.points[65]));
    }

    #[test]
    fn absent_face_is_rejected() {
        let frame = LandmarkFrame::<f64>::without_face(0, 0);
        assert!(matches!(
            extract_eye_landmarks(&frame, EyeSide::Left),
            Err(Error::FaceNotPresent { .. })
        ));
        assert!(matches!(
            extract_mouth_landmarks(&frame),
            Err(Error::FaceNotPresent { .. })
        ));
    }

    #[test]
    fn wrong_point_count_is_malformed() {
        let mut frame = numbered_frame();
        frame.points.pop();
        assert!(matches!(
            extract_eye_landmarks(&frame, EyeSide::Right),
            Err(Error::MalformedFrame { .. })
        ));
        assert!(frame.validate().is_err());
    }

    #[test]
    fn nan_in_inner_lip_is_malformed() {
        let mut frame = numbered_frame();
        frame.points[62].x = f64::NAN;
        assert!(matches!(
            extract_mouth_landmarks(&frame),
            Err(Error::MalformedFrame { .. })
        ));
    }

    #[test]
    fn extraction_ignores_points_outside_its_ranges() {
        let clean = numbered_frame();
        let mut poisoned = clean.clone();
        for (i, p) in poisoned.points.iter_mut().enumerate() {
            if !(36..48).contains(&i) && !(60..68).contains(&i) {
                *p = Point2::new(f64::NAN, f64::NAN);
            }
        }
        for side in [EyeSide::Left, EyeSide::Right] {
            assert_eq!(
                extract_eye_landmarks(&poisoned, side).unwrap(),
                extract_eye_landmarks(&clean, side).unwrap()
            );
        }
        assert_eq!(
            extract_mouth_landmarks(&poisoned).unwrap(),
            extract_mouth_landmarks(&clean).unwrap()
        );
    }

    #[test]
    fn label_serializes_as_integer() {
        assert_eq!(serde_json::to_string(&AlertnessLabel::Drowsy).unwrap(), "1");
        let l: AlertnessLabel = serde_json::from_str("0").unwrap();
        assert_eq!(l, AlertnessLabel::Alert);
        assert!(serde_json::from_str::<AlertnessLabel>("2").is_err());
    }
}
