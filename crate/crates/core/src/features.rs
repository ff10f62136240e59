//! Per-frame geometric features and per-subject baseline normalization.
//!
//! Four features are computed from each face frame:
//!
//! * EAR, eye aspect ratio: `(|p2-p6| + |p3-p5|) / (2 |p1-p4|)`.
//! * MAR, mouth aspect ratio: `(|CD| + |EF| + |GH|) / (3 |AB|)`.
//! * PUC, pupil circularity: `4 pi Area / Perimeter^2`, where Area is the disc
//!   on the diagonal `p2-p5` and Perimeter is the closed hexagon `p1..p6`.
//!   The disc approximation means PUC can exceed 1.
//! * MOE: `MAR / EAR`.
//!
//! EAR and PUC are averaged over both eyes.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::types::{
    extract_eye_landmarks, extract_mouth_landmarks, EyeLandmarks, EyeSide, LandmarkFrame,
    MouthLandmarks,
};

/// Lengths below this many pixels are treated as degenerate.
pub const DEGENERATE_EPS: f64 = 1e-9;
/// Floor applied to baseline standard deviations during normalization.
pub const STD_EPS: f64 = 1e-6;
/// Number of leading alert frames a baseline is fitted from.
pub const BASELINE_FRAMES: usize = 30;
/// Smallest number of valid frames accepted for a baseline.
pub const DEFAULT_MIN_BASELINE_FRAMES: usize = 15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Feature {
    Ear = 0,
    Mar = 1,
    Puc = 2,
    Moe = 3,
}

impl Feature {
    pub const ALL: [Feature; 4] = [Feature::Ear, Feature::Mar, Feature::Puc, Feature::Moe];

    pub fn name(self) -> &'static str {
        match self {
            Feature::Ear => "EAR",
            Feature::Mar => "MAR",
            Feature::Puc => "PUC",
            Feature::Moe => "MOE",
        }
    }
}

impl fmt::Display for Feature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Feature {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "EAR" => Ok(Feature::Ear),
            "MAR" => Ok(Feature::Mar),
            "PUC" => Ok(Feature::Puc),
            "MOE" => Ok(Feature::Moe),
            other => Err(Error::InvalidConfig(format!("unknown feature {other:?}"))),
        }
    }
}

/// A subset of the four features, stored as a bit set in feature order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(into = "Vec<String>", try_from = "Vec<String>")]
pub struct FeatureMask(u8);

impl FeatureMask {
    pub const EMPTY: FeatureMask = FeatureMask(0);
    pub const ALL: FeatureMask = FeatureMask(0b1111);

    pub fn from_features(features: &[Feature]) -> Self {
        FeatureMask(features.iter().fold(0, |acc, f| acc | (1 << *f as u8)))
    }

    pub fn contains(self, feature: Feature) -> bool {
        self.0 & (1 << feature as u8) != 0
    }

    pub fn insert(&mut self, feature: Feature) {
        self.0 |= 1 << feature as u8;
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn features(self) -> impl Iterator<Item = Feature> {
        Feature::ALL.into_iter().filter(move |f| self.contains(*f))
    }

    /// All 15 non-empty masks: singletons, then pairs, triples and the full
    /// set, each group in lexicographic feature order.
    pub fn all_combinations() -> Vec<FeatureMask> {
        let mut masks: Vec<FeatureMask> = (1u8..16).map(FeatureMask).collect();
        masks.sort_by_key(|m| {
            let idx: Vec<Feature> = m.features().collect();
            (idx.len(), idx)
        });
        masks
    }
}

impl fmt::Display for FeatureMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = self.features().map(Feature::name).collect();
        f.write_str(&names.join("+"))
    }
}

impl FromStr for FeatureMask {
    type Err = Error;

    /// Parses `EAR,MAR` or `EAR+MAR` (case-insensitive).
    fn from_str(s: &str) -> Result<Self> {
        let mut mask = FeatureMask::EMPTY;
        for part in s.split([',', '+']).filter(|p| !p.trim().is_empty()) {
            mask.insert(part.parse()?);
        }
        if mask.is_empty() {
            return Err(Error::InvalidConfig(
                "feature mask must not be empty".into(),
            ));
        }
        Ok(mask)
    }
}

impl From<FeatureMask> for Vec<String> {
    fn from(mask: FeatureMask) -> Self {
        mask.features().map(|f| f.name().to_string()).collect()
    }
}

impl TryFrom<Vec<String>> for FeatureMask {
    type Error = Error;

    fn try_from(names: Vec<String>) -> Result<Self> {
        names.join(",").parse()
    }
}

/// The four features of one frame, raw or normalized against a baseline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureVector<T = f64> {
    pub ear: T,
    pub mar: T,
    pub puc: T,
    pub moe: T,
    pub normalized: bool,
    /// Features whose baseline std was below the floor during normalization.
    pub zero_std: FeatureMask,
}

impl<T: Scalar> FeatureVector<T> {
    pub fn raw(ear: T, mar: T, puc: T, moe: T) -> Self {
        Self {
            ear,
            mar,
            puc,
            moe,
            normalized: false,
            zero_std: FeatureMask::EMPTY,
        }
    }

    pub fn from_array(values: [T; 4], normalized: bool) -> Self {
        let [ear, mar, puc, moe] = values;
        Self {
            ear,
            mar,
            puc,
            moe,
            normalized,
            zero_std: FeatureMask::EMPTY,
        }
    }

    pub fn to_array(&self) -> [T; 4] {
        [self.ear, self.mar, self.puc, self.moe]
    }

    pub fn get(&self, feature: Feature) -> T {
        self.to_array()[feature as usize]
    }

    /// Values of the masked features, in feature order.
    pub fn project(&self, mask: FeatureMask) -> Vec<T> {
        mask.features().map(|f| self.get(f)).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

fn checked_ratio<T: Scalar>(num: T, den: T, what: &'static str) -> Result<T> {
    if !(den >= T::lit(DEGENERATE_EPS)) {
        return Err(Error::DegenerateGeometry(what));
    }
    Ok(num / den)
}

pub fn compute_ear<T: Scalar>(eye: &EyeLandmarks<T>) -> Result<T> {
    let [p1, p2, p3, p4, p5, p6] = eye.p;
    let vertical = p2.distance(&p6) + p3.distance(&p5);
    checked_ratio(vertical, T::lit(2.0) * p1.distance(&p4), "eye width")
}

pub fn compute_mar<T: Scalar>(mouth: &MouthLandmarks<T>) -> Result<T> {
    let vertical: T = mouth.pairs.iter().map(|(u, l)| u.distance(l)).sum();
    checked_ratio(
        vertical,
        T::lit(3.0) * mouth.a.distance(&mouth.b),
        "mouth width",
    )
}

pub fn compute_puc<T: Scalar>(eye: &EyeLandmarks<T>) -> Result<T> {
    let p = &eye.p;
    let pi = T::lit(std::f64::consts::PI);
    let radius = p[1].distance(&p[4]) / T::lit(2.0);
    let area = radius * radius * pi;
    let perimeter: T = (0..6).map(|i| p[i].distance(&p[(i + 1) % 6])).sum();
    if !(perimeter >= T::lit(DEGENERATE_EPS)) {
        return Err(Error::DegenerateGeometry("eye perimeter"));
    }
    Ok(T::lit(4.0) * pi * area / (perimeter * perimeter))
}

pub fn compute_moe<T: Scalar>(ear: T, mar: T) -> Result<T> {
    checked_ratio(mar, ear, "eye aspect ratio")
}

fn both_eyes<T: Scalar>(
    frame: &LandmarkFrame<T>,
    f: impl Fn(&EyeLandmarks<T>) -> Result<T>,
) -> Result<T> {
    let left = f(&extract_eye_landmarks(frame, EyeSide::Left)?)?;
    let right = f(&extract_eye_landmarks(frame, EyeSide::Right)?)?;
    Ok((left + right) / T::lit(2.0))
}

pub fn compute_frame_ear<T: Scalar>(frame: &LandmarkFrame<T>) -> Result<T> {
    both_eyes(frame, compute_ear)
}

pub fn compute_frame_puc<T: Scalar>(frame: &LandmarkFrame<T>) -> Result<T> {
    both_eyes(frame, compute_puc)
}

/// Raw feature vector for a face frame. Any error marks the frame
/// feature-invalid; callers skip such frames rather than imputing values.
pub fn compute_features<T: Scalar>(frame: &LandmarkFrame<T>) -> Result<FeatureVector<T>> {
    let ear = compute_frame_ear(frame)?;
    let mar = compute_mar(&extract_mouth_landmarks(frame)?)?;
    let puc = compute_frame_puc(frame)?;
    let moe = compute_moe(ear, mar)?;
    Ok(FeatureVector::raw(ear, mar, puc, moe))
}

/// Per-feature mean and population standard deviation of a subject's
/// calibration frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineStats<T = f64> {
    pub subject_id: String,
    pub mean: [T; 4],
    pub std: [T; 4],
    pub n_frames: usize,
}

/// Fits a baseline from the first [`BASELINE_FRAMES`] of `frames`, which must
/// already be feature-valid raw vectors in time order.
pub fn fit_baseline<T: Scalar>(
    frames: &[FeatureVector<T>],
    subject_id: &str,
    min_frames: usize,
) -> Result<BaselineStats<T>> {
    if frames.len() < min_frames.max(1) {
        return Err(Error::InsufficientBaseline {
            found: frames.len(),
            required: min_frames.max(1),
        });
    }
    if frames.iter().any(|v| v.normalized) {
        return Err(Error::AlreadyNormalized);
    }
    let used = &frames[..frames.len().min(BASELINE_FRAMES)];
    let n = T::of_usize(used.len());
    let mut mean = [T::zero(); 4];
    for v in used {
        for (m, x) in mean.iter_mut().zip(v.to_array()) {
            *m = *m + x;
        }
    }
    mean.iter_mut().for_each(|m| *m = *m / n);
    let mut std = [T::zero(); 4];
    for v in used {
        for ((s, x), m) in std.iter_mut().zip(v.to_array()).zip(mean) {
            *s = *s + (x - m) * (x - m);
        }
    }
    std.iter_mut().for_each(|s| *s = (*s / n).sqrt());
    if mean.iter().chain(std.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("baseline statistics"));
    }
    Ok(BaselineStats {
        subject_id: subject_id.to_string(),
        mean,
        std,
        n_frames: used.len(),
    })
}

impl<T: Scalar> BaselineStats<T> {
    fn scale(&self, i: usize) -> (T, bool) {
        let floor = T::lit(STD_EPS);
        let s = self.std[i];
        if s < floor {
            (floor, true)
        } else {
            (s, false)
        }
    }

    /// z-scores `v` against this baseline, flooring each std at [`STD_EPS`].
    pub fn normalize(&self, v: &FeatureVector<T>) -> Result<FeatureVector<T>> {
        if v.normalized {
            return Err(Error::AlreadyNormalized);
        }
        let raw = v.to_array();
        let mut out = [T::zero(); 4];
        let mut zero_std = FeatureMask::EMPTY;
        for (i, feature) in Feature::ALL.into_iter().enumerate() {
            let (s, floored) = self.scale(i);
            if floored {
                zero_std.insert(feature);
            }
            out[i] = (raw[i] - self.mean[i]) / s;
        }
        let mut n = FeatureVector::from_array(out, true);
        n.zero_std = zero_std;
        Ok(n)
    }

    pub fn denormalize(&self, v: &FeatureVector<T>) -> Result<FeatureVector<T>> {
        if !v.normalized {
            return Err(Error::NotNormalized);
        }
        let z = v.to_array();
        let mut out = [T::zero(); 4];
        for i in 0..4 {
            out[i] = z[i] * self.scale(i).0 + self.mean[i];
        }
        Ok(FeatureVector::from_array(out, false))
    }
}

/// Free-function form of [`BaselineStats::normalize`].
pub fn normalize<T: Scalar>(
    v: &FeatureVector<T>,
    b: &BaselineStats<T>,
) -> Result<FeatureVector<T>> {
    b.normalize(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::Point2;

    fn pt(x: f64, y: f64) -> Point2 {
        Point2::new(x, y)
    }

    fn hexagon_eye() -> EyeLandmarks {
        EyeLandmarks {
            p: [
                pt(0.0, 0.0),
                pt(1.0, 1.0),
                pt(3.0, 1.0),
                pt(4.0, 0.0),
                pt(3.0, -1.0),
                pt(1.0, -1.0),
            ],
        }
    }

    fn example_mouth() -> MouthLandmarks {
        MouthLandmarks {
            a: pt(0.0, 0.0),
            b: pt(3.0, 0.0),
            pairs: [
                (pt(1.0, 1.0), pt(1.0, -1.0)),
                (pt(1.5, 1.2), pt(1.5, -1.2)),
                (pt(2.0, 1.0), pt(2.0, -1.0)),
            ],
        }
    }

    #[test]
    fn ear_of_reference_hexagon() {
        // (2 + 2) / (2 * 4)
        assert!((compute_ear(&hexagon_eye()).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn closed_eye_has_zero_ear() {
        let mut eye = hexagon_eye();
        eye.p[1] = eye.p[5];
        eye.p[2] = eye.p[4];
        assert_eq!(compute_ear(&eye).unwrap(), 0.0);
    }

    #[test]
    fn ear_is_scale_invariant() {
        let mut eye = hexagon_eye();
        let base = compute_ear(&eye).unwrap();
        eye.p.iter_mut().for_each(|p| *p = pt(p.x * 3.0, p.y * 3.0));
        assert!((compute_ear(&eye).unwrap() - base).abs() < 1e-15);
    }

    #[test]
    fn degenerate_eye_width_is_an_error() {
        let mut eye = hexagon_eye();
        eye.p[3] = eye.p[0];
        assert!(matches!(
            compute_ear(&eye),
            Err(Error::DegenerateGeometry(_))
        ));
    }

    #[test]
    fn mar_of_reference_mouth() {
        // (2 + 2.4 + 2) / 9
        let mar = compute_mar(&example_mouth()).unwrap();
        assert!((mar - 6.4 / 9.0).abs() < 1e-15);
    }

    #[test]
    fn closed_mouth_and_rotation() {
        let mut closed = example_mouth();
        for pair in closed.pairs.iter_mut() {
            pair.1 = pair.0;
        }
        assert_eq!(compute_mar(&closed).unwrap(), 0.0);

        let (s, c) = 37f64.to_radians().sin_cos();
        let rot = |p: Point2| pt(c * p.x - s * p.y, s * p.x + c * p.y);
        let m = example_mouth();
        let rotated = MouthLandmarks {
            a: rot(m.a),
            b: rot(m.b),
            pairs: m.pairs.map(|(u, l)| (rot(u), rot(l))),
        };
        let d = compute_mar(&rotated).unwrap() - compute_mar(&m).unwrap();
        assert!(d.abs() < 1e-12);
    }

    #[test]
    fn degenerate_mouth_width_is_an_error() {
        let mut m = example_mouth();
        m.b = m.a;
        assert!(compute_mar(&m).is_err());
    }

    #[test]
    fn puc_of_reference_hexagon() {
        // Area = 2 pi, Perimeter = 4 + 4 sqrt 2.
        let expected = 8.0 * std::f64::consts::PI.powi(2) / (4.0 + 4.0 * 2f64.sqrt()).powi(2);
        let puc = compute_puc(&hexagon_eye()).unwrap();
        assert!((puc - expected).abs() < 1e-14);
        assert!((puc - 0.846678).abs() < 1e-6);
    }

    #[test]
    fn puc_of_regular_hexagon_exceeds_one() {
        for r in [0.5, 1.0, 17.0] {
            let p: Vec<Point2> = (0..6)
                .map(|i| {
                    let a = std::f64::consts::PI / 3.0 * i as f64;
                    pt(r * a.cos(), r * a.sin())
                })
                .collect();
            // p1 at angle 0, p2 at 60 deg, p5 at 240 deg: diametrically opposite.
            let eye = EyeLandmarks {
                p: [p[0], p[1], p[2], p[3], p[4], p[5]],
            };
            let puc = compute_puc(&eye).unwrap();
            assert!((puc - std::f64::consts::PI.powi(2) / 9.0).abs() < 1e-12);
        }
    }

    #[test]
    fn puc_in_f32() {
        let eye = EyeLandmarks {
            p: hexagon_eye().p.map(|p| Point2::new(p.x as f32, p.y as f32)),
        };
        assert!((compute_puc(&eye).unwrap() - 0.846678f32).abs() < 1e-5);
        assert!((compute_ear(&eye).unwrap() - 0.5f32).abs() < 1e-7);
    }

    #[test]
    fn moe_ratio() {
        assert_eq!(compute_moe(0.25, 0.5).unwrap(), 2.0);
        assert_eq!(compute_moe(0.25, 0.0).unwrap(), 0.0);
        assert!(compute_moe(0.0, 0.5).is_err());
        // Table-level magnitudes: alert MAR ~0.98 over EAR ~0.28.
        assert!((compute_moe(0.28f64, 0.98).unwrap() - 3.5).abs() < 1e-12);
    }

    #[test]
    fn mask_enumeration_order() {
        let names: Vec<String> = FeatureMask::all_combinations()
            .iter()
            .map(|m| m.to_string())
            .collect();
        assert_eq!(
            names,
            [
                "EAR",
                "MAR",
                "PUC",
                "MOE",
                "EAR+MAR",
                "EAR+PUC",
                "EAR+MOE",
                "MAR+PUC",
                "MAR+MOE",
                "PUC+MOE",
                "EAR+MAR+PUC",
                "EAR+MAR+MOE",
                "EAR+PUC+MOE",
                "MAR+PUC+MOE",
                "EAR+MAR+PUC+MOE"
            ]
        );
    }

    #[test]
    fn mask_parsing() {
        let m: FeatureMask = "mar, MOE".parse().unwrap();
        assert_eq!(m, FeatureMask::from_features(&[Feature::Mar, Feature::Moe]));
        assert_eq!(
            "EAR+MAR+PUC+MOE".parse::<FeatureMask>().unwrap(),
            FeatureMask::ALL
        );
        assert!("".parse::<FeatureMask>().is_err());
        assert!("EAR,XYZ".parse::<FeatureMask>().is_err());
        assert_eq!(serde_json::to_string(&m).unwrap(), r#"["MAR","MOE"]"#);
    }

    fn vec4(ear: f64, mar: f64, puc: f64, moe: f64) -> FeatureVector {
        FeatureVector::raw(ear, mar, puc, moe)
    }

    #[test]
    fn baseline_of_constant_frames() {
        let v = vec4(0.3, 0.4, 0.5, 4.0 / 3.0);
        let b = fit_baseline(&vec![v; 30], "s1", 15).unwrap();
        for i in 0..4 {
            assert!((b.mean[i] - v.to_array()[i]).abs() < 1e-12);
            assert!(b.std[i] < 1e-12);
        }
        assert_eq!(b.n_frames, 30);
        assert_eq!(b.normalize(&v).unwrap().zero_std, FeatureMask::ALL);
    }

    #[test]
    fn baseline_of_two_point_distribution() {
        let frames: Vec<_> = (0..30)
            .map(|i| vec4(if i % 2 == 0 { 0.2 } else { 0.4 }, 0.5, 0.5, 1.0))
            .collect();
        let b = fit_baseline(&frames, "s1", 15).unwrap();
        assert!((b.mean[0] - 0.3).abs() < 1e-15);
        assert!((b.std[0] - 0.1).abs() < 1e-15);
    }

    #[test]
    fn baseline_uses_only_first_thirty_frames() {
        let mut frames = vec![vec4(1.0, 1.0, 1.0, 1.0); 30];
        frames.extend(vec![vec4(9.0, 9.0, 9.0, 9.0); 10]);
        let b = fit_baseline(&frames, "s", 15).unwrap();
        assert_eq!(b.mean, [1.0; 4]);
        assert_eq!(b.n_frames, 30);
    }

    #[test]
    fn short_baseline_is_rejected() {
        let frames = vec![vec4(1.0, 1.0, 1.0, 1.0); 12];
        assert!(matches!(
            fit_baseline(&frames, "s", 15),
            Err(Error::InsufficientBaseline {
                found: 12,
                required: 15
            })
        ));
        // Between the minimum and 30 frames is accepted.
        assert_eq!(fit_baseline(&frames, "s", 10).unwrap().n_frames, 12);
    }

    fn spread_baseline() -> BaselineStats {
        BaselineStats {
            subject_id: "s".into(),
            mean: [0.3, 0.4, 0.5, 1.5],
            std: [0.05, 0.1, 0.02, 0.3],
            n_frames: 30,
        }
    }

    #[test]
    fn normalizing_the_mean_gives_zero() {
        let b = spread_baseline();
        let z = b
            .normalize(&FeatureVector::from_array(b.mean, false))
            .unwrap();
        assert_eq!(z.to_array(), [0.0; 4]);
        assert!(z.normalized);
    }

    #[test]
    fn two_std_above_mean_is_two() {
        let b = spread_baseline();
        let z = b.normalize(&vec4(0.3 + 2.0 * 0.05, 0.4, 0.5, 1.5)).unwrap();
        assert!((z.ear - 2.0).abs() < 1e-12);
    }

    #[test]
    fn zero_std_is_floored_and_flagged() {
        let mut b = spread_baseline();
        b.std[0] = 0.0;
        let z = b.normalize(&vec4(0.4, 0.4, 0.5, 1.5)).unwrap();
        assert!((z.ear - 1e5).abs() < 1e-6);
        assert!(z.zero_std.contains(Feature::Ear));
        assert!(!z.zero_std.contains(Feature::Mar));
    }

    #[test]
    fn double_normalization_is_rejected() {
        let b = spread_baseline();
        let z = b.normalize(&vec4(0.4, 0.4, 0.5, 1.5)).unwrap();
        assert!(matches!(b.normalize(&z), Err(Error::AlreadyNormalized)));
        assert!(matches!(
            b.denormalize(&vec4(0.4, 0.4, 0.5, 1.5)),
            Err(Error::NotNormalized)
        ));
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn denormalize_inverts_normalize(
                raw in prop::array::uniform4(-5.0f64..5.0),
                mean in prop::array::uniform4(-1.0f64..1.0),
                std in prop::array::uniform4(0.01f64..2.0),
            ) {
                let b = BaselineStats { subject_id: "p".into(), mean, std, n_frames: 30 };
                let v = FeatureVector::from_array(raw, false);
                let back = b.denormalize(&b.normalize(&v).unwrap()).unwrap();
                for (x, y) in back.to_array().iter().zip(raw) {
                    prop_assert!((x - y).abs() <= 1e-12 * y.abs().max(1.0));
                }
            }
        }
    }
}
