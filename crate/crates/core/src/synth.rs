//! Deterministic synthetic landmark sessions with ground-truth labels.
//!
//! A session is a 68-point template face whose eye and inner-lip landmarks are
//! placed so the eye and mouth aspect ratios hit a per-frame schedule exactly,
//! then moved by a slow head sway (a similarity transform, which leaves the
//! ratios unchanged) and perturbed by Gaussian point jitter.
//!
//! Drowsiness is encoded along the directions observed in real recordings:
//! eye openness scaled down by `drowsy_ear_scale`, mouth openness scaled up by
//! `drowsy_mar_scale`, and yawns (drowsy sessions only). Both states blink and
//! show per-frame mouth variability, which is what keeps MAR alone a weak
//! signal.
//!
//! All randomness comes from [`SplitMix64`] seeded by `profile.seed`; the
//! subject's appearance depends on the seed only, so the alert and drowsy
//! sessions generated from one profile show the same face.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SplitMix64;
use crate::types::{AlertnessLabel, LandmarkFrame, Point2, SessionMeta, LANDMARK_COUNT};

/// Eye width and inner-mouth width of the template, in template units.
const EYE_WIDTH: f64 = 28.0;
const MOUTH_WIDTH: f64 = 36.0;
const LEFT_EYE_CENTER: (f64, f64) = (-30.0, -25.0);
const RIGHT_EYE_CENTER: (f64, f64) = (30.0, -25.0);
const MOUTH_CENTER: (f64, f64) = (0.0, 45.0);
/// Peak yawn mouth openness, as a multiple of the base openness.
const YAWN_PEAK: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FaceGap {
    pub start_ms: u64,
    pub duration_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthProfile {
    pub seed: u64,
    pub fps: f64,
    pub duration_s: f64,
    /// Target eye aspect ratio of the alert state.
    pub base_eye_openness: f64,
    /// Target mouth aspect ratio of the alert state.
    pub base_mouth_openness: f64,
    pub blink_rate_hz: f64,
    pub blink_duration_ms: f64,
    /// Fraction of eye openness lost at the bottom of a blink, in [0, 1).
    pub blink_depth: f64,
    /// Yawn rate of drowsy sessions.
    pub yawn_rate_per_min: f64,
    pub yawn_duration_ms: f64,
    pub drowsy_ear_scale: f64,
    pub drowsy_mar_scale: f64,
    /// Standard deviation of the Gaussian noise added to every coordinate.
    pub jitter_px: f64,
    /// Relative standard deviation of per-frame mouth openness.
    pub mouth_variability: f64,
    /// Intervals reported with `face_present = false`.
    pub face_gaps: Vec<FaceGap>,
}

impl Default for SynthProfile {
    fn default() -> Self {
        Self {
            seed: 42,
            fps: 24.0,
            duration_s: 120.0,
            base_eye_openness: 0.30,
            base_mouth_openness: 0.40,
            blink_rate_hz: 0.25,
            blink_duration_ms: 150.0,
            blink_depth: 0.5,
            yawn_rate_per_min: 1.0,
            yawn_duration_ms: 5000.0,
            drowsy_ear_scale: 0.75,
            drowsy_mar_scale: 1.2,
            jitter_px: 0.4,
            mouth_variability: 0.3,
            face_gaps: Vec::new(),
        }
    }
}

impl SynthProfile {
    /// Profile with every source of variation switched off.
    pub fn still(seed: u64) -> Self {
        Self {
            seed,
            blink_rate_hz: 0.0,
            yawn_rate_per_min: 0.0,
            jitter_px: 0.0,
            mouth_variability: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidProfile(msg));
        if !(self.fps > 0.0 && self.fps.is_finite()) {
            return bad(format!("fps must be positive, got {}", self.fps));
        }
        let non_negative = [
            ("duration_s", self.duration_s),
            ("base_eye_openness", self.base_eye_openness),
            ("base_mouth_openness", self.base_mouth_openness),
            ("blink_rate_hz", self.blink_rate_hz),
            ("blink_duration_ms", self.blink_duration_ms),
            ("yawn_rate_per_min", self.yawn_rate_per_min),
            ("yawn_duration_ms", self.yawn_duration_ms),
            ("jitter_px", self.jitter_px),
            ("mouth_variability", self.mouth_variability),
        ];
        for (name, value) in non_negative {
            if !(value >= 0.0 && value.is_finite()) {
                return bad(format!("{name} must be non-negative, got {value}"));
            }
        }
        for (name, value) in [
            ("drowsy_ear_scale", self.drowsy_ear_scale),
            ("drowsy_mar_scale", self.drowsy_mar_scale),
        ] {
            if !(value > 0.0 && value.is_finite()) {
                return bad(format!("{name} must be positive, got {value}"));
            }
        }
        if !(0.0..1.0).contains(&self.blink_depth) {
            return bad(format!(
                "blink_depth must lie in [0, 1), got {}",
                self.blink_depth
            ));
        }
        if self.base_eye_openness <= 0.0 {
            return bad("base_eye_openness must be positive".into());
        }
        Ok(())
    }
}

/// Where the face sits in the image, derived from the profile seed.
#[derive(Debug, Clone, Copy)]
struct Placement {
    center: (f64, f64),
    scale: f64,
    roll: f64,
    sway_amp: f64,
    sway_period_s: f64,
    roll_amp: f64,
}

impl Placement {
    fn from_seed(rng: &mut SplitMix64) -> Self {
        Self {
            center: (rng.uniform(280.0, 360.0), rng.uniform(210.0, 270.0)),
            scale: rng.uniform(1.2, 1.8),
            roll: rng.uniform(-0.15, 0.15),
            sway_amp: rng.uniform(2.0, 8.0),
            sway_period_s: rng.uniform(6.0, 14.0),
            roll_amp: rng.uniform(0.0, 0.05),
        }
    }

    fn transform(&self, t_s: f64) -> impl Fn(Point2) -> Point2 {
        let phase = 2.0 * PI * t_s / self.sway_period_s;
        let (s, c) = (self.roll + self.roll_amp * phase.sin()).sin_cos();
        let k = self.scale;
        let dx = self.center.0 + self.sway_amp * phase.sin();
        let dy = self.center.1 + 0.5 * self.sway_amp * (0.7 * phase).cos();
        move |p| Point2::new(k * (c * p.x - s * p.y) + dx, k * (s * p.x + c * p.y) + dy)
    }
}

fn eye_points(center: (f64, f64), ear: f64) -> [Point2; 6] {
    let (cx, cy) = center;
    let half = EYE_WIDTH / 2.0;
    let third = EYE_WIDTH / 6.0;
    // EAR = 2h / width for this hexagon.
    let h = ear * EYE_WIDTH / 2.0;
    [
        Point2::new(cx - half, cy),
        Point2::new(cx - third, cy - h),
        Point2::new(cx + third, cy - h),
        Point2::new(cx + half, cy),
        Point2::new(cx + third, cy + h),
        Point2::new(cx - third, cy + h),
    ]
}

/// Template face with the given eye and mouth aspect ratios, in face units.
pub fn template_face(ear: f64, mar: f64) -> Vec<Point2> {
    let mut pts = Vec::with_capacity(LANDMARK_COUNT);
    // Jaw 0-16, from the left ear round the chin.
    for i in 0..17 {
        let theta = PI - i as f64 * PI / 16.0;
        pts.push(Point2::new(75.0 * theta.cos(), -10.0 + 85.0 * theta.sin()));
    }
    // Brows 17-26.
    for i in 0..5 {
        let x = -55.0 + 10.0 * i as f64;
        pts.push(Point2::new(x, -45.0 - 4.0 * (PI * i as f64 / 4.0).sin()));
    }
    for i in 0..5 {
        let x = 15.0 + 10.0 * i as f64;
        pts.push(Point2::new(x, -45.0 - 4.0 * (PI * i as f64 / 4.0).sin()));
    }
    // Nose bridge 27-30 and base 31-35.
    for i in 0..4 {
        pts.push(Point2::new(0.0, -30.0 + 11.0 * i as f64));
    }
    for i in 0..5 {
        let x = -12.0 + 6.0 * i as f64;
        pts.push(Point2::new(x, 15.0 + 2.0 * (1.0 - (x / 12.0).powi(2))));
    }
    pts.extend(eye_points(LEFT_EYE_CENTER, ear));
    pts.extend(eye_points(RIGHT_EYE_CENTER, ear));

    // MAR = 2v / width for the inner lip below.
    let v = mar * MOUTH_WIDTH / 2.0;
    let (mx, my) = MOUTH_CENTER;
    // Outer lip 48-59.
    for i in 0..12 {
        let a = PI + i as f64 * PI / 6.0;
        pts.push(Point2::new(mx + 30.0 * a.cos(), my + (10.0 + v) * a.sin()));
    }
    // Inner lip 60-67: A, upper x3, B, lower x3 (right to left).
    let q = MOUTH_WIDTH / 4.0;
    pts.push(Point2::new(mx - 2.0 * q, my));
    pts.push(Point2::new(mx - q, my - v));
    pts.push(Point2::new(mx, my - v));
    pts.push(Point2::new(mx + q, my - v));
    pts.push(Point2::new(mx + 2.0 * q, my));
    pts.push(Point2::new(mx + q, my + v));
    pts.push(Point2::new(mx, my + v));
    pts.push(Point2::new(mx - q, my + v));
    debug_assert_eq!(pts.len(), LANDMARK_COUNT);
    pts
}

/// Start times (seconds) of events from a Poisson process over `[0, duration)`.
fn poisson_times(rng: &mut SplitMix64, rate_hz: f64, duration_s: f64) -> Vec<f64> {
    let mut times = Vec::new();
    if rate_hz <= 0.0 {
        return times;
    }
    let mut t = 0.0;
    loop {
        t += -(1.0 - rng.next_f64()).ln() / rate_hz;
        if t >= duration_s {
            return times;
        }
        times.push(t);
    }
}

/// Raised-sine envelope in `[0, 1]` of the event covering `t`, if any.
fn envelope(events: &[f64], duration_s: f64, t: f64) -> f64 {
    if duration_s <= 0.0 {
        return 0.0;
    }
    let idx = events.partition_point(|&start| start <= t);
    events[..idx]
        .iter()
        .rev()
        .take_while(|&&start| t - start < duration_s)
        .map(|&start| (PI * (t - start) / duration_s).sin())
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone)]
pub struct SyntheticSession {
    pub frames: Vec<LandmarkFrame>,
    pub label: AlertnessLabel,
}

pub fn generate_session(profile: &SynthProfile, label: AlertnessLabel) -> Result<SyntheticSession> {
    profile.validate()?;
    let mut root = SplitMix64::new(profile.seed);
    let placement = Placement::from_seed(&mut root);
    // Separate streams per label so both sessions of a subject differ in noise
    // but share the face.
    let mut stream = SplitMix64::new(
        root.next_u64() ^ (label.as_u8() as u64 + 1).wrapping_mul(0xA076_1D64_78BD_642F),
    );
    let mut events_rng = stream.fork();
    let mut noise = stream.fork();

    let drowsy = label == AlertnessLabel::Drowsy;
    let blinks = poisson_times(&mut events_rng, profile.blink_rate_hz, profile.duration_s);
    let yawns = if drowsy {
        poisson_times(
            &mut events_rng,
            profile.yawn_rate_per_min / 60.0,
            profile.duration_s,
        )
    } else {
        Vec::new()
    };
    let (ear_scale, mar_scale) = if drowsy {
        (profile.drowsy_ear_scale, profile.drowsy_mar_scale)
    } else {
        (1.0, 1.0)
    };

    let n_frames = (profile.duration_s * profile.fps).floor() as u64;
    let mut frames = Vec::with_capacity(n_frames as usize);
    for i in 0..n_frames {
        let t_ms = (i as f64 * 1000.0 / profile.fps).round() as u64;
        let t = t_ms as f64 / 1000.0;
        let in_gap = profile
            .face_gaps
            .iter()
            .any(|g| t_ms >= g.start_ms && t_ms < g.start_ms + g.duration_ms);
        let mouth_noise = noise.gaussian();
        if in_gap {
            frames.push(LandmarkFrame::without_face(i, t_ms));
            continue;
        }

        let blink = envelope(&blinks, profile.blink_duration_ms / 1000.0, t);
        let ear = profile.base_eye_openness * ear_scale * (1.0 - profile.blink_depth * blink);

        let base_mouth = profile.base_mouth_openness * mar_scale;
        let mut mar = (base_mouth * (1.0 + profile.mouth_variability * mouth_noise)).max(0.0);
        let yawn = envelope(&yawns, profile.yawn_duration_ms / 1000.0, t);
        if yawn > 0.0 {
            mar = mar.max(YAWN_PEAK * profile.base_mouth_openness * yawn);
        }

        let place = placement.transform(t);
        let points = template_face(ear, mar)
            .into_iter()
            .map(|p| {
                let q = place(p);
                if profile.jitter_px > 0.0 {
                    Point2::new(
                        q.x + profile.jitter_px * noise.gaussian(),
                        q.y + profile.jitter_px * noise.gaussian(),
                    )
                } else {
                    q
                }
            })
            .collect();
        let mut frame = LandmarkFrame::with_face(i, t_ms, points);
        frame.confidence = Some(1.0);
        frames.push(frame);
    }
    Ok(SyntheticSession { frames, label })
}

/// One generated session with the metadata needed to ingest it.
#[derive(Debug, Clone)]
pub struct CorpusSession {
    pub meta: SessionMeta,
    pub profile: SynthProfile,
    pub session: SyntheticSession,
}

/// Generates one alert and one drowsy session for each of `subjects`
/// subjects. Subjects differ in seed (face placement and noise) and in their
/// base eye and mouth openness, drawn around `base`'s values.
pub fn generate_corpus(base: &SynthProfile, subjects: usize) -> Result<Vec<CorpusSession>> {
    let mut rng = SplitMix64::new(base.seed);
    let mut out = Vec::with_capacity(subjects * 2);
    for s in 0..subjects {
        let profile = SynthProfile {
            seed: rng.next_u64(),
            base_eye_openness: base.base_eye_openness * rng.uniform(0.8, 1.15),
            base_mouth_openness: base.base_mouth_openness * rng.uniform(0.75, 1.25),
            ..base.clone()
        };
        let subject_id = format!("subj{s:03}");
        for label in [AlertnessLabel::Alert, AlertnessLabel::Drowsy] {
            let tag = match label {
                AlertnessLabel::Alert => "alert",
                AlertnessLabel::Drowsy => "drowsy",
            };
            let session_id = format!("{subject_id}_{tag}");
            out.push(CorpusSession {
                meta: SessionMeta {
                    subject_id: subject_id.clone(),
                    session_id: session_id.clone(),
                    label: Some(label),
                    fps_nominal: profile.fps,
                    source_path: format!("{session_id}.jsonl"),
                },
                session: generate_session(&profile, label)?,
                profile: profile.clone(),
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{compute_features, compute_frame_ear};

    fn short(profile: SynthProfile) -> SynthProfile {
        SynthProfile {
            duration_s: 20.0,
            ..profile
        }
    }

    #[test]
    fn template_hits_requested_ratios() {
        let frame = LandmarkFrame::with_face(0, 0, template_face(0.27, 0.55));
        let f = compute_features(&frame).unwrap();
        assert!((f.ear - 0.27).abs() < 1e-12);
        assert!((f.mar - 0.55).abs() < 1e-12);
    }

    #[test]
    fn still_alert_session_has_exact_ear() {
        let s = generate_session(&short(SynthProfile::still(9)), AlertnessLabel::Alert).unwrap();
        assert_eq!(s.frames.len(), 480);
        for frame in &s.frames {
            frame.validate().unwrap();
            let ear = compute_frame_ear(frame).unwrap();
            assert!((ear - 0.30).abs() < 1e-9, "ear {ear}");
        }
    }

    #[test]
    fn same_seed_is_bitwise_identical() {
        let p = short(SynthProfile::default());
        let a = generate_session(&p, AlertnessLabel::Drowsy).unwrap();
        let b = generate_session(&p, AlertnessLabel::Drowsy).unwrap();
        assert_eq!(a.frames, b.frames);
        let c = generate_session(&SynthProfile { seed: 43, ..p }, AlertnessLabel::Drowsy).unwrap();
        assert_ne!(a.frames, c.frames);
    }

    #[test]
    fn drowsy_to_alert_ear_ratio_tracks_scale() {
        let p = SynthProfile {
            blink_rate_hz: 0.0,
            ..SynthProfile::default()
        };
        let mean_ear = |label| {
            let s = generate_session(&p, label).unwrap();
            let ears: Vec<f64> = s
                .frames
                .iter()
                .map(|f| compute_frame_ear(f).unwrap())
                .collect();
            ears.iter().sum::<f64>() / ears.len() as f64
        };
        let ratio = mean_ear(AlertnessLabel::Drowsy) / mean_ear(AlertnessLabel::Alert);
        assert!((ratio - 0.75).abs() < 0.01, "ratio {ratio}");
    }

    #[test]
    fn gaps_produce_absent_frames() {
        let p = SynthProfile {
            face_gaps: vec![FaceGap {
                start_ms: 5_000,
                duration_ms: 3_000,
            }],
            ..short(SynthProfile::default())
        };
        let s = generate_session(&p, AlertnessLabel::Alert).unwrap();
        for f in &s.frames {
            let in_gap = (5_000..8_000).contains(&f.t_ms);
            assert_eq!(f.face_present, !in_gap);
            f.validate().unwrap();
        }
    }

    #[test]
    fn timestamps_are_non_decreasing() {
        let s = generate_session(&short(SynthProfile::default()), AlertnessLabel::Alert).unwrap();
        assert!(s.frames.windows(2).all(|w| w[0].t_ms <= w[1].t_ms));
    }

    #[test]
    fn invalid_profiles_are_rejected() {
        for p in [
            SynthProfile {
                fps: 0.0,
                ..Default::default()
            },
            SynthProfile {
                jitter_px: -1.0,
                ..Default::default()
            },
            SynthProfile {
                drowsy_ear_scale: 0.0,
                ..Default::default()
            },
        ] {
            assert!(matches!(
                generate_session(&p, AlertnessLabel::Alert),
                Err(Error::InvalidProfile(_))
            ));
        }
    }

    #[test]
    fn corpus_pairs_sessions_per_subject() {
        let base = SynthProfile {
            duration_s: 5.0,
            ..Default::default()
        };
        let corpus = generate_corpus(&base, 3).unwrap();
        assert_eq!(corpus.len(), 6);
        assert_eq!(corpus[0].meta.subject_id, corpus[1].meta.subject_id);
        assert_eq!(corpus[0].profile.seed, corpus[1].profile.seed);
        assert_ne!(corpus[0].profile.seed, corpus[2].profile.seed);
    }
}
