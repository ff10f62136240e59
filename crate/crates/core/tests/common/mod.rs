#![allow(dead_code)]

use alertness::synth::{generate_session, SynthProfile};
use alertness::{AlertnessLabel, LandmarkFrame};

/// Appends `segments` back to back on one clock, continuing frame indices
/// and timestamps where the previous segment stopped.
pub fn concat(segments: &[Vec<LandmarkFrame>], period_ms: u64) -> Vec<LandmarkFrame> {
    let mut out: Vec<LandmarkFrame> = Vec::new();
    for seg in segments {
        let (index0, t0) = match out.last() {
            Some(f) => (f.frame_index + 1, f.t_ms + period_ms),
            None => (0, 0),
        };
        out.extend(seg.iter().map(|f| LandmarkFrame {
            frame_index: f.frame_index + index0,
            t_ms: f.t_ms + t0,
            ..f.clone()
        }));
    }
    out
}

pub fn segment(profile: &SynthProfile, label: AlertnessLabel, seconds: f64) -> Vec<LandmarkFrame> {
    let p = SynthProfile {
        duration_s: seconds,
        ..profile.clone()
    };
    generate_session(&p, label).unwrap().frames
}

/// Low-noise profile whose drowsy windows clear the deviation threshold.
pub fn quiet_profile(seed: u64) -> SynthProfile {
    SynthProfile {
        seed,
        mouth_variability: 0.1,
        jitter_px: 0.2,
        ..SynthProfile::default()
    }
}

/// 24 fps frame period, rounded down to whole milliseconds.
pub const PERIOD_MS: u64 = 41;
