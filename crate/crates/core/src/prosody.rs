//! Prosody descriptors: F0 tilt per voiced segment, boundary energies,
//! voiced-segment rate and contour/duration statistics.

use crate::corpus::{AudioClip, RecordingSession};
use crate::dsp;
use crate::phonation::{frame_log_energy, insert_functionals};
use crate::pitch::{self, F0Contour, PitchAnalysis, PitchConfig, VoicedSegment};
use crate::FeatureMap;

pub const SERIES: [&str; 6] = ["f0", "tilt", "tilt_mse", "voiced_duration", "gap_duration", "log_energy"];
pub const SCALARS: [&str; 3] = ["voiced_rate", "energy_first", "energy_last"];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tilt {
    /// Hz per second.
    pub slope: f64,
    /// Mean squared residual of the line fit, Hz².
    pub mse: f64,
}

/// Least-squares F0 slope over a voiced segment; `None` below three frames.
pub fn segment_tilt(contour: &F0Contour, segment: &VoicedSegment) -> Option<Tilt> {
    if segment.len() < 3 {
        return None;
    }
    let t: Vec<f64> = segment.frames().map(|i| contour.grid.center_time(i)).collect();
    let fit = dsp::linear_fit(&t, &contour.f0[segment.frames()]).ok()?;
    Some(Tilt {
        slope: fit.slope,
        mse: fit.mse,
    })
}

/// Mean frame log-energy of the first and the last voiced segment.
pub fn boundary_energies(clip: &AudioClip, contour: &F0Contour, min_frames: usize) -> Option<(f64, f64)> {
    let segments = pitch::voiced_segments(contour, min_frames);
    let energy = frame_log_energy(clip, contour);
    boundary_from(&energy, &segments)
}

fn boundary_from(energy: &[f64], segments: &[VoicedSegment]) -> Option<(f64, f64)> {
    let mean_of = |s: &VoicedSegment| dsp::mean(&energy[s.frames()]);
    Some((mean_of(segments.first()?), mean_of(segments.last()?)))
}

/// Voiced segments per second of clip.
pub fn voiced_rate(segments: &[VoicedSegment], clip_duration: f64) -> f64 {
    if clip_duration > 0.0 {
        segments.len() as f64 / clip_duration
    } else {
        0.0
    }
}

/// Pauses between consecutive voiced segments, in seconds.
pub fn gap_durations(contour: &F0Contour, segments: &[VoicedSegment]) -> Vec<f64> {
    let hop = contour.grid.hop_seconds();
    segments
        .windows(2)
        .map(|w| (w[1].start_frame - w[0].end_frame) as f64 * hop)
        .collect()
}

/// Prosody features of one analysed segment, keyed `pros.<segment>.*`.
pub fn segment_features(segment: &str, clip: &AudioClip, analysis: &PitchAnalysis) -> FeatureMap {
    let prefix = format!("pros.{segment}");
    let contour = &analysis.contour;
    let segments = &analysis.segments;
    let tilts: Vec<Tilt> = segments.iter().filter_map(|s| segment_tilt(contour, s)).collect();
    let energy = frame_log_energy(clip, contour);
    let series: [Vec<f64>; 6] = [
        contour.voiced_f0(),
        tilts.iter().map(|t| t.slope).collect(),
        tilts.iter().map(|t| t.mse).collect(),
        segments.iter().map(|s| s.duration).collect(),
        gap_durations(contour, segments),
        energy.clone(),
    ];
    let mut map = FeatureMap::new();
    for (name, s) in SERIES.iter().zip(&series) {
        insert_functionals(&mut map, &prefix, name, s);
    }
    let bounds = boundary_from(&energy, segments);
    map.insert(format!("{prefix}.voiced_rate"), Some(voiced_rate(segments, clip.duration())));
    map.insert(format!("{prefix}.energy_first"), bounds.map(|b| b.0));
    map.insert(format!("{prefix}.energy_last"), bounds.map(|b| b.1));
    map
}

pub(crate) fn missing_segment(segment: &str) -> FeatureMap {
    let prefix = format!("pros.{segment}");
    let mut map = FeatureMap::new();
    for s in SERIES {
        insert_functionals(&mut map, &prefix, s, &[]);
    }
    for s in SCALARS {
        map.insert(format!("{prefix}.{s}"), None);
    }
    map
}

/// Prosody features for every present segment of a session. Never fails.
pub fn prosody_feature_block(session: &RecordingSession, cfg: &PitchConfig) -> FeatureMap {
    let mut map = FeatureMap::new();
    for (kind, clip) in &session.segments {
        let seg = kind.as_str();
        match pitch::analyze(clip, cfg) {
            Ok(a) => map.extend(segment_features(seg, clip, &a)),
            Err(e) => {
                log::warn!("{}: {seg}: pitch analysis failed: {e}", session.session_id);
                map.extend(missing_segment(seg));
            }
        }
    }
    map
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::FrameGrid;

    fn contour(f0: Vec<f64>) -> F0Contour {
        let n = f0.len();
        F0Contour {
            voiced: f0.iter().map(|&f| f > 0.0).collect(),
            strength: vec![0.9; n],
            grid: FrameGrid::new(160 * (n - 1) + 640, 640, 160, 16000).unwrap(),
            f0,
            f0_min: 60.0,
            f0_max: 400.0,
        }
    }

    fn whole(c: &F0Contour) -> VoicedSegment {
        pitch::voiced_segments(c, 1)[0]
    }

    #[test]
    fn flat_and_glide_tilts() {
        let flat = contour(vec![150.0; 50]);
        let t = segment_tilt(&flat, &whole(&flat)).unwrap();
        assert!(t.slope.abs() < 1e-9 && t.mse < 1e-18);

        let glide = contour((0..101).map(|i| 100.0 + i as f64).collect());
        let t = segment_tilt(&glide, &whole(&glide)).unwrap();
        assert!((t.slope - 100.0).abs() < 1e-6);
        assert!(t.mse < 1e-12);

        let parabola = contour((0..101).map(|i| 100.0 + 0.02 * (i as f64 - 50.0).powi(2)).collect());
        let p = segment_tilt(&parabola, &whole(&parabola)).unwrap();
        assert!(p.mse > t.mse + 1.0);

        let short = contour(vec![150.0, 151.0]);
        assert_eq!(segment_tilt(&short, &whole(&short)), None);
    }

    #[test]
    fn voiced_rate_examples() {
        let seg = |s, e| VoicedSegment {
            start_frame: s,
            end_frame: e,
            duration: (e - s) as f64 * 0.01,
        };
        let five: Vec<_> = (0..5).map(|i| seg(i * 10, i * 10 + 5)).collect();
        assert_eq!(voiced_rate(&five, 10.0), 0.5);
        assert_eq!(voiced_rate(&[], 3.0), 0.0);
        assert_eq!(voiced_rate(&five[..1], 5.0), 0.2);
    }

    #[test]
    fn gaps_only_between_segments() {
        let mut f0 = vec![0.0; 4];
        f0.extend([150.0; 5]);
        f0.extend([0.0; 7]);
        f0.extend([150.0; 5]);
        f0.extend([0.0; 9]);
        let c = contour(f0);
        let segs = pitch::voiced_segments(&c, 3);
        let gaps = gap_durations(&c, &segs);
        assert_eq!(gaps.len(), 1);
        assert!((gaps[0] - 0.07).abs() < 1e-12);
    }

    #[test]
    fn boundary_energy_ratio() {
        let fs = 16000;
        let tone = |amp: f64, n: usize| -> Vec<f64> {
            (0..n).map(|i| amp * (2.0 * std::f64::consts::PI * 150.0 * i as f64 / fs as f64).sin()).collect()
        };
        let mut x = tone(0.4, 8000);
        x.extend(vec![0.0; 4000]);
        x.extend(tone(0.2, 8000));
        let clip = AudioClip::new(x, fs).unwrap();
        let cfg = PitchConfig::default();
        let c = pitch::track_f0(&clip, &cfg).unwrap();
        assert_eq!(pitch::voiced_segments(&c, 3).len(), 2);
        let (first, last) = boundary_energies(&clip, &c, 3).unwrap();
        assert!((first - last - 20.0 * 2f64.log10()).abs() < 0.3, "{first} {last}");

        let doubled = clip.scaled(2.0);
        let c2 = pitch::track_f0(&doubled, &cfg).unwrap();
        let (f2, l2) = boundary_energies(&doubled, &c2, 3).unwrap();
        assert!((f2 - first - 20.0 * 2f64.log10()).abs() < 1e-6);
        assert!((l2 - last - 20.0 * 2f64.log10()).abs() < 1e-6);

        let silent = AudioClip::new(vec![0.0; 8000], fs).unwrap();
        let cs = pitch::track_f0(&silent, &cfg).unwrap();
        assert_eq!(boundary_energies(&silent, &cs, 3), None);
    }

    #[test]
    fn block_has_39_keys_per_segment() {
        let m = missing_segment("conversation");
        assert_eq!(m.len(), 39);
    }
}
