//! Phonation descriptors: jitter, shimmer, five-point perturbation quotients,
//! F0 derivatives and frame log-energy.

use crate::corpus::{AudioClip, RecordingSession};
use crate::dsp::{self, Moments};
use crate::pitch::{self, F0Contour, PitchAnalysis, PitchConfig};
use crate::FeatureMap;

/// Scalar descriptors computed once per segment.
pub const SCALARS: [&str; 4] = ["jitter", "shimmer", "ppq5", "apq5"];
/// Series summarized by the six moment functionals.
pub const SERIES: [&str; 3] = ["f0_delta", "f0_delta2", "log_energy"];

const ENERGY_FLOOR: f64 = 1e-10;

fn valid(values: &[f64]) -> bool {
    values.iter().all(|v| v.is_finite() && *v > 0.0)
}

/// `100 * mean |T_i - T_{i-1}| / mean T`; `None` for fewer than two periods.
pub fn jitter_local(periods: &[f64]) -> Option<f64> {
    consecutive_perturbation(&[periods.to_vec()])
}

/// `100 * mean |A_i - A_{i-1}| / mean A`; `None` for fewer than two amplitudes.
pub fn shimmer_local(amplitudes: &[f64]) -> Option<f64> {
    consecutive_perturbation(&[amplitudes.to_vec()])
}

/// Local perturbation pooled over runs. Differences never cross a run
/// boundary; the mean in the denominator covers every value.
pub fn consecutive_perturbation(runs: &[Vec<f64>]) -> Option<f64> {
    let (mut diff, mut n_diff, mut sum, mut n) = (0.0, 0usize, 0.0, 0usize);
    for run in runs {
        if !valid(run) {
            return None;
        }
        diff += run.windows(2).map(|w| (w[1] - w[0]).abs()).sum::<f64>();
        n_diff += run.len().saturating_sub(1);
        sum += run.iter().sum::<f64>();
        n += run.len();
    }
    (n_diff > 0).then(|| 100.0 * (diff / n_diff as f64) / (sum / n as f64))
}

/// Five-point perturbation quotient pooled over runs of at least five values:
/// `100 * mean_i |x_i - mean(x_{i-2..=i+2})| / mean x`.
pub fn five_point_quotient(runs: &[Vec<f64>]) -> Option<f64> {
    let (mut dev, mut n_dev, mut sum, mut n) = (0.0, 0usize, 0.0, 0usize);
    for run in runs.iter().filter(|r| r.len() >= 5) {
        if !valid(run) {
            return None;
        }
        for w in run.windows(5) {
            dev += (w[2] - w.iter().sum::<f64>() / 5.0).abs();
            n_dev += 1;
        }
        sum += run.iter().sum::<f64>();
        n += run.len();
    }
    (n_dev > 0).then(|| 100.0 * (dev / n_dev as f64) / (sum / n as f64))
}

/// PPQ5 and APQ5 in percent, each `None` with fewer than five cycles.
pub fn perturbation_quotients(periods: &[f64], amplitudes: &[f64]) -> (Option<f64>, Option<f64>) {
    (
        five_point_quotient(&[periods.to_vec()]),
        five_point_quotient(&[amplitudes.to_vec()]),
    )
}

/// First and second differences of F0 (Hz/frame) inside each voiced segment
/// of at least three frames, concatenated over segments.
pub fn f0_derivatives(contour: &F0Contour) -> (Vec<f64>, Vec<f64>) {
    let mut d1 = Vec::new();
    let mut d2 = Vec::new();
    for seg in pitch::voiced_segments(contour, 3) {
        let f = &contour.f0[seg.frames()];
        let first: Vec<f64> = f.windows(2).map(|w| w[1] - w[0]).collect();
        d2.extend(first.windows(2).map(|w| w[1] - w[0]));
        d1.extend(first);
    }
    (d1, d2)
}

/// `10 log10(mean square + 1e-10)` of every analysis frame of the contour grid.
pub fn frame_log_energy(clip: &AudioClip, contour: &F0Contour) -> Vec<f64> {
    let x = clip.samples();
    (0..contour.n_frames())
        .map(|i| {
            let frame = &x[contour.grid.range(i)];
            let ms = frame.iter().map(|v| v * v).sum::<f64>() / frame.len() as f64;
            10.0 * (ms + ENERGY_FLOOR).log10()
        })
        .collect()
}

/// Adds `<prefix>.<name>.<functional>` entries, all missing for an empty series.
pub(crate) fn insert_functionals(map: &mut FeatureMap, prefix: &str, name: &str, series: &[f64]) {
    let m = dsp::moments(series).ok();
    for (i, f) in Moments::NAMES.iter().enumerate() {
        map.insert(format!("{prefix}.{name}.{f}"), m.as_ref().map(|m| m.values()[i]));
    }
}

/// Phonation features of one analysed segment, keyed `phon.<segment>.*`.
pub fn segment_features(segment: &str, clip: &AudioClip, analysis: &PitchAnalysis) -> FeatureMap {
    let prefix = format!("phon.{segment}");
    let periods = analysis.cycles.periods();
    let amplitudes = analysis.cycles.amplitudes();
    let mut map = FeatureMap::new();
    let scalars = [
        consecutive_perturbation(&periods),
        consecutive_perturbation(&amplitudes),
        five_point_quotient(&periods),
        five_point_quotient(&amplitudes),
    ];
    for (name, v) in SCALARS.iter().zip(scalars) {
        map.insert(format!("{prefix}.{name}"), v);
    }

    let (d1, d2) = f0_derivatives(&analysis.contour);
    let energy = frame_log_energy(clip, &analysis.contour);
    let voiced_energy: Vec<f64> = energy
        .iter()
        .zip(&analysis.contour.voiced)
        .filter_map(|(e, v)| v.then_some(*e))
        .collect();
    for (name, series) in SERIES.iter().zip([d1, d2, voiced_energy]) {
        insert_functionals(&mut map, &prefix, name, &series);
    }
    map
}

/// Every segment's keys, all missing.
pub(crate) fn missing_segment(segment: &str) -> FeatureMap {
    let prefix = format!("phon.{segment}");
    let mut map: FeatureMap = SCALARS
        .iter()
        .map(|n| (format!("{prefix}.{n}"), None))
        .collect();
    for s in SERIES {
        insert_functionals(&mut map, &prefix, s, &[]);
    }
    map
}

/// Phonation features for every present segment of a session. Never fails:
/// a segment whose pitch analysis errors contributes only missing values.
pub fn phonation_feature_block(session: &RecordingSession, cfg: &PitchConfig) -> FeatureMap {
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
