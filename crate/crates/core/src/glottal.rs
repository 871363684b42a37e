//! Glottal source estimation from sustained vowels: inverse filtering,
//! closure instants, open and normalized amplitude quotients, and the
//! harmonic richness factor.

use std::f64::consts::PI;
use std::ops::Range;

use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::corpus::{AudioClip, RecordingSession, SegmentKind};
use crate::dsp::{self, Moments};
use crate::phonation::insert_functionals;
use crate::pitch::{self, F0Contour, PitchAnalysis, PitchConfig};
use crate::{Error, FeatureMap, Result};

pub const SCALARS: [&str; 6] = ["gci_var", "oq_mean", "oq_std", "naq_mean", "naq_std", "hrf"];
pub const SERIES: [&str; 2] = ["oq", "naq"];

/// Shortest voiced span accepted for inverse filtering, seconds.
pub const MIN_VOICED_SECONDS: f64 = 0.5;
const GCI_SEARCH: f64 = 0.3;
const OQ_THRESHOLD: f64 = 0.1;
/// Lower bound on the harmonic richness factor, dB.
pub const HRF_FLOOR_DB: f64 = -60.0;
const HRF_MAX_HARMONICS: usize = 10;
const HRF_PERIODS_PER_FRAME: f64 = 8.0;
const HRF_STABILITY: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GlottalCycle {
    /// First sample index of the cycle (a closure instant).
    pub start: usize,
    /// Samples above the open-phase threshold.
    pub open_samples: usize,
    /// Samples between the bounding closure instants.
    pub period_samples: usize,
    pub peak_to_peak: f64,
    pub min_derivative: f64,
}

impl GlottalCycle {
    pub fn oq(&self) -> f64 {
        self.open_samples as f64 / self.period_samples as f64
    }

    /// Peak-to-peak flow over `|min derivative| * period`, both in samples.
    pub fn naq(&self) -> f64 {
        self.peak_to_peak / (self.min_derivative.abs() * self.period_samples as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlottalFlow {
    pub flow: Vec<f64>,
    pub flow_derivative: Vec<f64>,
    /// Closure instants, strictly increasing.
    pub gci: Vec<usize>,
    /// Index ranges into `gci`, one per voiced segment; cycles never span two runs.
    pub gci_runs: Vec<Range<usize>>,
    pub cycles: Vec<GlottalCycle>,
    pub sample_rate: u32,
}

/// Leaky-integrator coefficient. The pole sits at a fixed 16 samples per
/// time constant at 16 kHz (0.999) and scales with rate.
pub fn leak_coefficient(sample_rate: u32) -> f64 {
    1.0 - 16.0 / sample_rate as f64
}

pub fn vocal_tract_order(sample_rate: u32) -> usize {
    (sample_rate as f64 / 1000.0).round() as usize + 2
}

fn voiced_span(contour: &F0Contour, len: usize) -> Option<Range<usize>> {
    let first = contour.voiced.iter().position(|&v| v)?;
    let last = contour.voiced.iter().rposition(|&v| v)?;
    Some(contour.grid.start(first)..contour.grid.range(last).end.min(len))
}

fn windowed(x: &[f64]) -> Vec<f64> {
    x.iter().zip(dsp::hann(x.len())).map(|(a, w)| a * w).collect()
}

/// Two-pass inverse filtering.
///
/// An order-1 LPC fit removes the spectral tilt of the glottal source; a
/// vocal-tract LPC of order `round(fs/1000) + 2` fit on the tilt-corrected
/// signal then inverse-filters the original clip. Integrating the residual
/// with a leaky integrator gives the flow. Needs at least half a second of
/// voiced frames.
pub fn iaif(clip: &AudioClip, contour: &F0Contour) -> Result<GlottalFlow> {
    let voiced_s = contour.voiced_count() as f64 * contour.grid.hop_seconds();
    if voiced_s < MIN_VOICED_SECONDS {
        return Err(Error::InsufficientVoicing);
    }
    let x = clip.samples();
    let span = voiced_span(contour, x.len()).ok_or(Error::InsufficientVoicing)?;
    let voiced = &x[span];
    let tilt = dsp::lpc(&windowed(voiced), 1)?;
    let corrected = tilt.inverse_filter(voiced);
    let tract = dsp::lpc(&windowed(&corrected), vocal_tract_order(clip.sample_rate()))?;
    let residual = tract.inverse_filter(x);

    let c = leak_coefficient(clip.sample_rate());
    let mut flow = Vec::with_capacity(x.len());
    let mut prev = 0.0;
    for e in residual {
        prev = e + c * prev;
        flow.push(prev);
    }
    let mut flow_derivative = vec![0.0; flow.len()];
    for n in 1..flow.len() {
        flow_derivative[n] = flow[n] - flow[n - 1];
    }
    Ok(GlottalFlow {
        flow,
        flow_derivative,
        gci: Vec::new(),
        gci_runs: Vec::new(),
        cycles: Vec::new(),
        sample_rate: clip.sample_rate(),
    })
}

fn argmin(x: &[f64], lo: usize, hi: usize) -> usize {
    (lo..hi)
        .min_by(|&a, &b| x[a].total_cmp(&x[b]).then(a.cmp(&b)))
        .unwrap_or(lo)
}

/// Closure instants as minima of the flow derivative, one per expected
/// period, grouped by voiced segment. Each search covers +-30% of the local
/// period around the previous instant plus one period.
pub fn detect_gci(flow_derivative: &[f64], contour: &F0Contour) -> Vec<Vec<usize>> {
    let fs = contour.grid.sample_rate as f64;
    let grid = contour.grid;
    let mut runs = Vec::new();
    for seg in pitch::voiced_segments(contour, 3) {
        let period_at = |p: usize| -> f64 {
            let centre = (p as f64 - grid.frame_length as f64 / 2.0) / grid.hop as f64;
            let f = (centre.round().max(0.0) as usize).clamp(seg.start_frame, seg.end_frame - 1);
            fs / contour.f0[f]
        };
        let start = grid.start(seg.start_frame);
        let end = grid.range(seg.end_frame - 1).end.min(flow_derivative.len());
        let first_end = (start + period_at(start).ceil() as usize).min(end);
        if first_end <= start + 2 {
            continue;
        }
        let mut run = vec![argmin(flow_derivative, start, first_end)];
        loop {
            let prev = *run.last().expect("non-empty");
            let t = period_at(prev);
            let lo = ((prev as f64 + (1.0 - GCI_SEARCH) * t).ceil() as usize).max(prev + 1);
            let hi = (prev as f64 + (1.0 + GCI_SEARCH) * t).floor() as usize;
            if hi >= end || lo > hi {
                break;
            }
            run.push(argmin(flow_derivative, lo, hi + 1));
        }
        if run.len() >= 2 {
            runs.push(run);
        }
    }
    runs
}

/// Cycle measurements between consecutive closure instants of each run.
/// Cycles with no flow excursion or no negative derivative are skipped.
pub fn glottal_cycle_params(flow: &[f64], flow_derivative: &[f64], runs: &[Vec<usize>]) -> Vec<GlottalCycle> {
    let mut out = Vec::new();
    for run in runs {
        for w in run.windows(2) {
            let (a, b) = (w[0], w[1]);
            let seg = &flow[a..b];
            let min = seg.iter().copied().fold(f64::INFINITY, f64::min);
            let max = seg.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let p2p = max - min;
            let min_d = flow_derivative[a..b].iter().copied().fold(f64::INFINITY, f64::min);
            if !(p2p > 0.0) || !(min_d < 0.0) {
                continue;
            }
            let level = min + OQ_THRESHOLD * p2p;
            let open = seg.iter().filter(|&&v| v > level).count();
            if open == 0 {
                continue;
            }
            out.push(GlottalCycle {
                start: a,
                open_samples: open,
                period_samples: b - a,
                peak_to_peak: p2p,
                min_derivative: min_d,
            });
        }
    }
    out
}

/// Full source analysis: inverse filtering, closure instants and cycles.
pub fn analyze(clip: &AudioClip, contour: &F0Contour) -> Result<GlottalFlow> {
    let mut g = iaif(clip, contour)?;
    let runs = detect_gci(&g.flow_derivative, contour);
    g.cycles = glottal_cycle_params(&g.flow, &g.flow_derivative, &runs);
    for run in runs {
        let lo = g.gci.len();
        g.gci.extend(run);
        g.gci_runs.push(lo..g.gci.len());
    }
    Ok(g)
}

impl GlottalFlow {
    /// Closure-instant intervals in seconds; never across runs.
    pub fn gci_intervals(&self) -> Vec<f64> {
        let fs = self.sample_rate as f64;
        self.gci_runs
            .iter()
            .flat_map(|r| self.gci[r.clone()].windows(2).map(move |w| (w[1] - w[0]) as f64 / fs))
            .collect()
    }
}

/// Four-term Blackman-Harris window (sidelobes near -92 dB).
fn blackman_harris(len: usize) -> Vec<f64> {
    const A: [f64; 4] = [0.35875, 0.48829, 0.14128, 0.01168];
    if len == 1 {
        return vec![1.0];
    }
    (0..len)
        .map(|n| {
            let p = 2.0 * PI * n as f64 / (len - 1) as f64;
            A[0] - A[1] * p.cos() + A[2] * (2.0 * p).cos() - A[3] * (3.0 * p).cos()
        })
        .collect()
}

/// Mean harmonic richness factor `20 log10(sum_{k>=2} A_k / A_1)` over
/// voiced frames, floored at -60 dB. Frames span eight periods of the median
/// F0 under a Blackman-Harris window; each A_k is the largest spectral
/// magnitude within a quarter of F0 of `k * F0`. `None` when F0 varies by
/// more than 10% (std/mean) or no frame fits.
pub fn hrf(clip: &AudioClip, contour: &F0Contour) -> Option<f64> {
    let f0s = contour.voiced_f0();
    let m = dsp::moments(&f0s).ok()?;
    if m.std / m.mean > HRF_STABILITY {
        return None;
    }
    let fs = clip.sample_rate() as f64;
    let x = clip.samples();
    let len = (HRF_PERIODS_PER_FRAME * fs / dsp::median(&f0s)).round() as usize;
    if len > x.len() {
        return None;
    }
    let nfft = (4 * len).next_power_of_two();
    let fft = FftPlanner::<f64>::new().plan_fft_forward(nfft);
    let window = blackman_harris(len);
    let bin_hz = fs / nfft as f64;
    let mut buf = vec![Complex::new(0.0, 0.0); nfft];
    let mut values = Vec::new();
    for i in (0..contour.n_frames()).filter(|&i| contour.voiced[i]) {
        let centre = contour.grid.start(i) + contour.grid.frame_length / 2;
        let Some(start) = centre.checked_sub(len / 2) else { continue };
        if start + len > x.len() {
            continue;
        }
        buf.iter_mut().for_each(|c| *c = Complex::new(0.0, 0.0));
        for (b, (s, w)) in buf.iter_mut().zip(x[start..start + len].iter().zip(&window)) {
            b.re = s * w;
        }
        fft.process(&mut buf);
        let f0 = contour.f0[i];
        let harmonics = HRF_MAX_HARMONICS.min((fs / 2.0 / f0).floor() as usize);
        let amp = |k: usize| -> f64 {
            let lo = ((k as f64 - 0.25) * f0 / bin_hz).ceil() as usize;
            let hi = (((k as f64 + 0.25) * f0 / bin_hz).floor() as usize).min(nfft / 2);
            (lo..=hi).map(|b| buf[b].norm()).fold(0.0, f64::max)
        };
        let a1 = amp(1);
        if !(a1 > 0.0) {
            continue;
        }
        let rest: f64 = (2..=harmonics).map(amp).sum();
        let db = if rest > 0.0 { 20.0 * (rest / a1).log10() } else { HRF_FLOOR_DB };
        values.push(db.max(HRF_FLOOR_DB));
    }
    (!values.is_empty()).then(|| dsp::mean(&values))
}

/// Glottal features of one analysed vowel, keyed `glot.<vowel>.*`.
pub fn segment_features(vowel: &str, clip: &AudioClip, analysis: &PitchAnalysis) -> FeatureMap {
    let prefix = format!("glot.{vowel}");
    let mut map = missing_segment(vowel);
    let flow = match analyze(clip, &analysis.contour) {
        Ok(f) => f,
        Err(e) => {
            log::debug!("{prefix}: {e}");
            return map;
        }
    };
    let oq: Vec<f64> = flow.cycles.iter().map(GlottalCycle::oq).collect();
    let naq: Vec<f64> = flow.cycles.iter().map(GlottalCycle::naq).collect();
    let gci_ms: Vec<f64> = flow.gci_intervals().iter().map(|t| 1000.0 * t).collect();
    let oq_m = dsp::moments(&oq).ok();
    let naq_m = dsp::moments(&naq).ok();
    let scalars = [
        dsp::moments(&gci_ms).ok().map(|m| m.std),
        oq_m.map(|m| m.mean),
        oq_m.map(|m| m.std),
        naq_m.map(|m| m.mean),
        naq_m.map(|m| m.std),
        hrf(clip, &analysis.contour),
    ];
    for (name, v) in SCALARS.iter().zip(scalars) {
        map.insert(format!("{prefix}.{name}"), v);
    }
    insert_functionals(&mut map, &prefix, "oq", &oq);
    insert_functionals(&mut map, &prefix, "naq", &naq);
    map
}

pub(crate) fn missing_segment(vowel: &str) -> FeatureMap {
    let prefix = format!("glot.{vowel}");
    let mut map: FeatureMap = SCALARS.iter().map(|n| (format!("{prefix}.{n}"), None)).collect();
    for s in SERIES {
        for f in Moments::NAMES {
            map.insert(format!("{prefix}.{s}.{f}"), None);
        }
    }
    map
}

/// Glottal features for both vowels; an absent or unusable vowel yields
/// missing values.
pub fn glottal_feature_block(session: &RecordingSession, cfg: &PitchConfig) -> FeatureMap {
    let mut map = FeatureMap::new();
    for kind in SegmentKind::VOWELS {
        let seg = kind.as_str();
        let features = session
            .segment(kind)
            .and_then(|clip| pitch::analyze(clip, cfg).ok().map(|a| segment_features(seg, clip, &a)));
        map.extend(features.unwrap_or_else(|| missing_segment(seg)));
    }
    map
}
