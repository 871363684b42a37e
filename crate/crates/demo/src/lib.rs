//! Browser demo: synthesize and analyze a sustained vowel, analyze a
//! recording decoded by the page, and fit a two-feature logistic model.
//!
//! Every export returns a JSON document. The same computations are plain
//! Rust functions so they can be tested natively.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;
use wasm_bindgen::prelude::*;

use voxglyco::classifier::{self, Penalty};
use voxglyco::corpus::AudioClip;
use voxglyco::phonation::{consecutive_perturbation, five_point_quotient};
use voxglyco::pitch::{self, PitchConfig};
use voxglyco::synth::{self, F0Spec, Pulse, SynthSpec, VOWEL_A};
use voxglyco::glottal;

/// Seconds of waveform and flow returned for plotting.
const PLOT_SECONDS: f64 = 0.04;
const DEMO_RATE: u32 = 16_000;

#[derive(Debug, Clone, Serialize)]
pub struct Truth {
    pub jitter: Option<f64>,
    pub shimmer: Option<f64>,
    pub oq: Option<f64>,
    pub flow: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct VowelReport {
    pub sample_rate: u32,
    pub duration: f64,
    /// First sample of the plotted stretch: the first closure instant when
    /// one was found.
    pub plot_start: usize,
    pub samples: Vec<f64>,
    /// `(seconds, Hz)` for every voiced frame.
    pub f0_track: Vec<(f64, f64)>,
    pub median_f0: Option<f64>,
    pub jitter: Option<f64>,
    pub shimmer: Option<f64>,
    pub ppq5: Option<f64>,
    pub apq5: Option<f64>,
    pub oq: Option<f64>,
    pub naq: Option<f64>,
    pub hrf: Option<f64>,
    /// Estimated flow over the plotted stretch, peak-normalized. The flow of a
    /// clip without a usable voiced span is empty.
    pub flow: Vec<f64>,
    /// Closure instants inside the plotted stretch, in samples.
    pub gci: Vec<usize>,
    pub truth: Option<Truth>,
}

fn mean(v: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

fn normalized(v: &[f64]) -> Vec<f64> {
    let peak = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if peak > 0.0 {
        v.iter().map(|x| x / peak).collect()
    } else {
        v.to_vec()
    }
}

/// Pitch, phonation and glottal measures of one clip.
pub fn analyze_clip(clip: &AudioClip) -> Result<VowelReport, String> {
    let analysis = pitch::analyze(clip, &PitchConfig::default()).map_err(|e| e.to_string())?;
    let contour = &analysis.contour;
    let periods = analysis.cycles.periods();
    let amplitudes = analysis.cycles.amplitudes();
    let f0_track = (0..contour.n_frames())
        .filter(|&i| contour.voiced[i])
        .map(|i| (contour.grid.center_time(i), contour.f0[i]))
        .collect();
    let source = glottal::analyze(clip, contour).ok();
    let (oq, naq) = source.as_ref().map_or((None, None), |g| {
        (mean(g.cycles.iter().map(|c| c.oq())), mean(g.cycles.iter().map(|c| c.naq())))
    });
    let start = source.as_ref().and_then(|g| g.gci.first().copied()).unwrap_or(0);
    let end = (start + (PLOT_SECONDS * clip.sample_rate() as f64) as usize).min(clip.len());
    let (flow, gci) = source.as_ref().map_or((Vec::new(), Vec::new()), |g| {
        let gci = g.gci.iter().filter(|&&i| i >= start && i < end).map(|&i| i - start).collect();
        (normalized(&g.flow[start..end]), gci)
    });
    Ok(VowelReport {
        sample_rate: clip.sample_rate(),
        duration: clip.duration(),
        plot_start: start,
        samples: clip.samples()[start..end].to_vec(),
        f0_track,
        median_f0: contour.median_voiced_f0(),
        jitter: consecutive_perturbation(&periods),
        shimmer: consecutive_perturbation(&amplitudes),
        ppq5: five_point_quotient(&periods),
        apq5: five_point_quotient(&amplitudes),
        oq,
        naq,
        hrf: glottal::hrf(clip, contour),
        flow,
        gci,
        truth: None,
    })
}

/// Synthesizes a one-second Rosenberg vowel /a/ and analyzes it.
/// Perturbations are given in percent of the period and amplitude.
pub fn vowel_report(f0: f64, jitter_percent: f64, shimmer_percent: f64, oq: f64, seed: u64) -> Result<VowelReport, String> {
    if !(0.3..=0.9).contains(&oq) {
        return Err(format!("open quotient {oq} outside [0.3, 0.9]"));
    }
    let spec = SynthSpec::new(F0Spec::Constant(f0), 1.0, DEMO_RATE, Pulse::Rosenberg { oq })
        .jitter(jitter_percent / 100.0)
        .shimmer(shimmer_percent / 100.0)
        .formants(&VOWEL_A)
        .seed(seed);
    let (clip, truth) = synth::generate(&spec).map_err(|e| e.to_string())?;
    let mut report = analyze_clip(&clip)?;
    report.truth = Some(Truth {
        jitter: truth.jitter_percent,
        shimmer: truth.shimmer_percent,
        oq: truth.oq,
        flow: normalized(&truth.flow[report.plot_start..report.plot_start + report.samples.len()]),
    });
    Ok(report)
}

#[derive(Debug, Clone, Serialize)]
pub struct ClassifierReport {
    /// `(x1, x2, label)` training points.
    pub points: Vec<(f64, f64, u8)>,
    pub theta0: f64,
    pub theta: Vec<f64>,
    pub accuracy: f64,
    pub converged: bool,
}

/// Fits a penalized logistic model to two Gaussian classes whose means are
/// `separation` apart along the first axis.
pub fn classifier_report(separation: f64, penalty: &str, c: f64, n_per_class: usize, seed: u64) -> Result<ClassifierReport, String> {
    let penalty: Penalty = penalty.parse().map_err(|e: voxglyco::Error| e.to_string())?;
    if n_per_class < 2 {
        return Err("need at least two points per class".into());
    }
    let normal = Normal::new(0.0, 1.0).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::with_capacity(2 * n_per_class);
    for label in [0u8, 1] {
        let shift = (f64::from(label) - 0.5) * separation;
        for _ in 0..n_per_class {
            points.push((normal.sample(&mut rng) + shift, normal.sample(&mut rng), label));
        }
    }
    let x: Vec<Vec<f64>> = points.iter().map(|p| vec![p.0, p.1]).collect();
    let y: Vec<u8> = points.iter().map(|p| p.2).collect();
    let model = classifier::fit(&x, &y, penalty, c, seed).map_err(|e| e.to_string())?;
    let mut correct = 0;
    for (xi, &yi) in x.iter().zip(&y) {
        if classifier::predict(&model, xi).map_err(|e| e.to_string())?.class == yi {
            correct += 1;
        }
    }
    Ok(ClassifierReport {
        points,
        theta0: model.theta0,
        theta: model.theta.clone(),
        accuracy: correct as f64 / y.len() as f64,
        converged: model.converged,
    })
}

fn to_json<T: Serialize>(r: Result<T, String>) -> Result<String, JsError> {
    let value = r.map_err(|e| JsError::new(&e))?;
    serde_json::to_string(&value).map_err(|e| JsError::new(&e.to_string()))
}

/// Synthetic vowel analysis as JSON.
#[wasm_bindgen]
pub fn analyze_vowel(f0: f64, jitter_percent: f64, shimmer_percent: f64, oq: f64, seed: u32) -> Result<String, JsError> {
    to_json(vowel_report(f0, jitter_percent, shimmer_percent, oq, u64::from(seed)))
}

/// Analysis of mono samples decoded by the page, as JSON.
#[wasm_bindgen]
pub fn analyze_recording(samples: Vec<f32>, sample_rate: u32) -> Result<String, JsError> {
    let clip = AudioClip::new(samples.into_iter().map(f64::from).collect(), sample_rate)
        .map_err(|e| JsError::new(&e.to_string()))?;
    to_json(analyze_clip(&clip))
}

/// Two-class logistic fit as JSON.
#[wasm_bindgen]
pub fn fit_classifier(separation: f64, penalty: &str, c: f64, seed: u32) -> Result<String, JsError> {
    to_json(classifier_report(separation, penalty, c, 40, u64::from(seed)))
}
