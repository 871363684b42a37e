//! Synthetic voice generator with recorded ground truth.
//!
//! Pulse onsets follow `T_i = (1 / f0) (1 + e_i)` with `e_i ~ N(0, jitter)`
//! and amplitudes `A_i = 1 + d_i` with `d_i ~ N(0, shimmer)`. The truth
//! record keeps the realized sequences so extractor tests measure estimation
//! error rather than sampling noise.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::corpus::{self, AudioClip, SegmentKind};
use crate::phonation::{jitter_local, shimmer_local};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum F0Spec {
    Constant(f64),
    /// Linear glide in Hz over the clip duration.
    Glide { start: f64, end: f64 },
}

impl F0Spec {
    fn at(&self, t: f64, duration: f64) -> f64 {
        match *self {
            F0Spec::Constant(f) => f,
            F0Spec::Glide { start, end } => start + (end - start) * (t / duration).clamp(0.0, 1.0),
        }
    }

    fn range(&self) -> (f64, f64) {
        match *self {
            F0Spec::Constant(f) => (f, f),
            F0Spec::Glide { start, end } => (start.min(end), start.max(end)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pulse {
    /// Trigonometric Rosenberg flow with open quotient `oq`; the clip carries
    /// its time derivative (lip radiation).
    Rosenberg { oq: f64 },
    Impulse,
    Sawtooth,
    Sine,
}

/// Fraction of the open phase spent opening (Rosenberg's 40%/16% split).
pub const ROSENBERG_OPENING_SHARE: f64 = 0.7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Formant {
    pub frequency: f64,
    pub bandwidth: f64,
}

impl Formant {
    pub const fn new(frequency: f64, bandwidth: f64) -> Self {
        Self {
            frequency,
            bandwidth,
        }
    }
}

pub const VOWEL_A: [Formant; 3] = [
    Formant::new(700.0, 130.0),
    Formant::new(1220.0, 70.0),
    Formant::new(2600.0, 160.0),
];

pub const VOWEL_I: [Formant; 3] = [
    Formant::new(300.0, 60.0),
    Formant::new(2200.0, 100.0),
    Formant::new(3000.0, 120.0),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub f0: F0Spec,
    pub duration: f64,
    pub sample_rate: u32,
    pub jitter_sigma: f64,
    pub shimmer_sigma: f64,
    pub pulse: Pulse,
    pub formants: Vec<Formant>,
    pub seed: u64,
    /// Output peak magnitude after normalization.
    pub peak: f64,
}

impl SynthSpec {
    pub fn new(f0: F0Spec, duration: f64, sample_rate: u32, pulse: Pulse) -> Self {
        Self {
            f0,
            duration,
            sample_rate,
            jitter_sigma: 0.0,
            shimmer_sigma: 0.0,
            pulse,
            formants: Vec::new(),
            seed: 0,
            peak: 0.9,
        }
    }

    pub fn jitter(mut self, sigma: f64) -> Self {
        self.jitter_sigma = sigma;
        self
    }

    pub fn shimmer(mut self, sigma: f64) -> Self {
        self.shimmer_sigma = sigma;
        self
    }

    pub fn formants(mut self, formants: &[Formant]) -> Self {
        self.formants = formants.to_vec();
        self
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    fn validate(&self) -> Result<()> {
        let (lo, hi) = self.f0.range();
        if !(lo > 50.0 && hi < 500.0) {
            return Err(Error::Parameter(format!("f0 must lie in (50, 500) Hz, got {lo}..{hi}")));
        }
        if !(self.duration > 0.0) {
            return Err(Error::Parameter("duration must be positive".into()));
        }
        if !(self.jitter_sigma >= 0.0 && self.shimmer_sigma >= 0.0) {
            return Err(Error::Parameter("perturbation sigmas must be non-negative".into()));
        }
        if self.sample_rate < corpus::MIN_SAMPLE_RATE {
            return Err(Error::Parameter(format!("sample rate {} too low", self.sample_rate)));
        }
        if let Pulse::Rosenberg { oq } = self.pulse {
            if !(oq > 0.0 && oq < 1.0) {
                return Err(Error::Parameter(format!("open quotient {oq} outside (0, 1)")));
            }
        }
        let nyquist = self.sample_rate as f64 / 2.0;
        for f in &self.formants {
            if !(f.frequency > 0.0 && f.frequency < nyquist && f.bandwidth > 0.0) {
                return Err(Error::Parameter(format!("invalid formant {f:?}")));
            }
        }
        if !(self.peak > 0.0 && self.peak <= 1.0) {
            return Err(Error::Parameter("peak must lie in (0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthTruth {
    /// Realized onset times in seconds.
    pub onsets: Vec<f64>,
    /// Realized periods `onsets[i+1] - onsets[i]` in seconds.
    pub periods: Vec<f64>,
    /// Realized per-cycle amplitudes, one per period.
    pub amplitudes: Vec<f64>,
    pub jitter_percent: Option<f64>,
    pub shimmer_percent: Option<f64>,
    pub oq: Option<f64>,
    /// Glottal flow before differentiation, formant filtering and normalization.
    pub flow: Vec<f64>,
}

const OVERSAMPLE: usize = 16;
/// Half-width of the decimation filter in output samples.
const DECIMATE_HALF_WIDTH: usize = 12;
/// Decimation cutoff as a fraction of the output Nyquist frequency.
const DECIMATE_CUTOFF: f64 = 0.9;

/// Blackman-windowed sinc low-pass followed by keeping every `factor`-th sample.
fn decimate(fine: &[f64], factor: usize, n: usize) -> Vec<f64> {
    let half = (DECIMATE_HALF_WIDTH * factor) as isize;
    let fc = DECIMATE_CUTOFF / (2.0 * factor as f64);
    let mut kernel: Vec<f64> = (-half..=half)
        .map(|k| {
            let k = k as f64;
            let sinc = if k == 0.0 { 2.0 * fc } else { (2.0 * PI * fc * k).sin() / (PI * k) };
            let u = (k + half as f64) / (2.0 * half as f64);
            let w = 0.42 - 0.5 * (2.0 * PI * u).cos() + 0.08 * (4.0 * PI * u).cos();
            sinc * w
        })
        .collect();
    let sum: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|v| *v /= sum);
    (0..n)
        .map(|i| {
            let centre = (i * factor) as isize;
            kernel
                .iter()
                .enumerate()
                .filter_map(|(j, h)| {
                    let idx = centre + j as isize - half;
                    (idx >= 0 && (idx as usize) < fine.len()).then(|| h * fine[idx as usize])
                })
                .sum()
        })
        .collect()
}

fn rosenberg(tau: f64, opening: f64, closing: f64) -> (f64, f64) {
    if tau < 0.0 {
        (0.0, 0.0)
    } else if tau < opening {
        let a = PI * tau / opening;
        (0.5 * (1.0 - a.cos()), 0.5 * PI / opening * a.sin())
    } else if tau < opening + closing {
        let a = 0.5 * PI * (tau - opening) / closing;
        (a.cos(), -0.5 * PI / closing * a.sin())
    } else {
        (0.0, 0.0)
    }
}

/// Cascade of two-pole resonators, each with unit gain at DC.
pub fn apply_formants(signal: &mut [f64], formants: &[Formant], sample_rate: u32) {
    let fs = sample_rate as f64;
    for f in formants {
        let r = (-PI * f.bandwidth / fs).exp();
        let a1 = 2.0 * r * (2.0 * PI * f.frequency / fs).cos();
        let a2 = -r * r;
        let gain = 1.0 - a1 - a2;
        let (mut y1, mut y2) = (0.0, 0.0);
        for s in signal.iter_mut() {
            let y = gain * *s + a1 * y1 + a2 * y2;
            y2 = y1;
            y1 = y;
            *s = y;
        }
    }
}

pub fn generate(spec: &SynthSpec) -> Result<(AudioClip, SynthTruth)> {
    spec.validate()?;
    let fs = spec.sample_rate as f64;
    let n = (spec.duration * fs).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let jitter = Normal::new(0.0, spec.jitter_sigma).map_err(|e| Error::Parameter(e.to_string()))?;
    let shimmer =
        Normal::new(0.0, spec.shimmer_sigma).map_err(|e| Error::Parameter(e.to_string()))?;

    // Onsets through one cycle past the end so every sample has a cycle.
    let mut onsets = vec![0.0];
    let mut amps = Vec::new();
    let mut nominal = Vec::new();
    loop {
        let t = *onsets.last().expect("non-empty");
        let t_nom = 1.0 / spec.f0.at(t, spec.duration);
        let e: f64 = jitter.sample(&mut rng);
        let d: f64 = shimmer.sample(&mut rng);
        onsets.push(t + t_nom * (1.0 + e).max(0.5));
        amps.push((1.0 + d).max(0.05));
        nominal.push(t_nom);
        if t >= spec.duration {
            break;
        }
    }

    // Continuous pulse shapes are rendered on a finer grid and low-passed
    // down so that sub-sample cycle timing survives sampling.
    let factor = if matches!(spec.pulse, Pulse::Impulse | Pulse::Sine) { 1 } else { OVERSAMPLE };
    let fine_rate = fs * factor as f64;
    let mut fine = vec![0.0; n * factor];
    let mut flow = vec![0.0; n];
    let mut cycle = 0;
    for (i, o) in fine.iter_mut().enumerate() {
        let t = i as f64 / fine_rate;
        while onsets[cycle + 1] <= t {
            cycle += 1;
        }
        let tau = t - onsets[cycle];
        let period = onsets[cycle + 1] - onsets[cycle];
        let a = amps[cycle];
        match spec.pulse {
            Pulse::Rosenberg { oq } => {
                let open = oq * nominal[cycle];
                let (v, dv) = rosenberg(
                    tau,
                    ROSENBERG_OPENING_SHARE * open,
                    (1.0 - ROSENBERG_OPENING_SHARE) * open,
                );
                if i % factor == 0 {
                    flow[i / factor] = a * v;
                }
                *o = a * dv / fs;
            }
            Pulse::Impulse => {
                if i == (onsets[cycle] * fs).round() as usize {
                    *o = a;
                }
            }
            Pulse::Sawtooth => *o = a * (1.0 - 2.0 * tau / period),
            Pulse::Sine => *o = a * (2.0 * PI * tau / period).sin(),
        }
    }
    let mut out = if factor == 1 { fine } else { decimate(&fine, factor, n) };

    apply_formants(&mut out, &spec.formants, spec.sample_rate);
    let max = out.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if max > 0.0 {
        let k = spec.peak / max;
        out.iter_mut().for_each(|v| *v *= k);
    }

    // Keep only cycles that start inside the clip.
    let complete = onsets.iter().filter(|&&t| t < spec.duration).count();
    onsets.truncate(complete);
    let periods: Vec<f64> = onsets.windows(2).map(|w| w[1] - w[0]).collect();
    amps.truncate(periods.len());
    let truth = SynthTruth {
        jitter_percent: jitter_local(&periods),
        shimmer_percent: shimmer_local(&amps),
        oq: match spec.pulse {
            Pulse::Rosenberg { oq } => Some(oq),
            _ => None,
        },
        onsets,
        periods,
        amplitudes: amps,
        flow,
    };
    Ok((AudioClip::new(out, spec.sample_rate)?, truth))
}

/// Per-class parameter shifts applied to class-1 sessions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassOffsets {
    pub jitter_sigma: f64,
    pub shimmer_sigma: f64,
    pub f0_hz: f64,
}

impl Default for ClassOffsets {
    fn default() -> Self {
        Self {
            jitter_sigma: 0.01,
            shimmer_sigma: 0.0,
            f0_hz: -10.0,
        }
    }
}

impl ClassOffsets {
    pub fn zero() -> Self {
        Self {
            jitter_sigma: 0.0,
            shimmer_sigma: 0.0,
            f0_hz: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub n_per_class: usize,
    pub offsets: ClassOffsets,
    pub seed: u64,
    pub sample_rate: u32,
}

impl DatasetConfig {
    pub fn new(n_per_class: usize, seed: u64) -> Self {
        Self {
            n_per_class,
            offsets: ClassOffsets::default(),
            seed,
            sample_rate: 8000,
        }
    }
}

pub const LOW_GLUCOSE_MG_DL: f64 = 80.0;
pub const HIGH_GLUCOSE_MG_DL: f64 = 170.0;

/// Parameters of one synthetic speaker visit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SessionVoice {
    pub f0: f64,
    pub jitter_sigma: f64,
    pub shimmer_sigma: f64,
    pub oq: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSession {
    pub session_id: String,
    pub label: u8,
    pub voice: SessionVoice,
    pub segments: Vec<(SegmentKind, AudioClip)>,
}

const BACKGROUND_NOISE: f64 = 0.001;

/// Generates the four segments of every session in memory.
pub fn synth_sessions(cfg: &DatasetConfig) -> Result<Vec<SynthSession>> {
    if cfg.n_per_class < 2 {
        return Err(Error::Parameter("n_per_class must be at least 2".into()));
    }
    let mut out = Vec::with_capacity(2 * cfg.n_per_class);
    for idx in 0..2 * cfg.n_per_class {
        let label = u8::from(idx % 2 == 1);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ idx as u64);
        let shift = if label == 1 { cfg.offsets } else { ClassOffsets::zero() };
        let voice = SessionVoice {
            f0: rng.random_range(125.0..175.0) + shift.f0_hz,
            jitter_sigma: rng.random_range(0.003..0.007) + shift.jitter_sigma,
            shimmer_sigma: rng.random_range(0.02..0.04) + shift.shimmer_sigma,
            oq: rng.random_range(0.55..0.65),
        };
        let segments = SegmentKind::ALL
            .iter()
            .map(|&kind| Ok((kind, synth_segment(kind, &voice, cfg.sample_rate, &mut rng)?)))
            .collect::<Result<Vec<_>>>()?;
        out.push(SynthSession {
            session_id: format!("syn{idx:03}"),
            label,
            voice,
            segments,
        });
    }
    Ok(out)
}

fn voice_spec(voice: &SessionVoice, f0: F0Spec, duration: f64, rate: u32, formants: &[Formant], seed: u64) -> SynthSpec {
    SynthSpec::new(f0, duration, rate, Pulse::Rosenberg { oq: voice.oq })
        .jitter(voice.jitter_sigma)
        .shimmer(voice.shimmer_sigma)
        .formants(formants)
        .seed(seed)
}

fn synth_segment(kind: SegmentKind, voice: &SessionVoice, rate: u32, rng: &mut ChaCha8Rng) -> Result<AudioClip> {
    let fs = rate as f64;
    let mut samples: Vec<f64> = match kind {
        SegmentKind::VowelA | SegmentKind::VowelI => {
            let formants = if kind == SegmentKind::VowelA { &VOWEL_A } else { &VOWEL_I };
            let spec = voice_spec(voice, F0Spec::Constant(voice.f0), 1.5, rate, formants, rng.random());
            generate(&spec)?.0.samples().to_vec()
        }
        SegmentKind::Sentences | SegmentKind::Conversation => {
            let (bursts, dur, gap) = if kind == SegmentKind::Sentences {
                (4, 0.3..0.45, 0.1..0.2)
            } else {
                (6, 0.2..0.5, 0.1..0.4)
            };
            let mut s = vec![0.0; (0.1 * fs) as usize];
            for b in 0..bursts {
                let start = voice.f0 * rng.random_range(0.9..1.15);
                let end = voice.f0 * rng.random_range(0.85..1.05);
                let formants = if b % 2 == 0 { &VOWEL_A[..] } else { &VOWEL_I[..] };
                let spec = SynthSpec {
                    peak: rng.random_range(0.5..0.9),
                    ..voice_spec(
                        voice,
                        F0Spec::Glide { start, end },
                        rng.random_range(dur.clone()),
                        rate,
                        formants,
                        rng.random(),
                    )
                };
                s.extend_from_slice(generate(&spec)?.0.samples());
                s.extend(std::iter::repeat_n(0.0, (rng.random_range(gap.clone()) * fs) as usize));
            }
            s
        }
    };
    let noise = Normal::new(0.0, BACKGROUND_NOISE).expect("valid sigma");
    for v in samples.iter_mut() {
        *v = (*v + noise.sample(rng)).clamp(-1.0, 1.0);
    }
    AudioClip::new(samples, rate)
}

#[derive(Debug, Clone)]
pub struct DatasetSummary {
    pub manifest: PathBuf,
    pub sessions: usize,
    pub positives: usize,
}

/// Writes WAVs, per-segment parameter JSON and a corpus manifest into `dir`.
pub fn generate_dataset(dir: impl AsRef<Path>, cfg: &DatasetConfig) -> Result<DatasetSummary> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let sessions = synth_sessions(cfg)?;
    let mut rows = Vec::new();
    for s in &sessions {
        let glucose = if s.label == 1 { HIGH_GLUCOSE_MG_DL } else { LOW_GLUCOSE_MG_DL };
        for (kind, clip) in &s.segments {
            let wav = format!("{}_{}.wav", s.session_id, kind);
            corpus::encode_wav(clip, dir.join(&wav))?;
            let meta = dir.join(format!("{}_{}.json", s.session_id, kind));
            let text = serde_json::to_string_pretty(&serde_json::json!({
                "session_id": s.session_id,
                "segment": kind,
                "label": s.label,
                "voice": s.voice,
            }))?;
            std::fs::write(&meta, text).map_err(|e| Error::io(&meta, e))?;
            rows.push((s.session_id.clone(), format!("p{}", &s.session_id[3..]), *kind, wav, glucose));
        }
    }
    let manifest = dir.join("manifest.csv");
    corpus::write_manifest(
        &manifest,
        rows.iter()
            .map(|(sid, pid, k, wav, g)| (sid.as_str(), pid.as_str(), *k, wav.as_str(), *g)),
    )?;
    Ok(DatasetSummary {
        manifest,
        sessions: sessions.len(),
        positives: sessions.iter().filter(|s| s.label == 1).count(),
    })
}

/// Writes a generated clip and its truth record side by side.
pub fn write_with_truth(clip: &AudioClip, truth: &SynthTruth, wav_path: impl AsRef<Path>) -> Result<()> {
    let wav_path = wav_path.as_ref();
    corpus::encode_wav(clip, wav_path)?;
    let json = wav_path.with_extension("json");
    std::fs::write(&json, serde_json::to_string(truth)?).map_err(|e| Error::io(&json, e))
}
