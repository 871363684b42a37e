//! Numerical primitives shared by the extractors.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::corpus::AudioClip;
use crate::{Error, Result};

/// Layout of fixed-length, fixed-hop analysis frames over a signal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameGrid {
    pub frame_length: usize,
    pub hop: usize,
    pub n_frames: usize,
    pub sample_rate: u32,
}

impl FrameGrid {
    pub fn new(signal_len: usize, frame_length: usize, hop: usize, sample_rate: u32) -> Result<Self> {
        if hop == 0 || frame_length < hop {
            return Err(Error::Parameter(format!(
                "frame length {frame_length} must be >= hop {hop} >= 1"
            )));
        }
        if signal_len < frame_length {
            return Err(Error::EmptyGrid {
                len: signal_len,
                frame_length,
            });
        }
        Ok(Self {
            frame_length,
            hop,
            n_frames: (signal_len - frame_length) / hop + 1,
            sample_rate,
        })
    }

    /// Grid for millisecond frame and hop durations at `sample_rate`.
    pub fn from_ms(signal_len: usize, frame_ms: f64, hop_ms: f64, sample_rate: u32) -> Result<Self> {
        if !(hop_ms > 0.0) || frame_ms < hop_ms {
            return Err(Error::Parameter(format!(
                "need frame_ms >= hop_ms > 0, got {frame_ms} / {hop_ms}"
            )));
        }
        let to_samples = |ms: f64| ((ms * sample_rate as f64 / 1000.0).round() as usize).max(1);
        Self::new(signal_len, to_samples(frame_ms), to_samples(hop_ms), sample_rate)
    }

    pub fn start(&self, frame: usize) -> usize {
        frame * self.hop
    }

    pub fn range(&self, frame: usize) -> std::ops::Range<usize> {
        let s = self.start(frame);
        s..s + self.frame_length
    }

    /// Time of the frame centre in seconds.
    pub fn center_time(&self, frame: usize) -> f64 {
        (self.start(frame) as f64 + self.frame_length as f64 / 2.0) / self.sample_rate as f64
    }

    pub fn hop_seconds(&self) -> f64 {
        self.hop as f64 / self.sample_rate as f64
    }
}

/// Hann window `0.5 - 0.5 cos(2 pi n / (L - 1))`.
pub fn hann(len: usize) -> Vec<f64> {
    if len == 1 {
        return vec![1.0];
    }
    let denom = (len - 1) as f64;
    (0..len)
        .map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / denom).cos())
        .collect()
}

/// Splits a clip into Hann-windowed frames.
pub fn frame_signal(clip: &AudioClip, frame_ms: f64, hop_ms: f64) -> Result<(Vec<Vec<f64>>, FrameGrid)> {
    let grid = FrameGrid::from_ms(clip.len(), frame_ms, hop_ms, clip.sample_rate())?;
    let window = hann(grid.frame_length);
    let samples = clip.samples();
    let frames = (0..grid.n_frames)
        .map(|i| {
            samples[grid.range(i)]
                .iter()
                .zip(&window)
                .map(|(s, w)| s * w)
                .collect()
        })
        .collect();
    Ok((frames, grid))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Autocorrelation {
    /// `r[k] = sum_n x[n] x[n + k]` for `k = 0..=max_lag`.
    pub raw: Vec<f64>,
    /// `r[k] / r[0]`; all zero past lag 0 for a silent frame.
    pub normalized: Vec<f64>,
    pub silent: bool,
}

pub fn autocorrelation(frame: &[f64], max_lag: usize) -> Result<Autocorrelation> {
    if max_lag >= frame.len() {
        return Err(Error::Parameter(format!(
            "max lag {max_lag} must be below frame length {}",
            frame.len()
        )));
    }
    let raw: Vec<f64> = (0..=max_lag).map(|k| lag_product(frame, k)).collect();
    let silent = raw[0] <= 0.0;
    let normalized = if silent {
        let mut v = vec![0.0; max_lag + 1];
        v[0] = 1.0;
        v
    } else {
        raw.iter().map(|r| r / raw[0]).collect()
    };
    Ok(Autocorrelation {
        raw,
        normalized,
        silent,
    })
}

#[inline]
pub(crate) fn lag_product(x: &[f64], k: usize) -> f64 {
    x[..x.len() - k].iter().zip(&x[k..]).map(|(a, b)| a * b).sum()
}

/// Linear-prediction fit: `x[n] ~ sum_k coefficients[k-1] * x[n-k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Lpc {
    pub coefficients: Vec<f64>,
    pub reflection: Vec<f64>,
    /// Residual (prediction error) energy.
    pub gain: f64,
    /// Zero-lag autocorrelation of the analysed frame.
    pub energy: f64,
}

impl Lpc {
    /// Ratio of signal energy to residual energy (1 for unpredictable input).
    pub fn prediction_gain(&self) -> f64 {
        self.energy / self.gain
    }

    /// Inverse (analysis) filter: `e[n] = x[n] - sum_k a_k x[n-k]`.
    pub fn inverse_filter(&self, signal: &[f64]) -> Vec<f64> {
        inverse_filter(signal, &self.coefficients)
    }
}

const REFLECTION_LIMIT: f64 = 0.999;

/// Autocorrelation-method LPC through Levinson-Durbin.
pub fn lpc(frame: &[f64], order: usize) -> Result<Lpc> {
    if order >= frame.len() {
        return Err(Error::Parameter(format!(
            "LPC order {order} must be below frame length {}",
            frame.len()
        )));
    }
    let r: Vec<f64> = (0..=order).map(|k| lag_product(frame, k)).collect();
    levinson_durbin(&r, order)
}

/// Levinson-Durbin recursion on autocorrelation values `r[0..=order]`.
/// Reflection coefficients are clamped to +-0.999 so the synthesis filter
/// stays minimum phase.
pub fn levinson_durbin(r: &[f64], order: usize) -> Result<Lpc> {
    if r.len() <= order {
        return Err(Error::Parameter(format!(
            "need {} autocorrelation values, got {}",
            order + 1,
            r.len()
        )));
    }
    let energy = r[0];
    if !(energy > 0.0) || !energy.is_finite() {
        return Err(Error::DegenerateFrame);
    }
    let mut a = vec![0.0; order];
    let mut reflection = Vec::with_capacity(order);
    let mut err = energy;
    for i in 0..order {
        let acc = r[i + 1] - (0..i).map(|j| a[j] * r[i - j]).sum::<f64>();
        let k = (acc / err).clamp(-REFLECTION_LIMIT, REFLECTION_LIMIT);
        let prev = a.clone();
        a[i] = k;
        for j in 0..i {
            a[j] = prev[j] - k * prev[i - 1 - j];
        }
        err *= 1.0 - k * k;
        reflection.push(k);
        if !(err > 0.0) {
            return Err(Error::DegenerateFrame);
        }
    }
    Ok(Lpc {
        coefficients: a,
        reflection,
        gain: err,
        energy,
    })
}

pub fn inverse_filter(signal: &[f64], coefficients: &[f64]) -> Vec<f64> {
    (0..signal.len())
        .map(|n| {
            let pred: f64 = coefficients
                .iter()
                .enumerate()
                .take_while(|(k, _)| *k < n)
                .map(|(k, a)| a * signal[n - k - 1])
                .sum();
            signal[n] - pred
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub mse: f64,
}

/// Ordinary least squares `y = slope * x + intercept`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> Result<LineFit> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::Parameter(format!(
            "linear fit needs equal lengths >= 2, got {} and {}",
            x.len(),
            y.len()
        )));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    if sxx <= f64::EPSILON * mx.abs().max(1.0) * n {
        return Err(Error::ZeroVarianceAbscissa);
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let mse = x
        .iter()
        .zip(y)
        .map(|(a, b)| (b - slope * a - intercept).powi(2))
        .sum::<f64>()
        / n;
    Ok(LineFit {
        slope,
        intercept,
        mse,
    })
}

/// The six statistical functionals applied to every per-frame series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub mean: f64,
    pub std: f64,
    pub max: f64,
    pub min: f64,
    pub skewness: f64,
    pub kurtosis: f64,
}

impl Moments {
    pub const NAMES: [&'static str; 6] = ["mean", "std", "max", "min", "skewness", "kurtosis"];

    pub fn values(&self) -> [f64; 6] {
        [
            self.mean,
            self.std,
            self.max,
            self.min,
            self.skewness,
            self.kurtosis,
        ]
    }

    pub fn named(&self) -> impl Iterator<Item = (&'static str, f64)> {
        Self::NAMES.into_iter().zip(self.values())
    }
}

/// Population moments with excess kurtosis; constant input has zero skew and kurtosis.
pub fn moments(values: &[f64]) -> Result<Moments> {
    if values.is_empty() {
        return Err(Error::Domain("moments of an empty sequence".into()));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("moments of non-finite values".into()));
    }
    let n = values.len() as f64;
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mean = (values.iter().sum::<f64>() / n).clamp(min, max);
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for v in values {
        let d = v - mean;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    m2 /= n;
    m3 /= n;
    m4 /= n;
    let scale = mean.abs().max(max - min).max(f64::MIN_POSITIVE);
    let (skewness, kurtosis) = if max == min || m2.sqrt() <= 1e-12 * scale {
        (0.0, 0.0)
    } else {
        (m3 / m2.powf(1.5), m4 / (m2 * m2) - 3.0)
    };
    Ok(Moments {
        mean,
        std: m2.sqrt(),
        max,
        min,
        skewness,
        kurtosis,
    })
}

/// Median of a non-empty slice.
pub(crate) fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

pub(crate) fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Vertex offset in `(-0.5, 0.5)` and height of the parabola through three
/// equally spaced points centred on `b`.
pub(crate) fn parabolic_peak(a: f64, b: f64, c: f64) -> (f64, f64) {
    let denom = a - 2.0 * b + c;
    if denom.abs() < 1e-300 {
        return (0.0, b);
    }
    let offset = (0.5 * (a - c) / denom).clamp(-0.5, 0.5);
    (offset, b - 0.25 * (a - c) * offset)
}
