//! F0 tracking, voiced segmentation and pitch-cycle marking.

use std::io::Write;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::corpus::AudioClip;
use crate::dsp::{self, lag_product, FrameGrid};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PitchConfig {
    pub f0_min: f64,
    pub f0_max: f64,
    pub frame_ms: f64,
    pub hop_ms: f64,
    /// Minimum normalized autocorrelation peak for a voiced frame.
    pub voicing_threshold: f64,
    /// Minimum frame RMS relative to clip RMS for a voiced frame.
    pub rms_gate: f64,
    pub median_width: usize,
    /// Per-octave bonus favouring shorter lags, as in Boersma's tracker.
    pub octave_cost: f64,
    /// Shortest voiced run kept as a voiced segment.
    pub min_segment_frames: usize,
}

impl Default for PitchConfig {
    fn default() -> Self {
        Self {
            f0_min: 60.0,
            f0_max: 400.0,
            frame_ms: 40.0,
            hop_ms: 10.0,
            voicing_threshold: 0.45,
            rms_gate: 0.01,
            median_width: 3,
            octave_cost: 0.01,
            min_segment_frames: 3,
        }
    }
}

/// Per-frame F0 (0 when unvoiced) and voicing decisions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct F0Contour {
    pub f0: Vec<f64>,
    pub voiced: Vec<bool>,
    /// Peak normalized autocorrelation per frame.
    pub strength: Vec<f64>,
    pub grid: FrameGrid,
    pub f0_min: f64,
    pub f0_max: f64,
}

impl F0Contour {
    pub fn n_frames(&self) -> usize {
        self.f0.len()
    }

    pub fn voiced_count(&self) -> usize {
        self.voiced.iter().filter(|v| **v).count()
    }

    pub fn voiced_f0(&self) -> Vec<f64> {
        self.f0
            .iter()
            .zip(&self.voiced)
            .filter(|(_, v)| **v)
            .map(|(f, _)| *f)
            .collect()
    }

    pub fn median_voiced_f0(&self) -> Option<f64> {
        let v = self.voiced_f0();
        (!v.is_empty()).then(|| dsp::median(&v))
    }

    /// Writes `frame_index,time_s,f0_hz,voiced` rows.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "frame_index,time_s,f0_hz,voiced")?;
        for i in 0..self.n_frames() {
            writeln!(
                out,
                "{i},{},{},{}",
                self.grid.center_time(i),
                self.f0[i],
                u8::from(self.voiced[i])
            )?;
        }
        Ok(())
    }
}

/// A maximal run of voiced frames, `end_frame` exclusive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VoicedSegment {
    pub start_frame: usize,
    pub end_frame: usize,
    pub duration: f64,
}

impl VoicedSegment {
    pub fn frames(&self) -> Range<usize> {
        self.start_frame..self.end_frame
    }

    pub fn len(&self) -> usize {
        self.end_frame - self.start_frame
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Estimated period boundaries (fractional sample positions) grouped by voiced segment.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CycleMarks {
    pub marks: Vec<f64>,
    /// Peak amplitude of the cycle around each mark.
    pub peaks: Vec<f64>,
    /// Index ranges into `marks`, one per voiced segment.
    pub runs: Vec<Range<usize>>,
    pub sample_rate: u32,
}

impl CycleMarks {
    pub fn is_empty(&self) -> bool {
        self.marks.is_empty()
    }

    /// Cycle periods in seconds, per run. Periods never span a run boundary.
    pub fn periods(&self) -> Vec<Vec<f64>> {
        let fs = self.sample_rate as f64;
        self.runs
            .iter()
            .map(|r| {
                self.marks[r.clone()]
                    .windows(2)
                    .map(|w| (w[1] - w[0]) / fs)
                    .collect()
            })
            .collect()
    }

    /// Peak amplitudes per run, one per completed cycle.
    pub fn amplitudes(&self) -> Vec<Vec<f64>> {
        self.runs
            .iter()
            .map(|r| {
                let p = &self.peaks[r.clone()];
                p[..p.len().saturating_sub(1)].to_vec()
            })
            .collect()
    }
}

fn validate(cfg: &PitchConfig, sample_rate: u32) -> Result<()> {
    let nyquist = sample_rate as f64 / 2.0;
    if !(cfg.f0_min > 0.0 && cfg.f0_min < cfg.f0_max && cfg.f0_max < nyquist) {
        return Err(Error::Parameter(format!(
            "need 0 < f0_min < f0_max < {nyquist} Hz, got {} / {}",
            cfg.f0_min, cfg.f0_max
        )));
    }
    Ok(())
}

/// Relative height a peak near `lag / d` needs to replace `lag`.
const SUBMULTIPLE_RATIO: f64 = 0.75;
const SUBMULTIPLE_TOLERANCE: f64 = 0.05;

/// Autocorrelation pitch tracker.
///
/// Each raw frame is scored with the overlap-normalized autocorrelation
/// `r[k] / sqrt(E_head(k) * E_tail(k))` over lags `[fs/f0_max, fs/f0_min]`.
/// The best local maximum (with a small per-octave bonus for shorter lags)
/// is refined by parabolic interpolation and replaced by a nearly as strong
/// peak at half, a third or a quarter of its lag. A frame is voiced when that peak
/// reaches `voicing_threshold` and its RMS reaches `rms_gate` times the clip
/// RMS. A median filter then smooths F0 inside voiced runs.
pub fn track_f0(clip: &AudioClip, cfg: &PitchConfig) -> Result<F0Contour> {
    validate(cfg, clip.sample_rate())?;
    let fs = clip.sample_rate() as f64;
    let grid = FrameGrid::from_ms(clip.len(), cfg.frame_ms, cfg.hop_ms, clip.sample_rate())?;
    let len = grid.frame_length;
    let min_lag = ((fs / cfg.f0_max).floor() as usize).max(2);
    let max_lag = (fs / cfg.f0_min).ceil() as usize;
    if max_lag + 1 >= len {
        return Err(Error::Parameter(format!(
            "frame of {len} samples too short for f0_min {} Hz",
            cfg.f0_min
        )));
    }

    let clip_rms = clip.rms();
    let samples = clip.samples();
    let n = grid.n_frames;
    let mut f0 = vec![0.0; n];
    let mut voiced = vec![false; n];
    let mut strength = vec![0.0; n];
    let mut prefix = vec![0.0; len + 1];

    for i in 0..n {
        let frame = &samples[grid.range(i)];
        for (j, s) in frame.iter().enumerate() {
            prefix[j + 1] = prefix[j] + s * s;
        }
        let energy = prefix[len];
        let frame_rms = (energy / len as f64).sqrt();
        if clip_rms <= 0.0 || energy <= 0.0 {
            continue;
        }
        let nccf = |k: usize| -> f64 {
            let head = prefix[len - k];
            let tail = energy - prefix[k];
            let d = (head * tail).sqrt();
            if d > 0.0 {
                lag_product(frame, k) / d
            } else {
                0.0
            }
        };
        let values: Vec<f64> = (min_lag - 1..=max_lag + 1).map(nccf).collect();
        let at = |k: usize| values[k + 1 - min_lag];

        let mut peaks: Vec<(f64, f64)> = Vec::new();
        let mut best: Option<(f64, f64, f64)> = None;
        for k in min_lag..=max_lag {
            let (a, b, c) = (at(k - 1), at(k), at(k + 1));
            if b <= 0.0 || b < a || b < c {
                continue;
            }
            let (offset, height) = dsp::parabolic_peak(a, b, c);
            let lag = k as f64 + offset;
            peaks.push((lag, height));
            let score = height - cfg.octave_cost * (cfg.f0_min * lag / fs).log2();
            if best.is_none_or(|(_, _, s)| score > s) {
                best = Some((lag, height, score));
            }
        }
        let Some((mut lag, mut height, _)) = best else {
            continue;
        };
        // A strong peak near an integer fraction of the chosen lag means the
        // chosen lag spans several periods.
        if let Some(&(l, h)) = peaks.iter().find(|&&(l, h)| {
            h >= SUBMULTIPLE_RATIO * height
                && (2..=4).any(|d| ((lag / d as f64) - l).abs() <= SUBMULTIPLE_TOLERANCE * l)
        }) {
            (lag, height) = (l, h);
        }
        strength[i] = height;
        let freq = fs / lag;
        if height >= cfg.voicing_threshold
            && frame_rms >= cfg.rms_gate * clip_rms
            && (cfg.f0_min..=cfg.f0_max).contains(&freq)
        {
            f0[i] = freq;
            voiced[i] = true;
        }
    }

    median_smooth(&mut f0, &voiced, cfg.median_width);
    for i in 0..n {
        if voiced[i] && !(cfg.f0_min..=cfg.f0_max).contains(&f0[i]) {
            voiced[i] = false;
        }
        if !voiced[i] {
            f0[i] = 0.0;
        }
    }

    Ok(F0Contour {
        f0,
        voiced,
        strength,
        grid,
        f0_min: cfg.f0_min,
        f0_max: cfg.f0_max,
    })
}

/// Median filter over voiced frames; the window never crosses an unvoiced frame.
fn median_smooth(f0: &mut [f64], voiced: &[bool], width: usize) {
    if width < 2 {
        return;
    }
    let half = width / 2;
    let original = f0.to_vec();
    for i in 0..f0.len() {
        if !voiced[i] {
            continue;
        }
        let lo = (i.saturating_sub(half)..i)
            .rev()
            .take_while(|&j| voiced[j])
            .last()
            .unwrap_or(i);
        let hi = (i + 1..(i + half + 1).min(f0.len()))
            .take_while(|&j| voiced[j])
            .last()
            .unwrap_or(i);
        if hi - lo + 1 == 2 * half + 1 {
            f0[i] = dsp::median(&original[lo..=hi]);
        }
    }
}

/// Maximal voiced runs of at least `min_frames` frames.
pub fn voiced_segments(contour: &F0Contour, min_frames: usize) -> Vec<VoicedSegment> {
    let hop = contour.grid.hop_seconds();
    let mut out = Vec::new();
    let mut i = 0;
    let n = contour.voiced.len();
    while i < n {
        if !contour.voiced[i] {
            i += 1;
            continue;
        }
        let start = i;
        while i < n && contour.voiced[i] {
            i += 1;
        }
        if i - start >= min_frames.max(1) {
            out.push(VoicedSegment {
                start_frame: start,
                end_frame: i,
                duration: (i - start) as f64 * hop,
            });
        }
    }
    out
}

const MARK_SEARCH: f64 = 0.2;
/// Matching window as a fraction of the period. Longer windows pick up the
/// previous cycle's resonance and average neighbouring periods.
const MARK_WINDOW: f64 = 0.5;
/// A run ends when the best cycle-to-cycle correlation drops below this.
const MARK_MIN_CORRELATION: f64 = 0.5;
/// Half-width in samples of the windowed-sinc peak interpolator.
const SINC_HALF_WIDTH: usize = 8;
const GOLDEN_STEPS: usize = 40;

/// Places one mark per cycle inside each voiced segment of at least
/// `min_frames` frames.
///
/// The first mark is the largest sample in the first expected period. Each
/// following mark sits one lag further on, where the lag maximizes the
/// normalized cross-correlation between a half-period window at the current
/// mark and the shifted window. Peak amplitudes are the band-limited maximum
/// within half a period of each mark.
pub fn mark_cycles(clip: &AudioClip, contour: &F0Contour, min_frames: usize) -> CycleMarks {
    let fs = clip.sample_rate() as f64;
    let x = clip.samples();
    let grid = contour.grid;
    let mut out = CycleMarks {
        sample_rate: clip.sample_rate(),
        ..Default::default()
    };

    // Expected period in samples at sample position `p`, taken from the
    // nearest voiced frame of the segment.
    let period_at = |p: f64, seg: &VoicedSegment| -> f64 {
        let centre = (p - grid.frame_length as f64 / 2.0) / grid.hop as f64;
        let f = (centre.round().max(0.0) as usize).clamp(seg.start_frame, seg.end_frame - 1);
        fs / contour.f0[f]
    };

    for seg in voiced_segments(contour, min_frames) {
        let start = grid.start(seg.start_frame);
        let end = grid.range(seg.end_frame - 1).end.min(x.len());
        let first_period = period_at(start as f64, &seg);
        let first_end = (start + first_period.ceil() as usize).min(end);
        if first_end <= start + 2 {
            continue;
        }
        let lo_mark = out.marks.len();
        let mut pos = argmax(x, start, first_end) as f64;
        out.marks.push(pos);
        loop {
            let t = period_at(pos, &seg);
            match next_lag(&x[..end], pos.round() as usize, t) {
                Some(lag) => {
                    pos += lag;
                    out.marks.push(pos);
                }
                None => break,
            }
        }
        let count = out.marks.len() - lo_mark;
        if count < 2 {
            out.marks.truncate(lo_mark);
            continue;
        }
        for i in lo_mark..out.marks.len() {
            let t = period_at(out.marks[i], &seg);
            out.peaks.push(cycle_peak(&x[start..end], out.marks[i] - start as f64, t));
        }
        out.runs.push(lo_mark..out.marks.len());
    }
    out
}

/// Fractional lag in `[(1 - s)t, (1 + s)t]` that best aligns the short
/// window at `m` with a later window, or `None` past the end of `x` or when
/// the alignment is poor.
///
/// The raw cross-correlation is band-limited in the lag, so the fractional
/// peak comes from sinc interpolation of its integer-lag values around the
/// best normalized integer lag.
fn next_lag(x: &[f64], m: usize, t: f64) -> Option<f64> {
    let w = (t * MARK_WINDOW).round().max(2.0) as usize;
    let lo = ((1.0 - MARK_SEARCH) * t).floor().max(2.0) as usize;
    let hi = ((1.0 + MARK_SEARCH) * t).ceil() as usize;
    let pad = SINC_HALF_WIDTH;
    if m + hi + pad + w > x.len() || lo <= pad {
        return None;
    }
    let head = &x[m..m + w];
    let e0: f64 = head.iter().map(|v| v * v).sum();
    if e0 <= 0.0 {
        return None;
    }
    // Integer lags lo - pad ..= hi + pad, stored from index 0.
    let first = lo - pad;
    let (dots, energies): (Vec<f64>, Vec<f64>) = (first..=hi + pad)
        .map(|l| {
            let tail = &x[m + l..m + l + w];
            let dot: f64 = head.iter().zip(tail).map(|(a, b)| a * b).sum();
            (dot, tail.iter().map(|v| v * v).sum::<f64>())
        })
        .unzip();
    let ncc = |d: f64, e: f64| if e > 0.0 { d / (e0 * e).sqrt() } else { 0.0 };
    let best = (lo..=hi)
        .map(|l| l - first)
        .max_by(|&a, &b| ncc(dots[a], energies[a]).total_cmp(&ncc(dots[b], energies[b])).then(b.cmp(&a)))?;
    if ncc(dots[best], energies[best]) < MARK_MIN_CORRELATION {
        return None;
    }
    let (u, _) = golden_max(|u| sinc_interpolate(&dots, u), best as f64 - 1.0, best as f64 + 1.0);
    Some(first as f64 + u)
}

/// Golden-section search for the maximum of `f` on `[a, b]`.
fn golden_max(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> (f64, f64) {
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - ratio * (b - a);
    let mut d = a + ratio * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..GOLDEN_STEPS {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - ratio * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + ratio * (b - a);
            fd = f(d);
        }
    }
    if fc > fd { (c, fc) } else { (d, fd) }
}

/// Band-limited maximum of `x` within half a period of `mark`.
fn cycle_peak(x: &[f64], mark: f64, t: f64) -> f64 {
    let lo = (mark - t / 2.0).round().max(0.0) as usize;
    let hi = ((mark + t / 2.0).round() as usize).min(x.len());
    if lo >= hi {
        return 0.0;
    }
    let i = argmax(x, lo, hi);
    if i < SINC_HALF_WIDTH || i + SINC_HALF_WIDTH >= x.len() {
        return x[i];
    }
    let (_, height) = golden_max(|u| sinc_interpolate(x, u), i as f64 - 1.0, i as f64 + 1.0);
    height.max(x[i])
}

/// Hann-windowed sinc interpolation of `x` at fractional position `u`.
fn sinc_interpolate(x: &[f64], u: f64) -> f64 {
    let h = SINC_HALF_WIDTH as f64;
    let base = u.floor() as isize;
    let mut acc = 0.0;
    for n in base - SINC_HALF_WIDTH as isize + 1..=base + SINC_HALF_WIDTH as isize {
        if n < 0 || n as usize >= x.len() {
            continue;
        }
        let d = u - n as f64;
        if d.abs() >= h {
            continue;
        }
        let sinc = if d == 0.0 {
            1.0
        } else {
            (std::f64::consts::PI * d).sin() / (std::f64::consts::PI * d)
        };
        let window = 0.5 * (1.0 + (std::f64::consts::PI * d / h).cos());
        acc += x[n as usize] * sinc * window;
    }
    acc
}

fn argmax(x: &[f64], lo: usize, hi: usize) -> usize {
    (lo..hi)
        .max_by(|&a, &b| x[a].total_cmp(&x[b]).then(b.cmp(&a)))
        .unwrap_or(lo)
}

/// Pitch contour plus cycle marks for one clip.
#[derive(Debug, Clone)]
pub struct PitchAnalysis {
    pub contour: F0Contour,
    pub segments: Vec<VoicedSegment>,
    pub cycles: CycleMarks,
}

pub fn analyze(clip: &AudioClip, cfg: &PitchConfig) -> Result<PitchAnalysis> {
    let contour = track_f0(clip, cfg)?;
    let segments = voiced_segments(&contour, cfg.min_segment_frames);
    let cycles = mark_cycles(clip, &contour, cfg.min_segment_frames);
    Ok(PitchAnalysis {
        contour,
        segments,
        cycles,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn sawtooth(f0: f64, seconds: f64, rate: u32) -> AudioClip {
        let n = (seconds * rate as f64) as usize;
        let s = (0..n)
            .map(|i| {
                let ph = (i as f64 * f0 / rate as f64).fract();
                0.8 * (1.0 - 2.0 * ph)
            })
            .collect();
        AudioClip::new(s, rate).unwrap()
    }

    fn contour_from_mask(mask: &[bool]) -> F0Contour {
        F0Contour {
            f0: mask.iter().map(|&v| if v { 150.0 } else { 0.0 }).collect(),
            voiced: mask.to_vec(),
            strength: vec![0.0; mask.len()],
            grid: FrameGrid::new(640 + 160 * (mask.len() - 1), 640, 160, 16000).unwrap(),
            f0_min: 60.0,
            f0_max: 400.0,
        }
    }

    #[test]
    fn tracks_sawtooth() {
        let c = track_f0(&sawtooth(150.0, 1.0, 16000), &PitchConfig::default()).unwrap();
        let med = c.median_voiced_f0().unwrap();
        assert!((med - 150.0).abs() < 2.0, "median {med}");
        assert!(c.voiced_count() > c.n_frames() * 9 / 10);
    }

    #[test]
    fn silence_is_unvoiced() {
        let clip = AudioClip::new(vec![0.0; 16000], 16000).unwrap();
        let c = track_f0(&clip, &PitchConfig::default()).unwrap();
        assert_eq!(c.voiced_count(), 0);
        assert!(c.f0.iter().all(|&f| f == 0.0));
        assert!(mark_cycles(&clip, &c, 3).is_empty());
    }

    #[test]
    fn white_noise_is_mostly_unvoiced() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let normal = Normal::new(0.0, 0.2).unwrap();
        let mut total = 0.0;
        for _ in 0..50 {
            let s: Vec<f64> = (0..8000)
                .map(|_| f64::clamp(normal.sample(&mut rng), -1.0, 1.0))
                .collect();
            let c = track_f0(&AudioClip::new(s, 16000).unwrap(), &PitchConfig::default()).unwrap();
            let frac = c.voiced_count() as f64 / c.n_frames() as f64;
            assert!(frac < 0.2, "voiced fraction {frac}");
            total += frac;
        }
        assert!(total / 50.0 < 0.05);
    }

    #[test]
    fn amplitude_doubling_changes_nothing() {
        let clip = sawtooth(180.0, 0.5, 16000).scaled(0.5);
        let doubled = clip.scaled(2.0);
        let a = track_f0(&clip, &PitchConfig::default()).unwrap();
        let b = track_f0(&doubled, &PitchConfig::default()).unwrap();
        assert_eq!(a.f0, b.f0);
        assert_eq!(a.voiced, b.voiced);
    }

    #[test]
    fn invalid_range_rejected() {
        let clip = sawtooth(150.0, 0.2, 8000);
        let cfg = PitchConfig {
            f0_max: 4500.0,
            ..Default::default()
        };
        assert!(track_f0(&clip, &cfg).is_err());
    }

    #[test]
    fn segments_from_masks() {
        let m = |s: &str| s.chars().map(|c| c == '1').collect::<Vec<_>>();
        assert_eq!(voiced_segments(&contour_from_mask(&m("111000111")), 3).len(), 2);
        assert_eq!(voiced_segments(&contour_from_mask(&m("110011")), 3).len(), 0);
        let segs = voiced_segments(&contour_from_mask(&m("0111101")), 1);
        assert_eq!(segs[0].frames(), 1..5);
        assert!((segs[0].duration - 0.04).abs() < 1e-12);
    }

    fn pulse_train(periods: &[usize], rate: u32) -> AudioClip {
        let total: usize = periods.iter().sum::<usize>() + 200;
        let mut s = vec![0.0; total];
        let mut t = 50;
        for &p in periods {
            s[t] = 0.9;
            t += p;
        }
        AudioClip::new(s, rate).unwrap()
    }

    fn constant_contour(len: usize, f0: f64, rate: u32) -> F0Contour {
        let grid = FrameGrid::from_ms(len, 40.0, 10.0, rate).unwrap();
        F0Contour {
            f0: vec![f0; grid.n_frames],
            voiced: vec![true; grid.n_frames],
            strength: vec![1.0; grid.n_frames],
            grid,
            f0_min: 60.0,
            f0_max: 400.0,
        }
    }

    #[test]
    fn marks_regular_pulse_train() {
        let clip = pulse_train(&[100; 60], 16000);
        let c = constant_contour(clip.len(), 160.0, 16000);
        let marks = mark_cycles(&clip, &c, 3);
        let d: Vec<f64> = marks.marks.windows(2).map(|w| w[1] - w[0]).collect();
        assert!(d.len() > 50);
        assert!(d.iter().all(|&v| (v - 100.0).abs() < 1e-6), "{d:?}");
    }

    #[test]
    fn marks_alternating_periods() {
        let periods: Vec<usize> = (0..60).map(|i| if i % 2 == 0 { 100 } else { 110 }).collect();
        let clip = pulse_train(&periods, 16000);
        let c = constant_contour(clip.len(), 16000.0 / 105.0, 16000);
        let marks = mark_cycles(&clip, &c, 3);
        let d: Vec<f64> = marks.marks.windows(2).map(|w| w[1] - w[0]).collect();
        assert!(d.len() > 50);
        for w in d.windows(2) {
            assert!((w[0] - w[1]).abs() >= 9.0 && (w[0] - w[1]).abs() <= 11.0, "{w:?}");
        }
        for v in &d {
            assert!((v - 100.0).abs() <= 1.0 || (v - 110.0).abs() <= 1.0);
        }
    }

    #[test]
    fn marks_increase_and_match_f0() {
        let clip = sawtooth(200.0, 1.0, 16000);
        let a = analyze(&clip, &PitchConfig::default()).unwrap();
        assert!(a.cycles.marks.windows(2).all(|w| w[1] > w[0]));
        let periods: Vec<f64> = a.cycles.periods().concat();
        let mean_hz = 1.0 / dsp::mean(&periods);
        let med = a.contour.median_voiced_f0().unwrap();
        assert!((mean_hz - med).abs() / med < 0.1);
    }

    #[test]
    fn contour_csv_has_header() {
        let c = contour_from_mask(&[true, false]);
        let mut buf = Vec::new();
        c.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("frame_index,time_s,f0_hz,voiced\n0,0.02,150,1\n"));
    }
}
