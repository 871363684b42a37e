//! Regularized binary logistic regression and stratified grid search.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

const PROB_CLIP: f64 = 1e-12;
pub const MAX_ITERATIONS: usize = 10_000;
const GRADIENT_TOLERANCE: f64 = 1e-6;
const STEP_TOLERANCE: f64 = 1e-8;
const ARMIJO: f64 = 1e-4;
/// Intercept magnitude of the constant fallback model.
const CONSTANT_LOGIT: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Penalty {
    L1,
    L2,
}

impl Penalty {
    pub fn as_str(self) -> &'static str {
        match self {
            Penalty::L1 => "l1",
            Penalty::L2 => "l2",
        }
    }

    /// `(1/C) sum |theta|` or `(1/(2C)) sum theta^2`.
    pub fn value(self, theta: &[f64], c: f64) -> f64 {
        match self {
            Penalty::L1 => theta.iter().map(|t| t.abs()).sum::<f64>() / c,
            Penalty::L2 => theta.iter().map(|t| t * t).sum::<f64>() / (2.0 * c),
        }
    }
}

impl fmt::Display for Penalty {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Penalty {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "l1" => Ok(Penalty::L1),
            "l2" => Ok(Penalty::L2),
            other => Err(Error::Validation(format!("unknown penalty {other:?} (expected l1 or l2)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub theta: Vec<f64>,
    pub theta0: f64,
    pub penalty: Penalty,
    #[serde(rename = "C")]
    pub c: f64,
    pub decision_threshold: f64,
    pub converged: bool,
    #[serde(default, skip_serializing)]
    pub iterations: usize,
}

impl LogisticModel {
    pub fn new(theta: Vec<f64>, theta0: f64, penalty: Penalty, c: f64) -> Result<Self> {
        if !(c > 0.0) {
            return Err(Error::Parameter(format!("C must be positive, got {c}")));
        }
        Ok(Self {
            theta,
            theta0,
            penalty,
            c,
            decision_threshold: 0.5,
            converged: true,
            iterations: 0,
        })
    }

    /// Model that predicts `class` for every input.
    pub fn constant(k: usize, class: u8, penalty: Penalty, c: f64) -> Self {
        Self {
            theta: vec![0.0; k],
            theta0: if class == 1 { CONSTANT_LOGIT } else { -CONSTANT_LOGIT },
            penalty,
            c,
            decision_threshold: 0.5,
            converged: true,
            iterations: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.theta.len()
    }

    pub fn with_threshold(mut self, threshold: f64) -> Result<Self> {
        if !(threshold > 0.0 && threshold < 1.0) {
            return Err(Error::Parameter(format!("decision threshold {threshold} outside (0, 1)")));
        }
        self.decision_threshold = threshold;
        Ok(self)
    }
}

/// `z = theta0 + theta . x`.
pub fn acoustic_predictor(model: &LogisticModel, x: &[f64]) -> Result<f64> {
    if x.len() != model.dim() {
        return Err(Error::Schema(format!("input has {} values, model expects {}", x.len(), model.dim())));
    }
    Ok(model.theta0 + dot(&model.theta, x))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Logistic function, evaluated without overflow for any finite `z`.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Mean negative log-likelihood with probabilities clipped to
/// `[1e-12, 1 - 1e-12]`, plus the penalty on `theta` (pass `C = inf` for none).
pub fn loss(labels: &[u8], probabilities: &[f64], theta: &[f64], penalty: Penalty, c: f64) -> Result<f64> {
    if labels.len() != probabilities.len() || labels.is_empty() {
        return Err(Error::Schema(format!(
            "{} labels vs {} probabilities",
            labels.len(),
            probabilities.len()
        )));
    }
    let nll = labels
        .iter()
        .zip(probabilities)
        .map(|(&y, &p)| {
            let p = p.clamp(PROB_CLIP, 1.0 - PROB_CLIP);
            if y == 1 {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum::<f64>()
        / labels.len() as f64;
    Ok(nll + penalty.value(theta, c))
}

/// Training data borrowed as rows of equal length.
struct Problem<'a> {
    x: &'a [Vec<f64>],
    y: &'a [u8],
    k: usize,
}

impl<'a> Problem<'a> {
    fn new(x: &'a [Vec<f64>], y: &'a [u8]) -> Result<Self> {
        if x.len() != y.len() || x.is_empty() {
            return Err(Error::Schema(format!("{} rows vs {} labels", x.len(), y.len())));
        }
        let k = x[0].len();
        if x.iter().any(|r| r.len() != k) {
            return Err(Error::Schema("rows differ in length".into()));
        }
        if x.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Domain("non-finite input".into()));
        }
        Ok(Self { x, y, k })
    }

    fn m(&self) -> f64 {
        self.x.len() as f64
    }

    fn probabilities(&self, theta0: f64, theta: &[f64]) -> Vec<f64> {
        self.x.iter().map(|r| sigmoid(theta0 + dot(theta, r))).collect()
    }

    fn objective(&self, theta0: f64, theta: &[f64], penalty: Penalty, c: f64) -> f64 {
        loss(self.y, &self.probabilities(theta0, theta), theta, penalty, c).expect("shapes checked")
    }

    /// Gradient of the smooth part plus, for l2, the penalty; index 0 is the intercept.
    fn gradient(&self, theta0: f64, theta: &[f64], l2_c: Option<f64>) -> Vec<f64> {
        let mut g = vec![0.0; self.k + 1];
        for (row, (&y, p)) in self.x.iter().zip(self.y.iter().zip(self.probabilities(theta0, theta))) {
            let r = p - y as f64;
            g[0] += r;
            for (gj, xj) in g[1..].iter_mut().zip(row) {
                *gj += r * xj;
            }
        }
        let m = self.m();
        g.iter_mut().for_each(|v| *v /= m);
        if let Some(c) = l2_c {
            for (gj, t) in g[1..].iter_mut().zip(theta) {
                *gj += t / c;
            }
        }
        g
    }

    /// `0.25 * mean x_j^2`, an upper bound on the smooth Hessian diagonal.
    fn curvature(&self) -> Vec<f64> {
        (0..self.k)
            .map(|j| 0.25 * self.x.iter().map(|r| r[j] * r[j]).sum::<f64>() / self.m())
            .collect()
    }
}

/// Gradient of the l2-penalized objective `[d/d theta0, d/d theta...]`.
pub fn gradient(x: &[Vec<f64>], y: &[u8], theta0: f64, theta: &[f64], c: f64) -> Result<Vec<f64>> {
    let p = Problem::new(x, y)?;
    if theta.len() != p.k {
        return Err(Error::Schema("theta length differs from input dimension".into()));
    }
    Ok(p.gradient(theta0, theta, Some(c)))
}

/// Penalized objective at `(theta0, theta)`.
pub fn objective(x: &[Vec<f64>], y: &[u8], theta0: f64, theta: &[f64], penalty: Penalty, c: f64) -> Result<f64> {
    let p = Problem::new(x, y)?;
    if theta.len() != p.k {
        return Err(Error::Schema("theta length differs from input dimension".into()));
    }
    Ok(p.objective(theta0, theta, penalty, c))
}

/// Fits the penalized model from `theta = 0`.
///
/// l2 runs full-batch gradient descent, scaled by the diagonal curvature
/// bound, with Armijo backtracking until `max |gradient| <= 1e-6`. l1 runs
/// cyclic coordinate descent with soft-thresholding on the same curvature
/// bound until no coefficient moves more than 1e-8 in a sweep. Both stop after
/// 10 000 iterations with `converged = false`. `seed` is unused by these
/// deterministic solvers.
pub fn fit(x: &[Vec<f64>], y: &[u8], penalty: Penalty, c: f64, seed: u64) -> Result<LogisticModel> {
    let _ = seed;
    if !(c > 0.0) {
        return Err(Error::Parameter(format!("C must be positive, got {c}")));
    }
    let p = Problem::new(x, y)?;
    if p.x.len() < 2 || !(y.contains(&0) && y.contains(&1)) {
        return Err(Error::DegenerateLabels);
    }
    let (theta0, theta, converged, iterations) = match penalty {
        Penalty::L2 => fit_l2(&p, c),
        Penalty::L1 => fit_l1(&p, c),
    };
    if !converged {
        log::warn!("{penalty} fit with C = {c} stopped after {iterations} iterations without converging");
    }
    Ok(LogisticModel {
        theta,
        theta0,
        penalty,
        c,
        decision_threshold: 0.5,
        converged,
        iterations,
    })
}

fn fit_l2(p: &Problem, c: f64) -> (f64, Vec<f64>, bool, usize) {
    let mut scale = vec![0.25];
    scale.extend(p.curvature().iter().map(|h| h + 1.0 / c));
    let mut theta0 = 0.0;
    let mut theta = vec![0.0; p.k];
    let mut f = p.objective(theta0, &theta, Penalty::L2, c);
    for it in 0..MAX_ITERATIONS {
        let g = p.gradient(theta0, &theta, Some(c));
        if g.iter().all(|v| v.abs() <= GRADIENT_TOLERANCE) {
            return (theta0, theta, true, it);
        }
        let d: Vec<f64> = g.iter().zip(&scale).map(|(gi, s)| -gi / s).collect();
        let slope = dot(&g, &d);
        let mut t = 1.0;
        loop {
            let c0 = theta0 + t * d[0];
            let ct: Vec<f64> = theta.iter().zip(&d[1..]).map(|(a, b)| a + t * b).collect();
            let fc = p.objective(c0, &ct, Penalty::L2, c);
            if fc <= f + ARMIJO * t * slope || t < 1e-20 {
                debug_assert!(fc <= f + 1e-12, "line search increased the loss");
                if fc <= f {
                    theta0 = c0;
                    theta = ct;
                    f = fc;
                }
                break;
            }
            t *= 0.5;
        }
        if t < 1e-20 {
            return (theta0, theta, false, it + 1);
        }
    }
    (theta0, theta, false, MAX_ITERATIONS)
}

fn soft_threshold(v: f64, lambda: f64) -> f64 {
    if v > lambda {
        v - lambda
    } else if v < -lambda {
        v + lambda
    } else {
        0.0
    }
}

fn fit_l1(p: &Problem, c: f64) -> (f64, Vec<f64>, bool, usize) {
    let curvature = p.curvature();
    let m = p.m();
    let lambda = 1.0 / c;
    let mut theta0 = 0.0;
    let mut theta = vec![0.0; p.k];
    let mut z = vec![0.0; p.x.len()];
    let residual_sum = |z: &[f64], col: Option<usize>| -> f64 {
        z.iter()
            .zip(p.x.iter().zip(p.y))
            .map(|(zi, (row, &y))| (sigmoid(*zi) - y as f64) * col.map_or(1.0, |j| row[j]))
            .sum::<f64>()
            / m
    };
    for sweep in 0..MAX_ITERATIONS {
        let mut max_change = 0.0f64;
        let step0 = -residual_sum(&z, None) / 0.25;
        theta0 += step0;
        z.iter_mut().for_each(|v| *v += step0);
        max_change = max_change.max(step0.abs());
        for j in 0..p.k {
            if curvature[j] <= 0.0 {
                continue;
            }
            let g = residual_sum(&z, Some(j));
            let h = curvature[j];
            let new = soft_threshold(theta[j] - g / h, lambda / h);
            let delta = new - theta[j];
            if delta != 0.0 {
                theta[j] = new;
                for (zi, row) in z.iter_mut().zip(p.x) {
                    *zi += delta * row[j];
                }
            }
            max_change = max_change.max(delta.abs());
        }
        if max_change <= STEP_TOLERANCE {
            return (theta0, theta, true, sweep + 1);
        }
    }
    (theta0, theta, false, MAX_ITERATIONS)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub class: u8,
    pub probability: f64,
    pub z: f64,
}

/// Class 1 iff `sigmoid(z) >= decision_threshold`.
pub fn predict(model: &LogisticModel, x: &[f64]) -> Result<Prediction> {
    let z = acoustic_predictor(model, x)?;
    let probability = sigmoid(z);
    Ok(Prediction {
        class: u8::from(probability >= model.decision_threshold),
        probability,
        z,
    })
}

pub const DEFAULT_C_VALUES: [f64; 7] = [0.01, 0.1, 0.5, 0.9, 1.0, 5.0, 10.0];
pub const DEFAULT_CV_FOLDS: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperGrid {
    pub c_values: Vec<f64>,
    pub penalties: Vec<Penalty>,
    pub cv_folds: usize,
}

impl Default for HyperGrid {
    fn default() -> Self {
        Self {
            c_values: DEFAULT_C_VALUES.to_vec(),
            penalties: vec![Penalty::L1, Penalty::L2],
            cv_folds: DEFAULT_CV_FOLDS,
        }
    }
}

impl HyperGrid {
    pub fn new(c_values: Vec<f64>, penalties: Vec<Penalty>, cv_folds: usize) -> Result<Self> {
        let g = Self {
            c_values,
            penalties,
            cv_folds,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if self.c_values.is_empty() || self.penalties.is_empty() {
            return Err(Error::Validation("grid needs at least one C value and one penalty".into()));
        }
        if let Some(c) = self.c_values.iter().find(|c| !(**c > 0.0 && c.is_finite())) {
            return Err(Error::Validation(format!("grid C values must be positive, got {c}")));
        }
        if self.cv_folds < 2 {
            return Err(Error::Validation("grid needs at least 2 folds".into()));
        }
        Ok(())
    }

    /// Every `(penalty, C)` pair, penalties outermost.
    pub fn combinations(&self) -> Vec<(Penalty, f64)> {
        self.penalties
            .iter()
            .flat_map(|&p| self.c_values.iter().map(move |&c| (p, c)))
            .collect()
    }
}

impl FromStr for HyperGrid {
    type Err = Error;

    /// `default`, or `<C,C,...>[:<penalty,...>[:<folds>]]`, e.g. `0.1,0.9,5:l1,l2:5`.
    fn from_str(s: &str) -> Result<Self> {
        if s.trim() == "default" {
            return Ok(Self::default());
        }
        let mut parts = s.split(':');
        let c_values = parts
            .next()
            .unwrap_or_default()
            .split(',')
            .map(|c| {
                c.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Validation(format!("invalid grid C value {c:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let penalties = match parts.next() {
            Some(p) => p.split(',').map(str::parse).collect::<Result<Vec<_>>>()?,
            None => vec![Penalty::L1, Penalty::L2],
        };
        let cv_folds = match parts.next() {
            Some(f) => f
                .trim()
                .parse()
                .map_err(|_| Error::Validation(format!("invalid grid fold count {f:?}")))?,
            None => DEFAULT_CV_FOLDS,
        };
        if parts.next().is_some() {
            return Err(Error::Validation(format!("invalid grid spec {s:?}")));
        }
        Self::new(c_values, penalties, cv_folds)
    }
}

/// Stratified assignment of rows to `folds` folds: each class is shuffled
/// with the seeded generator and dealt round-robin.
pub fn stratified_folds(labels: &[u8], folds: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = vec![Vec::new(); folds];
    let mut next = 0;
    for class in [0u8, 1] {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        idx.shuffle(&mut rng);
        for i in idx {
            out[next % folds].push(i);
            next += 1;
        }
    }
    out.iter_mut().for_each(|f| f.sort_unstable());
    out
}

/// Fit that falls back to a constant model when the labels hold one class.
pub fn fit_or_constant(x: &[Vec<f64>], y: &[u8], penalty: Penalty, c: f64, seed: u64) -> Result<LogisticModel> {
    match fit(x, y, penalty, c, seed) {
        Err(Error::DegenerateLabels) if !y.is_empty() => {
            log::warn!("single-class training fold; using a constant model");
            let k = x.first().map_or(0, Vec::len);
            Ok(LogisticModel::constant(k, y[0], penalty, c))
        }
        other => other,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridScore {
    pub penalty: Penalty,
    pub c: f64,
    pub mean_accuracy: f64,
    pub fold_accuracies: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridResult {
    pub best_penalty: Penalty,
    pub best_c: f64,
    pub scores: Vec<GridScore>,
}

/// Accuracy of `(penalty, C)` on each validation fold.
pub fn cv_accuracies(x: &[Vec<f64>], y: &[u8], folds: &[Vec<usize>], penalty: Penalty, c: f64, seed: u64) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(folds.len());
    for held in folds {
        if held.is_empty() {
            continue;
        }
        let train: Vec<usize> = (0..y.len()).filter(|i| held.binary_search(i).is_err()).collect();
        let tx: Vec<Vec<f64>> = train.iter().map(|&i| x[i].clone()).collect();
        let ty: Vec<u8> = train.iter().map(|&i| y[i]).collect();
        let model = fit_or_constant(&tx, &ty, penalty, c, seed)?;
        let mut correct = 0;
        for &i in held {
            if predict(&model, &x[i])?.class == y[i] {
                correct += 1;
            }
        }
        out.push(correct as f64 / held.len() as f64);
    }
    Ok(out)
}

/// Exhaustive search scored by mean stratified-CV accuracy. Ties go to the
/// larger C, then to l2. Combinations run across `jobs` threads; the
/// outcome does not depend on `jobs`.
pub fn grid_search(x: &[Vec<f64>], y: &[u8], grid: &HyperGrid, seed: u64, jobs: usize) -> Result<GridResult> {
    grid.validate()?;
    Problem::new(x, y)?;
    if !(y.contains(&0) && y.contains(&1)) {
        return Err(Error::DegenerateLabels);
    }
    if grid.cv_folds > y.len() {
        return Err(Error::Parameter(format!("{} folds for {} rows", grid.cv_folds, y.len())));
    }
    let folds = stratified_folds(y, grid.cv_folds, seed);
    let combos = grid.combinations();
    let scored = crate::par_map(&combos, jobs, |&(penalty, c)| {
        cv_accuracies(x, y, &folds, penalty, c, seed).map(|acc| GridScore {
            penalty,
            c,
            mean_accuracy: acc.iter().sum::<f64>() / acc.len() as f64,
            fold_accuracies: acc,
        })
    });
    let scores = scored.into_iter().collect::<Result<Vec<_>>>()?;
    let best = scores
        .iter()
        .reduce(|best, s| if better(s, best) { s } else { best })
        .expect("non-empty grid");
    Ok(GridResult {
        best_penalty: best.penalty,
        best_c: best.c,
        scores: scores.clone(),
    })
}

fn better(a: &GridScore, b: &GridScore) -> bool {
    const TIE: f64 = 1e-12;
    if (a.mean_accuracy - b.mean_accuracy).abs() > TIE {
        return a.mean_accuracy > b.mean_accuracy;
    }
    if a.c != b.c {
        return a.c > b.c;
    }
    a.penalty == Penalty::L2 && b.penalty == Penalty::L1
}

/// Model plus the hash of the feature schema it was trained on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelBundle {
    #[serde(flatten)]
    pub model: LogisticModel,
    pub feature_schema_hash: String,
}

impl ModelBundle {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        crate::features::write_json(path.as_ref(), self)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        crate::features::read_json(path.as_ref())
    }
}
