//! Train/test split, leave-one-out cross-validation with per-fold refit of
//! the whole pipeline, metrics, the permutation test and report files.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::classifier::{self, GridResult, HyperGrid, LogisticModel, Penalty, Prediction};
use crate::features::{self, FeatureTable, PcaTransform, SelectionMask, TransformBundle};
use crate::{Error, Result};

pub const DEFAULT_TEST_RATIO: f64 = 0.3;
pub const DEFAULT_PERMUTATIONS: usize = 10_000;

/// Stratified split into `(train, test)` row indices, both sorted.
///
/// The test size is `round(N * ratio)`, kept within `[1, N - 1]`, and is
/// shared between the classes by largest remainder (class 0 first on ties).
/// A class with fewer than two members degrades to a plain shuffled split.
pub fn split(labels: &[u8], test_ratio: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    let n = labels.len();
    if n < 2 {
        return Err(Error::Validation(format!("split needs at least 2 sessions, got {n}")));
    }
    if !(test_ratio > 0.0 && test_ratio < 1.0) {
        return Err(Error::Validation(format!("test ratio {test_ratio} outside (0, 1)")));
    }
    let n_test = ((n as f64 * test_ratio).round() as usize).clamp(1, n - 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let classes: Vec<Vec<usize>> = [0u8, 1]
        .iter()
        .map(|&c| (0..n).filter(|&i| labels[i] == c).collect())
        .collect();

    let mut test = Vec::with_capacity(n_test);
    if classes.iter().any(|c| c.len() < 2) {
        log::warn!("a class has fewer than 2 members; split is not stratified");
        let mut all: Vec<usize> = (0..n).collect();
        all.shuffle(&mut rng);
        test.extend_from_slice(&all[..n_test]);
    } else {
        let exact: Vec<f64> = classes.iter().map(|c| c.len() as f64 * n_test as f64 / n as f64).collect();
        let mut quota: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
        let mut order = [0usize, 1];
        order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())).then(a.cmp(&b)));
        let mut left = n_test - quota.iter().sum::<usize>();
        for &c in order.iter().cycle() {
            if left == 0 {
                break;
            }
            if quota[c] < classes[c].len() {
                quota[c] += 1;
                left -= 1;
            }
        }
        for (members, q) in classes.iter().zip(quota) {
            let mut m = members.clone();
            m.shuffle(&mut rng);
            test.extend_from_slice(&m[..q]);
        }
    }
    test.sort_unstable();
    let train = (0..n).filter(|i| test.binary_search(i).is_err()).collect();
    Ok((train, test))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl ConfusionMatrix {
    pub fn from_pairs(pairs: impl IntoIterator<Item = (u8, u8)>) -> Self {
        let mut m = Self::default();
        for (label, pred) in pairs {
            m.add(label, pred);
        }
        m
    }

    pub fn add(&mut self, label: u8, pred: u8) {
        match (label, pred) {
            (1, 1) => self.tp += 1,
            (0, 1) => self.fp += 1,
            (0, _) => self.tn += 1,
            _ => self.fn_ += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Set when precision had a zero denominator and was reported as 0.
    pub precision_undefined: bool,
    pub recall_undefined: bool,
}

/// Accuracy, precision, recall and F1; zero denominators give 0 with a flag.
pub fn metrics(c: &ConfusionMatrix) -> Metrics {
    let ratio = |num: usize, den: usize| if den == 0 { (0.0, true) } else { (num as f64 / den as f64, false) };
    let (accuracy, _) = ratio(c.tp + c.tn, c.total());
    let (precision, precision_undefined) = ratio(c.tp, c.tp + c.fp);
    let (recall, recall_undefined) = ratio(c.tp, c.tp + c.fn_);
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Metrics {
        accuracy,
        precision,
        recall,
        f1,
        precision_undefined,
        recall_undefined,
    }
}

/// How the classifier hyperparameters are chosen inside the pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ModelSpec {
    Grid(HyperGrid),
    Fixed { penalty: Penalty, c: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub corr_threshold: f64,
    pub pca_k: usize,
    pub model: ModelSpec,
    pub seed: u64,
    pub jobs: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            corr_threshold: features::DEFAULT_CORRELATION_THRESHOLD,
            pca_k: features::DEFAULT_PCA_COMPONENTS,
            model: ModelSpec::Grid(HyperGrid::default()),
            seed: 0,
            jobs: 1,
        }
    }
}

/// Selection mask, PCA and classifier fitted on one set of training rows.
#[derive(Debug, Clone, PartialEq)]
pub struct FittedPipeline {
    pub mask: SelectionMask,
    pub pca: PcaTransform,
    pub model: LogisticModel,
    pub grid: Option<GridResult>,
}

impl FittedPipeline {
    pub fn transform_bundle(&self) -> TransformBundle {
        TransformBundle::new(self.mask.clone(), self.pca.clone())
    }

    pub fn predict(&self, table: &FeatureTable, rows: &[usize]) -> Result<Vec<Prediction>> {
        features::project(table, &self.pca, rows)?
            .iter()
            .map(|x| classifier::predict(&self.model, x))
            .collect()
    }
}

/// Fits imputation, the correlation mask, PCA and the classifier on
/// `train` only. An empty mask falls back to the single best-correlated
/// feature; a too-large `k` is reduced to the admissible maximum.
pub fn fit_pipeline(table: &FeatureTable, train: &[usize], cfg: &PipelineConfig) -> Result<FittedPipeline> {
    let mut mask = features::pearson_filter(table, train, cfg.corr_threshold)?;
    if mask.kept.is_empty() {
        let all = features::pearson_filter(table, train, 0.0)?;
        let best = all
            .correlations
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()).then(b.0.cmp(&a.0)))
            .map(|(i, _)| i)
            .ok_or_else(|| Error::Validation("no non-constant feature in the training rows".into()))?;
        log::warn!(
            "no feature reaches |r| >= {}; keeping {} (r = {:.3})",
            cfg.corr_threshold,
            all.kept[best],
            all.correlations[best]
        );
        mask = SelectionMask {
            kept: vec![all.kept[best].clone()],
            correlations: vec![all.correlations[best]],
            threshold: cfg.corr_threshold,
        };
    }
    let max_k = mask.kept.len().min(train.len().saturating_sub(1));
    let k = cfg.pca_k.min(max_k);
    if k < cfg.pca_k {
        log::warn!("pca k reduced from {} to {k} ({} features kept)", cfg.pca_k, mask.kept.len());
    }
    let pca = features::fit_pca(table, &mask, train, k)?;
    let x = features::project(table, &pca, train)?;
    let y: Vec<u8> = train.iter().map(|&r| table.labels[r]).collect();
    let (model, grid) = match &cfg.model {
        ModelSpec::Fixed { penalty, c } => (classifier::fit(&x, &y, *penalty, *c, cfg.seed)?, None),
        ModelSpec::Grid(g) => {
            let r = classifier::grid_search(&x, &y, g, cfg.seed, cfg.jobs)?;
            (classifier::fit(&x, &y, r.best_penalty, r.best_c, cfg.seed)?, Some(r))
        }
    };
    Ok(FittedPipeline { mask, pca, model, grid })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampleRecord {
    pub session_id: String,
    pub label: u8,
    pub pred: u8,
    pub prob: f64,
    pub z: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FoldRecord {
    pub fold: usize,
    pub held_out: Vec<String>,
    pub skipped: bool,
    pub train: Option<Metrics>,
    pub test: Option<Metrics>,
    pub penalty: Option<Penalty>,
    pub c: Option<f64>,
    pub n_features: usize,
    pub k: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    Split,
    Loocv,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub protocol: Protocol,
    /// Held-out (test) metrics; for LOOCV computed from the pooled predictions.
    pub test: Metrics,
    pub confusion: ConfusionMatrix,
    /// Training metrics; for LOOCV the mean over folds.
    pub train: Metrics,
    pub predictions: Vec<SampleRecord>,
    pub folds: Vec<FoldRecord>,
    /// Hyperparameters and contributions of the pipeline fitted on every
    /// training row (the split's train side, or all rows for LOOCV).
    pub penalty: Penalty,
    pub c: f64,
    pub n_features: usize,
    pub contributions: Vec<f64>,
    pub explained_variance: Vec<f64>,
    pub p_value: Option<f64>,
}

impl EvalReport {
    pub fn z_values(&self) -> Vec<f64> {
        self.predictions.iter().map(|p| p.z).collect()
    }

    pub fn labels(&self) -> Vec<u8> {
        self.predictions.iter().map(|p| p.label).collect()
    }
}

fn records(table: &FeatureTable, rows: &[usize], preds: &[Prediction]) -> Vec<SampleRecord> {
    rows.iter()
        .zip(preds)
        .map(|(&r, p)| SampleRecord {
            session_id: table.rows[r].clone(),
            label: table.labels[r],
            pred: p.class,
            prob: p.probability,
            z: p.z,
        })
        .collect()
}

fn confusion_of(recs: &[SampleRecord]) -> ConfusionMatrix {
    ConfusionMatrix::from_pairs(recs.iter().map(|r| (r.label, r.pred)))
}

/// Predictions of a fitted pipeline on `rows` as sample records.
pub fn predict_records(fitted: &FittedPipeline, table: &FeatureTable, rows: &[usize]) -> Result<Vec<SampleRecord>> {
    Ok(records(table, rows, &fitted.predict(table, rows)?))
}

fn summary(fitted: &FittedPipeline) -> (Penalty, f64, usize, Vec<f64>, Vec<f64>) {
    (
        fitted.model.penalty,
        fitted.model.c,
        fitted.mask.kept.len(),
        features::component_contributions(&fitted.model.theta),
        fitted.pca.explained_variance.clone(),
    )
}

/// Single stratified train/test evaluation.
pub fn evaluate(table: &FeatureTable, cfg: &PipelineConfig, test_ratio: f64) -> Result<EvalReport> {
    let (train, test) = split(&table.labels, test_ratio, cfg.seed)?;
    let fitted = fit_pipeline(table, &train, cfg)?;
    let train_recs = predict_records(&fitted, table, &train)?;
    let test_recs = predict_records(&fitted, table, &test)?;
    let confusion = confusion_of(&test_recs);
    let train_m = metrics(&confusion_of(&train_recs));
    let test_m = metrics(&confusion);
    let (penalty, c, n_features, contributions, explained_variance) = summary(&fitted);
    Ok(EvalReport {
        protocol: Protocol::Split,
        folds: vec![FoldRecord {
            fold: 0,
            held_out: test_recs.iter().map(|r| r.session_id.clone()).collect(),
            skipped: false,
            train: Some(train_m),
            test: Some(test_m),
            penalty: Some(penalty),
            c: Some(c),
            n_features,
            k: fitted.pca.k,
        }],
        test: test_m,
        confusion,
        train: train_m,
        predictions: test_recs,
        penalty,
        c,
        n_features,
        contributions,
        explained_variance,
        p_value: None,
    })
}

/// Leave-one-out cross-validation. Every fold refits the entire pipeline
/// on the other `N - 1` rows; folds whose training rows hold one class are
/// skipped. Folds run across `cfg.jobs` threads and are reduced in order.
pub fn loocv(table: &FeatureTable, cfg: &PipelineConfig) -> Result<EvalReport> {
    let n = table.n_rows();
    if n < 3 {
        return Err(Error::Validation(format!("LOOCV needs at least 3 sessions, got {n}")));
    }
    if !(table.labels.contains(&0) && table.labels.contains(&1)) {
        return Err(Error::DegenerateLabels);
    }
    let inner = PipelineConfig { jobs: 1, ..cfg.clone() };
    let folds: Vec<usize> = (0..n).collect();
    let outcomes = crate::par_map(&folds, cfg.jobs, |&i| -> Result<(FoldRecord, Option<SampleRecord>)> {
        let train: Vec<usize> = (0..n).filter(|&r| r != i).collect();
        let mut record = FoldRecord {
            fold: i,
            held_out: vec![table.rows[i].clone()],
            skipped: false,
            train: None,
            test: None,
            penalty: None,
            c: None,
            n_features: 0,
            k: 0,
        };
        let labels: Vec<u8> = train.iter().map(|&r| table.labels[r]).collect();
        if !(labels.contains(&0) && labels.contains(&1)) {
            log::warn!("fold {i}: training rows hold a single class; fold skipped");
            record.skipped = true;
            return Ok((record, None));
        }
        let fitted = fit_pipeline(table, &train, &inner)?;
        let train_recs = predict_records(&fitted, table, &train)?;
        let held = predict_records(&fitted, table, &[i])?.remove(0);
        record.train = Some(metrics(&confusion_of(&train_recs)));
        record.test = Some(metrics(&confusion_of(std::slice::from_ref(&held))));
        record.penalty = Some(fitted.model.penalty);
        record.c = Some(fitted.model.c);
        record.n_features = fitted.mask.kept.len();
        record.k = fitted.pca.k;
        Ok((record, Some(held)))
    });

    let mut fold_records = Vec::with_capacity(n);
    let mut predictions = Vec::with_capacity(n);
    for o in outcomes {
        let (rec, held) = o?;
        fold_records.push(rec);
        predictions.extend(held);
    }
    if predictions.is_empty() {
        return Err(Error::NothingToReport);
    }
    let confusion = confusion_of(&predictions);
    let trained: Vec<Metrics> = fold_records.iter().filter_map(|f| f.train).collect();
    let mean = |f: fn(&Metrics) -> f64| trained.iter().map(f).sum::<f64>() / trained.len() as f64;
    let train = Metrics {
        accuracy: mean(|m| m.accuracy),
        precision: mean(|m| m.precision),
        recall: mean(|m| m.recall),
        f1: mean(|m| m.f1),
        precision_undefined: trained.iter().any(|m| m.precision_undefined),
        recall_undefined: trained.iter().any(|m| m.recall_undefined),
    };
    let all: Vec<usize> = (0..n).collect();
    let full = fit_pipeline(table, &all, cfg)?;
    let (penalty, c, n_features, contributions, explained_variance) = summary(&full);
    Ok(EvalReport {
        protocol: Protocol::Loocv,
        test: metrics(&confusion),
        confusion,
        train,
        predictions,
        folds: fold_records,
        penalty,
        c,
        n_features,
        contributions,
        explained_variance,
        p_value: None,
    })
}

fn mean_difference(z: &[f64], labels: &[u8]) -> f64 {
    let (mut s1, mut n1, mut s0, mut n0) = (0.0, 0usize, 0.0, 0usize);
    for (v, &l) in z.iter().zip(labels) {
        if l == 1 {
            s1 += v;
            n1 += 1;
        } else {
            s0 += v;
            n0 += 1;
        }
    }
    s1 / n1 as f64 - s0 / n0 as f64
}

/// Two-sided permutation test of the class-mean difference of `z`:
/// `p = (1 + #{|permuted| >= |observed|}) / (1 + n_perm)`.
pub fn permutation_test(z: &[f64], labels: &[u8], n_perm: usize, seed: u64) -> Result<f64> {
    if z.len() != labels.len() {
        return Err(Error::Schema(format!("{} values vs {} labels", z.len(), labels.len())));
    }
    if !(labels.contains(&0) && labels.contains(&1)) {
        return Err(Error::DegenerateLabels);
    }
    if n_perm < 100 {
        return Err(Error::Parameter(format!("need at least 100 permutations, got {n_perm}")));
    }
    let observed = mean_difference(z, labels).abs();
    // Allow for rounding when a permutation reproduces the observed split.
    let level = observed - 1e-12 * observed.max(1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut shuffled = labels.to_vec();
    let mut hits = 0usize;
    for _ in 0..n_perm {
        shuffled.shuffle(&mut rng);
        if mean_difference(z, &shuffled).abs() >= level {
            hits += 1;
        }
    }
    Ok((1 + hits) as f64 / (1 + n_perm) as f64)
}

fn push_metrics(rows: &mut Vec<(String, String)>, prefix: &str, m: &Metrics) {
    for (name, v) in [
        ("accuracy", m.accuracy),
        ("precision", m.precision),
        ("recall", m.recall),
        ("f1", m.f1),
    ] {
        rows.push((format!("{prefix}{name}"), v.to_string()));
    }
    rows.push((format!("{prefix}precision_undefined"), m.precision_undefined.to_string()));
    rows.push((format!("{prefix}recall_undefined"), m.recall_undefined.to_string()));
}

/// `metric,value` rows of `report.csv`.
pub fn report_rows(eval: &EvalReport) -> Vec<(String, String)> {
    let mut rows = Vec::new();
    push_metrics(&mut rows, "", &eval.test);
    let c = &eval.confusion;
    for (name, v) in [("tp", c.tp), ("fp", c.fp), ("tn", c.tn), ("fn", c.fn_)] {
        rows.push((name.to_string(), v.to_string()));
    }
    push_metrics(&mut rows, "train_", &eval.train);
    let protocol = match eval.protocol {
        Protocol::Split => "split",
        Protocol::Loocv => "loocv",
    };
    rows.push(("protocol".into(), protocol.into()));
    rows.push(("n_evaluated".into(), eval.predictions.len().to_string()));
    rows.push(("n_folds".into(), eval.folds.len().to_string()));
    rows.push(("skipped_folds".into(), eval.folds.iter().filter(|f| f.skipped).count().to_string()));
    rows.push(("penalty".into(), eval.penalty.to_string()));
    rows.push(("C".into(), eval.c.to_string()));
    rows.push(("n_features_kept".into(), eval.n_features.to_string()));
    rows.push(("pca_k".into(), eval.contributions.len().to_string()));
    for (i, v) in eval.explained_variance.iter().enumerate() {
        rows.push((format!("explained_variance_pc{}", i + 1), v.to_string()));
    }
    for (i, v) in eval.contributions.iter().enumerate() {
        rows.push((format!("contribution_pc{}", i + 1), v.to_string()));
    }
    if let Some(p) = eval.p_value {
        rows.push(("p_value".into(), p.to_string()));
    }
    rows
}

fn csv_file(path: &Path) -> Result<csv::Writer<std::io::BufWriter<std::fs::File>>> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(std::io::BufWriter::new(f)))
}

fn finish<W: Write>(mut w: csv::Writer<W>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes `predictions.csv` (`session_id,label,pred,prob,z`).
pub fn write_predictions(records: &[SampleRecord], path: &Path) -> Result<()> {
    let mut w = csv_file(path)?;
    w.write_record(["session_id", "label", "pred", "prob", "z"])?;
    for r in records {
        w.write_record([
            r.session_id.clone(),
            r.label.to_string(),
            r.pred.to_string(),
            r.prob.to_string(),
            r.z.to_string(),
        ])?;
    }
    finish(w, path)
}

/// Reads `z` and labels back from a predictions file.
pub fn read_predictions(path: &Path) -> Result<Vec<SampleRecord>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = csv::Reader::from_reader(std::io::BufReader::new(f));
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != ["session_id", "label", "pred", "prob", "z"] {
        return Err(Error::Schema(format!("{}: unexpected predictions header", path.display())));
    }
    r.records()
        .enumerate()
        .map(|(i, rec)| {
            let rec = rec?;
            let bad = |what: &str| Error::Parse {
                row: i + 2,
                message: format!("invalid {what}"),
            };
            Ok(SampleRecord {
                session_id: rec[0].to_string(),
                label: rec[1].parse().ok().filter(|l: &u8| *l <= 1).ok_or_else(|| bad("label"))?,
                pred: rec[2].parse().ok().filter(|l: &u8| *l <= 1).ok_or_else(|| bad("pred"))?,
                prob: rec[3].parse().map_err(|_| bad("prob"))?,
                z: rec[4].parse().map_err(|_| bad("z"))?,
            })
        })
        .collect()
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Writes `report.csv`, `predictions.csv` and `folds.csv` into `dir`.
pub fn report(eval: &EvalReport, dir: impl AsRef<Path>) -> Result<()> {
    if eval.predictions.is_empty() {
        return Err(Error::NothingToReport);
    }
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let path = dir.join("report.csv");
    let mut w = csv_file(&path)?;
    w.write_record(["metric", "value"])?;
    for (k, v) in report_rows(eval) {
        w.write_record([k, v])?;
    }
    finish(w, &path)?;

    write_predictions(&eval.predictions, &dir.join("predictions.csv"))?;

    let path = dir.join("folds.csv");
    let mut w = csv_file(&path)?;
    w.write_record([
        "fold",
        "held_out",
        "skipped",
        "train_accuracy",
        "train_f1",
        "test_accuracy",
        "penalty",
        "C",
        "n_features",
        "k",
    ])?;
    for f in &eval.folds {
        w.write_record([
            f.fold.to_string(),
            f.held_out.join(";"),
            f.skipped.to_string(),
            opt(f.train.map(|m| m.accuracy)),
            opt(f.train.map(|m| m.f1)),
            opt(f.test.map(|m| m.accuracy)),
            opt(f.penalty),
            opt(f.c),
            f.n_features.to_string(),
            f.k.to_string(),
        ])?;
    }
    finish(w, &path)
}

/// How often each `(penalty, C)` was selected across folds.
pub fn selection_counts(eval: &EvalReport) -> BTreeMap<(String, String), usize> {
    let mut out = BTreeMap::new();
    for f in eval.folds.iter().filter(|f| !f.skipped) {
        if let (Some(p), Some(c)) = (f.penalty, f.c) {
            *out.entry((p.to_string(), c.to_string())).or_insert(0) += 1;
        }
    }
    out
}
