//! Session feature table, training-mean imputation, Pearson correlation
//! filter and PCA.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::corpus::RecordingSession;
use crate::pitch::{self, PitchConfig};
use crate::{glottal, phonation, prosody, Error, FeatureMap, Result};

pub const DEFAULT_CORRELATION_THRESHOLD: f64 = 0.15;
pub const DEFAULT_PCA_COMPONENTS: usize = 8;
const STD_FLOOR: f64 = 1e-8;

/// Family, segment, descriptor and optional functional decoded from a
/// feature name such as `phon.vowel_a.f0_delta.kurtosis`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Provenance<'a> {
    pub family: &'a str,
    pub segment: &'a str,
    pub descriptor: &'a str,
    pub functional: Option<&'a str>,
}

impl<'a> Provenance<'a> {
    pub fn parse(name: &'a str) -> Option<Self> {
        let mut parts = name.splitn(4, '.');
        Some(Self {
            family: parts.next()?,
            segment: parts.next()?,
            descriptor: parts.next()?,
            functional: parts.next(),
        })
    }
}

/// Every feature of one session: glottal (vowels), phonation and prosody
/// (all segments). Pitch analysis runs once per segment.
pub fn extract_session(session: &RecordingSession, cfg: &PitchConfig) -> FeatureMap {
    let mut map = FeatureMap::new();
    for kind in crate::corpus::SegmentKind::VOWELS {
        if !session.segments.contains_key(&kind) {
            map.extend(glottal::missing_segment(kind.as_str()));
        }
    }
    for (kind, clip) in &session.segments {
        let seg = kind.as_str();
        match pitch::analyze(clip, cfg) {
            Ok(a) => {
                map.extend(phonation::segment_features(seg, clip, &a));
                map.extend(prosody::segment_features(seg, clip, &a));
                if kind.is_vowel() {
                    map.extend(glottal::segment_features(seg, clip, &a));
                }
            }
            Err(e) => {
                log::warn!("{}: {seg}: feature extraction failed: {e}", session.session_id);
                map.extend(phonation::missing_segment(seg));
                map.extend(prosody::missing_segment(seg));
                if kind.is_vowel() {
                    map.extend(glottal::missing_segment(seg));
                }
            }
        }
    }
    map
}

/// Sessions by feature matrix; `None` marks a missing value. Columns are
/// sorted by name.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    pub rows: Vec<String>,
    pub columns: Vec<String>,
    pub values: Vec<Vec<Option<f64>>>,
    pub labels: Vec<u8>,
}

impl FeatureTable {
    /// Builds a table from per-row feature maps; the column set is the union
    /// of all names.
    pub fn from_maps(rows: Vec<String>, labels: Vec<u8>, maps: &[FeatureMap]) -> Result<Self> {
        if rows.len() != labels.len() || rows.len() != maps.len() {
            return Err(Error::Schema("rows, labels and feature maps differ in length".into()));
        }
        let columns: Vec<String> = maps
            .iter()
            .flat_map(|m| m.keys().cloned())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let values = maps
            .iter()
            .map(|m| columns.iter().map(|c| m.get(c).copied().flatten().filter(|v| v.is_finite())).collect())
            .collect();
        Ok(Self {
            rows,
            columns,
            values,
            labels,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.binary_search_by(|c| c.as_str().cmp(name)).ok()
    }

    pub fn row_index(&self, id: &str) -> Option<usize> {
        self.rows.iter().position(|r| r == id)
    }

    /// Table restricted to `rows`, in the given order.
    pub fn subset(&self, rows: &[usize]) -> Self {
        Self {
            rows: rows.iter().map(|&i| self.rows[i].clone()).collect(),
            columns: self.columns.clone(),
            values: rows.iter().map(|&i| self.values[i].clone()).collect(),
            labels: rows.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    pub fn missing_count(&self) -> usize {
        self.values.iter().flatten().filter(|v| v.is_none()).count()
    }

    /// Writes `session_id,label,<features...>` with empty cells for missing values.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["session_id".to_string(), "label".to_string()];
        header.extend(self.columns.iter().cloned());
        w.write_record(&header)?;
        for ((id, label), vals) in self.rows.iter().zip(&self.labels).zip(&self.values) {
            let mut rec = vec![id.clone(), label.to_string()];
            rec.extend(vals.iter().map(|v| v.map(|x| x.to_string()).unwrap_or_default()));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io("<feature table>", e))?;
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file))
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
        if header.len() < 2 || header[0] != "session_id" || header[1] != "label" {
            return Err(Error::Schema("feature table header must start with session_id,label".into()));
        }
        let columns = header[2..].to_vec();
        if columns.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Schema("feature columns must be unique and sorted".into()));
        }
        let mut table = Self {
            rows: Vec::new(),
            columns,
            values: Vec::new(),
            labels: Vec::new(),
        };
        for (i, rec) in r.records().enumerate() {
            let rec = rec?;
            let row = i + 2;
            let parse_err = |message: String| Error::Parse { row, message };
            let label = match &rec[1] {
                "0" => 0,
                "1" => 1,
                other => return Err(parse_err(format!("label must be 0 or 1, got {other:?}"))),
            };
            let vals = rec
                .iter()
                .skip(2)
                .map(|cell| {
                    if cell.is_empty() {
                        Ok(None)
                    } else {
                        cell.parse::<f64>()
                            .ok()
                            .filter(|v| v.is_finite())
                            .map(Some)
                            .ok_or_else(|| parse_err(format!("invalid number {cell:?}")))
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            table.rows.push(rec[0].to_string());
            table.labels.push(label);
            table.values.push(vals);
        }
        Ok(table)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_csv(std::io::BufReader::new(file))
    }
}

/// Extracts every session's features, in parallel across `jobs` threads.
/// Row order follows `sessions`.
pub fn assemble(sessions: &[RecordingSession], cfg: &PitchConfig, jobs: usize) -> Result<FeatureTable> {
    if sessions.len() < 2 {
        return Err(Error::Validation(format!("need at least 2 sessions, got {}", sessions.len())));
    }
    let maps = crate::par_map(sessions, jobs, |s| extract_session(s, cfg));
    FeatureTable::from_maps(
        sessions.iter().map(|s| s.session_id.clone()).collect(),
        sessions.iter().map(|s| s.label).collect(),
        &maps,
    )
}

/// Mean of the non-missing values of each listed column over `rows`;
/// 0 for a column with no observed value.
pub fn training_means(table: &FeatureTable, rows: &[usize], columns: &[usize]) -> Vec<f64> {
    columns
        .iter()
        .map(|&c| {
            let (sum, n) = rows
                .iter()
                .filter_map(|&r| table.values[r][c])
                .fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
            if n == 0 {
                0.0
            } else {
                sum / n as f64
            }
        })
        .collect()
}

fn column_indices(table: &FeatureTable, names: &[String]) -> Result<Vec<usize>> {
    names
        .iter()
        .map(|n| table.column_index(n).ok_or_else(|| Error::Schema(format!("unknown feature column {n}"))))
        .collect()
}

/// Listed columns of `rows`, missing values replaced by `means`.
fn imputed(table: &FeatureTable, rows: &[usize], columns: &[usize], means: &[f64]) -> Vec<Vec<f64>> {
    rows.iter()
        .map(|&r| {
            columns
                .iter()
                .zip(means)
                .map(|(&c, &m)| table.values[r][c].unwrap_or(m))
                .collect()
        })
        .collect()
}

fn check_rows(table: &FeatureTable, rows: &[usize]) -> Result<()> {
    match rows.iter().find(|&&r| r >= table.n_rows()) {
        Some(r) => Err(Error::Parameter(format!("row {r} outside table of {} rows", table.n_rows()))),
        None => Ok(()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionMask {
    pub kept: Vec<String>,
    /// Training-row correlation of every kept feature with the label.
    pub correlations: Vec<f64>,
    pub threshold: f64,
}

/// Pearson correlation, or `None` when either side has zero variance.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    let scale = mx.abs().max(1.0);
    if sxx.sqrt() <= 1e-12 * scale * n.sqrt() || syy <= 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

/// Keeps features whose training-row correlation with the label reaches
/// `threshold` in magnitude. Missing values are imputed with the training
/// mean first; constant columns are dropped.
pub fn pearson_filter(table: &FeatureTable, training_rows: &[usize], threshold: f64) -> Result<SelectionMask> {
    check_rows(table, training_rows)?;
    let y: Vec<f64> = training_rows.iter().map(|&r| table.labels[r] as f64).collect();
    if !(y.contains(&0.0) && y.contains(&1.0)) {
        return Err(Error::DegenerateLabels);
    }
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::Parameter(format!("correlation threshold {threshold} outside [0, 1]")));
    }
    let all: Vec<usize> = (0..table.columns.len()).collect();
    let means = training_means(table, training_rows, &all);
    let mut mask = SelectionMask {
        kept: Vec::new(),
        correlations: Vec::new(),
        threshold,
    };
    for (c, m) in all.iter().zip(&means) {
        let x: Vec<f64> = training_rows.iter().map(|&r| table.values[r][*c].unwrap_or(*m)).collect();
        if let Some(r) = pearson(&x, &y) {
            if r.abs() >= threshold {
                mask.kept.push(table.columns[*c].clone());
                mask.correlations.push(r);
            }
        }
    }
    Ok(mask)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaTransform {
    pub features: Vec<String>,
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
    /// `k x d`, orthonormal rows.
    pub components: Vec<Vec<f64>>,
    pub explained_variance: Vec<f64>,
    pub k: usize,
}

/// Standardizes the masked columns on the training rows and keeps the
/// top-`k` eigenvectors of their covariance. Each component's largest-magnitude
/// entry is made positive.
pub fn fit_pca(table: &FeatureTable, mask: &SelectionMask, training_rows: &[usize], k: usize) -> Result<PcaTransform> {
    check_rows(table, training_rows)?;
    let cols = column_indices(table, &mask.kept)?;
    let d = cols.len();
    let n = training_rows.len();
    let max_k = d.min(n.saturating_sub(1));
    if k == 0 || k > max_k {
        return Err(Error::Parameter(format!(
            "pca k = {k} not admissible; maximum is {max_k} ({d} features, {n} training rows)"
        )));
    }
    let means = training_means(table, training_rows, &cols);
    let x = imputed(table, training_rows, &cols, &means);
    let stds: Vec<f64> = (0..d)
        .map(|j| {
            let var = x.iter().map(|row| (row[j] - means[j]).powi(2)).sum::<f64>() / n as f64;
            var.sqrt().max(STD_FLOOR)
        })
        .collect();
    let z = DMatrix::from_fn(n, d, |i, j| (x[i][j] - means[j]) / stds[j]);
    let cov = (z.transpose() * &z) / (n - 1) as f64;
    let eig = SymmetricEigen::new(cov);
    let trace: f64 = eig.eigenvalues.iter().map(|v| v.max(0.0)).sum();
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));

    let mut components = Vec::with_capacity(k);
    let mut explained_variance = Vec::with_capacity(k);
    for &i in order.iter().take(k) {
        let mut v: Vec<f64> = eig.eigenvectors.column(i).iter().copied().collect();
        let biggest = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let lead = v.iter().position(|x| x.abs() >= biggest - 1e-12).unwrap_or(0);
        if v[lead] < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        components.push(v);
        explained_variance.push(if trace > 0.0 { eig.eigenvalues[i].max(0.0) / trace } else { 0.0 });
    }
    Ok(PcaTransform {
        features: mask.kept.clone(),
        means,
        stds,
        components,
        explained_variance,
        k,
    })
}

impl PcaTransform {
    pub fn dim(&self) -> usize {
        self.features.len()
    }

    /// Standardized values of one already imputed row.
    pub fn standardize(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(self.means.iter().zip(&self.stds))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    pub fn scores(&self, standardized: &[f64]) -> Vec<f64> {
        self.components
            .iter()
            .map(|c| c.iter().zip(standardized).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// Projects a feature map; missing or absent features take the training mean.
    pub fn project_map(&self, features: &FeatureMap) -> Vec<f64> {
        let row: Vec<f64> = self
            .features
            .iter()
            .zip(&self.means)
            .map(|(n, m)| features.get(n).copied().flatten().filter(|v| v.is_finite()).unwrap_or(*m))
            .collect();
        self.scores(&self.standardize(&row))
    }

    /// Maps scores back to standardized feature space.
    pub fn reconstruct(&self, scores: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        for (s, c) in scores.iter().zip(&self.components) {
            for (o, v) in out.iter_mut().zip(c) {
                *o += s * v;
            }
        }
        out
    }
}

/// Standardized-then-projected scores of `rows`.
pub fn project(table: &FeatureTable, pca: &PcaTransform, rows: &[usize]) -> Result<Vec<Vec<f64>>> {
    check_rows(table, rows)?;
    let cols = column_indices(table, &pca.features)?;
    Ok(imputed(table, rows, &cols, &pca.means)
        .iter()
        .map(|row| pca.scores(&pca.standardize(row)))
        .collect())
}

/// `|theta_i| / sum |theta|` in percent; uniform when all coefficients are zero.
pub fn component_contributions(theta: &[f64]) -> Vec<f64> {
    let total: f64 = theta.iter().map(|t| t.abs()).sum();
    if total == 0.0 {
        if !theta.is_empty() {
            log::warn!("all coefficients are zero; contributions reported as uniform");
        }
        return vec![100.0 / theta.len() as f64; theta.len()];
    }
    theta.iter().map(|t| 100.0 * t.abs() / total).collect()
}

/// Fitted selection and projection, serialized as one JSON document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformBundle {
    pub mask: SelectionMask,
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
    pub components: Vec<Vec<f64>>,
    pub explained_variance: Vec<f64>,
    pub k: usize,
    pub threshold: f64,
}

impl TransformBundle {
    pub fn new(mask: SelectionMask, pca: PcaTransform) -> Self {
        Self {
            threshold: mask.threshold,
            mask,
            means: pca.means,
            stds: pca.stds,
            components: pca.components,
            explained_variance: pca.explained_variance,
            k: pca.k,
        }
    }

    pub fn pca(&self) -> PcaTransform {
        PcaTransform {
            features: self.mask.kept.clone(),
            means: self.means.clone(),
            stds: self.stds.clone(),
            components: self.components.clone(),
            explained_variance: self.explained_variance.clone(),
            k: self.k,
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_json(path.as_ref(), self)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        read_json(path.as_ref())
    }
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub(crate) fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Schema(format!("{}: {e}", path.display())))
}

/// FNV-1a hash of the newline-joined feature names, as 16 hex digits.
pub fn schema_hash(features: &[String]) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for (i, name) in features.iter().enumerate() {
        if i > 0 {
            h = (h ^ b'\n' as u64).wrapping_mul(0x100_0000_01b3);
        }
        for b in name.bytes() {
            h = (h ^ b as u64).wrapping_mul(0x100_0000_01b3);
        }
    }
    format!("{h:016x}")
}

/// Per-family column counts, for logging.
pub fn family_counts(columns: &[String]) -> BTreeMap<String, usize> {
    let mut out = BTreeMap::new();
    for c in columns {
        if let Some(p) = Provenance::parse(c) {
            *out.entry(p.family.to_string()).or_insert(0) += 1;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn table(cols: &[&str], values: Vec<Vec<Option<f64>>>, labels: Vec<u8>) -> FeatureTable {
        FeatureTable {
            rows: (0..values.len()).map(|i| format!("s{i:02}")).collect(),
            columns: cols.iter().map(|c| c.to_string()).collect(),
            values,
            labels,
        }
    }

    fn dense(cols: &[&str], values: &[Vec<f64>], labels: Vec<u8>) -> FeatureTable {
        table(cols, values.iter().map(|r| r.iter().map(|v| Some(*v)).collect()).collect(), labels)
    }

    #[test]
    fn provenance_parses() {
        let p = Provenance::parse("phon.vowel_a.f0_delta.kurtosis").unwrap();
        assert_eq!((p.family, p.segment, p.descriptor, p.functional), ("phon", "vowel_a", "f0_delta", Some("kurtosis")));
        assert_eq!(Provenance::parse("glot.vowel_i.hrf").unwrap().functional, None);
        assert!(Provenance::parse("bad").is_none());
    }

    #[test]
    fn union_of_columns_with_missing() {
        let mut a = FeatureMap::new();
        a.insert("b.x.y".into(), Some(1.0));
        let mut b = FeatureMap::new();
        b.insert("a.x.y".into(), Some(2.0));
        b.insert("b.x.y".into(), Some(f64::NAN));
        let t = FeatureTable::from_maps(vec!["1".into(), "2".into()], vec![0, 1], &[a, b]).unwrap();
        assert_eq!(t.columns, vec!["a.x.y", "b.x.y"]);
        assert_eq!(t.values, vec![vec![None, Some(1.0)], vec![Some(2.0), None]]);
    }

    #[test]
    fn csv_round_trip() {
        let t = table(
            &["a", "b"],
            vec![vec![Some(0.1), None], vec![Some(-3.5e-7), Some(1.0 / 3.0)]],
            vec![1, 0],
        );
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("session_id,label,a,b\ns00,1,0.1,\n"));
        assert_eq!(FeatureTable::read_csv(&buf[..]).unwrap(), t);
    }

    #[test]
    fn filter_keeps_label_and_drops_constants() {
        let labels = vec![0, 1, 0, 1, 1, 0];
        let vals: Vec<Vec<f64>> = labels.iter().map(|&l| vec![l as f64, 7.0]).collect();
        let t = dense(&["label_copy", "constant"], &vals, labels);
        let rows: Vec<usize> = (0..6).collect();
        let m = pearson_filter(&t, &rows, 0.15).unwrap();
        assert_eq!(m.kept, vec!["label_copy"]);
        assert!((m.correlations[0] - 1.0).abs() < 1e-12);
        assert!(matches!(pearson_filter(&t, &[0, 2, 5], 0.15), Err(Error::DegenerateLabels)));
    }

    fn brute_pearson(x: &[f64], y: &[f64]) -> f64 {
        let n = x.len() as f64;
        let mx: f64 = x.iter().sum::<f64>() / n;
        let my: f64 = y.iter().sum::<f64>() / n;
        let mut num = 0.0;
        let mut dx = 0.0;
        let mut dy = 0.0;
        for i in 0..x.len() {
            num += (x[i] - mx) * (y[i] - my);
            dx += (x[i] - mx) * (x[i] - mx);
            dy += (y[i] - my) * (y[i] - my);
        }
        num / (dx.sqrt() * dy.sqrt())
    }

    #[test]
    fn noisy_label_feature_matches_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let noise = Normal::new(0.0, 3.0).unwrap();
        let labels: Vec<u8> = (0..49).map(|i| (i % 2) as u8).collect();
        let vals: Vec<Vec<f64>> = labels.iter().map(|&l| vec![l as f64 + noise.sample(&mut rng)]).collect();
        let t = dense(&["f"], &vals, labels.clone());
        let rows: Vec<usize> = (0..49).collect();
        let y: Vec<f64> = labels.iter().map(|&l| l as f64).collect();
        let x: Vec<f64> = vals.iter().map(|r| r[0]).collect();
        let r = brute_pearson(&x, &y);
        let m = pearson_filter(&t, &rows, 0.15).unwrap();
        assert_eq!(m.kept.len() == 1, r.abs() >= 0.15);
    }

    #[test]
    fn rank_one_pca() {
        let vals: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64, i as f64]).collect();
        let t = dense(&["x", "y"], &vals, vec![0, 1, 0, 1, 0, 1, 0, 1, 0, 1]);
        let mask = SelectionMask {
            kept: vec!["x".into(), "y".into()],
            correlations: vec![0.0; 2],
            threshold: 0.0,
        };
        let rows: Vec<usize> = (0..10).collect();
        let p = fit_pca(&t, &mask, &rows, 1).unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((p.components[0][0] - h).abs() < 1e-9 && (p.components[0][1] - h).abs() < 1e-9);
        assert!((p.explained_variance[0] - 1.0).abs() < 1e-9);
        assert!(matches!(fit_pca(&t, &mask, &rows, 3), Err(Error::Parameter(_))));
    }

    #[test]
    fn isotropic_monte_carlo() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = Normal::new(0.0, 1.0).unwrap();
        let vals: Vec<Vec<f64>> = (0..10_000).map(|_| (0..3).map(|_| n.sample(&mut rng)).collect()).collect();
        let labels = (0..10_000).map(|i| (i % 2) as u8).collect();
        let t = dense(&["a", "b", "c"], &vals, labels);
        let mask = SelectionMask {
            kept: t.columns.clone(),
            correlations: vec![0.0; 3],
            threshold: 0.0,
        };
        let rows: Vec<usize> = (0..10_000).collect();
        let p = fit_pca(&t, &mask, &rows, 3).unwrap();
        for r in &p.explained_variance {
            assert!((r - 1.0 / 3.0).abs() < 0.02);
        }
        assert!(p.explained_variance.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn projection_centres_and_reconstructs() {
        let vals = vec![
            vec![2.0, 0.0, 1.0],
            vec![1.0, 3.0, 0.0],
            vec![4.0, 1.0, 2.0],
            vec![0.0, 2.0, 5.0],
            vec![3.0, 4.0, 1.0],
        ];
        let t = dense(&["a", "b", "c"], &vals, vec![0, 1, 0, 1, 0]);
        let mask = SelectionMask {
            kept: t.columns.clone(),
            correlations: vec![0.0; 3],
            threshold: 0.0,
        };
        let rows: Vec<usize> = (0..5).collect();
        let p = fit_pca(&t, &mask, &rows, 3).unwrap();
        for (i, a) in p.components.iter().enumerate() {
            for (j, b) in p.components.iter().enumerate() {
                let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
                assert!((dot - f64::from(u8::from(i == j))).abs() < 1e-9);
            }
        }
        let scores = project(&t, &p, &rows).unwrap();
        for (row, s) in vals.iter().zip(&scores) {
            let z = p.standardize(row);
            for (a, b) in p.reconstruct(s).iter().zip(&z) {
                assert!((a - b).abs() < 1e-9);
            }
        }
        let mean_map: FeatureMap = ["a", "b", "c"].iter().zip(&p.means).map(|(n, m)| (n.to_string(), Some(*m))).collect();
        assert!(p.project_map(&mean_map).iter().all(|s| s.abs() < 1e-9));

        let other = dense(&["a", "b"], &vals.iter().map(|r| r[..2].to_vec()).collect::<Vec<_>>(), vec![0; 5]);
        assert!(matches!(project(&other, &p, &rows), Err(Error::Schema(_))));
    }

    #[test]
    fn contributions() {
        assert_eq!(component_contributions(&[3.0, 1.0]), vec![75.0, 25.0]);
        let c = component_contributions(&[1.0, -1.0, 0.0, 0.0]);
        assert_eq!(c, vec![50.0, 50.0, 0.0, 0.0]);
        let u = component_contributions(&[0.0; 4]);
        assert!((u.iter().sum::<f64>() - 100.0).abs() < 1e-9);
    }

    #[test]
    fn schema_hash_is_order_sensitive() {
        let a = vec!["x".to_string(), "y".to_string()];
        let b = vec!["y".to_string(), "x".to_string()];
        assert_ne!(schema_hash(&a), schema_hash(&b));
        assert_eq!(schema_hash(&a), schema_hash(&a.clone()));
        assert_eq!(schema_hash(&[]), "cbf29ce484222325");
    }
}
