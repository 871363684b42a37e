//! Command-line interface.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::classifier::{HyperGrid, ModelBundle, Penalty};
use crate::corpus::{self, GLUCOSE_THRESHOLD_MG_DL};
use crate::evaluation::{self, ModelSpec, PipelineConfig, DEFAULT_PERMUTATIONS, DEFAULT_TEST_RATIO};
use crate::features::{self, FeatureTable, TransformBundle};
use crate::pitch::PitchConfig;
use crate::synth::{self, ClassOffsets, DatasetConfig};
use crate::{classifier, Error, Result};

pub const LOG_ENV: &str = "VOXGLYCO_LOG";

#[derive(Debug, Parser)]
#[command(name = "voxglyco", version, about = "Glucose-level classification from voice recordings")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Extract features from a manifest into a feature CSV.
    Extract(ExtractArgs),
    /// Fit the pipeline on every session; writes model.json, transform.json and predictions.csv.
    Train(PipelineArgs),
    /// Stratified train/test evaluation; writes report.csv, predictions.csv and folds.csv.
    Evaluate(PipelineArgs),
    /// Leave-one-out cross-validation; writes report.csv, predictions.csv and folds.csv.
    Loocv(PipelineArgs),
    /// Score sessions with a trained model; prints session_id,label,pred,prob,z.
    Predict(PredictArgs),
    /// Permutation test of the acoustic predictor in a predictions file.
    Permtest(PermtestArgs),
    /// Generate a synthetic two-class dataset.
    Synth(SynthArgs),
    /// Summarize a predictions file as report.csv.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Optional key=value file; command-line flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Seed for every random choice [default: 0].
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads; results do not depend on it [default: 1].
    #[arg(long)]
    pub jobs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    /// Session manifest (session_id,participant_id,segment,wav_path,glucose_mg_dl).
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Output feature CSV.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Glucose threshold in mg/dL; values above it are labelled high [default: 100].
    #[arg(long)]
    pub threshold: Option<f64>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct PipelineArgs {
    /// Session manifest; features are extracted first.
    #[arg(long, conflicts_with = "features")]
    pub manifest: Option<PathBuf>,
    /// Feature CSV written by `extract`.
    #[arg(long)]
    pub features: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Glucose threshold in mg/dL when reading a manifest [default: 100].
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Minimum |Pearson r| with the label for a feature to be kept [default: 0.15].
    #[arg(long = "corr-threshold")]
    pub corr_threshold: Option<f64>,
    /// Principal components fed to the classifier [default: 8].
    #[arg(long = "pca-k")]
    pub pca_k: Option<usize>,
    /// Held-out fraction for `evaluate` [default: 0.3].
    #[arg(long = "test-ratio")]
    pub test_ratio: Option<f64>,
    /// Hyperparameter grid `C,C,...[:l1,l2[:folds]]` or `default`
    /// [default: 0.01,0.1,0.5,0.9,1,5,10:l1,l2:5].
    #[arg(long)]
    pub grid: Option<String>,
    /// Fixed penalty (l1 or l2) instead of a grid search; needs --C.
    #[arg(long)]
    pub penalty: Option<String>,
    /// Fixed inverse regularization strength; needs --penalty.
    #[arg(long = "C")]
    pub c: Option<f64>,
    /// Permutations for the LOOCV significance test [default: 10000].
    #[arg(long = "n-perm")]
    pub n_perm: Option<usize>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    /// Directory holding model.json and transform.json from `train`.
    #[arg(long)]
    pub model: PathBuf,
    /// Manifest of the sessions to score.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Score only this session.
    #[arg(long)]
    pub session: Option<String>,
    /// Glucose threshold in mg/dL [default: 100].
    #[arg(long)]
    pub threshold: Option<f64>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct PermtestArgs {
    /// predictions.csv from `evaluate` or `loocv`.
    #[arg(long)]
    pub predictions: PathBuf,
    /// Label permutations [default: 10000].
    #[arg(long = "n-perm")]
    pub n_perm: Option<usize>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output directory for WAVs and manifest.csv.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Sessions per class [default: 30].
    #[arg(long = "n-per-class")]
    pub n_per_class: Option<usize>,
    /// Sample rate in Hz [default: 8000].
    #[arg(long = "sample-rate")]
    pub sample_rate: Option<u32>,
    /// Extra period-perturbation sigma of the high class [default: 0.01].
    #[arg(long = "jitter-offset")]
    pub jitter_offset: Option<f64>,
    /// Extra amplitude-perturbation sigma of the high class [default: 0].
    #[arg(long = "shimmer-offset")]
    pub shimmer_offset: Option<f64>,
    /// F0 shift of the high class in Hz [default: -10].
    #[arg(long = "f0-offset", allow_hyphen_values = true)]
    pub f0_offset: Option<f64>,
    /// Generate both classes from the same distribution.
    #[arg(long = "zero-offsets")]
    pub zero_offsets: bool,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// predictions.csv to summarize.
    #[arg(long)]
    pub predictions: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Label permutations for the p-value [default: 10000].
    #[arg(long = "n-perm")]
    pub n_perm: Option<usize>,
    #[command(flatten)]
    pub common: Common,
}

/// Values from a `key=value` config file; `#` starts a comment.
#[derive(Debug, Default)]
struct Config(BTreeMap<String, String>);

impl Config {
    fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut map = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or_default().trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                row: i + 1,
                message: format!("expected key=value, got {line:?}"),
            })?;
            map.insert(k.trim().replace('-', "_").to_ascii_lowercase(), v.trim().to_string());
        }
        Ok(Self(map))
    }

    fn get<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.0.get(&key.to_ascii_lowercase()) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| Error::Validation(format!("config: invalid value {v:?} for {key}"))),
        }
    }

    /// Flag value, else config value, else `default`.
    fn pick<T: std::str::FromStr>(&self, flag: Option<T>, key: &str, default: T) -> Result<T> {
        Ok(match flag {
            Some(v) => v,
            None => self.get(key)?.unwrap_or(default),
        })
    }

    fn pick_opt<T: std::str::FromStr>(&self, flag: Option<T>, key: &str) -> Result<Option<T>> {
        Ok(match flag {
            Some(v) => Some(v),
            None => self.get(key)?,
        })
    }
}

fn require(path: Option<PathBuf>, flag: &str) -> Result<PathBuf> {
    path.ok_or_else(|| Error::Validation(format!("--{flag} is required")))
}

fn require_file(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::Validation(format!("{} does not exist", path.display())))
    }
}

fn ensure_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Run the CLI; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    init_logging();
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                2
            } else {
                1
            }
        }
    }
}

fn init_logging() {
    let env = env_logger::Env::new().filter_or(LOG_ENV, "warn");
    let _ = env_logger::Builder::from_env(env).format_timestamp(None).try_init();
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Extract(a) => extract(a),
        Command::Train(a) => pipeline(a, Mode::Train),
        Command::Evaluate(a) => pipeline(a, Mode::Evaluate),
        Command::Loocv(a) => pipeline(a, Mode::Loocv),
        Command::Predict(a) => predict(a),
        Command::Permtest(a) => permtest(a),
        Command::Synth(a) => synth_cmd(a),
        Command::Report(a) => report_cmd(a),
    }
}

fn load_sessions(manifest: &Path, threshold: f64, jobs: usize) -> Result<Vec<corpus::RecordingSession>> {
    require_file(manifest)?;
    if !(threshold > 0.0) {
        return Err(Error::Validation(format!("threshold must be positive, got {threshold}")));
    }
    corpus::load_manifest_with(manifest, threshold, jobs)
}

fn extract(a: ExtractArgs) -> Result<()> {
    let cfg = Config::load(a.common.config.as_deref())?;
    let manifest = require(cfg.pick_opt(a.manifest, "manifest")?, "manifest")?;
    let out = require(cfg.pick_opt(a.out, "out")?, "out")?;
    let threshold = cfg.pick(a.threshold, "threshold", GLUCOSE_THRESHOLD_MG_DL)?;
    let jobs = cfg.pick(a.common.jobs, "jobs", 1)?.max(1);
    let sessions = load_sessions(&manifest, threshold, jobs)?;
    let table = features::assemble(&sessions, &PitchConfig::default(), jobs)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        ensure_dir(parent)?;
    }
    table.save(&out)?;
    log::info!(
        "{} sessions, {} features ({} missing values)",
        table.n_rows(),
        table.columns.len(),
        table.missing_count()
    );
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Mode {
    Train,
    Evaluate,
    Loocv,
}

fn model_spec(cfg: &Config, grid: Option<String>, penalty: Option<String>, c: Option<f64>) -> Result<ModelSpec> {
    let fixed_given = penalty.is_some() || c.is_some();
    if grid.is_some() && fixed_given {
        return Err(Error::Validation("--grid conflicts with --penalty/--C".into()));
    }
    let (grid, penalty, c) = if grid.is_some() || fixed_given {
        (grid, penalty, c)
    } else {
        (cfg.get("grid")?, cfg.get("penalty")?, cfg.get("c")?)
    };
    match (grid, penalty, c) {
        (Some(_), Some(_), _) | (Some(_), _, Some(_)) => {
            Err(Error::Validation("grid conflicts with penalty/C in the config".into()))
        }
        (Some(g), None, None) => Ok(ModelSpec::Grid(g.parse::<HyperGrid>()?)),
        (None, Some(p), Some(c)) => {
            if !(c > 0.0) {
                return Err(Error::Validation(format!("C must be positive, got {c}")));
            }
            Ok(ModelSpec::Fixed {
                penalty: p.parse::<Penalty>()?,
                c,
            })
        }
        (None, None, None) => Ok(ModelSpec::Grid(HyperGrid::default())),
        _ => Err(Error::Validation("--penalty and --C must be given together".into())),
    }
}

fn pipeline(a: PipelineArgs, mode: Mode) -> Result<()> {
    let cfg = Config::load(a.common.config.as_deref())?;
    let seed = cfg.pick(a.common.seed, "seed", 0)?;
    let jobs = cfg.pick(a.common.jobs, "jobs", 1)?.max(1);
    let out = require(cfg.pick_opt(a.out, "out")?, "out")?;
    let corr_threshold = cfg.pick(a.corr_threshold, "corr_threshold", features::DEFAULT_CORRELATION_THRESHOLD)?;
    if !(0.0..=1.0).contains(&corr_threshold) {
        return Err(Error::Validation(format!("correlation threshold {corr_threshold} outside [0, 1]")));
    }
    let pca_k = cfg.pick(a.pca_k, "pca_k", features::DEFAULT_PCA_COMPONENTS)?;
    if pca_k == 0 {
        return Err(Error::Validation("--pca-k must be at least 1".into()));
    }
    let test_ratio = cfg.pick(a.test_ratio, "test_ratio", DEFAULT_TEST_RATIO)?;
    if !(test_ratio > 0.0 && test_ratio < 1.0) {
        return Err(Error::Validation(format!("test ratio {test_ratio} outside (0, 1)")));
    }
    let n_perm = cfg.pick(a.n_perm, "n_perm", DEFAULT_PERMUTATIONS)?;
    let model = model_spec(&cfg, a.grid, a.penalty, a.c)?;
    let pcfg = PipelineConfig {
        corr_threshold,
        pca_k,
        model,
        seed,
        jobs,
    };

    let table = match (cfg.pick_opt(a.features, "features")?, cfg.pick_opt(a.manifest, "manifest")?) {
        (Some(f), _) => {
            require_file(&f)?;
            FeatureTable::load(&f)?
        }
        (None, Some(m)) => {
            let threshold = cfg.pick(a.threshold, "threshold", GLUCOSE_THRESHOLD_MG_DL)?;
            let sessions = load_sessions(&m, threshold, jobs)?;
            features::assemble(&sessions, &PitchConfig::default(), jobs)?
        }
        (None, None) => return Err(Error::Validation("--features or --manifest is required".into())),
    };
    ensure_dir(&out)?;

    match mode {
        Mode::Train => {
            let rows: Vec<usize> = (0..table.n_rows()).collect();
            let fitted = evaluation::fit_pipeline(&table, &rows, &pcfg)?;
            ModelBundle {
                model: fitted.model.clone(),
                feature_schema_hash: features::schema_hash(&fitted.mask.kept),
            }
            .save(out.join("model.json"))?;
            fitted.transform_bundle().save(out.join("transform.json"))?;
            let recs = evaluation::predict_records(&fitted, &table, &rows)?;
            evaluation::write_predictions(&recs, &out.join("predictions.csv"))?;
        }
        Mode::Evaluate => {
            let eval = evaluation::evaluate(&table, &pcfg, test_ratio)?;
            evaluation::report(&eval, &out)?;
            print_summary(&eval);
        }
        Mode::Loocv => {
            let mut eval = evaluation::loocv(&table, &pcfg)?;
            eval.p_value = Some(evaluation::permutation_test(&eval.z_values(), &eval.labels(), n_perm, seed)?);
            evaluation::report(&eval, &out)?;
            print_summary(&eval);
        }
    }
    Ok(())
}

fn print_summary(eval: &evaluation::EvalReport) {
    let m = &eval.test;
    let mut line = format!(
        "accuracy {:.4} precision {:.4} recall {:.4} f1 {:.4} (n = {})",
        m.accuracy,
        m.precision,
        m.recall,
        m.f1,
        eval.predictions.len()
    );
    if let Some(p) = eval.p_value {
        line.push_str(&format!(" p = {p}"));
    }
    println!("{line}");
}

fn predict(a: PredictArgs) -> Result<()> {
    let cfg = Config::load(a.common.config.as_deref())?;
    let jobs = cfg.pick(a.common.jobs, "jobs", 1)?.max(1);
    let threshold = cfg.pick(a.threshold, "threshold", GLUCOSE_THRESHOLD_MG_DL)?;
    let model_path = a.model.join("model.json");
    let transform_path = a.model.join("transform.json");
    require_file(&model_path)?;
    require_file(&transform_path)?;
    let bundle = ModelBundle::load(&model_path)?;
    let transform = TransformBundle::load(&transform_path)?;
    if features::schema_hash(&transform.mask.kept) != bundle.feature_schema_hash {
        return Err(Error::Schema("model and transform were not trained together".into()));
    }
    let pca = transform.pca();
    let mut sessions = load_sessions(&a.manifest, threshold, jobs)?;
    if let Some(id) = &a.session {
        sessions.retain(|s| &s.session_id == id);
        if sessions.is_empty() {
            return Err(Error::Validation(format!("session {id} not in manifest")));
        }
    }
    let pitch = PitchConfig::default();
    let maps = crate::par_map(&sessions, jobs, |s| features::extract_session(s, &pitch));
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    let io = |e| Error::io("<stdout>", e);
    writeln!(out, "session_id,label,pred,prob,z").map_err(io)?;
    for (s, m) in sessions.iter().zip(&maps) {
        let p = classifier::predict(&bundle.model, &pca.project_map(m))?;
        writeln!(out, "{},{},{},{},{}", s.session_id, s.label, p.class, p.probability, p.z).map_err(io)?;
    }
    Ok(())
}

fn permtest(a: PermtestArgs) -> Result<()> {
    let cfg = Config::load(a.common.config.as_deref())?;
    let seed = cfg.pick(a.common.seed, "seed", 0)?;
    let n_perm = cfg.pick(a.n_perm, "n_perm", DEFAULT_PERMUTATIONS)?;
    require_file(&a.predictions)?;
    let recs = evaluation::read_predictions(&a.predictions)?;
    let z: Vec<f64> = recs.iter().map(|r| r.z).collect();
    let labels: Vec<u8> = recs.iter().map(|r| r.label).collect();
    println!("{}", evaluation::permutation_test(&z, &labels, n_perm, seed)?);
    Ok(())
}

fn synth_cmd(a: SynthArgs) -> Result<()> {
    let cfg = Config::load(a.common.config.as_deref())?;
    let out = require(cfg.pick_opt(a.out, "out")?, "out")?;
    let mut offsets = if a.zero_offsets || cfg.get::<bool>("zero_offsets")?.unwrap_or(false) {
        ClassOffsets::zero()
    } else {
        ClassOffsets::default()
    };
    offsets.jitter_sigma = cfg.pick(a.jitter_offset, "jitter_offset", offsets.jitter_sigma)?;
    offsets.shimmer_sigma = cfg.pick(a.shimmer_offset, "shimmer_offset", offsets.shimmer_sigma)?;
    offsets.f0_hz = cfg.pick(a.f0_offset, "f0_offset", offsets.f0_hz)?;
    let dc = DatasetConfig {
        n_per_class: cfg.pick(a.n_per_class, "n_per_class", 30)?,
        offsets,
        seed: cfg.pick(a.common.seed, "seed", 0)?,
        sample_rate: cfg.pick(a.sample_rate, "sample_rate", 8000)?,
    };
    if dc.n_per_class < 2 {
        return Err(Error::Validation("--n-per-class must be at least 2".into()));
    }
    if dc.sample_rate < corpus::MIN_SAMPLE_RATE {
        return Err(Error::Validation(format!("sample rate must be at least {}", corpus::MIN_SAMPLE_RATE)));
    }
    let summary = synth::generate_dataset(&out, &dc)?;
    println!("{}", summary.manifest.display());
    Ok(())
}

fn report_cmd(a: ReportArgs) -> Result<()> {
    let cfg = Config::load(a.common.config.as_deref())?;
    let seed = cfg.pick(a.common.seed, "seed", 0)?;
    let n_perm = cfg.pick(a.n_perm, "n_perm", DEFAULT_PERMUTATIONS)?;
    let out = require(cfg.pick_opt(a.out, "out")?, "out")?;
    require_file(&a.predictions)?;
    let recs = evaluation::read_predictions(&a.predictions)?;
    if recs.is_empty() {
        return Err(Error::NothingToReport);
    }
    let confusion = evaluation::ConfusionMatrix::from_pairs(recs.iter().map(|r| (r.label, r.pred)));
    let m = evaluation::metrics(&confusion);
    let z: Vec<f64> = recs.iter().map(|r| r.z).collect();
    let labels: Vec<u8> = recs.iter().map(|r| r.label).collect();
    let p = evaluation::permutation_test(&z, &labels, n_perm, seed).ok();
    ensure_dir(&out)?;
    let path = out.join("report.csv");
    let mut text = String::from("metric,value\n");
    for (k, v) in [
        ("accuracy", m.accuracy.to_string()),
        ("precision", m.precision.to_string()),
        ("recall", m.recall.to_string()),
        ("f1", m.f1.to_string()),
        ("precision_undefined", m.precision_undefined.to_string()),
        ("recall_undefined", m.recall_undefined.to_string()),
        ("tp", confusion.tp.to_string()),
        ("fp", confusion.fp.to_string()),
        ("tn", confusion.tn.to_string()),
        ("fn", confusion.fn_.to_string()),
        ("n_evaluated", recs.len().to_string()),
    ] {
        text.push_str(&format!("{k},{v}\n"));
    }
    if let Some(p) = p {
        text.push_str(&format!("p_value,{p}\n"));
    }
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    println!("accuracy {:.4} f1 {:.4}", m.accuracy, m.f1);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_parsing_and_precedence() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        std::fs::write(&path, "# comment\nseed = 7\ncorr-threshold=0.2\n").unwrap();
        let cfg = Config::load(Some(&path)).unwrap();
        assert_eq!(cfg.pick(None, "seed", 0u64).unwrap(), 7);
        assert_eq!(cfg.pick(Some(3u64), "seed", 0).unwrap(), 3);
        assert_eq!(cfg.pick(None, "corr_threshold", 0.15).unwrap(), 0.2);
        assert_eq!(cfg.pick(None, "pca_k", 8usize).unwrap(), 8);
        std::fs::write(&path, "no equals sign\n").unwrap();
        assert!(Config::load(Some(&path)).is_err());
    }

    #[test]
    fn model_spec_conflicts() {
        let cfg = Config::default();
        assert!(matches!(model_spec(&cfg, None, None, None).unwrap(), ModelSpec::Grid(_)));
        assert!(model_spec(&cfg, Some("0.9".into()), Some("l1".into()), None).is_err());
        assert!(model_spec(&cfg, None, Some("l1".into()), None).is_err());
        assert_eq!(
            model_spec(&cfg, None, Some("l1".into()), Some(0.9)).unwrap(),
            ModelSpec::Fixed { penalty: Penalty::L1, c: 0.9 }
        );
    }

    #[test]
    fn exit_codes() {
        assert_eq!(run(["voxglyco", "frobnicate"]), 2);
        assert_eq!(run(["voxglyco", "loocv", "--grid", "0.9", "--penalty", "l1", "--C", "1", "--out", "x", "--features", "f"]), 2);
        assert_eq!(run(["voxglyco", "extract", "--manifest", "/nonexistent/m.csv", "--out", "o.csv"]), 2);
        assert_eq!(run(["voxglyco", "--help"]), 0);
    }
}
