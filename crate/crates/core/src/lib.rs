//! Voice-based glucose-level classification.
//!
//! The crate turns four-segment voice recordings into glottal, phonation and
//! prosody descriptors, reduces them with a Pearson filter and PCA, and fits
//! an L1/L2-regularized logistic regression evaluated by a stratified
//! train/test split or leave-one-out cross-validation.
//!
//! Module map:
//!
//! - [`corpus`]: WAV decoding, the session manifest and glucose labels.
//! - [`dsp`]: framing, autocorrelation, Levinson-Durbin LPC, line fits, moments.
//! - [`pitch`]: F0 contour, voiced segments and cycle marks.
//! - [`phonation`], [`prosody`], [`glottal`]: per-session feature blocks.
//! - [`features`]: the feature table, correlation filter and PCA.
//! - [`classifier`]: logistic regression and grid search.
//! - [`evaluation`]: split, LOOCV, metrics, permutation test, reports.
//! - [`synth`]: synthetic voice generator with recorded ground truth.

pub mod classifier;
pub mod corpus;
pub mod dsp;
mod error;
pub mod evaluation;
pub mod features;
pub mod glottal;
pub mod phonation;
pub mod pitch;
pub mod prosody;
pub mod synth;

#[cfg(feature = "cli")]
pub mod cli;

pub use error::{Error, Result};

/// Named scalar features for one session; `None` marks a missing value.
pub type FeatureMap = std::collections::BTreeMap<String, Option<f64>>;

/// Run `f` over `items`, in parallel when the `parallel` feature is on and
/// `jobs > 1`. Output order always matches input order.
pub(crate) fn par_map<T, R, F>(items: &[T], jobs: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if jobs > 1 {
        use rayon::prelude::*;
        if let Ok(pool) = rayon::ThreadPoolBuilder::new().num_threads(jobs).build() {
            return pool.install(|| items.par_iter().map(&f).collect());
        }
    }
    let _ = jobs;
    items.iter().map(f).collect()
}
