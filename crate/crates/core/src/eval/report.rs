use serde::{Deserialize, Serialize};

use super::threshold::{roc_curve, threshold_eval, threshold_pairs, tune_threshold, Confusion};
use super::{EvalSet, MrrStats};
use crate::align::Manifold;
use crate::dataset::{Dataset, SplitTag};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, hash_str};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalOptions {
    /// Candidate re-draws per metric.
    pub repeats: usize,
    pub seed: u64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self { repeats: 5, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSummary {
    /// Tuned on the validation split.
    pub threshold: f64,
    pub validation_f1: f64,
    /// Test-split outcome at the tuned threshold.
    pub test: Confusion,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub test_positive_pairs: usize,
    pub test_negative_pairs: usize,
    pub skipped_queries: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub options: EvalOptions,
    pub test_queries: usize,
    pub test_candidates: usize,
    pub triplet_mrr: MrrStats,
    pub subset_mrr: MrrStats,
    pub threshold: ThresholdSummary,
    pub auc: f64,
    pub roc_points: Vec<(f64, f64)>,
}

/// Retrieval metrics on the test split, threshold tuned on the validation
/// split and applied to the test split, and the test ROC curve.
pub fn evaluate(manifold: &Manifold, dataset: &Dataset, options: &EvalOptions) -> Result<EvalReport> {
    let test = EvalSet::for_split(manifold, dataset, SplitTag::Test)?;
    let val = EvalSet::for_split(manifold, dataset, SplitTag::Val)?;
    if test.queries().is_empty() || test.candidates().is_empty() {
        return Err(Error::Eval("test split needs language queries and vision candidates".into()));
    }
    if val.queries().is_empty() || val.candidates().is_empty() {
        return Err(Error::Eval("validation split needs language queries and vision candidates".into()));
    }
    let triplet_mrr = test.triplet_mrr(options.repeats, derive_seed(options.seed, hash_str("triplet")))?;
    let subset_mrr = test.subset_mrr(options.repeats, derive_seed(options.seed, hash_str("subset")))?;

    let val_pairs = threshold_pairs(&val, derive_seed(options.seed, hash_str("pairs/val")));
    let (t, val_conf) = tune_threshold(&val_pairs)?;
    let test_pairs = threshold_pairs(&test, derive_seed(options.seed, hash_str("pairs/test")));
    let conf = threshold_eval(&test_pairs, t)?;
    let roc = roc_curve(&test_pairs)?;

    Ok(EvalReport {
        options: *options,
        test_queries: test.queries().len(),
        test_candidates: test.candidates().len(),
        triplet_mrr,
        subset_mrr,
        threshold: ThresholdSummary {
            threshold: t,
            validation_f1: val_conf.f1(),
            test: conf,
            precision: conf.precision(),
            recall: conf.recall(),
            f1: conf.f1(),
            test_positive_pairs: test_pairs.positives.len(),
            test_negative_pairs: test_pairs.negatives.len(),
            skipped_queries: test_pairs.skipped_queries,
        },
        auc: roc.auc,
        roc_points: roc.points,
    })
}
