use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{pearson, train_and_rank, StudyConfig, Trait};
use crate::dataset::{filter_users_for_study, per_user_split, Dataset, Modality, SpeakerTraits, TraitTable};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserStudyResult {
    pub speaker_id: String,
    pub n_train: usize,
    pub n_test: usize,
    /// Retained examples (train + test).
    pub n_examples: usize,
    pub classes: usize,
    pub triplet_mrr: f64,
    pub subset_mrr: f64,
    pub traits: SpeakerTraits,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserStudy {
    pub results: Vec<UserStudyResult>,
    /// `(speaker_id, reason)` for speakers left out.
    pub excluded: Vec<(String, String)>,
}

/// Trains and evaluates one model per eligible speaker on that speaker's own
/// descriptions. Candidates are the vision records of the speaker's retained
/// classes. Every speaker uses the same training seed.
pub fn per_user_study(dataset: &Dataset, traits: &TraitTable, config: &StudyConfig) -> Result<UserStudy> {
    let users = filter_users_for_study(dataset);
    let mut excluded = Vec::new();
    let mut work = Vec::new();
    for user in users {
        match traits.get(&user.speaker_id) {
            Some(t) => work.push((user, t.clone())),
            None => {
                log::warn!("speaker {} has no trait annotation; excluded", user.speaker_id);
                excluded.push((user.speaker_id.clone(), "no trait annotation".to_string()));
            }
        }
    }
    let results = work
        .par_iter()
        .map(|(user, t)| -> Result<UserStudyResult> {
            let split = per_user_split(dataset, user, config.train.seed)?;
            let classes: BTreeSet<&str> = user.classes.iter().map(String::as_str).collect();
            let candidates: BTreeSet<String> = dataset
                .records()
                .iter()
                .filter(|r| r.modality == Modality::Vision && classes.contains(r.class_label.as_str()))
                .map(|r| r.record_id.clone())
                .collect();
            let cell = train_and_rank(dataset, &split.train, &split.test, &candidates, config)?;
            Ok(UserStudyResult {
                speaker_id: user.speaker_id.clone(),
                n_train: split.train.len(),
                n_test: split.test.len(),
                n_examples: user.record_ids.len(),
                classes: user.classes.len(),
                triplet_mrr: cell.triplet_mrr.mean,
                subset_mrr: cell.subset_mrr.mean,
                traits: t.clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(UserStudy { results, excluded })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    TripletMrr,
    SubsetMrr,
}

impl Metric {
    fn of(self, r: &UserStudyResult) -> f64 {
        match self {
            Metric::TripletMrr => r.triplet_mrr,
            Metric::SubsetMrr => r.subset_mrr,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraitCorrelation {
    #[serde(rename = "trait")]
    pub trait_: Trait,
    /// `None` when the trait or the metric is constant over the users used.
    pub r: Option<f64>,
    /// Users entering the correlation.
    pub n: usize,
    /// Users without a usable value for this trait.
    pub excluded: usize,
}

/// Pearson correlation of each covariate with the chosen metric.
pub fn trait_correlations(results: &[UserStudyResult], metric: Metric) -> Result<Vec<TraitCorrelation>> {
    if results.len() < 2 {
        return Err(Error::Study("correlations need at least two users".into()));
    }
    Trait::CORRELATED
        .into_iter()
        .map(|t| {
            let (xs, ys): (Vec<f64>, Vec<f64>) = results
                .iter()
                .filter_map(|r| {
                    let x = match t {
                        Trait::Examples => Some(r.n_examples as f64),
                        _ => t.encode(&r.traits).map(f64::from),
                    };
                    x.map(|x| (x, metric.of(r)))
                })
                .unzip();
            let n = xs.len();
            let r = if n >= 2 { pearson(&xs, &ys)? } else { None };
            Ok(TraitCorrelation {
                trait_: t,
                r,
                n,
                excluded: results.len() - n,
            })
        })
        .collect()
}
