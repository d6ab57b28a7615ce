//! Speaker-trait studies: per-user models correlated against annotated
//! traits, and models trained on trait-defined speaker groups of equal size.

mod group_study;
mod user_study;

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use group_study::{build_group_split, group_study, GroupOutcome, GroupSplit, GroupStudy, TraitGroup, TraitGrouping};
pub use user_study::{per_user_study, trait_correlations, Metric, TraitCorrelation, UserStudy, UserStudyResult};

use crate::align::{train, TrainConfig};
use crate::dataset::{Dataset, DatasetSplit, EmbeddingRecord, Gender, Modality, SpeakerTraits};
use crate::error::{Error, Result};
use crate::eval::{EvalOptions, EvalSet, MrrStats};

/// Training and evaluation settings shared by the studies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub train: TrainConfig,
    pub eval: EvalOptions,
}

const COLLINEAR_SLACK: f64 = 8.0 * f64::EPSILON;

/// Population Pearson correlation. `Ok(None)` when either input is constant.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<Option<f64>> {
    if x.len() != y.len() {
        return Err(Error::Study(format!("pearson inputs differ in length: {} vs {}", x.len(), y.len())));
    }
    if x.len() < 2 {
        return Err(Error::Study("pearson needs at least two points".into()));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("pearson input".into()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Ok(None);
    }
    let r = sxy / (sxx * syy).sqrt();
    // Collinear inputs land a few ulps short of +/-1; report them exactly.
    if 1.0 - r.abs() <= COLLINEAR_SLACK {
        return Ok(Some(r.signum()));
    }
    Ok(Some(r))
}

/// Speaker covariates. `Examples` is the per-user example count; the rest
/// are annotated traits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Trait {
    Examples,
    Accent,
    Gender,
    Creak,
    Muffledness,
    Volume,
    BackgroundNoise,
    Hoarseness,
}

impl Trait {
    /// Covariates entering the per-user correlation table (hoarseness is left out).
    pub const CORRELATED: [Trait; 7] = [
        Trait::Examples,
        Trait::Accent,
        Trait::Gender,
        Trait::Creak,
        Trait::Muffledness,
        Trait::Volume,
        Trait::BackgroundNoise,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Trait::Examples => "examples",
            Trait::Accent => "accent",
            Trait::Gender => "gender",
            Trait::Creak => "creak",
            Trait::Muffledness => "muffledness",
            Trait::Volume => "volume",
            Trait::BackgroundNoise => "background_noise",
            Trait::Hoarseness => "hoarseness",
        }
    }

    /// Numeric code of an annotated trait: binary as 0/1, ordinals raw,
    /// gender man 0 / woman 1. `None` for undetermined gender and for `Examples`.
    pub fn encode(self, traits: &SpeakerTraits) -> Option<u8> {
        match self {
            Trait::Examples => None,
            Trait::Accent => Some(u8::from(traits.accent)),
            Trait::Creak => Some(u8::from(traits.creak)),
            Trait::Hoarseness => Some(u8::from(traits.hoarseness)),
            Trait::Gender => match traits.gender {
                Gender::Man => Some(0),
                Gender::Woman => Some(1),
                Gender::Undetermined => None,
            },
            Trait::Muffledness => Some(traits.muffledness),
            Trait::Volume => Some(traits.volume),
            Trait::BackgroundNoise => Some(traits.background_noise),
        }
    }
}

impl fmt::Display for Trait {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Trait {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [
            Trait::Examples,
            Trait::Accent,
            Trait::Gender,
            Trait::Creak,
            Trait::Muffledness,
            Trait::Volume,
            Trait::BackgroundNoise,
            Trait::Hoarseness,
        ]
        .into_iter()
        .find(|t| t.as_str() == s)
        .ok_or_else(|| Error::Config(format!("unknown trait {s:?}")))
    }
}

/// Outcome of training on one set of language records and ranking another.
#[derive(Debug, Clone)]
pub(crate) struct CellOutcome {
    pub triplet_mrr: MrrStats,
    pub subset_mrr: MrrStats,
}

/// Builds a dataset in canonical order (vision then language, each sorted by
/// id) where `train_language` and the vision records of their objects are
/// tagged for training and `test_language` for testing; trains on it and
/// ranks `candidates` (vision record ids) for every test query.
pub(crate) fn train_and_rank(
    source: &Dataset,
    train_language: &BTreeSet<String>,
    test_language: &BTreeSet<String>,
    candidates: &BTreeSet<String>,
    config: &StudyConfig,
) -> Result<CellOutcome> {
    let get = |id: &String| {
        source
            .get(id)
            .ok_or_else(|| Error::Study(format!("unknown record {id}")))
    };
    let train_objects: BTreeSet<&str> = train_language
        .iter()
        .map(|id| get(id).map(|r| r.object_id.as_str()))
        .collect::<Result<_>>()?;
    let train_vision: BTreeSet<String> = source
        .records()
        .iter()
        .filter(|r| r.modality == Modality::Vision && train_objects.contains(r.object_id.as_str()))
        .map(|r| r.record_id.clone())
        .collect();
    let vision_ids: BTreeSet<&String> = train_vision.iter().chain(candidates).collect();
    let language_ids: BTreeSet<&String> = train_language.iter().chain(test_language).collect();

    let mut records: Vec<EmbeddingRecord> = Vec::with_capacity(vision_ids.len() + language_ids.len());
    for id in vision_ids.iter().chain(&language_ids) {
        records.push(get(id)?.clone());
    }
    let split = DatasetSplit {
        train: train_language.iter().chain(&train_vision).cloned().collect(),
        val: BTreeSet::new(),
        test: test_language.clone(),
        seed: config.train.seed,
    };
    let mut sequences = std::collections::BTreeMap::new();
    for r in &records {
        if let Some(s) = source.sequence(&r.record_id) {
            sequences.insert(r.record_id.clone(), s.clone());
        }
    }
    let dataset = Dataset::new(records)?.with_sequences(sequences)?.with_split(&split);

    let outcome = train(&dataset, &config.train)?;
    let index = |id: &String| dataset.index_of(id).expect("record was inserted above");
    let queries: Vec<usize> = test_language.iter().map(index).collect();
    let cands: Vec<usize> = candidates.iter().map(index).collect();
    let set = EvalSet::build(&outcome.manifold, &dataset, &queries, &cands)?;
    Ok(CellOutcome {
        triplet_mrr: set.triplet_mrr(config.eval.repeats, config.eval.seed)?,
        subset_mrr: set.subset_mrr(config.eval.repeats, config.eval.seed)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn pearson_landmarks() {
        assert_eq!(pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap(), Some(1.0));
        assert_eq!(pearson(&[1.0, 2.0, 3.0], &[6.0, 4.0, 2.0]).unwrap(), Some(-1.0));
        assert!((pearson(&[1.0, 2.0, 3.0], &[1.0, 3.0, 2.0]).unwrap().unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(pearson(&[1.0, 1.0, 1.0], &[1.0, 3.0, 2.0]).unwrap(), None);
        assert!(pearson(&[1.0], &[1.0]).is_err());
        assert!(pearson(&[1.0, 2.0], &[1.0]).is_err());
    }

    #[test]
    fn trait_names_round_trip() {
        for t in Trait::CORRELATED.into_iter().chain([Trait::Hoarseness]) {
            assert_eq!(t.as_str().parse::<Trait>().unwrap(), t);
        }
        assert!("height".parse::<Trait>().is_err());
    }

    fn series() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (3usize..20).prop_flat_map(|n| {
            (
                prop::collection::vec(-100.0..100.0f64, n),
                prop::collection::vec(-100.0..100.0f64, n),
            )
        })
    }

    proptest! {
        #[test]
        fn symmetric_and_affine_invariant((x, y) in series(), a in 0.1..10.0f64, b in -50.0..50.0f64) {
            let r = pearson(&x, &y).unwrap();
            prop_assume!(r.is_some());
            let r = r.unwrap();
            prop_assert!((-1.0..=1.0).contains(&r));
            prop_assert_eq!(pearson(&y, &x).unwrap(), Some(r));
            let xt: Vec<f64> = x.iter().map(|v| a * v + b).collect();
            prop_assert!((pearson(&xt, &y).unwrap().unwrap() - r).abs() < 1e-12);
            let neg: Vec<f64> = y.iter().map(|v| -v).collect();
            prop_assert!((pearson(&x, &neg).unwrap().unwrap() + r).abs() < 1e-12);
        }

        #[test]
        fn linear_series_are_exactly_collinear((x, _) in series(), a in 0.01..100.0f64, b in -50.0..50.0f64) {
            prop_assume!(pearson(&x, &x).unwrap().is_some());
            let up: Vec<f64> = x.iter().map(|v| a * v + b).collect();
            let down: Vec<f64> = x.iter().map(|v| b - a * v).collect();
            prop_assert_eq!(pearson(&x, &up).unwrap(), Some(1.0));
            prop_assert_eq!(pearson(&x, &down).unwrap(), Some(-1.0));
        }
    }
}
