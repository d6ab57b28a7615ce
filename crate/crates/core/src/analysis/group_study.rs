use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{train_and_rank, StudyConfig, Trait};
use crate::dataset::{Dataset, Modality, TraitTable, MIN_CLASSES_PER_USER};
use crate::error::{Error, Result};
use crate::eval::MrrStats;
use crate::rng::{hash_str, rng_for};

/// Share of each group's per-class records held out for testing.
const TEST_FRACTION: f64 = 0.2;

/// Speakers whose encoded trait value is in `values`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraitGroup {
    pub name: String,
    pub values: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraitGrouping {
    #[serde(rename = "trait")]
    pub trait_: Trait,
    pub groups: Vec<TraitGroup>,
}

impl TraitGrouping {
    /// Default groups: volume low {1} / medium {2,3} / high {4}; background
    /// noise low {1,2} / high {3,4}; muffledness low {1,2} / high {3};
    /// binary traits no / yes; gender man / woman.
    pub fn standard(t: Trait) -> Result<Self> {
        let g = |name: &str, values: &[u8]| TraitGroup {
            name: name.into(),
            values: values.to_vec(),
        };
        let groups = match t {
            Trait::Volume => vec![g("low", &[1]), g("medium", &[2, 3]), g("high", &[4])],
            Trait::BackgroundNoise => vec![g("low", &[1, 2]), g("high", &[3, 4])],
            Trait::Muffledness => vec![g("low", &[1, 2]), g("high", &[3])],
            Trait::Accent | Trait::Creak | Trait::Hoarseness => vec![g("no", &[0]), g("yes", &[1])],
            Trait::Gender => vec![g("man", &[0]), g("woman", &[1])],
            Trait::Examples => return Err(Error::Config("example count is not a speaker grouping".into())),
        };
        Ok(Self { trait_: t, groups })
    }

    fn validate(&self) -> Result<()> {
        if self.groups.len() < 2 {
            return Err(Error::Config("a grouping needs at least two groups".into()));
        }
        let mut seen = BTreeSet::new();
        for g in &self.groups {
            for v in &g.values {
                if !seen.insert(*v) {
                    return Err(Error::Config(format!("trait value {v} belongs to more than one group")));
                }
            }
        }
        Ok(())
    }
}

/// Train and test language records per group.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupSplit {
    #[serde(rename = "trait")]
    pub trait_: Trait,
    pub names: Vec<String>,
    pub train: Vec<BTreeSet<String>>,
    pub test: Vec<BTreeSet<String>>,
    /// Test records removed because their class was absent from training.
    pub dropped_test_records: usize,
}

impl GroupSplit {
    /// Checks disjointness, equal sizes across groups and that every test
    /// class appears in the group's training records.
    pub fn verify(&self, dataset: &Dataset) -> Result<()> {
        let fail = |m: String| Err(Error::Study(m));
        let mut all = BTreeSet::new();
        for (g, name) in self.names.iter().enumerate() {
            for id in self.train[g].iter().chain(&self.test[g]) {
                if !all.insert(id) {
                    return fail(format!("record {id} used twice (group {name})"));
                }
            }
            if self.train[g].len() != self.train[0].len() || self.test[g].len() != self.test[0].len() {
                return fail(format!("group {name} differs in size from group {}", self.names[0]));
            }
            let class = |id: &String| dataset.get(id).map(|r| r.class_label.as_str());
            let train_classes: BTreeSet<_> = self.train[g].iter().filter_map(class).collect();
            for id in &self.test[g] {
                if !class(id).is_some_and(|c| train_classes.contains(c)) {
                    return fail(format!("test record {id} of group {name} has no class in training"));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupOutcome {
    pub name: String,
    pub values: Vec<u8>,
    pub speakers: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub train_classes: usize,
    pub triplet_mrr: MrrStats,
    pub subset_mrr: MrrStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupStudy {
    pub grouping: TraitGrouping,
    /// Per-group train count (equal across groups).
    pub n_train: usize,
    /// Per-group test count (equal across groups).
    pub n_test: usize,
    pub dropped_test_records: usize,
    pub groups: Vec<GroupOutcome>,
}

/// Allocates `target` draws over classes in proportion to their sizes
/// (largest remainder), giving every class at least one when `target`
/// allows, then samples within each class.
fn stratified_sample(by_class: &BTreeMap<String, Vec<String>>, target: usize, seed: u64, stream: &str) -> BTreeSet<String> {
    let total: usize = by_class.values().map(Vec::len).sum();
    let sizes: Vec<usize> = by_class.values().map(Vec::len).collect();
    let mut alloc: Vec<usize> = sizes.iter().map(|&n| n * target / total).collect();
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    // Largest fractional part first, class order on ties.
    order.sort_by_key(|&c| std::cmp::Reverse((sizes[c] * target) % total));
    let mut left = target - alloc.iter().sum::<usize>();
    for &c in &order {
        if left == 0 {
            break;
        }
        if alloc[c] < sizes[c] {
            alloc[c] += 1;
            left -= 1;
        }
    }
    if target >= sizes.len() {
        for c in 0..sizes.len() {
            if alloc[c] == 0 {
                let donor = (0..sizes.len()).max_by_key(|&d| (alloc[d], std::cmp::Reverse(d))).expect("non-empty");
                alloc[donor] -= 1;
                alloc[c] += 1;
            }
        }
    }
    let mut out = BTreeSet::new();
    for ((class, ids), &k) in by_class.iter().zip(&alloc) {
        let mut ids = ids.clone();
        ids.shuffle(&mut rng_for(seed, hash_str(&format!("{stream}/{class}"))));
        out.extend(ids.into_iter().take(k));
    }
    out
}

fn by_class(dataset: &Dataset, ids: &BTreeSet<String>) -> BTreeMap<String, Vec<String>> {
    let mut out: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for id in ids {
        if let Some(r) = dataset.get(id) {
            out.entry(r.class_label.clone()).or_default().push(id.clone());
        }
    }
    out
}

/// Assigns language records to groups by speaker trait, holds out a share of
/// each class for testing and downsamples every group to the smallest train
/// and test sizes.
pub fn build_group_split(dataset: &Dataset, traits: &TraitTable, grouping: &TraitGrouping, seed: u64) -> Result<GroupSplit> {
    grouping.validate()?;
    let n_groups = grouping.groups.len();
    let mut members: Vec<BTreeMap<String, Vec<String>>> = vec![BTreeMap::new(); n_groups];
    for r in dataset.records() {
        if r.modality != Modality::Language {
            continue;
        }
        let Some(value) = r.speaker_id.as_ref().and_then(|s| traits.get(s)).and_then(|t| grouping.trait_.encode(t)) else {
            continue;
        };
        if let Some(g) = grouping.groups.iter().position(|g| g.values.contains(&value)) {
            members[g].entry(r.class_label.clone()).or_default().push(r.record_id.clone());
        }
    }
    let names: Vec<String> = grouping.groups.iter().map(|g| g.name.clone()).collect();

    let mut train = Vec::with_capacity(n_groups);
    let mut test = Vec::with_capacity(n_groups);
    for (g, classes) in members.iter().enumerate() {
        let mut tr = BTreeSet::new();
        let mut te = BTreeSet::new();
        for (class, ids) in classes {
            let mut ids = ids.clone();
            ids.sort_unstable();
            ids.shuffle(&mut rng_for(seed, hash_str(&format!("group/{}/{class}", names[g]))));
            let n = ids.len();
            let n_test = if n < 2 { 0 } else { ((n as f64 * TEST_FRACTION).round() as usize).clamp(1, n - 1) };
            for (k, id) in ids.into_iter().enumerate() {
                if k < n - n_test {
                    tr.insert(id);
                } else {
                    te.insert(id);
                }
            }
        }
        if tr.is_empty() {
            return Err(Error::Study(format!("group {} has no records", names[g])));
        }
        train.push(tr);
        test.push(te);
    }

    let target_train = train.iter().map(BTreeSet::len).min().expect("at least two groups");
    let mut dropped = 0;
    for g in 0..n_groups {
        train[g] = stratified_sample(&by_class(dataset, &train[g]), target_train, seed, &format!("train/{}", names[g]));
        let classes: BTreeSet<String> = by_class(dataset, &train[g]).into_keys().collect();
        if classes.len() < MIN_CLASSES_PER_USER {
            return Err(Error::Study(format!(
                "group {} covers only {} classes after equalizing (need {MIN_CLASSES_PER_USER})",
                names[g],
                classes.len()
            )));
        }
        let before = test[g].len();
        test[g].retain(|id| dataset.get(id).is_some_and(|r| classes.contains(&r.class_label)));
        dropped += before - test[g].len();
    }
    if dropped > 0 {
        log::warn!("dropped {dropped} test records whose class is missing from their group's training data");
    }
    let target_test = test.iter().map(BTreeSet::len).min().expect("at least two groups");
    if target_test == 0 {
        return Err(Error::Study("a group has no test records".into()));
    }
    for g in 0..n_groups {
        test[g] = stratified_sample(&by_class(dataset, &test[g]), target_test, seed, &format!("test/{}", names[g]));
    }
    let split = GroupSplit {
        trait_: grouping.trait_,
        names,
        train,
        test,
        dropped_test_records: dropped,
    };
    split.verify(dataset)?;
    Ok(split)
}

/// Trains one model per group on equal-size data and reports its retrieval
/// metrics. Candidates are the vision records paired with any of the group's
/// language records.
pub fn group_study(dataset: &Dataset, traits: &TraitTable, grouping: &TraitGrouping, config: &StudyConfig) -> Result<GroupStudy> {
    let split = build_group_split(dataset, traits, grouping, config.train.seed)?;
    let groups = (0..grouping.groups.len())
        .into_par_iter()
        .map(|g| -> Result<GroupOutcome> {
            let language: BTreeSet<&String> = split.train[g].iter().chain(&split.test[g]).collect();
            let objects: BTreeSet<&str> = language
                .iter()
                .filter_map(|id| dataset.get(id))
                .map(|r| r.object_id.as_str())
                .collect();
            let candidates: BTreeSet<String> = dataset
                .records()
                .iter()
                .filter(|r| r.modality == Modality::Vision && objects.contains(r.object_id.as_str()))
                .map(|r| r.record_id.clone())
                .collect();
            let speakers: BTreeSet<&str> = language
                .iter()
                .filter_map(|id| dataset.get(id).and_then(|r| r.speaker_id.as_deref()))
                .collect();
            let train_classes = by_class(dataset, &split.train[g]).len();
            let cell = train_and_rank(dataset, &split.train[g], &split.test[g], &candidates, config)?;
            Ok(GroupOutcome {
                name: split.names[g].clone(),
                values: grouping.groups[g].values.clone(),
                speakers: speakers.len(),
                n_train: split.train[g].len(),
                n_test: split.test[g].len(),
                train_classes,
                triplet_mrr: cell.triplet_mrr,
                subset_mrr: cell.subset_mrr,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(GroupStudy {
        grouping: grouping.clone(),
        n_train: split.train[0].len(),
        n_test: split.test[0].len(),
        dropped_test_records: split.dropped_test_records,
        groups,
    })
}
