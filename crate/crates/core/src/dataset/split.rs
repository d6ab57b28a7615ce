//! Class-stratified, seeded train/val/test assignment.
//!
//! The unit of assignment is the object instance (`object_id`): every record
//! of an instance, percept and descriptions alike, lands in the same split, so
//! a held-out description is always evaluated against its own held-out
//! percept.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{Dataset, EligibleUser, SplitTag};
use crate::error::{Error, Result};
use crate::rng::{hash_str, rng_for};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl SplitRatios {
    pub fn new(train: f64, val: f64, test: f64) -> Result<Self> {
        let r = Self { train, val, test };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.train, self.val, self.test];
        if all.iter().any(|r| !r.is_finite() || *r < 0.0) || self.train <= 0.0 {
            return Err(Error::Split(format!(
                "ratios must be non-negative with a positive train share, got {all:?}"
            )));
        }
        if (all.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Split(format!("ratios must sum to 1, got {all:?}")));
        }
        Ok(())
    }

    fn as_array(&self) -> [f64; 3] {
        [self.train, self.val, self.test]
    }
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train: 0.8,
            val: 0.1,
            test: 0.1,
        }
    }
}

/// Disjoint record-id sets plus the seed that produced them.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: BTreeSet<String>,
    pub val: BTreeSet<String>,
    pub test: BTreeSet<String>,
    pub seed: u64,
}

impl DatasetSplit {
    pub fn tag_of(&self, record_id: &str) -> SplitTag {
        if self.train.contains(record_id) {
            SplitTag::Train
        } else if self.val.contains(record_id) {
            SplitTag::Val
        } else if self.test.contains(record_id) {
            SplitTag::Test
        } else {
            SplitTag::Unassigned
        }
    }

    pub fn sizes(&self) -> (usize, usize, usize) {
        (self.train.len(), self.val.len(), self.test.len())
    }

    /// Reads the split already recorded in the dataset's tags.
    pub fn from_tags(dataset: &Dataset, seed: u64) -> Self {
        let mut s = DatasetSplit {
            seed,
            ..Default::default()
        };
        for r in dataset.records() {
            let id = r.record_id.clone();
            match r.split {
                SplitTag::Train => s.train.insert(id),
                SplitTag::Val => s.val.insert(id),
                SplitTag::Test => s.test.insert(id),
                SplitTag::Unassigned => false,
            };
        }
        s
    }

    /// Checks disjointness and that every held-out class is seen in training.
    pub fn check(&self, dataset: &Dataset) -> Result<()> {
        if !self.train.is_disjoint(&self.val)
            || !self.train.is_disjoint(&self.test)
            || !self.val.is_disjoint(&self.test)
        {
            return Err(Error::Split("split sets overlap".into()));
        }
        let class_of = |id: &String| dataset.get(id).map(|r| r.class_label.as_str());
        let train_classes: BTreeSet<&str> = self.train.iter().filter_map(class_of).collect();
        for id in self.val.iter().chain(&self.test) {
            match class_of(id) {
                None => return Err(Error::Split(format!("unknown record {id}"))),
                Some(c) if !train_classes.contains(c) => {
                    return Err(Error::Split(format!("held-out class {c} absent from train")))
                }
                Some(_) => {}
            }
        }
        Ok(())
    }
}

/// Largest-remainder apportionment of `total` units over `ratios`.
fn largest_remainder(total: usize, ratios: &[f64; 3]) -> [usize; 3] {
    let exact: Vec<f64> = ratios.iter().map(|r| r * total as f64).collect();
    let mut out = [0usize; 3];
    for (o, e) in out.iter_mut().zip(&exact) {
        *o = e.floor() as usize;
    }
    let mut left = total - out.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &s in order.iter().cycle() {
        if left == 0 {
            break;
        }
        out[s] += 1;
        left -= 1;
    }
    out
}

/// Per-class counts for (train, val, test).
///
/// Rows sum to the class sizes; columns sum to the largest-remainder totals
/// over all units, except where a class had to borrow a held-out unit to keep
/// at least one training unit.
pub fn apportion(class_sizes: &[usize], ratios: &SplitRatios) -> Vec<[usize; 3]> {
    let r = ratios.as_array();
    let total: usize = class_sizes.iter().sum();
    let targets = largest_remainder(total, &r);

    let mut cells: Vec<[usize; 3]> = Vec::with_capacity(class_sizes.len());
    let mut remainders = Vec::new();
    let mut row_deficit = Vec::with_capacity(class_sizes.len());
    let mut col_deficit = targets;
    for (c, &n) in class_sizes.iter().enumerate() {
        let mut row = [0usize; 3];
        for s in 0..3 {
            let exact = n as f64 * r[s];
            row[s] = exact.floor() as usize;
            col_deficit[s] -= row[s];
            remainders.push((exact - exact.floor(), c, s));
        }
        row_deficit.push(n - row.iter().sum::<usize>());
        cells.push(row);
    }
    remainders.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    for &(_, c, s) in &remainders {
        if row_deficit[c] > 0 && col_deficit[s] > 0 {
            cells[c][s] += 1;
            row_deficit[c] -= 1;
            col_deficit[s] -= 1;
        }
    }
    // Greedy can stall when a row's best cells are in exhausted columns.
    for c in 0..cells.len() {
        while row_deficit[c] > 0 {
            let s = (0..3)
                .find(|&s| col_deficit[s] > 0)
                .expect("row and column deficits sum to the same total");
            cells[c][s] += 1;
            row_deficit[c] -= 1;
            col_deficit[s] -= 1;
        }
    }
    for (row, &n) in cells.iter_mut().zip(class_sizes) {
        if row[0] == 0 && n >= 2 {
            let donor = if row[2] >= row[1] { 2 } else { 1 };
            row[donor] -= 1;
            row[0] += 1;
        }
    }
    cells
}

/// Stratified split by class over object instances; deterministic in `seed`.
pub fn make_split(dataset: &Dataset, ratios: &SplitRatios, seed: u64) -> Result<DatasetSplit> {
    ratios.validate()?;
    // class -> object -> record ids
    let mut groups: BTreeMap<&str, BTreeMap<&str, Vec<&str>>> = BTreeMap::new();
    for r in dataset.records() {
        groups
            .entry(&r.class_label)
            .or_default()
            .entry(&r.object_id)
            .or_default()
            .push(&r.record_id);
    }
    for (class, objects) in &groups {
        if objects.len() < 2 {
            return Err(Error::Split(format!(
                "class {class} has a single instance and cannot be stratified"
            )));
        }
    }
    let sizes: Vec<usize> = groups.values().map(|o| o.len()).collect();
    let counts = apportion(&sizes, ratios);

    let mut split = DatasetSplit {
        seed,
        ..Default::default()
    };
    for ((class, objects), row) in groups.into_iter().zip(counts) {
        let mut objs: Vec<&Vec<&str>> = objects.values().collect();
        objs.shuffle(&mut rng_for(seed, hash_str(class)));
        for (k, ids) in objs.into_iter().enumerate() {
            let set = if k < row[0] {
                &mut split.train
            } else if k < row[0] + row[1] {
                &mut split.val
            } else {
                &mut split.test
            };
            set.extend(ids.iter().map(|s| s.to_string()));
        }
    }
    Ok(split)
}

/// Per-user train/test assignment: within each class, one third (rounded,
/// at least one) of the user's descriptions are held out.
///
/// The shuffle depends on the seed and class only, so identical data under
/// different speaker ids splits identically.
pub fn per_user_split(dataset: &Dataset, user: &EligibleUser, seed: u64) -> Result<DatasetSplit> {
    let mut by_class: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for id in &user.record_ids {
        let r = dataset
            .get(id)
            .ok_or_else(|| Error::Split(format!("unknown record {id}")))?;
        by_class.entry(&r.class_label).or_default().push(&r.record_id);
    }
    let mut split = DatasetSplit {
        seed,
        ..Default::default()
    };
    for (class, mut ids) in by_class {
        ids.sort_unstable();
        ids.shuffle(&mut rng_for(seed, hash_str(class)));
        let n = ids.len();
        let n_test = if n < 2 {
            0
        } else {
            ((n as f64 / 3.0).round() as usize).max(1)
        };
        for (k, id) in ids.into_iter().enumerate() {
            if k < n - n_test {
                split.train.insert(id.to_string());
            } else {
                split.test.insert(id.to_string());
            }
        }
    }
    Ok(split)
}
