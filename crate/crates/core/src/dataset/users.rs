//! Speaker eligibility for the individual-user study.

use std::collections::{BTreeMap, BTreeSet};

use super::{Dataset, Modality};

/// A speaker needs this many examples in a class for the class to count.
pub const MIN_EXAMPLES_PER_CLASS: usize = 2;
/// ...and this many such classes to be eligible.
pub const MIN_CLASSES_PER_USER: usize = 5;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EligibleUser {
    pub speaker_id: String,
    /// Retained language record ids, sorted.
    pub record_ids: Vec<String>,
    /// Retained classes, sorted.
    pub classes: Vec<String>,
}

/// Keeps speakers with at least two examples in each of at least five
/// classes, and drops their records from classes below two examples.
/// Output is sorted by speaker id.
pub fn filter_users_for_study(dataset: &Dataset) -> Vec<EligibleUser> {
    let mut per_speaker: BTreeMap<&str, BTreeMap<&str, Vec<&str>>> = BTreeMap::new();
    for r in dataset.records() {
        if r.modality != Modality::Language {
            continue;
        }
        if let Some(sp) = &r.speaker_id {
            per_speaker
                .entry(sp)
                .or_default()
                .entry(&r.class_label)
                .or_default()
                .push(&r.record_id);
        }
    }
    per_speaker
        .into_iter()
        .filter_map(|(sp, classes)| {
            let kept: BTreeMap<&str, Vec<&str>> = classes
                .into_iter()
                .filter(|(_, ids)| ids.len() >= MIN_EXAMPLES_PER_CLASS)
                .collect();
            if kept.len() < MIN_CLASSES_PER_USER {
                return None;
            }
            let ids: BTreeSet<String> = kept.values().flatten().map(|s| s.to_string()).collect();
            Some(EligibleUser {
                speaker_id: sp.to_string(),
                record_ids: ids.into_iter().collect(),
                classes: kept.keys().map(|s| s.to_string()).collect(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::test_support::rec;
    use crate::dataset::EmbeddingRecord;

    fn user_records(sp: &str, per_class: &[usize]) -> Vec<EmbeddingRecord> {
        let mut v = Vec::new();
        for (c, &n) in per_class.iter().enumerate() {
            for k in 0..n {
                let id = format!("{sp}_c{c}_{k}");
                v.push(rec(&id, Modality::Language, &format!("class{c}"), &format!("o{c}_{k}"), Some(sp), 3));
            }
        }
        v
    }

    #[test]
    fn two_each_in_five_classes_is_eligible() {
        let ds = Dataset::new(user_records("alice", &[2, 2, 2, 2, 2])).unwrap();
        let users = filter_users_for_study(&ds);
        assert_eq!(users.len(), 1);
        assert_eq!(users[0].record_ids.len(), 10);
        assert_eq!(users[0].classes.len(), 5);
    }

    #[test]
    fn four_full_classes_plus_a_single_is_ineligible() {
        let ds = Dataset::new(user_records("bob", &[2, 2, 2, 2, 1])).unwrap();
        assert!(filter_users_for_study(&ds).is_empty());
    }

    #[test]
    fn thin_classes_are_dropped_from_kept_users() {
        let ds = Dataset::new(user_records("carol", &[3, 2, 2, 2, 2, 1])).unwrap();
        let users = filter_users_for_study(&ds);
        assert_eq!(users[0].record_ids.len(), 11);
        assert!(!users[0].classes.contains(&"class5".to_string()));
    }

    #[test]
    fn filtering_is_idempotent() {
        let mut v = user_records("a", &[2, 3, 2, 2, 2, 1, 1]);
        v.extend(user_records("b", &[2, 2, 2, 2, 1]));
        v.extend(user_records("c", &[4, 4, 4, 4, 4, 4]));
        let ds = Dataset::new(v).unwrap();
        let once = filter_users_for_study(&ds);
        let kept: BTreeSet<String> = once.iter().flat_map(|u| u.record_ids.iter().cloned()).collect();
        let twice = filter_users_for_study(&ds.subset(&kept).unwrap());
        assert_eq!(once, twice);
        assert_eq!(once.len(), 2);
    }
}
