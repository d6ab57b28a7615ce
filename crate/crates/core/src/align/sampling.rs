use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Modality};
use crate::error::{Error, Result};

/// Attempts at drawing a modality that has records for the required class.
const MODALITY_RETRIES: usize = 16;

/// How the anchor of each triplet is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnchorMode {
    /// Anchor class uniform over classes.
    #[default]
    ClassUniform,
    /// Anchor record uniform over the records of a uniformly chosen modality.
    RecordUniform,
}

/// Indices into the dataset the pool was built from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Triplet {
    pub anchor: usize,
    pub positive: usize,
    pub negative: usize,
    pub modalities: [Modality; 3],
}

impl Triplet {
    pub fn members(&self) -> [(usize, Modality); 3] {
        [
            (self.anchor, self.modalities[0]),
            (self.positive, self.modalities[1]),
            (self.negative, self.modalities[2]),
        ]
    }
}

fn slot(m: Modality) -> usize {
    match m {
        Modality::Vision => 0,
        Modality::Language => 1,
    }
}

fn random_modality<R: Rng + ?Sized>(rng: &mut R) -> Modality {
    if rng.random_bool(0.5) {
        Modality::Language
    } else {
        Modality::Vision
    }
}

/// Training records grouped by class and modality.
#[derive(Debug, Clone)]
pub struct TrainingPool {
    classes: Vec<String>,
    /// `members[c][slot(m)]`: record indices of class `c` in modality `m`.
    members: Vec<[Vec<usize>; 2]>,
    /// `(class position, record index)` per modality, for record-uniform anchors.
    by_modality: [Vec<(usize, usize)>; 2],
}

impl TrainingPool {
    pub fn new(dataset: &Dataset, indices: &[usize]) -> Result<Self> {
        let mut grouped: BTreeMap<&str, [Vec<usize>; 2]> = BTreeMap::new();
        for &i in indices {
            let r = dataset.record(i);
            grouped.entry(&r.class_label).or_default()[slot(r.modality)].push(i);
        }
        if grouped.len() < 2 {
            return Err(Error::Config(format!(
                "triplet sampling needs at least 2 training classes, found {}",
                grouped.len()
            )));
        }
        let classes: Vec<String> = grouped.keys().map(|c| c.to_string()).collect();
        let members: Vec<[Vec<usize>; 2]> = grouped.into_values().collect();
        let mut by_modality: [Vec<(usize, usize)>; 2] = Default::default();
        for (c, m) in members.iter().enumerate() {
            for s in 0..2 {
                by_modality[s].extend(m[s].iter().map(|&i| (c, i)));
            }
        }
        Ok(Self {
            classes,
            members,
            by_modality,
        })
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn records(&self, class: usize, modality: Modality) -> &[usize] {
        &self.members[class][slot(modality)]
    }

    fn draw_member<R: Rng + ?Sized>(&self, class: usize, rng: &mut R) -> Option<(usize, Modality)> {
        for _ in 0..MODALITY_RETRIES {
            let m = random_modality(rng);
            let pool = self.records(class, m);
            if !pool.is_empty() {
                return Some((pool[rng.random_range(0..pool.len())], m));
            }
        }
        None
    }

    fn draw_anchor<R: Rng + ?Sized>(&self, mode: AnchorMode, rng: &mut R) -> Option<(usize, usize, Modality)> {
        match mode {
            AnchorMode::ClassUniform => {
                let c = rng.random_range(0..self.classes.len());
                self.draw_member(c, rng).map(|(i, m)| (c, i, m))
            }
            AnchorMode::RecordUniform => {
                for _ in 0..MODALITY_RETRIES {
                    let m = random_modality(rng);
                    let pool = &self.by_modality[slot(m)];
                    if !pool.is_empty() {
                        let (c, i) = pool[rng.random_range(0..pool.len())];
                        return Some((c, i, m));
                    }
                }
                None
            }
        }
    }

    /// Draws one triplet, or `None` when a member could not be filled.
    pub fn sample<R: Rng + ?Sized>(&self, mode: AnchorMode, rng: &mut R) -> Option<Triplet> {
        let (class, anchor, ma) = self.draw_anchor(mode, rng)?;
        let (positive, mp) = self.draw_member(class, rng)?;
        let mut neg_class = rng.random_range(0..self.classes.len() - 1);
        if neg_class >= class {
            neg_class += 1;
        }
        let (negative, mn) = self.draw_member(neg_class, rng)?;
        Some(Triplet {
            anchor,
            positive,
            negative,
            modalities: [ma, mp, mn],
        })
    }
}

/// Draws `count` triplets. Returns the triplets and the number of draws that
/// had to be skipped because a class had no usable record.
pub fn sample_triplets<R: Rng + ?Sized>(
    pool: &TrainingPool,
    count: usize,
    mode: AnchorMode,
    rng: &mut R,
) -> (Vec<Triplet>, usize) {
    let mut out = Vec::with_capacity(count);
    let mut skipped = 0;
    for _ in 0..count {
        match pool.sample(mode, rng) {
            Some(t) => out.push(t),
            None => skipped += 1,
        }
    }
    if skipped > 0 {
        log::warn!("skipped {skipped} of {count} triplets: no record available after modality retries");
    }
    (out, skipped)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::test_support::rec;
    use crate::rng::rng_for;

    fn two_class() -> Dataset {
        Dataset::new(vec![
            rec("a_l", Modality::Language, "apple", "o1", Some("s1"), 4),
            rec("a_v", Modality::Vision, "apple", "o1", None, 6),
            rec("b_l", Modality::Language, "ball", "o2", Some("s1"), 4),
            rec("b_v", Modality::Vision, "ball", "o2", None, 6),
        ])
        .unwrap()
    }

    #[test]
    fn triplets_respect_class_constraints() {
        let ds = two_class();
        let pool = TrainingPool::new(&ds, &[0, 1, 2, 3]).unwrap();
        let (ts, skipped) = sample_triplets(&pool, 8, AnchorMode::ClassUniform, &mut rng_for(0, 0));
        assert_eq!((ts.len(), skipped), (8, 0));
        for t in &ts {
            let class = |i: usize| ds.record(i).class_label.clone();
            assert_eq!(class(t.anchor), class(t.positive));
            assert_ne!(class(t.anchor), class(t.negative));
            for (i, m) in t.members() {
                assert_eq!(ds.record(i).modality, m);
            }
        }
    }

    #[test]
    fn same_seed_same_stream() {
        let ds = two_class();
        let pool = TrainingPool::new(&ds, &[0, 1, 2, 3]).unwrap();
        for mode in [AnchorMode::ClassUniform, AnchorMode::RecordUniform] {
            let a = sample_triplets(&pool, 50, mode, &mut rng_for(9, 1));
            let b = sample_triplets(&pool, 50, mode, &mut rng_for(9, 1));
            assert_eq!(a, b);
        }
    }

    #[test]
    fn modality_frequency_is_balanced() {
        let ds = two_class();
        let pool = TrainingPool::new(&ds, &[0, 1, 2, 3]).unwrap();
        let (ts, _) = sample_triplets(&pool, 3334, AnchorMode::ClassUniform, &mut rng_for(3, 0));
        let members: Vec<Modality> = ts.iter().flat_map(|t| t.modalities).take(10_000).collect();
        assert_eq!(members.len(), 10_000);
        let lang = members.iter().filter(|&&m| m == Modality::Language).count() as f64 / 10_000.0;
        assert!((lang - 0.5).abs() <= 0.02, "language fraction {lang}");
    }

    #[test]
    fn missing_modality_is_resampled() {
        // "ball" has no vision record; its members must come from language.
        let ds = Dataset::new(vec![
            rec("a_l", Modality::Language, "apple", "o1", Some("s1"), 4),
            rec("a_v", Modality::Vision, "apple", "o1", None, 6),
            rec("b_l", Modality::Language, "ball", "o2", Some("s1"), 4),
        ])
        .unwrap();
        let pool = TrainingPool::new(&ds, &[0, 1, 2]).unwrap();
        let (ts, _) = sample_triplets(&pool, 200, AnchorMode::ClassUniform, &mut rng_for(4, 0));
        assert!(ts.len() >= 190);
        for t in ts {
            for (i, m) in t.members() {
                if ds.record(i).class_label == "ball" {
                    assert_eq!(m, Modality::Language);
                }
            }
        }
    }

    #[test]
    fn single_class_is_rejected() {
        let ds = two_class();
        assert!(TrainingPool::new(&ds, &[0, 1]).is_err());
    }
}
