//! Retrieval and threshold-classification metrics over projected records.
//!
//! Queries are language records; candidates are vision records. All
//! distances are cosine distances in the shared space, with ranking ties
//! broken by record id.

mod report;
mod threshold;

use std::collections::BTreeMap;

use ndarray::Array2;
use rand::seq::index::sample;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use report::{evaluate, EvalOptions, EvalReport, ThresholdSummary};
pub use threshold::{
    roc_curve, threshold_eval, threshold_pairs, tune_threshold, Confusion, RocCurve, ThresholdPairs, THRESHOLD_GRID_STEPS,
};

use crate::align::{cosine_distance, Manifold};
use crate::dataset::{Dataset, Modality, SplitTag};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_for};

/// Mean of `1 / rank` over 1-based ranks.
pub fn mrr(ranks: &[usize]) -> Result<f64> {
    if ranks.is_empty() {
        return Err(Error::Eval("mean reciprocal rank of an empty rank list".into()));
    }
    if ranks.contains(&0) {
        return Err(Error::Eval("ranks are 1-based".into()));
    }
    Ok(ranks.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / ranks.len() as f64)
}

/// Cosine distance halved into `[0, 1]`.
pub fn normalized_distance(u: &[f64], v: &[f64]) -> Result<f64> {
    Ok(cosine_distance(u, v)? / 2.0)
}

/// Identity of a query or candidate.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Item {
    pub record_id: String,
    pub class_label: String,
    pub object_id: String,
}

/// Queries, candidates and their pairwise cosine distances.
#[derive(Debug, Clone)]
pub struct EvalSet {
    queries: Vec<Item>,
    candidates: Vec<Item>,
    /// `queries x candidates`.
    distances: Array2<f64>,
    by_class: BTreeMap<String, Vec<usize>>,
    by_object: BTreeMap<String, Vec<usize>>,
}

impl EvalSet {
    pub fn from_distances(queries: Vec<Item>, candidates: Vec<Item>, distances: Array2<f64>) -> Result<Self> {
        if distances.dim() != (queries.len(), candidates.len()) {
            return Err(Error::Shape(format!(
                "distance matrix {:?} does not match {} queries x {} candidates",
                distances.dim(),
                queries.len(),
                candidates.len()
            )));
        }
        if distances.iter().any(|d| !d.is_finite()) {
            return Err(Error::NonFinite("distance matrix".into()));
        }
        let mut by_class: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        let mut by_object: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (i, c) in candidates.iter().enumerate() {
            by_class.entry(c.class_label.clone()).or_default().push(i);
            by_object.entry(c.object_id.clone()).or_default().push(i);
        }
        Ok(Self {
            queries,
            candidates,
            distances,
            by_class,
            by_object,
        })
    }

    /// Distances between projected query and candidate rows.
    pub fn from_projections(
        queries: Vec<Item>,
        candidates: Vec<Item>,
        query_proj: &Array2<f64>,
        cand_proj: &Array2<f64>,
    ) -> Result<Self> {
        if query_proj.nrows() != queries.len() || cand_proj.nrows() != candidates.len() {
            return Err(Error::Shape("projection rows do not match items".into()));
        }
        let rows = (0..queries.len())
            .into_par_iter()
            .map(|q| {
                let u = query_proj.row(q).to_vec();
                (0..candidates.len())
                    .map(|c| cosine_distance(&u, cand_proj.row(c).as_slice().expect("standard layout")))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        let flat: Vec<f64> = rows.into_iter().flatten().collect();
        let distances = Array2::from_shape_vec((queries.len(), candidates.len()), flat)
            .map_err(|e| Error::Shape(e.to_string()))?;
        Self::from_distances(queries, candidates, distances)
    }

    /// Projects `query_indices` and `candidate_indices` of `dataset`.
    pub fn build(manifold: &Manifold, dataset: &Dataset, query_indices: &[usize], candidate_indices: &[usize]) -> Result<Self> {
        let item = |i: usize| {
            let r = dataset.record(i);
            Item {
                record_id: r.record_id.clone(),
                class_label: r.class_label.clone(),
                object_id: r.object_id.clone(),
            }
        };
        let qp = manifold.project_all(dataset, query_indices)?;
        let cp = manifold.project_all(dataset, candidate_indices)?;
        Self::from_projections(
            query_indices.iter().map(|&i| item(i)).collect(),
            candidate_indices.iter().map(|&i| item(i)).collect(),
            &qp,
            &cp,
        )
    }

    /// Language queries against vision candidates, both taken from records tagged `tag`.
    pub fn for_split(manifold: &Manifold, dataset: &Dataset, tag: SplitTag) -> Result<Self> {
        let idx = dataset.indices_in(tag);
        let (q, c) = partition_modalities(dataset, &idx);
        Self::build(manifold, dataset, &q, &c)
    }

    pub fn queries(&self) -> &[Item] {
        &self.queries
    }

    pub fn candidates(&self) -> &[Item] {
        &self.candidates
    }

    pub fn distance(&self, query: usize, candidate: usize) -> f64 {
        self.distances[[query, candidate]]
    }

    pub fn candidates_of_class(&self, class: &str) -> &[usize] {
        self.by_class.get(class).map_or(&[], Vec::as_slice)
    }

    /// 1-based rank of `target` among `pool` (which includes it).
    fn rank(&self, query: usize, target: usize, pool: &[usize]) -> usize {
        let key = |c: usize| (self.distances[[query, c]], &self.candidates[c].record_id);
        let (dt, idt) = key(target);
        1 + pool
            .iter()
            .filter(|&&c| c != target)
            .filter(|&&c| {
                let (d, id) = key(c);
                d < dt || (d == dt && id < idt)
            })
            .count()
    }

    fn target_for<R: Rng + ?Sized>(&self, query: usize, rng: &mut R) -> Option<usize> {
        let q = &self.queries[query];
        let same_object: Vec<usize> = self
            .by_object
            .get(&q.object_id)?
            .iter()
            .copied()
            .filter(|&c| self.candidates[c].class_label == q.class_label)
            .collect();
        pick(&same_object, rng)
    }

    /// Target, same-class distractor and different-class distractor.
    fn triplet_candidates<R: Rng + ?Sized>(&self, query: usize, rng: &mut R) -> std::result::Result<[usize; 3], Skip> {
        let q = &self.queries[query];
        let target = self.target_for(query, rng).ok_or(Skip::NoTarget)?;
        let same_class = self.candidates_of_class(&q.class_label);
        let other_instance: Vec<usize> = same_class
            .iter()
            .copied()
            .filter(|&c| self.candidates[c].object_id != q.object_id)
            .collect();
        let same = match pick(&other_instance, rng) {
            Some(c) => c,
            None => {
                let fallback: Vec<usize> = same_class.iter().copied().filter(|&c| c != target).collect();
                pick(&fallback, rng).ok_or(Skip::NoSameClassDistractor)?
            }
        };
        let other_classes: Vec<&str> = self
            .by_class
            .keys()
            .map(String::as_str)
            .filter(|&c| c != q.class_label)
            .collect();
        let class = pick(&other_classes, rng).ok_or(Skip::TooFewClasses)?;
        let diff = pick(self.candidates_of_class(class), rng).expect("classes in the index are non-empty");
        Ok([target, same, diff])
    }

    /// Target plus one candidate from each of `k` distinct other classes.
    fn subset_candidates<R: Rng + ?Sized>(&self, query: usize, k: usize, rng: &mut R) -> std::result::Result<Vec<usize>, Skip> {
        let q = &self.queries[query];
        let target = self.target_for(query, rng).ok_or(Skip::NoTarget)?;
        let other_classes: Vec<&str> = self
            .by_class
            .keys()
            .map(String::as_str)
            .filter(|&c| c != q.class_label)
            .collect();
        if other_classes.len() < k {
            return Err(Skip::TooFewClasses);
        }
        let mut out = vec![target];
        for ci in sample(rng, other_classes.len(), k) {
            out.push(pick(self.candidates_of_class(other_classes[ci]), rng).expect("classes in the index are non-empty"));
        }
        Ok(out)
    }

    /// Triplet MRR: target, a same-class distractor and a different-class distractor.
    pub fn triplet_mrr(&self, repeats: usize, seed: u64) -> Result<MrrStats> {
        self.repeated(repeats, seed, |q, rng| {
            let cands = self.triplet_candidates(q, rng)?;
            Ok(self.rank(q, cands[0], &cands))
        })
    }

    /// Subset MRR: target and one candidate from each of 4 other classes.
    pub fn subset_mrr(&self, repeats: usize, seed: u64) -> Result<MrrStats> {
        self.repeated(repeats, seed, |q, rng| {
            let cands = self.subset_candidates(q, SUBSET_DISTRACTORS, rng)?;
            Ok(self.rank(q, cands[0], &cands))
        })
    }

    fn repeated<F>(&self, repeats: usize, seed: u64, rank_of: F) -> Result<MrrStats>
    where
        F: Fn(usize, &mut rand_chacha::ChaCha8Rng) -> std::result::Result<usize, Skip> + Sync,
    {
        if repeats == 0 {
            return Err(Error::Eval("at least one repeat is required".into()));
        }
        if self.queries.is_empty() {
            return Err(Error::Eval("no queries to evaluate".into()));
        }
        let mut per_repeat = Vec::with_capacity(repeats);
        let mut skipped = SkipCounts::default();
        let mut evaluated = 0;
        for r in 0..repeats {
            let repeat_seed = derive_seed(seed, r as u64);
            let outcomes: Vec<_> = (0..self.queries.len())
                .into_par_iter()
                .map(|q| rank_of(q, &mut rng_for(repeat_seed, q as u64)))
                .collect();
            let mut ranks = Vec::with_capacity(outcomes.len());
            let mut this_skipped = SkipCounts::default();
            for o in outcomes {
                match o {
                    Ok(rank) => ranks.push(rank),
                    Err(s) => this_skipped.add(s),
                }
            }
            if ranks.is_empty() {
                return Err(Error::Eval("every query was skipped; no candidates to rank".into()));
            }
            evaluated = ranks.len();
            skipped = this_skipped;
            per_repeat.push(mrr(&ranks)?);
        }
        let (mean, std) = mean_std(&per_repeat);
        Ok(MrrStats {
            mean,
            std,
            per_repeat,
            queries: evaluated,
            skipped,
        })
    }
}

/// Number of different-class distractors in the subset task.
pub const SUBSET_DISTRACTORS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Skip {
    NoTarget,
    NoSameClassDistractor,
    TooFewClasses,
}

/// Queries left out of one repeat, by reason.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkipCounts {
    pub no_target: usize,
    pub no_same_class_distractor: usize,
    pub too_few_classes: usize,
}

impl SkipCounts {
    fn add(&mut self, s: Skip) {
        match s {
            Skip::NoTarget => self.no_target += 1,
            Skip::NoSameClassDistractor => self.no_same_class_distractor += 1,
            Skip::TooFewClasses => self.too_few_classes += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.no_target + self.no_same_class_distractor + self.too_few_classes
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MrrStats {
    pub mean: f64,
    /// Population standard deviation across repeats.
    pub std: f64,
    pub per_repeat: Vec<f64>,
    /// Queries ranked per repeat.
    pub queries: usize,
    pub skipped: SkipCounts,
}

pub(crate) fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn pick<T: Copy, R: Rng + ?Sized>(items: &[T], rng: &mut R) -> Option<T> {
    if items.is_empty() {
        None
    } else {
        Some(items[rng.random_range(0..items.len())])
    }
}

/// Splits indices into (language, vision).
pub(crate) fn partition_modalities(dataset: &Dataset, indices: &[usize]) -> (Vec<usize>, Vec<usize>) {
    indices
        .iter()
        .partition(|&&i| dataset.record(i).modality == Modality::Language)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    pub(super) fn item(id: &str, class: &str, object: &str) -> Item {
        Item {
            record_id: id.into(),
            class_label: class.into(),
            object_id: object.into(),
        }
    }

    #[test]
    fn mrr_landmarks() {
        assert_eq!(mrr(&[1, 1, 1]).unwrap(), 1.0);
        assert!((mrr(&[1, 2, 4]).unwrap() - 1.75 / 3.0).abs() < 1e-15);
        assert!(mrr(&[]).is_err());
        assert!(mrr(&[0]).is_err());
    }

    #[test]
    fn normalized_distance_landmarks() {
        assert!(normalized_distance(&[1.0, 1.0], &[1.0, 1.0]).unwrap() < 1e-15);
        assert_eq!(normalized_distance(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.5);
        assert!((normalized_distance(&[1.0, 0.0], &[-1.0, 0.0]).unwrap() - 1.0).abs() < 1e-15);
    }

    /// Two classes, two objects each; each query object has one vision record.
    fn centroid_set() -> EvalSet {
        let queries = vec![item("q_a1", "a", "a1"), item("q_b2", "b", "b2")];
        let candidates = vec![
            item("v_a1", "a", "a1"),
            item("v_a2", "a", "a2"),
            item("v_b1", "b", "b1"),
            item("v_b2", "b", "b2"),
        ];
        // Class-centroid projections: all same-class candidates tie.
        let d = ndarray::array![[0.0, 0.0, 1.0, 1.0], [1.0, 1.0, 0.0, 0.0]];
        EvalSet::from_distances(queries, candidates, d).unwrap()
    }

    #[test]
    fn centroid_ties_follow_record_ids() {
        let set = centroid_set();
        let s = set.triplet_mrr(3, 1).unwrap();
        // q_a1's target v_a1 sorts before v_a2; q_b2's target v_b2 sorts after v_b1.
        assert_eq!(s.per_repeat, vec![0.75; 3]);
        assert_eq!(s.std, 0.0);
    }

    #[test]
    fn ranks_use_id_order_on_ties() {
        let set = centroid_set();
        assert_eq!(set.rank(0, 0, &[0, 1, 2]), 1);
        assert_eq!(set.rank(1, 3, &[3, 2, 0]), 2);
    }

    #[test]
    fn perfect_projection_scores_one() {
        let mut queries = Vec::new();
        let mut cands = Vec::new();
        for c in 0..6 {
            for k in 0..3 {
                queries.push(item(&format!("q{c}{k}"), &format!("c{c}"), &format!("o{c}{k}")));
                cands.push(item(&format!("v{c}{k}"), &format!("c{c}"), &format!("o{c}{k}")));
            }
        }
        let d = Array2::from_shape_fn((18, 18), |(q, c)| if q == c { 0.0 } else if q / 3 == c / 3 { 0.3 } else { 1.0 });
        let set = EvalSet::from_distances(queries, cands, d).unwrap();
        assert_eq!(set.triplet_mrr(2, 0).unwrap().mean, 1.0);
        assert_eq!(set.subset_mrr(2, 0).unwrap().mean, 1.0);
    }

    #[test]
    fn same_class_fallback_and_skips() {
        // Query object has two vision records and no other object in its class.
        let queries = vec![item("q", "a", "a1"), item("lonely", "z", "z1")];
        let cands = vec![item("v1", "a", "a1"), item("v2", "a", "a1"), item("w", "b", "b1")];
        let d = ndarray::array![[0.1, 0.2, 0.3], [0.5, 0.5, 0.5]];
        let set = EvalSet::from_distances(queries, cands, d).unwrap();
        let s = set.triplet_mrr(1, 0).unwrap();
        assert_eq!(s.queries, 1);
        assert_eq!(s.skipped.no_target, 1);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let c = set.triplet_candidates(0, &mut rng).unwrap();
        assert_ne!(c[0], c[1]);
        assert_eq!(c[2], 2);
    }

    #[test]
    fn subset_uses_distinct_classes() {
        let mut queries = Vec::new();
        let mut cands = Vec::new();
        for c in 0..7 {
            queries.push(item(&format!("q{c}"), &format!("c{c}"), &format!("o{c}")));
            for k in 0..3 {
                cands.push(item(&format!("v{c}_{k}"), &format!("c{c}"), &format!("o{c}{}", if k == 0 { String::new() } else { k.to_string() })));
            }
        }
        let set = EvalSet::from_distances(queries, cands, Array2::zeros((7, 21))).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for q in 0..7 {
            let c = set.subset_candidates(q, 4, &mut rng).unwrap();
            let classes: std::collections::BTreeSet<_> = c.iter().map(|&i| &set.candidates()[i].class_label).collect();
            assert_eq!(classes.len(), 5);
            assert_eq!(set.candidates()[c[0]].object_id, set.queries()[q].object_id);
        }
    }

    #[test]
    fn evaluation_is_deterministic() {
        let set = centroid_set();
        assert!(set.subset_mrr(2, 3).is_err());
        let a = set.triplet_mrr(4, 9).unwrap();
        let b = set.triplet_mrr(4, 9).unwrap();
        assert_eq!(a, b);
    }
}
