use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::EvalSet;
use crate::error::{Error, Result};
use crate::rng::rng_for;

/// The threshold grid is `i / THRESHOLD_GRID_STEPS` for `i = 0..=THRESHOLD_GRID_STEPS`.
pub const THRESHOLD_GRID_STEPS: usize = 100;

/// Normalized distances of positive (same-class) and negative query/candidate pairs.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ThresholdPairs {
    pub positives: Vec<f64>,
    pub negatives: Vec<f64>,
    /// Queries with no same-class candidate.
    pub skipped_queries: usize,
}

/// For every query: all same-class candidates as positives and an equally
/// sized uniform sample of other-class candidates as negatives.
pub fn threshold_pairs(set: &EvalSet, seed: u64) -> ThresholdPairs {
    let per_query: Vec<Option<(Vec<f64>, Vec<f64>)>> = (0..set.queries().len())
        .into_par_iter()
        .map(|q| {
            let class = &set.queries()[q].class_label;
            let pos = set.candidates_of_class(class);
            if pos.is_empty() {
                return None;
            }
            let others: Vec<usize> = (0..set.candidates().len())
                .filter(|&c| &set.candidates()[c].class_label != class)
                .collect();
            let k = pos.len().min(others.len());
            let mut rng = rng_for(seed, q as u64);
            let mut neg: Vec<usize> = sample(&mut rng, others.len(), k).into_iter().map(|i| others[i]).collect();
            neg.sort_unstable();
            Some((
                pos.iter().map(|&c| set.distance(q, c) / 2.0).collect(),
                neg.iter().map(|&c| set.distance(q, c) / 2.0).collect(),
            ))
        })
        .collect();
    let mut out = ThresholdPairs::default();
    for entry in per_query {
        match entry {
            Some((p, n)) => {
                out.positives.extend(p);
                out.negatives.extend(n);
            }
            None => out.skipped_queries += 1,
        }
    }
    out
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

impl Confusion {
    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    /// `2 TP / (2 TP + FP + FN)`; 0 when nothing is predicted or expected positive.
    pub fn f1(&self) -> f64 {
        ratio(2 * self.tp, 2 * self.tp + self.fp + self.fn_)
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Predicts "same class" iff the normalized distance is at most `t`.
pub fn threshold_eval(pairs: &ThresholdPairs, t: f64) -> Result<Confusion> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::Eval(format!("threshold {t} outside [0, 1]")));
    }
    let tp = pairs.positives.iter().filter(|&&d| d <= t).count();
    let fp = pairs.negatives.iter().filter(|&&d| d <= t).count();
    Ok(Confusion {
        tp,
        fp,
        fn_: pairs.positives.len() - tp,
        tn: pairs.negatives.len() - fp,
    })
}

/// Grid point maximizing F1; ties go to the smallest threshold.
pub fn tune_threshold(pairs: &ThresholdPairs) -> Result<(f64, Confusion)> {
    if pairs.positives.is_empty() && pairs.negatives.is_empty() {
        return Err(Error::Eval("no threshold pairs to tune on".into()));
    }
    let mut best: Option<(f64, Confusion)> = None;
    for i in 0..=THRESHOLD_GRID_STEPS {
        let t = i as f64 / THRESHOLD_GRID_STEPS as f64;
        let c = threshold_eval(pairs, t)?;
        if best.is_none_or(|(_, b)| c.f1() > b.f1()) {
            best = Some((t, c));
        }
    }
    Ok(best.expect("grid is non-empty"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    /// `(fpr, tpr)`, from `(0, 0)` to `(1, 1)`, sorted by threshold.
    pub points: Vec<(f64, f64)>,
    pub auc: f64,
}

/// Sweeps the threshold over every observed distance; AUC by the trapezoid rule.
pub fn roc_curve(pairs: &ThresholdPairs) -> Result<RocCurve> {
    let (np, nn) = (pairs.positives.len(), pairs.negatives.len());
    if np == 0 || nn == 0 {
        return Err(Error::Eval("ROC needs both positive and negative pairs".into()));
    }
    let mut scored: Vec<(f64, bool)> = pairs
        .positives
        .iter()
        .map(|&d| (d, true))
        .chain(pairs.negatives.iter().map(|&d| (d, false)))
        .collect();
    scored.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < scored.len() {
        let d = scored[i].0;
        while i < scored.len() && scored[i].0 == d {
            if scored[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push((fp as f64 / nn as f64, tp as f64 / np as f64));
    }
    let auc = points
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1) / 2.0)
        .sum();
    Ok(RocCurve { points, auc })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::tests::item;
    use ndarray::Array2;
    use proptest::prelude::*;

    fn pairs(p: &[f64], n: &[f64]) -> ThresholdPairs {
        ThresholdPairs {
            positives: p.to_vec(),
            negatives: n.to_vec(),
            skipped_queries: 0,
        }
    }

    fn win_fraction(p: &[f64], n: &[f64]) -> f64 {
        let mut wins = 0.0;
        for &a in p {
            for &b in n {
                wins += if a < b { 1.0 } else if a == b { 0.5 } else { 0.0 };
            }
        }
        wins / (p.len() * n.len()) as f64
    }

    #[test]
    fn full_threshold_gives_two_thirds() {
        let c = threshold_eval(&pairs(&[0.1, 0.9, 0.4], &[0.2, 1.0, 0.7]), 1.0).unwrap();
        assert_eq!((c.tp, c.fp, c.fn_, c.tn), (3, 3, 0, 0));
        assert_eq!(c.recall(), 1.0);
        assert_eq!(c.precision(), 0.5);
        assert!((c.f1() - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn zero_threshold_predicts_nothing() {
        let c = threshold_eval(&pairs(&[0.1, 0.3], &[0.2, 0.7]), 0.0).unwrap();
        assert_eq!(c.f1(), 0.0);
        assert!(threshold_eval(&pairs(&[0.1], &[0.2]), 1.5).is_err());
    }

    #[test]
    fn separated_scores_tune_to_smallest_perfect_threshold() {
        let (t, c) = tune_threshold(&pairs(&[0.05, 0.2, 0.3], &[0.62, 0.8])).unwrap();
        assert_eq!(t, 0.3);
        assert_eq!(c.f1(), 1.0);
    }

    #[test]
    fn indistinguishable_scores_tune_to_one() {
        // Every positive needs the full radius; F1 only peaks once all are included.
        let (t, c) = tune_threshold(&pairs(&[0.995, 0.996, 0.997], &[0.1, 0.2, 0.3])).unwrap();
        assert_eq!(t, 1.0);
        assert!((c.f1() - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn roc_landmarks() {
        let r = roc_curve(&pairs(&[0.1, 0.4], &[0.3, 0.8])).unwrap();
        assert!((r.auc - 0.75).abs() < 1e-15);
        assert_eq!(r.points.first(), Some(&(0.0, 0.0)));
        assert_eq!(r.points.last(), Some(&(1.0, 1.0)));
        assert_eq!(roc_curve(&pairs(&[0.1, 0.2], &[0.5, 0.6])).unwrap().auc, 1.0);
        assert!(roc_curve(&pairs(&[0.1], &[])).is_err());
    }

    #[test]
    fn pairs_are_balanced_per_query() {
        let queries = vec![item("q1", "a", "a1"), item("q2", "b", "b1"), item("q3", "z", "z1")];
        let cands = vec![item("v1", "a", "a1"), item("v2", "a", "a2"), item("v3", "b", "b1"), item("v4", "c", "c1")];
        let d = Array2::from_shape_fn((3, 4), |(q, c)| (q * 4 + c) as f64 / 12.0);
        let set = EvalSet::from_distances(queries, cands, d).unwrap();
        let p = threshold_pairs(&set, 0);
        assert_eq!(p.positives.len(), 3);
        assert_eq!(p.negatives.len(), 3);
        assert_eq!(p.skipped_queries, 1);
        assert_eq!(p, threshold_pairs(&set, 0));
    }

    proptest! {
        #[test]
        fn auc_equals_pairwise_wins(
            p in prop::collection::vec((0u8..20).prop_map(|v| v as f64 / 20.0), 1..30),
            n in prop::collection::vec((0u8..20).prop_map(|v| v as f64 / 20.0), 1..30),
        ) {
            let r = roc_curve(&pairs(&p, &n)).unwrap();
            prop_assert!((r.auc - win_fraction(&p, &n)).abs() < 1e-12);
            prop_assert!(r.points.windows(2).all(|w| w[1].0 >= w[0].0 && w[1].1 >= w[0].1));
        }

        #[test]
        fn tuned_threshold_dominates_grid(
            p in prop::collection::vec(0.0..1.0f64, 1..20),
            n in prop::collection::vec(0.0..1.0f64, 1..20),
        ) {
            let pr = pairs(&p, &n);
            let (t, best) = tune_threshold(&pr).unwrap();
            for i in 0..=100 {
                let c = threshold_eval(&pr, i as f64 / 100.0).unwrap();
                prop_assert!(c.f1() <= best.f1());
                if c.f1() == best.f1() {
                    prop_assert!(i as f64 / 100.0 >= t);
                }
            }
        }

        #[test]
        fn monotone_transform_preserves_roc(
            p in prop::collection::vec(0.0..1.0f64, 1..20),
            n in prop::collection::vec(0.0..1.0f64, 1..20),
        ) {
            let f = |v: &Vec<f64>| v.iter().map(|x| x.powi(3) * 0.5 + 0.1).collect::<Vec<_>>();
            let a = roc_curve(&pairs(&p, &n)).unwrap();
            let b = roc_curve(&pairs(&f(&p), &f(&n))).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
