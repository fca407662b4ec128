//! Per-user benefit scores: hit@k and graded NDCG@k.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::ids::{ItemId, UserId};
use crate::prompts::GridCell;

pub const DEFAULT_K: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Hit,
    Rank,
}

impl Metric {
    pub const ALL: [Metric; 2] = [Metric::Hit, Metric::Rank];

    pub fn tag(self) -> &'static str {
        match self {
            Metric::Hit => "hit",
            Metric::Rank => "rank",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Metric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "hit" | "b_hit" => Ok(Metric::Hit),
            "rank" | "b_rank" | "ndcg" => Ok(Metric::Rank),
            other => Err(format!("unknown metric '{other}' (expected hit or rank)")),
        }
    }
}

/// How hit@k aggregates multiple hits.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HitMode {
    /// 1 if any of the top k is relevant.
    #[default]
    Binary,
    /// Relevant items among the top k, divided by k.
    Proportion,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Benefit {
    pub value: f64,
    /// The list was empty, so the value is a forced 0.
    pub shortfall: bool,
}

impl Benefit {
    fn empty() -> Self {
        Self {
            value: 0.0,
            shortfall: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenefitScore {
    pub user_id: UserId,
    pub cell: GridCell,
    pub metric: Metric,
    pub value: f64,
}

/// hit@k over a ranked list whose slots may be unmatched (`None`).
pub fn benefit_hit(
    rec: &[Option<ItemId>],
    ground_truth: &[ItemId],
    k: usize,
    mode: HitMode,
) -> Benefit {
    if rec.is_empty() || k == 0 {
        return Benefit::empty();
    }
    let hits = rec
        .iter()
        .take(k)
        .filter(|slot| slot.as_ref().is_some_and(|id| ground_truth.contains(id)))
        .count();
    let value = match mode {
        HitMode::Binary => f64::from(u8::from(hits > 0)),
        HitMode::Proportion => hits as f64 / k as f64,
    };
    Benefit {
        value,
        shortfall: false,
    }
}

/// Relevance of the item at 1-based ground-truth position `gt_rank`.
pub fn graded_relevance(gt_rank: usize) -> f64 {
    1.0 / (1.0 + gt_rank as f64).log2()
}

fn discount(position: usize) -> f64 {
    1.0 / (1.0 + position as f64).log2()
}

/// NDCG@k with relevance decaying in ground-truth position.
pub fn benefit_rank(rec: &[Option<ItemId>], ground_truth: &[ItemId], k: usize) -> Benefit {
    if rec.is_empty() || k == 0 {
        return Benefit::empty();
    }
    let mut gt_rank: HashMap<&ItemId, usize> = HashMap::with_capacity(ground_truth.len());
    for (i, id) in ground_truth.iter().enumerate() {
        gt_rank.entry(id).or_insert(i + 1);
    }
    let dcg: f64 = rec
        .iter()
        .take(k)
        .enumerate()
        .filter_map(|(p, slot)| {
            let r = *gt_rank.get(slot.as_ref()?)?;
            Some(graded_relevance(r) * discount(p + 1))
        })
        .sum();
    // relevance falls with gt position, so the ideal list is the gt prefix
    let idcg: f64 = (1..=gt_rank.len().min(k))
        .map(|p| graded_relevance(p) * discount(p))
        .sum();
    let value = if idcg > 0.0 {
        (dcg / idcg).clamp(0.0, 1.0)
    } else {
        0.0
    };
    Benefit {
        value,
        shortfall: false,
    }
}

pub fn benefit(
    metric: Metric,
    rec: &[Option<ItemId>],
    ground_truth: &[ItemId],
    k: usize,
    mode: HitMode,
) -> Benefit {
    match metric {
        Metric::Hit => benefit_hit(rec, ground_truth, k, mode),
        Metric::Rank => benefit_rank(rec, ground_truth, k),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ids(v: &[&str]) -> Vec<ItemId> {
        v.iter().map(|s| ItemId::from(*s)).collect()
    }

    fn slots(v: &[&str]) -> Vec<Option<ItemId>> {
        v.iter()
            .map(|s| (!s.is_empty()).then(|| ItemId::from(*s)))
            .collect()
    }

    /// NDCG with the ideal DCG found by trying every ordering of every
    /// subset of the ground truth that fits in k slots.
    fn brute_force_ndcg(rec: &[Option<ItemId>], gt: &[ItemId], k: usize) -> f64 {
        let rel = |id: &ItemId| {
            gt.iter()
                .position(|g| g == id)
                .map(|i| 1.0 / ((i + 2) as f64).log2())
        };
        let dcg_of = |list: &[&ItemId]| -> f64 {
            list.iter()
                .take(k)
                .enumerate()
                .map(|(p, id)| rel(id).unwrap_or(0.0) / ((p + 2) as f64).log2())
                .sum()
        };
        let dcg: f64 = rec
            .iter()
            .take(k)
            .enumerate()
            .map(|(p, s)| {
                s.as_ref().and_then(&rel).unwrap_or(0.0) / ((p + 2) as f64).log2()
            })
            .sum();
        fn perms<'a>(
            pool: &[&'a ItemId],
            cur: &mut Vec<&'a ItemId>,
            k: usize,
            best: &mut f64,
            f: &dyn Fn(&[&ItemId]) -> f64,
        ) {
            *best = best.max(f(cur));
            if cur.len() == k {
                return;
            }
            for (i, id) in pool.iter().enumerate() {
                let mut rest = pool.to_vec();
                rest.remove(i);
                cur.push(id);
                perms(&rest, cur, k, best, f);
                cur.pop();
            }
        }
        let pool: Vec<&ItemId> = gt.iter().collect();
        let mut idcg = 0.0;
        perms(&pool, &mut Vec::new(), k, &mut idcg, &dcg_of);
        if idcg == 0.0 {
            0.0
        } else {
            dcg / idcg
        }
    }

    #[test]
    fn hit_examples() {
        let gt = ids(&["a", "b"]);
        assert_eq!(
            benefit_hit(&slots(&["x", "b"]), &gt, 2, HitMode::Binary).value,
            1.0
        );
        assert_eq!(
            benefit_hit(&slots(&["x", "y"]), &gt, 2, HitMode::Binary).value,
            0.0
        );
        assert_eq!(
            benefit_hit(&slots(&["x", "y", "a"]), &gt, 2, HitMode::Binary).value,
            0.0
        );
        assert_eq!(
            benefit_hit(&slots(&["a", "", "b", "z"]), &gt, 4, HitMode::Proportion).value,
            0.5
        );
        let empty = benefit_hit(&[], &gt, 10, HitMode::Binary);
        assert_eq!((empty.value, empty.shortfall), (0.0, true));
    }

    #[test]
    fn rank_examples() {
        let gt = ids(&["x", "y"]);
        assert!((benefit_rank(&slots(&["x", "y"]), &gt, 10).value - 1.0).abs() < 1e-15);
        assert_eq!(benefit_rank(&slots(&["p", "q"]), &gt, 10).value, 0.0);
        let swapped = benefit_rank(&slots(&["y", "x"]), &gt, 2).value;
        assert!((swapped - 0.9025).abs() < 1e-4, "{swapped}");
        assert!((swapped - brute_force_ndcg(&slots(&["y", "x"]), &gt, 2)).abs() < 1e-12);
        assert!(benefit_rank(&[], &gt, 10).shortfall);
    }

    #[test]
    fn unmatched_slots_consume_positions() {
        let gt = ids(&["x"]);
        let direct = benefit_rank(&slots(&["x"]), &gt, 3).value;
        let pushed = benefit_rank(&slots(&["", "x"]), &gt, 3).value;
        assert_eq!(direct, 1.0);
        assert!((pushed - 1.0 / 3f64.log2()).abs() < 1e-15);
    }

    fn instance(
    ) -> impl proptest::strategy::Strategy<Value = (Vec<Option<ItemId>>, Vec<ItemId>, usize)> {
        (
            proptest::collection::vec(proptest::option::weighted(0.85, 0u8..9), 0..=5),
            proptest::sample::subsequence((0u8..9).collect::<Vec<_>>(), 1..=5).prop_shuffle(),
            1usize..=6,
        )
            .prop_map(|(rec, gt, k)| {
                let mut seen = std::collections::HashSet::new();
                let rec = rec
                    .into_iter()
                    .map(|s| {
                        s.filter(|v| seen.insert(*v))
                            .map(|v| ItemId::from(u64::from(v)))
                    })
                    .collect();
                (
                    rec,
                    gt.into_iter().map(|v| ItemId::from(u64::from(v))).collect(),
                    k,
                )
            })
    }

    proptest! {
        #[test]
        fn matches_brute_force((rec, gt, k) in instance()) {
            let ours = benefit_rank(&rec, &gt, k).value;
            let oracle = if rec.is_empty() { 0.0 } else { brute_force_ndcg(&rec, &gt, k) };
            prop_assert!((ours - oracle).abs() < 1e-12, "{ours} vs {oracle}");
            prop_assert!((0.0..=1.0).contains(&ours));
        }

        #[test]
        fn promoting_more_relevant_item_never_hurts((rec, gt, k) in instance(), a in 0usize..5, b in 0usize..5) {
            prop_assume!(rec.len() >= 2);
            let (i, j) = (a.min(b) % rec.len(), a.max(b) % rec.len());
            let (i, j) = (i.min(j), i.max(j));
            prop_assume!(i != j);
            let rel = |s: &Option<ItemId>| {
                s.as_ref().and_then(|id| gt.iter().position(|g| g == id)).map(|p| graded_relevance(p + 1)).unwrap_or(0.0)
            };
            let mut swapped = rec.clone();
            swapped.swap(i, j);
            let (before, after) = (benefit_rank(&rec, &gt, k).value, benefit_rank(&swapped, &gt, k).value);
            if rel(&rec[j]) > rel(&rec[i]) {
                prop_assert!(after >= before - 1e-15);
            } else {
                prop_assert!(before >= after - 1e-15);
            }
        }

        #[test]
        fn hit_monotone_in_k((rec, gt, k) in instance()) {
            let a = benefit_hit(&rec, &gt, k, HitMode::Binary).value;
            let b = benefit_hit(&rec, &gt, k + 1, HitMode::Binary).value;
            prop_assert!(a <= b);
        }
    }
}
