use std::collections::{HashMap, HashSet};
use std::sync::Arc;
use std::time::Instant;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Backend, BackendError, BackendTag, RankerRequest, RawCompletion};
use crate::corpus::{AttributeValue, Catalog, UserRecord};
use crate::digest::FieldHasher;
use crate::ids::{ItemId, UserId};
use crate::prompts::RankerSpec;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BiasTarget {
    pub value: AttributeValue,
    pub beta: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticBiasConfig {
    /// Probability that a slot is filled from the user's ground truth.
    pub base_quality: f64,
    #[serde(default)]
    pub biases: Vec<BiasTarget>,
    #[serde(default)]
    pub seed: u64,
}

impl Default for SyntheticBiasConfig {
    fn default() -> Self {
        Self {
            base_quality: 0.6,
            biases: Vec::new(),
            seed: 0,
        }
    }
}

impl SyntheticBiasConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.base_quality) {
            return Err(format!("base_quality {} outside [0, 1]", self.base_quality));
        }
        for b in &self.biases {
            if !(0.0..=1.0).contains(&b.beta) {
                return Err(format!(
                    "beta {} for {} outside [0, 1]",
                    b.beta,
                    b.value.token()
                ));
            }
        }
        Ok(())
    }

    /// Slot quality for this user under this ranker. Each targeted value
    /// that the prompt reveals scales quality by (1 - β); the neutral ranker
    /// reveals nothing and is never degraded.
    pub fn effective_quality(&self, user: &UserRecord, spec: &RankerSpec) -> f64 {
        if spec.is_neutral() {
            return self.base_quality;
        }
        let shown = spec.presented_values(user);
        self.biases
            .iter()
            .filter(|b| shown.contains(&b.value))
            .fold(self.base_quality, |q, b| q * (1.0 - b.beta))
    }
}

/// Per-request RNG seed.
pub fn synthetic_seed(base: u64, request_key: &str) -> u64 {
    let mut h = FieldHasher::new("synthetic-ranker/v1");
    h.u64(base).str(request_key);
    u64::from_str_radix(&h.hex()[..16], 16).expect("hex digest")
}

/// Draws a k-slot list. A slot takes an unused ground-truth item with the
/// effective quality as probability, otherwise an unused non-ground-truth
/// catalog item. The list ends early only if the catalog runs out.
pub fn synthetic_rank(
    user: &UserRecord,
    spec: &RankerSpec,
    k: usize,
    catalog_ids: &[ItemId],
    cfg: &SyntheticBiasConfig,
    stream_seed: u64,
) -> Vec<ItemId> {
    let gt = user.ground_truth();
    draw_slots(
        &gt,
        cfg.effective_quality(user, spec),
        k,
        catalog_ids,
        stream_seed,
    )
}

/// The slot process behind [`synthetic_rank`] for a fixed quality.
pub fn draw_slots(
    ground_truth: &[ItemId],
    quality: f64,
    k: usize,
    catalog_ids: &[ItemId],
    stream_seed: u64,
) -> Vec<ItemId> {
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed);
    let mut gt_pool = ground_truth.to_vec();
    let gt: HashSet<&ItemId> = ground_truth.iter().collect();
    // lower bound on the non-ground-truth items available
    let mut others_left = catalog_ids.len().saturating_sub(gt.len());
    let mut used = HashSet::new();
    let mut out = Vec::with_capacity(k);
    while out.len() < k {
        if !gt_pool.is_empty() && rng.random_bool(quality) {
            let i = rng.random_range(0..gt_pool.len());
            out.push(gt_pool.swap_remove(i));
        } else if others_left > 0 {
            loop {
                let cand = catalog_ids.choose(&mut rng).expect("catalog nonempty");
                if !gt.contains(cand) && used.insert(cand) {
                    out.push(cand.clone());
                    others_left -= 1;
                    break;
                }
            }
        } else if !gt_pool.is_empty() {
            let i = rng.random_range(0..gt_pool.len());
            out.push(gt_pool.swap_remove(i));
        } else {
            break;
        }
    }
    out
}

/// Backend that answers every prompt with [`synthetic_rank`] for the
/// prompt's user and ranker.
pub struct SyntheticBackend {
    users: HashMap<UserId, UserRecord>,
    catalog: Arc<Catalog>,
    ids: Vec<ItemId>,
    cfg: SyntheticBiasConfig,
}

impl SyntheticBackend {
    pub fn new(
        users: impl IntoIterator<Item = UserRecord>,
        catalog: Arc<Catalog>,
        cfg: SyntheticBiasConfig,
    ) -> Result<Self, BackendError> {
        cfg.validate().map_err(BackendError::Config)?;
        if catalog.is_empty() {
            return Err(BackendError::Config(
                "synthetic backend needs a nonempty catalog".into(),
            ));
        }
        let ids = catalog.ids().cloned().collect();
        let users = users.into_iter().map(|u| (u.user_id.clone(), u)).collect();
        Ok(Self {
            users,
            catalog,
            ids,
            cfg,
        })
    }
}

impl Backend for SyntheticBackend {
    fn tag(&self) -> BackendTag {
        BackendTag::Synthetic
    }

    fn execute(&self, request: &RankerRequest) -> Result<RawCompletion, BackendError> {
        let start = Instant::now();
        let key = request.request_key();
        let prompt = &request.prompt;
        let user = self
            .users
            .get(&prompt.user_id)
            .ok_or_else(|| BackendError::Synthetic {
                key: key.clone(),
                message: format!("unknown user {}", prompt.user_id),
            })?;
        let items = synthetic_rank(
            user,
            &prompt.ranker,
            prompt.k,
            &self.ids,
            &self.cfg,
            synthetic_seed(self.cfg.seed, &key),
        );
        let mut text = String::new();
        for (i, id) in items.iter().enumerate() {
            let title = self.catalog.title(id).unwrap_or(id.as_str());
            text.push_str(&format!("{}. {}\n", i + 1, title));
        }
        Ok(RawCompletion {
            request_key: key,
            text,
            latency: start.elapsed(),
            backend_tag: BackendTag::Synthetic,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{AgeGroup, Attribute, Gender, Interaction};

    fn user(id: u64, gender: Gender, age: AgeGroup, test_items: u64) -> UserRecord {
        let test = (0..test_items)
            .map(|i| Interaction {
                user_id: UserId::from(id),
                item_id: ItemId::from(i + 1),
                rating: 5.0 - (i % 5) as f64,
                timestamp: 1000 + i,
            })
            .collect();
        UserRecord {
            user_id: UserId::from(id),
            gender,
            age_group: age,
            age_years: if age == AgeGroup::Young { 25 } else { 50 },
            train: vec![],
            test,
        }
    }

    fn catalog_ids(n: u64) -> Vec<ItemId> {
        (1..=n).map(ItemId::from).collect()
    }

    fn gt_slots(u: &UserRecord, items: &[ItemId]) -> usize {
        let gt = u.ground_truth();
        items.iter().filter(|i| gt.contains(i)).count()
    }

    fn old_targeted(beta: f64) -> SyntheticBiasConfig {
        SyntheticBiasConfig {
            base_quality: 0.6,
            biases: vec![BiasTarget {
                value: AttributeValue::Old,
                beta,
            }],
            seed: 7,
        }
    }

    #[test]
    fn perfect_quality_fills_every_slot_from_ground_truth() {
        let u = user(1, Gender::Male, AgeGroup::Old, 12);
        let cfg = SyntheticBiasConfig {
            base_quality: 1.0,
            ..Default::default()
        };
        let items = synthetic_rank(&u, &RankerSpec::Neutral, 10, &catalog_ids(500), &cfg, 3);
        assert_eq!(items.len(), 10);
        assert_eq!(gt_slots(&u, &items), 10);
    }

    #[test]
    fn full_degradation_removes_ground_truth() {
        let u = user(1, Gender::Female, AgeGroup::Old, 12);
        let cfg = old_targeted(1.0);
        let spec = RankerSpec::sensitive(Attribute::AgeGroup);
        for s in 0..50 {
            let items = synthetic_rank(&u, &spec, 10, &catalog_ids(500), &cfg, s);
            assert_eq!(gt_slots(&u, &items), 0);
            let distinct: HashSet<_> = items.iter().collect();
            assert_eq!(distinct.len(), 10);
        }
        // the neutral ranker is untouched
        assert_eq!(cfg.effective_quality(&u, &RankerSpec::Neutral), 0.6);
        // a gender-only prompt does not reveal age
        assert_eq!(
            cfg.effective_quality(&u, &RankerSpec::sensitive(Attribute::Gender)),
            0.6
        );
    }

    #[test]
    fn monte_carlo_expected_ground_truth_slots() {
        let cfg = old_targeted(0.5);
        let spec = RankerSpec::sensitive(Attribute::AgeGroup);
        let old = user(1, Gender::Male, AgeGroup::Old, 40);
        let young = user(2, Gender::Male, AgeGroup::Young, 40);
        let ids = catalog_ids(2000);
        let draws = 100_000u64;
        let mean = |u: &UserRecord| {
            let gt = u.ground_truth();
            let q = cfg.effective_quality(u, &spec);
            let hits: usize = (0..draws)
                .map(|s| {
                    draw_slots(&gt, q, 10, &ids, s)
                        .iter()
                        .filter(|i| gt.contains(i))
                        .count()
                })
                .sum();
            hits as f64 / draws as f64
        };
        let (t, n) = (mean(&old), mean(&young));
        assert!((t - 3.0).abs() < 0.05, "targeted mean {t}");
        assert!((n - 6.0).abs() < 0.05, "untargeted mean {n}");
    }

    #[test]
    fn unbiased_ranker_is_exchangeable_across_groups() {
        // same ground truth, different labels, same seeds: identical output
        let cfg = old_targeted(0.0);
        let spec = RankerSpec::sensitive(Attribute::AgeGroup);
        let ids = catalog_ids(300);
        let a = user(1, Gender::Male, AgeGroup::Old, 15);
        let mut b = a.clone();
        b.age_group = AgeGroup::Young;
        b.gender = Gender::Female;
        for s in 0..200 {
            assert_eq!(
                synthetic_rank(&a, &spec, 10, &ids, &cfg, s),
                synthetic_rank(&b, &spec, 10, &ids, &cfg, s)
            );
        }
    }

    #[test]
    fn short_catalog_ends_list_early() {
        let u = user(1, Gender::Male, AgeGroup::Young, 3);
        let cfg = SyntheticBiasConfig {
            base_quality: 0.0,
            ..Default::default()
        };
        let items = synthetic_rank(&u, &RankerSpec::Neutral, 10, &catalog_ids(6), &cfg, 1);
        assert_eq!(items.len(), 6);
    }

    #[test]
    fn seeds_depend_on_key() {
        assert_eq!(synthetic_seed(1, "abc"), synthetic_seed(1, "abc"));
        assert_ne!(synthetic_seed(1, "abc"), synthetic_seed(2, "abc"));
        assert_ne!(synthetic_seed(1, "abc"), synthetic_seed(1, "abd"));
    }
}
