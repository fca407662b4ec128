//! Power study: how often NSD flags a bias planted by the synthetic ranker.

use serde::{Deserialize, Serialize};

use crate::backend::{synthetic_rank, synthetic_seed, BiasTarget, SyntheticBiasConfig};
use crate::corpus::synthetic::{generate, SyntheticCorpusConfig};
use crate::corpus::{AttributeValue, UserRecord};
use crate::digest::FieldHasher;
use crate::fairness::{nsd, ThresholdPolicy};
use crate::ids::ItemId;
use crate::metrics::{benefit, BenefitScore, HitMode, Metric};
use crate::profiles::Strategy;
use crate::prompts::{GridCell, IclCondition, RankerSpec};
use crate::stats::TestKind;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PowerStudyConfig {
    pub users: usize,
    pub replicates: usize,
    pub base_quality: f64,
    pub beta: f64,
    /// Group whose sensitive prompts are degraded.
    pub target: AttributeValue,
    pub metric: Metric,
    pub k: usize,
    pub test: TestKind,
    pub alpha: f64,
    pub catalog_size: usize,
    pub seed: u64,
}

impl Default for PowerStudyConfig {
    fn default() -> Self {
        Self {
            users: 200,
            replicates: 100,
            base_quality: 0.6,
            beta: 0.5,
            target: AttributeValue::Old,
            metric: Metric::Rank,
            k: 10,
            test: TestKind::WelchT,
            alpha: 0.05,
            catalog_size: 1000,
            seed: 2024,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicateOutcome {
    pub seed: u64,
    pub delta: f64,
    pub p_value: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PowerStudyResult {
    pub config: PowerStudyConfig,
    /// +1 when the first group should come out ahead, -1 for the second.
    pub predicted_sign: i8,
    pub replicates: Vec<ReplicateOutcome>,
    /// Replicates with p below alpha.
    pub significant: usize,
    /// Significant replicates whose δ has the predicted sign.
    pub significant_with_sign: usize,
}

impl PowerStudyResult {
    pub fn rejection_rate(&self) -> f64 {
        self.significant as f64 / self.replicates.len().max(1) as f64
    }
}

fn replicate_seed(base: u64, r: usize) -> u64 {
    let mut h = FieldHasher::new("power-study/v1");
    h.u64(base).u64(r as u64);
    u64::from_str_radix(&h.hex()[..16], 16).expect("hex digest")
}

fn scores_for(
    users: &[UserRecord],
    spec: &RankerSpec,
    catalog: &[ItemId],
    bias: &SyntheticBiasConfig,
    cfg: &PowerStudyConfig,
) -> Vec<BenefitScore> {
    let cell = GridCell {
        condition: IclCondition::ZeroShot,
        strategy: Strategy::Rand,
        spec: spec.clone(),
    };
    users
        .iter()
        .map(|u| {
            let key = format!("{}/{}", u.user_id, spec);
            let list = synthetic_rank(
                u,
                spec,
                cfg.k,
                catalog,
                bias,
                synthetic_seed(bias.seed, &key),
            );
            let slots: Vec<Option<ItemId>> = list.into_iter().map(Some).collect();
            let value = benefit(
                cfg.metric,
                &slots,
                &u.ground_truth(),
                cfg.k,
                HitMode::Binary,
            )
            .value;
            BenefitScore {
                user_id: u.user_id.clone(),
                cell: cell.clone(),
                metric: cfg.metric,
                value,
            }
        })
        .collect()
}

/// Each replicate draws a fresh synthetic corpus, ranks every user with the
/// neutral and the sensitive ranker for the target's attribute, and runs NSD.
pub fn power_study(cfg: &PowerStudyConfig) -> PowerStudyResult {
    let attribute = cfg.target.attribute();
    let sensitive = RankerSpec::sensitive(attribute);
    let policy = ThresholdPolicy {
        alpha: cfg.alpha,
        ..ThresholdPolicy::default()
    };
    let predicted_sign = if cfg.target == attribute.values()[1] {
        1
    } else {
        -1
    };
    let mut replicates = Vec::with_capacity(cfg.replicates);
    for r in 0..cfg.replicates {
        let seed = replicate_seed(cfg.seed, r);
        let corpus = generate(&SyntheticCorpusConfig {
            users: cfg.users,
            catalog_size: cfg.catalog_size,
            seed,
            ..SyntheticCorpusConfig::default()
        });
        let users = corpus.split(0.8, crate::corpus::DEFAULT_AGE_BOUNDARY).users;
        let ids: Vec<ItemId> = corpus.catalog.ids().cloned().collect();
        let bias = SyntheticBiasConfig {
            base_quality: cfg.base_quality,
            biases: vec![BiasTarget {
                value: cfg.target,
                beta: cfg.beta,
            }],
            seed,
        };
        let neutral = scores_for(&users, &RankerSpec::Neutral, &ids, &bias, cfg);
        let target = scores_for(&users, &sensitive, &ids, &bias, cfg);
        let d = nsd(
            &target, &neutral, &users, attribute, cfg.metric, cfg.test, &policy,
        )
        .expect("well-formed cells");
        replicates.push(ReplicateOutcome {
            seed,
            delta: d.delta.unwrap_or(0.0),
            p_value: d.p_value(),
        });
    }
    let sig = |o: &&ReplicateOutcome| o.p_value.is_some_and(|p| p < cfg.alpha);
    let significant = replicates.iter().filter(sig).count();
    let significant_with_sign = replicates
        .iter()
        .filter(sig)
        .filter(|o| o.delta * f64::from(predicted_sign) > 0.0)
        .count();
    PowerStudyResult {
        config: cfg.clone(),
        predicted_sign,
        replicates,
        significant,
        significant_with_sign,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_study_detects_strong_bias() {
        let cfg = PowerStudyConfig {
            users: 120,
            replicates: 5,
            beta: 0.9,
            ..PowerStudyConfig::default()
        };
        let r = power_study(&cfg);
        assert_eq!(r.predicted_sign, 1);
        assert_eq!(r.significant_with_sign, 5, "{:?}", r.replicates);
    }

    #[test]
    fn targeting_the_first_group_flips_the_sign() {
        let cfg = PowerStudyConfig {
            users: 120,
            replicates: 3,
            beta: 0.9,
            target: AttributeValue::Male,
            ..PowerStudyConfig::default()
        };
        let r = power_study(&cfg);
        assert_eq!(r.predicted_sign, -1);
        assert!(r.replicates.iter().all(|o| o.delta < 0.0));
    }

    #[test]
    fn replicates_are_reproducible() {
        let cfg = PowerStudyConfig {
            users: 40,
            replicates: 2,
            ..PowerStudyConfig::default()
        };
        assert_eq!(power_study(&cfg), power_study(&cfg));
    }
}
