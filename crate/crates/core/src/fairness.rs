//! Benefit deviations, signed group disparities and severity levels.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::corpus::{Attribute, AttributeValue, UserRecord};
use crate::ids::UserId;
use crate::metrics::{BenefitScore, Metric};
use crate::profiles::Strategy;
use crate::prompts::{GridCell, IclCondition, RankerSpec};
use crate::stats::{TestKind, TestResult};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Notion {
    #[serde(rename = "NSD")]
    Nsd,
    #[serde(rename = "NCSD")]
    Ncsd,
    #[serde(rename = "IF")]
    If,
}

impl Notion {
    pub const ALL: [Notion; 3] = [Notion::Nsd, Notion::Ncsd, Notion::If];

    pub fn tag(self) -> &'static str {
        match self {
            Notion::Nsd => "NSD",
            Notion::Ncsd => "NCSD",
            Notion::If => "IF",
        }
    }
}

impl fmt::Display for Notion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdPolicy {
    pub small_bound: f64,
    pub large_bound: f64,
    pub alpha: f64,
}

impl Default for ThresholdPolicy {
    fn default() -> Self {
        Self {
            small_bound: 0.06,
            large_bound: 0.10,
            alpha: 0.05,
        }
    }
}

impl ThresholdPolicy {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.small_bound > 0.0 && self.small_bound < self.large_bound) {
            return Err(format!(
                "thresholds need 0 < small_bound < large_bound (got {} and {})",
                self.small_bound, self.large_bound
            ));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(format!("alpha must lie in (0, 1) (got {})", self.alpha));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SeverityLevel {
    #[serde(rename = "Level1-Safe")]
    Level1Safe,
    #[serde(rename = "Level2-AttentionNeeded")]
    Level2AttentionNeeded,
    #[serde(rename = "Level3-LikelyIssue")]
    Level3LikelyIssue,
    #[serde(rename = "Level4-SignificantIssue")]
    Level4SignificantIssue,
}

impl SeverityLevel {
    pub fn label(self) -> &'static str {
        match self {
            SeverityLevel::Level1Safe => "Safe",
            SeverityLevel::Level2AttentionNeeded => "Attention Needed",
            SeverityLevel::Level3LikelyIssue => "Likely Issue",
            SeverityLevel::Level4SignificantIssue => "Significant Issue",
        }
    }

    pub fn number(self) -> u8 {
        self as u8 + 1
    }

    /// Color name used for report markup.
    pub fn color(self) -> &'static str {
        match self {
            SeverityLevel::Level1Safe => "green",
            SeverityLevel::Level2AttentionNeeded => "yellow",
            SeverityLevel::Level3LikelyIssue => "orange",
            SeverityLevel::Level4SignificantIssue => "red",
        }
    }
}

impl fmt::Display for SeverityLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Level{} {}", self.number(), self.label())
    }
}

/// Severity of a signed disparity. A significant p dominates; otherwise the
/// magnitude of δ decides. Without a p-value only the magnitude is used.
pub fn classify(delta: f64, p: Option<f64>, policy: &ThresholdPolicy) -> SeverityLevel {
    if p.is_some_and(|p| p < policy.alpha) {
        return SeverityLevel::Level4SignificantIssue;
    }
    let m = delta.abs();
    if m < policy.small_bound {
        SeverityLevel::Level1Safe
    } else if m < policy.large_bound {
        SeverityLevel::Level2AttentionNeeded
    } else {
        SeverityLevel::Level3LikelyIssue
    }
}

/// Signed gap between the first and second group's mean deviation.
pub fn group_disparity(first: f64, second: f64) -> f64 {
    first - second
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeviationSample {
    pub user_id: UserId,
    pub metric: Metric,
    pub delta_b: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Deviations {
    pub samples: Vec<DeviationSample>,
    /// Users scored on only one side, left out of the comparison.
    pub excluded: Vec<UserId>,
}

/// ΔB = B(target) − B(reference) for every user scored on both sides.
pub fn per_user_deviation(
    target: &[BenefitScore],
    reference: &[BenefitScore],
    metric: Metric,
) -> Deviations {
    let reference: HashMap<&UserId, f64> = reference
        .iter()
        .filter(|s| s.metric == metric)
        .map(|s| (&s.user_id, s.value))
        .collect();
    let mut out = Deviations::default();
    let mut matched = std::collections::HashSet::new();
    for s in target.iter().filter(|s| s.metric == metric) {
        match reference.get(&s.user_id) {
            Some(r) => {
                matched.insert(&s.user_id);
                out.samples.push(DeviationSample {
                    user_id: s.user_id.clone(),
                    metric,
                    delta_b: s.value - r,
                });
            }
            None => out.excluded.push(s.user_id.clone()),
        }
    }
    let mut missing: Vec<UserId> = reference
        .keys()
        .filter(|u| !matched.contains(*u))
        .map(|u| (*u).clone())
        .collect();
    missing.sort();
    out.excluded.extend(missing);
    if !out.excluded.is_empty() {
        log::warn!(
            "{} user(s) scored on only one side were excluded",
            out.excluded.len()
        );
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupStat {
    pub value: AttributeValue,
    pub n: usize,
    /// Mean ΔB (or mean benefit for IF); `None` for an empty group.
    pub mean: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DisparityResult {
    pub notion: Notion,
    pub attribute: Attribute,
    pub condition: IclCondition,
    pub strategy: Strategy,
    pub metric: Metric,
    /// Target ranker; the neutral ranker itself for IF.
    pub target: RankerSpec,
    /// First group (Male / Young), then second.
    pub groups: [GroupStat; 2],
    /// `groups[0].mean − groups[1].mean`; absent if a group is empty.
    pub delta: Option<f64>,
    pub test: Option<TestResult>,
    /// Significance could not be computed (a group below the test's minimum).
    pub p_missing: bool,
    pub level: Option<SeverityLevel>,
    pub excluded_users: usize,
}

impl DisparityResult {
    pub fn p_value(&self) -> Option<f64> {
        self.test.as_ref().map(|t| t.p_value)
    }
}

/// Target group benefits for intrinsic fairness.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum FairnessTarget {
    /// Parity: every group should receive the same benefit.
    #[default]
    Uniform,
    /// Explicit per-group benefit targets (first group, second group).
    Explicit { first: f64, second: f64 },
}

impl FairnessTarget {
    fn offsets(self) -> (f64, f64) {
        match self {
            FairnessTarget::Uniform => (0.0, 0.0),
            FairnessTarget::Explicit { first, second } => (first, second),
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FairnessError {
    #[error("{notion} needs a {expected} target ranker, got {got}")]
    WrongTarget {
        notion: Notion,
        expected: &'static str,
        got: RankerSpec,
    },
    #[error("reference ranker must be neutral, got {0}")]
    ReferenceNotNeutral(RankerSpec),
    #[error("target and reference come from different conditions or strategies")]
    CellMismatch,
    #[error("score set is empty")]
    NoScores,
}

/// Common cell identity of a score set; all scores must share it.
fn cell_of(scores: &[BenefitScore], metric: Metric) -> Result<&GridCell, FairnessError> {
    let mut it = scores.iter().filter(|s| s.metric == metric);
    let first = it.next().ok_or(FairnessError::NoScores)?;
    if it.any(|s| s.cell != first.cell) {
        return Err(FairnessError::CellMismatch);
    }
    Ok(&first.cell)
}

/// Splits per-user values by group, tests the two samples and classifies δ.
#[allow(clippy::too_many_arguments)]
fn assess(
    notion: Notion,
    cell: &GridCell,
    values: &[(UserId, f64)],
    users: &[UserRecord],
    attribute: Attribute,
    metric: Metric,
    test: TestKind,
    policy: &ThresholdPolicy,
    offsets: (f64, f64),
    mut excluded: usize,
) -> DisparityResult {
    let by_id: HashMap<&UserId, &UserRecord> = users.iter().map(|u| (&u.user_id, u)).collect();
    let [v1, v2] = attribute.values();
    let mut a = Vec::new();
    let mut b = Vec::new();
    for (uid, v) in values {
        match by_id.get(uid).map(|u| u.value_of(attribute)) {
            Some(g) if g == v1 => a.push(v - offsets.0),
            Some(_) => b.push(v - offsets.1),
            None => excluded += 1,
        }
    }
    let mean = |s: &[f64]| (!s.is_empty()).then(|| s.iter().sum::<f64>() / s.len() as f64);
    let (m1, m2) = (mean(&a), mean(&b));
    let delta = m1.zip(m2).map(|(x, y)| group_disparity(x, y));
    let min = test.min_sample().max(2);
    let result = if a.len() >= min && b.len() >= min {
        test.run(&a, &b).ok()
    } else {
        None
    };
    let p_missing = result.is_none();
    let level = delta.map(|d| classify(d, result.as_ref().map(|t| t.p_value), policy));
    DisparityResult {
        notion,
        attribute,
        condition: cell.condition,
        strategy: cell.strategy,
        metric,
        target: cell.spec.clone(),
        groups: [
            GroupStat {
                value: v1,
                n: a.len(),
                mean: m1,
            },
            GroupStat {
                value: v2,
                n: b.len(),
                mean: m2,
            },
        ],
        delta,
        test: result,
        p_missing,
        level,
        excluded_users: excluded,
    }
}

#[allow(clippy::too_many_arguments)]
fn deviation_disparity(
    notion: Notion,
    target: &[BenefitScore],
    neutral: &[BenefitScore],
    users: &[UserRecord],
    attribute: Attribute,
    metric: Metric,
    test: TestKind,
    policy: &ThresholdPolicy,
) -> Result<DisparityResult, FairnessError> {
    let cell = cell_of(target, metric)?;
    let reference = cell_of(neutral, metric)?;
    if !reference.spec.is_neutral() {
        return Err(FairnessError::ReferenceNotNeutral(reference.spec.clone()));
    }
    if (cell.condition, cell.strategy) != (reference.condition, reference.strategy) {
        return Err(FairnessError::CellMismatch);
    }
    let dev = per_user_deviation(target, neutral, metric);
    let values: Vec<(UserId, f64)> = dev
        .samples
        .into_iter()
        .map(|s| (s.user_id, s.delta_b))
        .collect();
    Ok(assess(
        notion,
        cell,
        &values,
        users,
        attribute,
        metric,
        test,
        policy,
        (0.0, 0.0),
        dev.excluded.len(),
    ))
}

/// Neutral vs. sensitive ranker deviation.
pub fn nsd(
    sensitive: &[BenefitScore],
    neutral: &[BenefitScore],
    users: &[UserRecord],
    attribute: Attribute,
    metric: Metric,
    test: TestKind,
    policy: &ThresholdPolicy,
) -> Result<DisparityResult, FairnessError> {
    let spec = &cell_of(sensitive, metric)?.spec;
    if !matches!(spec, RankerSpec::Sensitive(_)) {
        return Err(FairnessError::WrongTarget {
            notion: Notion::Nsd,
            expected: "sensitive",
            got: spec.clone(),
        });
    }
    deviation_disparity(
        Notion::Nsd,
        sensitive,
        neutral,
        users,
        attribute,
        metric,
        test,
        policy,
    )
}

/// Neutral vs. counterfactual sensitive deviation. The forced value is
/// carried by the target cell's ranker.
pub fn ncsd(
    counterfactual: &[BenefitScore],
    neutral: &[BenefitScore],
    users: &[UserRecord],
    attribute: Attribute,
    metric: Metric,
    test: TestKind,
    policy: &ThresholdPolicy,
) -> Result<DisparityResult, FairnessError> {
    let spec = &cell_of(counterfactual, metric)?.spec;
    if !matches!(spec, RankerSpec::Counterfactual(_)) {
        return Err(FairnessError::WrongTarget {
            notion: Notion::Ncsd,
            expected: "counterfactual",
            got: spec.clone(),
        });
    }
    deviation_disparity(
        Notion::Ncsd,
        counterfactual,
        neutral,
        users,
        attribute,
        metric,
        test,
        policy,
    )
}

/// Group benefit gap of the neutral ranker measured against a target.
pub fn intrinsic_fairness(
    neutral: &[BenefitScore],
    users: &[UserRecord],
    attribute: Attribute,
    metric: Metric,
    test: TestKind,
    policy: &ThresholdPolicy,
    target: FairnessTarget,
) -> Result<DisparityResult, FairnessError> {
    let cell = cell_of(neutral, metric)?;
    if !cell.spec.is_neutral() {
        return Err(FairnessError::WrongTarget {
            notion: Notion::If,
            expected: "neutral",
            got: cell.spec.clone(),
        });
    }
    let values: Vec<(UserId, f64)> = neutral
        .iter()
        .filter(|s| s.metric == metric)
        .map(|s| (s.user_id.clone(), s.value))
        .collect();
    Ok(assess(
        Notion::If,
        cell,
        &values,
        users,
        attribute,
        metric,
        test,
        policy,
        target.offsets(),
        0,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{AgeGroup, Gender};
    use proptest::prelude::{prop_assert, prop_assert_eq, proptest};

    fn policy() -> ThresholdPolicy {
        ThresholdPolicy::default()
    }

    fn users() -> Vec<UserRecord> {
        (0..8)
            .map(|i| UserRecord {
                user_id: UserId::from(i as u64 + 1),
                gender: if i % 2 == 0 {
                    Gender::Male
                } else {
                    Gender::Female
                },
                age_group: if i < 4 {
                    AgeGroup::Young
                } else {
                    AgeGroup::Old
                },
                age_years: if i < 4 { 25 } else { 45 },
                train: vec![],
                test: vec![],
            })
            .collect()
    }

    fn cell(spec: RankerSpec) -> GridCell {
        GridCell {
            condition: IclCondition::ZeroShot,
            strategy: Strategy::Rand,
            spec,
        }
    }

    fn scores(spec: RankerSpec, values: &[f64]) -> Vec<BenefitScore> {
        values
            .iter()
            .enumerate()
            .map(|(i, v)| BenefitScore {
                user_id: UserId::from(i as u64 + 1),
                cell: cell(spec.clone()),
                metric: Metric::Hit,
                value: *v,
            })
            .collect()
    }

    #[test]
    fn classification_examples() {
        let p = policy();
        assert_eq!(
            classify(0.0548, Some(0.022), &p),
            SeverityLevel::Level4SignificantIssue
        );
        assert_eq!(
            classify(0.1181, Some(0.108), &p),
            SeverityLevel::Level3LikelyIssue
        );
        assert_eq!(classify(0.0116, Some(0.730), &p), SeverityLevel::Level1Safe);
        assert_eq!(classify(0.0568, Some(0.307), &p), SeverityLevel::Level1Safe);
        assert_eq!(
            classify(-0.07, None, &p),
            SeverityLevel::Level2AttentionNeeded
        );
        assert_eq!(
            classify(0.001, Some(0.049), &p),
            SeverityLevel::Level4SignificantIssue
        );
    }

    #[test]
    fn policy_validation() {
        assert!(policy().validate().is_ok());
        assert!(ThresholdPolicy {
            small_bound: 0.2,
            ..policy()
        }
        .validate()
        .is_err());
        assert!(ThresholdPolicy {
            alpha: 1.0,
            ..policy()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn deviation_examples() {
        let t = scores(RankerSpec::sensitive(Attribute::Gender), &[1.0, 0.9025]);
        let r = scores(RankerSpec::Neutral, &[0.0, 1.0]);
        let d = per_user_deviation(&t, &r, Metric::Hit);
        assert_eq!(d.samples[0].delta_b, 1.0);
        assert!((d.samples[1].delta_b + 0.0975).abs() < 1e-12);

        let short = scores(RankerSpec::Neutral, &[0.0]);
        let d = per_user_deviation(&t, &short, Metric::Hit);
        assert_eq!(d.samples.len(), 1);
        assert_eq!(d.excluded, vec![UserId::from(2u64)]);
    }

    #[test]
    fn null_case_is_safe() {
        let z = [0.0; 8];
        let r = nsd(
            &scores(RankerSpec::sensitive(Attribute::Gender), &z),
            &scores(RankerSpec::Neutral, &z),
            &users(),
            Attribute::Gender,
            Metric::Hit,
            TestKind::WelchT,
            &policy(),
        )
        .unwrap();
        assert_eq!(r.delta, Some(0.0));
        assert_eq!(r.p_value(), Some(1.0));
        assert_eq!(r.level, Some(SeverityLevel::Level1Safe));
    }

    #[test]
    fn cell_against_itself_is_identity() {
        let neutral = scores(
            RankerSpec::Neutral,
            &[0.3, 0.9, 0.1, 0.4, 1.0, 0.0, 0.5, 0.7],
        );
        for test in [TestKind::WelchT, TestKind::MannWhitney] {
            let relabeled: Vec<BenefitScore> = neutral
                .iter()
                .map(|s| BenefitScore {
                    cell: cell(RankerSpec::Counterfactual(AttributeValue::Old)),
                    ..s.clone()
                })
                .collect();
            let r = ncsd(
                &relabeled,
                &neutral,
                &users(),
                Attribute::AgeGroup,
                Metric::Hit,
                test,
                &policy(),
            )
            .unwrap();
            assert_eq!(r.delta, Some(0.0));
            assert_eq!(r.p_value(), Some(1.0));
            assert_eq!(r.level, Some(SeverityLevel::Level1Safe));
        }
    }

    #[test]
    fn nsd_groups_and_sign() {
        // males (odd ids 1,3,5,7) gain, females lose
        let s = scores(
            RankerSpec::sensitive(Attribute::Gender),
            &[1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0],
        );
        let n = scores(RankerSpec::Neutral, &[0.5; 8]);
        let r = nsd(
            &s,
            &n,
            &users(),
            Attribute::Gender,
            Metric::Hit,
            TestKind::WelchT,
            &policy(),
        )
        .unwrap();
        assert_eq!(r.groups[0].value, AttributeValue::Male);
        assert_eq!(r.groups[0].mean, Some(0.5));
        assert_eq!(r.groups[1].mean, Some(-0.5));
        assert_eq!(r.delta, Some(1.0));
        assert_eq!(r.level, Some(SeverityLevel::Level4SignificantIssue));
    }

    #[test]
    fn small_group_skips_significance() {
        let mut u = users();
        for x in u.iter_mut().skip(1) {
            x.gender = Gender::Female;
        }
        let s = scores(
            RankerSpec::sensitive(Attribute::Gender),
            &[0.2, 0.1, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        );
        let n = scores(RankerSpec::Neutral, &[0.0; 8]);
        let r = nsd(
            &s,
            &n,
            &u,
            Attribute::Gender,
            Metric::Hit,
            TestKind::WelchT,
            &policy(),
        )
        .unwrap();
        assert!(r.p_missing);
        assert!(r.test.is_none());
        assert_eq!(r.level, Some(SeverityLevel::Level3LikelyIssue));
    }

    #[test]
    fn wrong_specs_are_rejected() {
        let n = scores(RankerSpec::Neutral, &[0.0; 8]);
        let err = nsd(
            &n,
            &n,
            &users(),
            Attribute::Gender,
            Metric::Hit,
            TestKind::WelchT,
            &policy(),
        );
        assert!(matches!(err, Err(FairnessError::WrongTarget { .. })));
        let cf = scores(RankerSpec::Counterfactual(AttributeValue::Male), &[0.0; 8]);
        let err = ncsd(
            &cf,
            &cf,
            &users(),
            Attribute::Gender,
            Metric::Hit,
            TestKind::WelchT,
            &policy(),
        );
        assert!(matches!(err, Err(FairnessError::ReferenceNotNeutral(_))));
        let mut other = n.clone();
        for s in &mut other {
            s.cell.strategy = Strategy::Freq;
        }
        let err = ncsd(
            &cf,
            &other,
            &users(),
            Attribute::Gender,
            Metric::Hit,
            TestKind::WelchT,
            &policy(),
        );
        assert!(matches!(err, Err(FairnessError::CellMismatch)));
    }

    #[test]
    fn intrinsic_fairness_gaps() {
        let u = users();
        let parity = scores(RankerSpec::Neutral, &[0.5; 8]);
        let r = intrinsic_fairness(
            &parity,
            &u,
            Attribute::Gender,
            Metric::Hit,
            TestKind::WelchT,
            &policy(),
            FairnessTarget::Uniform,
        )
        .unwrap();
        assert_eq!(r.delta, Some(0.0));
        let gap = scores(
            RankerSpec::Neutral,
            &[0.7, 0.3, 0.7, 0.3, 0.7, 0.3, 0.7, 0.3],
        );
        let r = intrinsic_fairness(
            &gap,
            &u,
            Attribute::Gender,
            Metric::Hit,
            TestKind::WelchT,
            &policy(),
            FairnessTarget::Uniform,
        )
        .unwrap();
        assert!((r.delta.unwrap() - 0.4).abs() < 1e-12);
        let explicit = FairnessTarget::Explicit {
            first: 0.7,
            second: 0.3,
        };
        let r = intrinsic_fairness(
            &gap,
            &u,
            Attribute::Gender,
            Metric::Hit,
            TestKind::WelchT,
            &policy(),
            explicit,
        )
        .unwrap();
        assert!(r.delta.unwrap().abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn swapping_group_labels_negates_delta(values in proptest::collection::vec(-1.0f64..1.0, 8)) {
            let u = users();
            let flipped: Vec<UserRecord> = u
                .iter()
                .cloned()
                .map(|mut x| {
                    x.gender = if x.gender == Gender::Male { Gender::Female } else { Gender::Male };
                    x
                })
                .collect();
            let s = scores(RankerSpec::sensitive(Attribute::Gender), &values);
            let n = scores(RankerSpec::Neutral, &[0.0; 8]);
            for test in [TestKind::WelchT, TestKind::MannWhitney] {
                let a = nsd(&s, &n, &u, Attribute::Gender, Metric::Hit, test, &policy()).unwrap();
                let b = nsd(&s, &n, &flipped, Attribute::Gender, Metric::Hit, test, &policy()).unwrap();
                let (da, db) = (a.delta.unwrap(), b.delta.unwrap());
                prop_assert!((da + db).abs() < 1e-12);
                prop_assert!((a.p_value().unwrap() - b.p_value().unwrap()).abs() < 1e-12);
                prop_assert_eq!(a.level, b.level);
                let g = a.groups[0].mean.unwrap() - a.groups[1].mean.unwrap();
                prop_assert!((g - da).abs() < 1e-12);
            }
        }

        #[test]
        fn classify_monotone_without_significance(a in 0.0f64..0.3, b in 0.0f64..0.3, p in 0.05f64..1.0) {
            let (lo, hi) = (a.min(b), a.max(b));
            prop_assert!(classify(lo, Some(p), &policy()) <= classify(hi, Some(p), &policy()));
            prop_assert_eq!(classify(hi, Some(p * 0.049), &policy()), SeverityLevel::Level4SignificantIssue);
        }
    }
}
