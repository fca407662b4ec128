//! Two-sample significance tests and the special functions they rest on.
//!
//! All p-values are two-sided.

mod mwu;
mod special;
mod ttest;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use mwu::mann_whitney_u;
pub use special::{
    erfc, gamma_q, ln_gamma, normal_sf, regularized_incomplete_beta, student_t_cdf,
    student_t_two_sided,
};
pub use ttest::{pooled_t_test, welch_t_test};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestKind {
    WelchT,
    PooledT,
    MannWhitney,
}

impl TestKind {
    pub fn tag(self) -> &'static str {
        match self {
            TestKind::WelchT => "welch_t",
            TestKind::PooledT => "pooled_t",
            TestKind::MannWhitney => "mann_whitney",
        }
    }

    pub fn run(self, x: &[f64], y: &[f64]) -> Result<TestResult, StatsError> {
        match self {
            TestKind::WelchT => welch_t_test(x, y),
            TestKind::PooledT => pooled_t_test(x, y),
            TestKind::MannWhitney => mann_whitney_u(x, y),
        }
    }

    /// Smallest per-sample size the test accepts.
    pub fn min_sample(self) -> usize {
        match self {
            TestKind::WelchT | TestKind::PooledT => 2,
            TestKind::MannWhitney => 1,
        }
    }
}

impl fmt::Display for TestKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for TestKind {
    type Err = StatsError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "welch_t" | "welch" => Ok(TestKind::WelchT),
            "pooled_t" | "pooled" | "student" => Ok(TestKind::PooledT),
            "mann_whitney" | "mannwhitney" | "mwu" => Ok(TestKind::MannWhitney),
            other => Err(StatsError::UnknownTest(other.to_string())),
        }
    }
}

/// Mann-Whitney p-value route.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PMethod {
    Exact,
    Asymptotic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub kind: TestKind,
    pub statistic: f64,
    /// Degrees of freedom, t-tests only.
    pub dof: Option<f64>,
    pub p_value: f64,
    pub n1: usize,
    pub n2: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub method: Option<PMethod>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum StatsError {
    #[error("sample too small: need at least {needed} values per group, got {n1} and {n2}")]
    TooSmall { needed: usize, n1: usize, n2: usize },
    #[error("sample contains a non-finite value")]
    NonFinite,
    #[error("domain error: {0}")]
    Domain(String),
    #[error("unknown test '{0}' (expected welch_t, pooled_t or mann_whitney)")]
    UnknownTest(String),
}

pub(crate) fn check_samples(x: &[f64], y: &[f64], needed: usize) -> Result<(), StatsError> {
    if x.len() < needed || y.len() < needed {
        return Err(StatsError::TooSmall {
            needed,
            n1: x.len(),
            n2: y.len(),
        });
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    Ok(())
}

/// Arithmetic mean; NaN for an empty slice.
pub fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.iter().sum::<f64>() / v.len() as f64
}

/// Unbiased sample variance (two-pass).
pub fn sample_variance(v: &[f64]) -> f64 {
    let n = v.len();
    if n < 2 {
        return f64::NAN;
    }
    let m = mean(v);
    v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1) as f64
}
