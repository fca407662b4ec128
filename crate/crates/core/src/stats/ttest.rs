use super::special::student_t_two_sided;
use super::{check_samples, mean, sample_variance, StatsError, TestKind, TestResult};

/// Result for samples with zero spread on both sides: equal means give
/// t = 0, p = 1; otherwise p = 0 and t saturates at the finite extreme.
fn degenerate(kind: TestKind, diff: f64, dof: f64, n1: usize, n2: usize) -> TestResult {
    let (statistic, p_value) = if diff == 0.0 {
        (0.0, 1.0)
    } else {
        (f64::MAX.copysign(diff), 0.0)
    };
    TestResult {
        kind,
        statistic,
        dof: Some(dof),
        p_value,
        n1,
        n2,
        method: None,
    }
}

/// Welch's unequal-variance t-test.
pub fn welch_t_test(x: &[f64], y: &[f64]) -> Result<TestResult, StatsError> {
    check_samples(x, y, 2)?;
    let (n1, n2) = (x.len(), y.len());
    let diff = mean(x) - mean(y);
    let a = sample_variance(x) / n1 as f64;
    let b = sample_variance(y) / n2 as f64;
    let se2 = a + b;
    if se2 == 0.0 {
        return Ok(degenerate(
            TestKind::WelchT,
            diff,
            (n1 + n2 - 2) as f64,
            n1,
            n2,
        ));
    }
    let dof = se2 * se2 / (a * a / (n1 - 1) as f64 + b * b / (n2 - 1) as f64);
    let t = diff / se2.sqrt();
    Ok(TestResult {
        kind: TestKind::WelchT,
        statistic: t,
        dof: Some(dof),
        p_value: student_t_two_sided(t, dof).clamp(0.0, 1.0),
        n1,
        n2,
        method: None,
    })
}

/// Student's t-test with pooled variance.
pub fn pooled_t_test(x: &[f64], y: &[f64]) -> Result<TestResult, StatsError> {
    check_samples(x, y, 2)?;
    let (n1, n2) = (x.len(), y.len());
    let dof = (n1 + n2 - 2) as f64;
    let diff = mean(x) - mean(y);
    let sp2 = ((n1 - 1) as f64 * sample_variance(x) + (n2 - 1) as f64 * sample_variance(y)) / dof;
    if sp2 == 0.0 {
        return Ok(degenerate(TestKind::PooledT, diff, dof, n1, n2));
    }
    let t = diff / (sp2 * (1.0 / n1 as f64 + 1.0 / n2 as f64)).sqrt();
    Ok(TestResult {
        kind: TestKind::PooledT,
        statistic: t,
        dof: Some(dof),
        p_value: student_t_two_sided(t, dof).clamp(0.0, 1.0),
        n1,
        n2,
        method: None,
    })
}
