use super::special::normal_sf;
use super::{check_samples, PMethod, StatsError, TestKind, TestResult};

/// Largest n1·n2 for which the null distribution is enumerated exactly.
pub const EXACT_LIMIT: usize = 400;

/// Doubled midranks (so they stay integral) of the pooled sample, plus the
/// tie-group sizes.
fn doubled_midranks(pooled: &[f64]) -> (Vec<u64>, Vec<usize>) {
    let mut order: Vec<usize> = (0..pooled.len()).collect();
    order.sort_by(|&a, &b| pooled[a].total_cmp(&pooled[b]));
    let mut ranks = vec![0u64; pooled.len()];
    let mut ties = Vec::new();
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && pooled[order[j]] == pooled[order[i]] {
            j += 1;
        }
        // positions i+1 ..= j share the average rank (i + 1 + j) / 2
        let doubled = (i + 1 + j) as u64;
        for &idx in &order[i..j] {
            ranks[idx] = doubled;
        }
        ties.push(j - i);
        i = j;
    }
    (ranks, ties)
}

/// Mann-Whitney U test. The statistic is U for `x`.
///
/// The p-value is exact (enumerating every split of the pooled midranks) when
/// n1·n2 ≤ 400, otherwise the tie-corrected normal approximation with
/// continuity correction.
pub fn mann_whitney_u(x: &[f64], y: &[f64]) -> Result<TestResult, StatsError> {
    check_samples(x, y, 1)?;
    let (n1, n2) = (x.len(), y.len());
    let pooled: Vec<f64> = x.iter().chain(y).copied().collect();
    let (ranks, ties) = doubled_midranks(&pooled);
    let r1_doubled: u64 = ranks[..n1].iter().sum();
    let offset = (n1 * (n1 + 1)) as f64 / 2.0;
    let u1 = r1_doubled as f64 / 2.0 - offset;
    let nn = (n1 * n2) as f64;

    let base = TestResult {
        kind: TestKind::MannWhitney,
        statistic: u1,
        dof: None,
        p_value: 1.0,
        n1,
        n2,
        method: None,
    };
    if ties.len() == 1 {
        return Ok(TestResult {
            method: Some(PMethod::Exact),
            ..base
        });
    }

    if n1 * n2 <= EXACT_LIMIT {
        let p = exact_p(&ranks, n1, r1_doubled);
        return Ok(TestResult {
            p_value: p,
            method: Some(PMethod::Exact),
            ..base
        });
    }

    let n = (n1 + n2) as f64;
    let tie_term: f64 = ties.iter().map(|&t| (t * t * t - t) as f64).sum();
    let var = nn / 12.0 * ((n + 1.0) - tie_term / (n * (n - 1.0)));
    let p = if var <= 0.0 {
        1.0
    } else {
        let z = ((u1 - nn / 2.0).abs() - 0.5) / var.sqrt();
        (2.0 * normal_sf(z)).min(1.0)
    };
    Ok(TestResult {
        p_value: p,
        method: Some(PMethod::Asymptotic),
        ..base
    })
}

/// Two-sided permutation p-value of the rank sum of the first `n1` entries.
fn exact_p(ranks: &[u64], n1: usize, observed: u64) -> f64 {
    let total: u64 = ranks.iter().sum();
    let max_sum = total as usize;
    // ways[j][s]: subsets of size j with doubled rank sum s
    let mut ways = vec![vec![0f64; max_sum + 1]; n1 + 1];
    ways[0][0] = 1.0;
    let mut reach = 0usize;
    for &r in ranks {
        let r = r as usize;
        reach += r;
        for j in (1..=n1).rev() {
            let (lo, hi) = ways.split_at_mut(j);
            let prev = &lo[j - 1];
            let cur = &mut hi[0];
            for s in (r..=reach.min(max_sum)).rev() {
                let add = prev[s - r];
                if add != 0.0 {
                    cur[s] += add;
                }
            }
        }
    }
    let dist = &ways[n1];
    let all: f64 = dist.iter().sum();
    let obs = observed as usize;
    let le: f64 = dist[..=obs].iter().sum();
    let ge: f64 = dist[obs..].iter().sum();
    (2.0 * le.min(ge) / all).min(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn midranks() {
        let (r, t) = doubled_midranks(&[3.0, 1.0, 3.0, 2.0]);
        assert_eq!(r, vec![7, 2, 7, 4]);
        assert_eq!(t, vec![1, 1, 2]);
    }

    #[test]
    fn maximal_u_when_x_dominates() {
        let r = mann_whitney_u(&[10.0, 11.0, 12.0], &[1.0, 2.0]).unwrap();
        assert_eq!(r.statistic, 6.0);
        // only one of C(5,3)=10 splits is as extreme on each side
        assert!((r.p_value - 0.2).abs() < 1e-12);
    }

    #[test]
    fn identical_samples_give_p_one() {
        let x = [1.0, 4.0, 2.0, 8.0];
        let r = mann_whitney_u(&x, &x).unwrap();
        assert_eq!(r.p_value, 1.0);
        assert_eq!(r.method, Some(PMethod::Exact));
        let c = vec![5.0; 30];
        let r = mann_whitney_u(&c, &c).unwrap();
        assert_eq!(r.p_value, 1.0);
    }

    #[test]
    fn textbook_exact_value() {
        let r = mann_whitney_u(&[1.0, 2.0, 3.0, 4.0], &[2.0, 3.0, 4.0, 5.0]).unwrap();
        assert_eq!(r.statistic, 4.5);
        assert!((r.p_value - 0.457_142_857_142_857_1).abs() < 1e-12);
    }

    #[test]
    fn asymptotic_route_above_limit() {
        let x: Vec<f64> = (0..30).map(f64::from).collect();
        let y: Vec<f64> = (0..30).map(|v| f64::from(v) + 0.5).collect();
        let r = mann_whitney_u(&x, &y).unwrap();
        assert_eq!(r.method, Some(PMethod::Asymptotic));
        assert!(r.p_value > 0.5);
    }

    proptest! {
        #[test]
        fn swap_symmetry(
            x in proptest::collection::vec(0u8..6, 1..18),
            y in proptest::collection::vec(0u8..6, 1..18),
        ) {
            let x: Vec<f64> = x.into_iter().map(f64::from).collect();
            let y: Vec<f64> = y.into_iter().map(f64::from).collect();
            let a = mann_whitney_u(&x, &y).unwrap();
            let b = mann_whitney_u(&y, &x).unwrap();
            prop_assert!((a.statistic + b.statistic - (x.len() * y.len()) as f64).abs() < 1e-9);
            prop_assert!((a.p_value - b.p_value).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&a.p_value));
        }
    }
}
