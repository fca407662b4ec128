//! Welch t, Mann-Whitney U and the incomplete beta against frozen SciPy
//! outputs (see fixtures/gen_stats_reference.py), plus a statrs cross-check
//! and null calibration.

use fairaudit::stats::{
    ln_gamma, mann_whitney_u, regularized_incomplete_beta, student_t_cdf, welch_t_test, PMethod,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Deserialize;

#[derive(Deserialize)]
struct Welch {
    t: f64,
    df: f64,
    p: f64,
}

#[derive(Deserialize)]
struct Mwu {
    u: f64,
    p: f64,
    method: String,
}

#[derive(Deserialize)]
struct Case {
    name: String,
    x: Vec<f64>,
    y: Vec<f64>,
    welch: Welch,
    mwu: Mwu,
}

#[derive(Deserialize)]
struct Beta {
    a: f64,
    b: f64,
    x: f64,
    value: f64,
}

#[derive(Deserialize)]
struct Reference {
    cases: Vec<Case>,
    betainc: Vec<Beta>,
}

fn reference() -> Reference {
    let text = include_str!("fixtures/stats_reference.json");
    serde_json::from_str(text).expect("fixture parses")
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

#[test]
fn fifty_reference_pairs() {
    let r = reference();
    assert_eq!(r.cases.len(), 50);
    for c in &r.cases {
        let w = welch_t_test(&c.x, &c.y).unwrap();
        assert!(
            close(w.statistic, c.welch.t, 1e-6),
            "{}: t {} vs {}",
            c.name,
            w.statistic,
            c.welch.t
        );
        assert!(close(w.dof.unwrap(), c.welch.df, 1e-6), "{}: df", c.name);
        assert!(
            close(w.p_value, c.welch.p, 1e-6),
            "{}: p {} vs {}",
            c.name,
            w.p_value,
            c.welch.p
        );

        let m = mann_whitney_u(&c.x, &c.y).unwrap();
        let method = match m.method.unwrap() {
            PMethod::Exact => "exact",
            PMethod::Asymptotic => "asymptotic",
        };
        assert_eq!(method, c.mwu.method, "{}", c.name);
        assert!(
            close(m.statistic, c.mwu.u, 1e-6),
            "{}: U {} vs {}",
            c.name,
            m.statistic,
            c.mwu.u
        );
        assert!(
            close(m.p_value, c.mwu.p, 1e-6),
            "{}: p {} vs {}",
            c.name,
            m.p_value,
            c.mwu.p
        );
    }
}

#[test]
fn incomplete_beta_relative_error() {
    for b in reference().betainc {
        let v = regularized_incomplete_beta(b.a, b.b, b.x).unwrap();
        let rel = ((v - b.value) / b.value).abs();
        assert!(
            rel <= 1e-10,
            "I_{}({}, {}) = {v}, want {} (rel {rel:e})",
            b.x,
            b.a,
            b.b,
            b.value
        );
    }
}

#[test]
fn t_cdf_and_ln_gamma_agree_with_statrs() {
    use statrs::distribution::{ContinuousCDF, StudentsT};
    for dof in [1.0, 2.5, 6.0, 17.3, 58.0, 240.0] {
        let d = StudentsT::new(0.0, 1.0, dof).unwrap();
        for t in [-8.0, -2.2, -0.4, 0.0, 0.9, 3.1, 12.0] {
            let ours = student_t_cdf(t, dof);
            let theirs = d.cdf(t);
            assert!(
                (ours - theirs).abs() < 1e-10,
                "dof {dof} t {t}: {ours} vs {theirs}"
            );
        }
    }
    for x in [0.1, 0.5, 1.5, 3.0, 10.0, 57.25, 400.0] {
        let theirs = statrs::function::gamma::ln_gamma(x);
        assert!(
            (ln_gamma(x) - theirs).abs() <= 1e-12 * theirs.abs().max(1.0),
            "lnΓ({x})"
        );
    }
}

fn rejection_rate(test: impl Fn(&[f64], &[f64]) -> f64, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.3, 1.7).unwrap();
    let reps = 2000;
    let mut rejected = 0;
    for _ in 0..reps {
        let x: Vec<f64> = (0..50).map(|_| normal.sample(&mut rng)).collect();
        let y: Vec<f64> = (0..50).map(|_| normal.sample(&mut rng)).collect();
        if test(&x, &y) < 0.05 {
            rejected += 1;
        }
    }
    rejected as f64 / reps as f64
}

#[test]
fn null_calibration() {
    let welch = rejection_rate(|x, y| welch_t_test(x, y).unwrap().p_value, 11);
    let mwu = rejection_rate(|x, y| mann_whitney_u(x, y).unwrap().p_value, 12);
    assert!(
        (0.03..=0.07).contains(&welch),
        "welch rejection rate {welch}"
    );
    assert!((0.03..=0.07).contains(&mwu), "mwu rejection rate {mwu}");
}
