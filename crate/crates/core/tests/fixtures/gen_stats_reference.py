"""Regenerates stats_reference.json from SciPy.

Welch t: scipy.stats.ttest_ind(equal_var=False).
Mann-Whitney U: scipy.stats.mannwhitneyu for the asymptotic (tie- and
continuity-corrected) and tie-free exact cases; for exact cases with ties the
reference is a full permutation enumeration of U (scipy.stats.permutation_test
with n_resamples=inf).
Incomplete beta: scipy.special.betainc.
"""
import json

import numpy as np
from scipy import special, stats

rng = np.random.default_rng(20241018)


def u_stat(x, y, axis=-1):
    n1 = x.shape[axis]
    ranks = stats.rankdata(np.concatenate([x, y], axis=axis), axis=axis)
    r1 = np.take(ranks, np.arange(n1), axis=axis).sum(axis=axis)
    return r1 - n1 * (n1 + 1) / 2


def mwu_reference(x, y):
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    n1, n2 = len(x), len(y)
    combined = np.concatenate([x, y])
    ties = len(np.unique(combined)) < len(combined)
    if n1 * n2 <= 400:
        res = stats.permutation_test(
            (x, y), u_stat, permutation_type="independent", vectorized=True,
            n_resamples=np.inf, alternative="two-sided",
        )
        u = float(u_stat(x, y))
        p = float(res.pvalue)
        if not ties:
            ref = stats.mannwhitneyu(x, y, alternative="two-sided", method="exact")
            assert abs(ref.statistic - u) < 1e-9
            assert abs(ref.pvalue - p) < 1e-9, (ref.pvalue, p)
        return {"u": u, "p": p, "method": "exact"}
    res = stats.mannwhitneyu(x, y, alternative="two-sided", method="asymptotic", use_continuity=True)
    return {"u": float(res.statistic), "p": float(res.pvalue), "method": "asymptotic"}


def welch_reference(x, y):
    res = stats.ttest_ind(x, y, equal_var=False)
    return {"t": float(res.statistic), "df": float(res.df), "p": float(res.pvalue)}


cases = []


def add(name, x, y):
    x = [float(v) for v in x]
    y = [float(v) for v in y]
    cases.append({"name": name, "x": x, "y": y, "welch": welch_reference(x, y), "mwu": mwu_reference(x, y)})


add("welch_example", [2.1, 2.5, 2.3, 2.2], [1.1, 1.0, 1.2, 1.4])
add("mwu_ties_example", [1, 2, 3, 4], [2, 3, 4, 5])

# Continuous, unequal variances, small exact-size MWU.
for i in range(12):
    n1, n2 = rng.integers(3, 16, size=2)
    x = np.round(rng.normal(0.0, 1.0, n1), 6)
    y = np.round(rng.normal(rng.uniform(-1, 1), rng.uniform(0.3, 3.0), n2), 6)
    add(f"continuous_small_{i}", x, y)

# Continuous, larger samples (asymptotic MWU).
for i in range(10):
    n1, n2 = rng.integers(25, 80, size=2)
    x = np.round(rng.normal(0.0, 1.0, n1), 6)
    y = np.round(rng.normal(rng.uniform(-0.6, 0.6), rng.uniform(0.5, 2.0), n2), 6)
    add(f"continuous_large_{i}", x, y)

# Heavily tied small samples (exact with midranks).
for i in range(10):
    n1, n2 = rng.integers(3, 11, size=2)
    x = rng.integers(1, 6, n1)
    y = rng.integers(1, 6, n2)
    if np.var(x) == 0 and np.var(y) == 0:
        x[0] += 1
    add(f"ties_small_{i}", x, y)

# Benefit-deviation shaped samples: values in {-1, 0, 1} or NDCG-like deltas.
for i in range(8):
    n1, n2 = rng.integers(30, 110, size=2)
    x = rng.choice([-1.0, 0.0, 1.0], n1, p=[0.15, 0.7, 0.15])
    y = rng.choice([-1.0, 0.0, 1.0], n2, p=[0.25, 0.65, 0.10])
    add(f"hit_deltas_{i}", x, y)

for i in range(8):
    n1, n2 = rng.integers(20, 60, size=2)
    x = np.round(np.clip(rng.normal(0.0, 0.2, n1), -1, 1), 4)
    y = np.round(np.clip(rng.normal(-0.05, 0.25, n2), -1, 1), 4)
    add(f"rank_deltas_{i}", x, y)

assert len(cases) == 50, len(cases)

beta = []
for a, b, x in [
    (0.5, 0.5, 0.3), (1.0, 1.0, 0.42), (2.0, 2.0, 0.5), (2.0, 3.0, 0.2), (5.0, 0.5, 0.9),
    (10.0, 0.5, 0.8), (0.5, 10.0, 0.01), (30.0, 0.5, 0.95), (49.5, 0.5, 0.97), (3.7, 12.2, 0.31),
    (100.0, 100.0, 0.47), (0.1, 0.2, 0.6), (25.0, 0.5, 0.5), (7.5, 7.5, 0.999), (1.5, 40.0, 0.02),
]:
    beta.append({"a": a, "b": b, "x": x, "value": float(special.betainc(a, b, x))})

with open("stats_reference.json", "w") as f:
    json.dump({"generator": "scipy " + __import__("scipy").__version__, "cases": cases, "betainc": beta}, f, indent=1)
print("wrote", len(cases), "cases")
