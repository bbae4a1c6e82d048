"""Independent reference implementations used as test oracles.

Each is a direct, slow transcription of a definition and shares no code with
the package.
"""

from __future__ import annotations

import itertools
import math

import numpy as np


def auc_pairs(in_scores, ood_scores) -> float:
    """AUC by explicit enumeration of every (in, ood) pair."""
    total = 0.0
    for a in in_scores:
        for b in ood_scores:
            if b > a:
                total += 1.0
            elif b == a:
                total += 0.5
    return total / (len(in_scores) * len(ood_scores))


def lof_direct(reference, k, queries):
    """Local outlier factor written straight from the definitions.

    Neighbour sets hold exactly k points; distance ties are broken by the
    lower reference index.  A zero mean reachability distance is replaced by
    1e-12 before inversion.
    """
    ref = [np.asarray(r, dtype=float) for r in reference]
    n = len(ref)

    def dist(a, b):
        return math.sqrt(sum((x - y) ** 2 for x, y in zip(a, b)))

    def neighbours(p, skip=None):
        cands = [(dist(p, ref[j]), j) for j in range(n) if j != skip]
        cands.sort()
        return cands[:k]

    kdist = [neighbours(ref[i], skip=i)[-1][0] for i in range(n)]

    def lrd(p, skip=None):
        nb = neighbours(p, skip)
        reach = [max(kdist[j], d) for d, j in nb]
        m = sum(reach) / k
        return 1.0 / (m if m != 0.0 else 1e-12), nb

    lrd_ref = [lrd(ref[i], skip=i)[0] for i in range(n)]
    out = []
    for q in queries:
        lq, nb = lrd(np.asarray(q, dtype=float))
        out.append(sum(lrd_ref[j] for _, j in nb) / k / lq)
    return np.array(out)


def gaussian_logpdf(X, mean, cov):
    """Full-covariance multivariate normal log-density via slogdet and solve."""
    X = np.atleast_2d(X)
    d = len(mean)
    sign, logdet = np.linalg.slogdet(cov)
    assert sign > 0
    diff = X - mean
    maha = np.einsum("ij,ij->i", diff, np.linalg.solve(cov, diff.T).T)
    return -0.5 * (d * np.log(2 * np.pi) + logdet + maha)


def shapley_exact(f, background, x, groups=None):
    """Classical Shapley values with interventional imputation, by enumeration
    of all coalitions and the factorial weighting formula."""
    background = np.asarray(background, dtype=float)
    x = np.asarray(x, dtype=float)
    if groups is None:
        groups = [[j] for j in range(len(x))]
    M = len(groups)

    def value(S):
        rows = background.copy()
        for j in S:
            rows[:, groups[j]] = x[groups[j]]
        return float(np.mean(f(rows)))

    cache = {}
    for r in range(M + 1):
        for S in itertools.combinations(range(M), r):
            cache[S] = value(S)
    phi = np.zeros(M)
    for i in range(M):
        others = [j for j in range(M) if j != i]
        for r in range(M):
            w = math.factorial(r) * math.factorial(M - r - 1) / math.factorial(M)
            for S in itertools.combinations(others, r):
                phi[i] += w * (cache[tuple(sorted(S + (i,)))] - cache[S])
    return phi, cache[()]


def central_differences(fn, arrays, h=1e-5):
    """Central finite differences of scalar ``fn()`` with respect to every
    entry of every array in ``arrays`` (perturbed in place, then restored)."""
    out = []
    for a in arrays:
        g = np.zeros_like(a)
        it = np.nditer(a, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            old = a[idx]
            a[idx] = old + h
            fp = fn()
            a[idx] = old - h
            fm = fn()
            a[idx] = old
            g[idx] = (fp - fm) / (2 * h)
        out.append(g)
    return out


def relative_errors(analytic, numeric, floor=1e-8):
    """Elementwise |a - n| / max(|a|, |n|); pairs where both are below
    ``floor`` count as agreeing if their absolute gap is below ``floor``."""
    a = np.concatenate([np.ravel(x) for x in analytic])
    n = np.concatenate([np.ravel(x) for x in numeric])
    scale = np.maximum(np.abs(a), np.abs(n))
    rel = np.abs(a - n) / np.where(scale > floor, scale, 1.0)
    return np.where(scale > floor, rel, np.where(np.abs(a - n) < floor, 0.0, np.inf))
