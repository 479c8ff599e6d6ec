"""Rank tests: Friedman, Wilcoxon signed-rank and Mann-Whitney U.

Exact null distributions are built by dynamic programming over doubled
ranks, which are integers even with ties (average ranks are multiples of
1/2).  Counting is done in Python integers, so exact p-values are ratios of
exact counts.
"""

from __future__ import annotations

import math

import numpy as np
from scipy import stats as sps

from ..errors import AllZeroDiffs, EmptyGroup, LengthMismatch, MissingCells, TooShort
from .result import EXACT, NORMAL, TestResult

WILCOXON_EXACT_MAX_N = 12
MANN_WHITNEY_EXACT_MAX_N = 14
_ALTERNATIVES = ("two-sided", "greater", "less")


def _tie_term(values) -> float:
    """Sum of t^3 - t over tie groups."""
    _, counts = np.unique(values, return_counts=True)
    counts = counts.astype(float)
    return float(np.sum(counts ** 3 - counts))


def _doubled(ranks: np.ndarray) -> list[int]:
    return [int(v) for v in np.rint(2 * ranks)]


# ---------------------------------------------------------------------------
# Friedman

def friedman(block_matrix) -> TestResult:
    """Friedman chi-square over an (n blocks x k treatments) matrix.

    Ranks are taken within each block with ties averaged, and the statistic
    is divided by the usual tie correction.  When every block is fully tied
    the statistic is 0 and p = 1.
    """
    m = np.asarray(block_matrix, dtype=float)
    if m.ndim != 2:
        raise ValueError("block_matrix must be 2-D")
    n, k = m.shape
    if n < 2 or k < 3:
        raise TooShort(f"Friedman needs n >= 2 blocks and k >= 3 treatments, got {n}x{k}")
    if not np.all(np.isfinite(m)):
        raise MissingCells("Friedman requires a complete block matrix")
    ranks = np.apply_along_axis(sps.rankdata, 1, m)
    rsum = ranks.sum(axis=0)
    chi2 = 12.0 / (n * k * (k + 1)) * float(np.sum(rsum ** 2)) - 3.0 * n * (k + 1)
    ties = sum(_tie_term(row) for row in m)
    denom = 1.0 - ties / (n * k * (k * k - 1))
    if denom <= 1e-12:
        return TestResult("chi2", 0.0, 1.0, n, NORMAL)
    chi2 = max(chi2 / denom, 0.0)
    return TestResult("chi2", chi2, float(sps.chi2.sf(chi2, k - 1)), n, NORMAL)


# ---------------------------------------------------------------------------
# Wilcoxon signed-rank

def signed_rank_counts(doubled_ranks: list[int]) -> list[int]:
    """``counts[s]`` = number of sign assignments whose positive doubled-rank sum is s."""
    total = sum(doubled_ranks)
    counts = [0] * (total + 1)
    counts[0] = 1
    top = 0
    for r in doubled_ranks:
        for s in range(top, -1, -1):
            if counts[s]:
                counts[s + r] += counts[s]
        top += r
    return counts


def _tail_from_counts(counts, observed, center2, alternative):
    """Tail count for a statistic with doubled support ``0..len(counts)-1``.

    ``center2`` is twice the null mean in doubled units, so ``|2s - center2|``
    measures distance from the centre without fractions.
    """
    if alternative == "two-sided":
        dist = abs(2 * observed - center2)
        return sum(c for s, c in enumerate(counts) if c and abs(2 * s - center2) >= dist)
    if alternative == "greater":
        return sum(c for s, c in enumerate(counts) if s >= observed)
    return sum(c for s, c in enumerate(counts) if s <= observed)


def wilcoxon_signed_rank(x, y=None, alternative: str = "two-sided", exact: bool | None = None) -> TestResult:
    """Wilcoxon signed-rank test on paired samples.

    Zero differences are dropped.  ``statistic`` is W = min(W+, W-); ``z`` is
    the normal deviate of W+ with tie and continuity correction.  The p-value
    is exact (all 2^n sign assignments) for n <= 12 unless ``exact`` says
    otherwise.  ``alternative="greater"`` tests x > y.
    """
    if alternative not in _ALTERNATIVES:
        raise ValueError(f"alternative must be one of {_ALTERNATIVES}")
    x = np.asarray(x, dtype=float)
    d = x if y is None else x - np.asarray(y, dtype=float)
    if y is not None and np.asarray(y).size != x.size:
        raise LengthMismatch("paired samples differ in length")
    d = d[d != 0]
    n = d.size
    if n == 0:
        raise AllZeroDiffs("all paired differences are zero")
    if n < 5:
        raise TooShort(f"Wilcoxon needs at least 5 non-zero differences, got {n}")
    ranks = sps.rankdata(np.abs(d))
    w_plus = float(ranks[d > 0].sum())
    w_minus = float(ranks[d < 0].sum())
    w = min(w_plus, w_minus)

    mean = n * (n + 1) / 4.0
    var = n * (n + 1) * (2 * n + 1) / 24.0 - _tie_term(np.abs(d)) / 48.0
    sd = math.sqrt(var)
    diff = w_plus - mean
    if alternative == "two-sided":
        cc = 0.5 * np.sign(diff) if abs(diff) >= 0.5 else diff
    else:
        cc = 0.5 if alternative == "greater" else -0.5
    z = (diff - cc) / sd if sd > 0 else 0.0

    use_exact = n <= WILCOXON_EXACT_MAX_N if exact is None else exact
    if use_exact:
        dr = _doubled(ranks)
        counts = signed_rank_counts(dr)
        hits = _tail_from_counts(counts, int(round(2 * w_plus)), sum(dr), alternative)
        p = hits / 2 ** n
        method = EXACT
    else:
        if alternative == "two-sided":
            p = float(2 * sps.norm.sf(abs(z)))
        elif alternative == "greater":
            p = float(sps.norm.sf(z))
        else:
            p = float(sps.norm.cdf(z))
        method = NORMAL
    return TestResult("W", w, min(p, 1.0), n, method, z=float(z), alternative=alternative)


# ---------------------------------------------------------------------------
# Mann-Whitney U

def rank_sum_counts(doubled_ranks: list[int], m: int) -> list[int]:
    """``counts[s]`` = number of size-``m`` subsets whose doubled-rank sum is s."""
    total = sum(doubled_ranks)
    # dp[j][s]: subsets of size j with doubled sum s
    dp = [[0] * (total + 1) for _ in range(m + 1)]
    dp[0][0] = 1
    for r in doubled_ranks:
        for j in range(m, 0, -1):
            prev, cur = dp[j - 1], dp[j]
            for s in range(total - r, -1, -1):
                if prev[s]:
                    cur[s + r] += prev[s]
    return dp[m]


def mann_whitney_u(a, b, alternative: str = "two-sided", exact: bool | None = None) -> TestResult:
    """Mann-Whitney U test.

    ``statistic`` is U = min(U_a, U_b).  With m + n <= 14 the p-value comes
    from all C(m+n, m) labelings of the pooled ranks (ties kept as average
    ranks); otherwise the tie-corrected normal approximation with continuity
    correction is used.  ``alternative="greater"`` tests a > b.
    """
    if alternative not in _ALTERNATIVES:
        raise ValueError(f"alternative must be one of {_ALTERNATIVES}")
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    m, n = a.size, b.size
    if m < 3 or n < 3:
        raise EmptyGroup(f"Mann-Whitney needs at least 3 values per group, got {m} and {n}")
    pooled = np.concatenate([a, b])
    ranks = sps.rankdata(pooled)
    r_a = float(ranks[:m].sum())
    u_a = r_a - m * (m + 1) / 2.0
    u_b = m * n - u_a
    u = min(u_a, u_b)
    N = m + n

    mean = m * n / 2.0
    var = m * n / 12.0 * ((N + 1) - _tie_term(pooled) / (N * (N - 1)))
    sd = math.sqrt(max(var, 0.0))
    diff = u_a - mean
    if alternative == "two-sided":
        cc = 0.5 * np.sign(diff) if abs(diff) >= 0.5 else diff
    else:
        cc = 0.5 if alternative == "greater" else -0.5
    z = (diff - cc) / sd if sd > 0 else 0.0

    use_exact = N <= MANN_WHITNEY_EXACT_MAX_N if exact is None else exact
    if use_exact:
        dr = _doubled(ranks)
        counts = rank_sum_counts(dr, m)
        hits = _tail_from_counts(counts, int(round(2 * r_a)), 2 * m * (N + 1), alternative)
        p = hits / math.comb(N, m)
        method = EXACT
    elif sd == 0:
        p, method = 1.0, NORMAL
    else:
        if alternative == "two-sided":
            p = float(2 * sps.norm.sf(abs(z)))
        elif alternative == "greater":
            p = float(sps.norm.sf(z))
        else:
            p = float(sps.norm.cdf(z))
        method = NORMAL
    return TestResult("U", u, min(p, 1.0), N, method, n_per_group=(m, n), z=float(z),
                      alternative=alternative)
