"""Correlation and inter-rater agreement."""

from __future__ import annotations

import itertools
import math
from collections import Counter

import numpy as np
from scipy import stats as sps

from ..errors import ConstantInput, DegenerateAgreement, LengthMismatch, SingleGroup, TooShort
from .result import EXACT, NORMAL, TestResult

SPEARMAN_EXACT_MAX_N = 8


def _pearson(a: np.ndarray, b: np.ndarray) -> float:
    da = a - a.mean()
    db = b - b.mean()
    return float(np.dot(da, db) / math.sqrt(np.dot(da, da) * np.dot(db, db)))


def _t_pvalue(r: float, n: int) -> float:
    if abs(r) >= 1.0:
        return 0.0
    t = r * math.sqrt((n - 2) / (1.0 - r * r))
    return float(2 * sps.t.sf(abs(t), n - 2))


def spearman(x, y) -> TestResult:
    """Spearman's rho with average ranks for ties.

    For n <= 8 the two-sided p-value is the exact permutation tail over all
    n! orderings of y; larger samples use the t approximation.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size != y.size:
        raise LengthMismatch(f"x has {x.size} values, y has {y.size}")
    n = x.size
    if n < 4:
        raise TooShort("Spearman needs at least 4 pairs")
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        raise ConstantInput("Spearman correlation undefined for constant input")
    rx, ry = sps.rankdata(x), sps.rankdata(y)
    rho = _pearson(rx, ry)
    if n <= SPEARMAN_EXACT_MAX_N:
        perms = np.array(list(itertools.permutations(ry)))
        dx = rx - rx.mean()
        dy = perms - ry.mean()
        r_all = dy @ dx / math.sqrt(np.dot(dx, dx) * np.dot(dy[0], dy[0]))
        p = float(np.mean(np.abs(r_all) >= abs(rho) - 1e-12))
        return TestResult("rho", rho, p, n, EXACT)
    return TestResult("rho", rho, _t_pvalue(rho, n), n, NORMAL)


def point_biserial(group, y) -> TestResult:
    """Pearson correlation between a two-level grouping and a continuous y.

    Labels are coded 0/1 in sorted order of the two distinct values, so for
    sex labels "F" < "M" the coding is F=0, M=1; pass booleans or 0/1 to
    control the direction explicitly.
    """
    g = np.asarray(group)
    y = np.asarray(y, dtype=float)
    if g.size != y.size:
        raise LengthMismatch(f"group has {g.size} labels, y has {y.size}")
    levels = np.unique(g)
    if levels.size != 2:
        raise SingleGroup(f"point-biserial needs exactly two groups, got {levels.size}")
    if y.size < 4:
        raise TooShort("point-biserial needs at least 4 observations")
    if np.ptp(y) == 0:
        raise ConstantInput("point-biserial undefined for constant y")
    coded = (g == levels[1]).astype(float)
    r = _pearson(coded, y)
    n = y.size
    return TestResult("r_pb", r, _t_pvalue(r, n), n, NORMAL,
                      n_per_group=(int(np.sum(coded == 0)), int(np.sum(coded == 1))))


KAPPA_BANDS = (
    (0.80, "almost perfect"),
    (0.60, "substantial"),
    (0.40, "moderate"),
    (0.20, "fair"),
    (0.00, "slight"),
)


def kappa_band(kappa: float) -> str:
    """Landis-Koch agreement label; a kappa above 0.80 is "almost perfect"."""
    for lower, name in KAPPA_BANDS:
        if kappa > lower:
            return name
    return "slight" if kappa == 0 else "poor"


def cohens_kappa(rater_a, rater_b) -> TestResult:
    """Cohen's kappa with a large-sample z test of kappa = 0."""
    a, b = list(rater_a), list(rater_b)
    if len(a) != len(b):
        raise LengthMismatch(f"rater sequences differ in length ({len(a)} vs {len(b)})")
    n = len(a)
    if n == 0:
        raise TooShort("no ratings")
    ca, cb = Counter(a), Counter(b)
    cats = set(ca) | set(cb)
    po = sum(x == y for x, y in zip(a, b)) / n
    pa = {c: ca[c] / n for c in cats}
    pb = {c: cb[c] / n for c in cats}
    pe = sum(pa[c] * pb[c] for c in cats)
    if pe >= 1.0 - 1e-15:
        raise DegenerateAgreement("expected agreement is 1; kappa undefined")
    kappa = (po - pe) / (1.0 - pe)
    # standard error under the null (Fleiss, Cohen & Everitt 1969)
    s = sum(pa[c] * pb[c] * (pa[c] + pb[c]) for c in cats)
    var0 = (pe + pe * pe - s) / ((1 - pe) ** 2 * n)
    if var0 > 0:
        z = kappa / math.sqrt(var0)
        p = float(2 * sps.norm.sf(abs(z)))
    else:
        z, p = math.nan, math.nan
    return TestResult("kappa", kappa, p, n, NORMAL, z=z)
