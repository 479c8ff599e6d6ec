"""Outlier filtering, distribution diagnostics and collinearity screening."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats as sps

from ..errors import ConstantInput, OutOfRange, TooShort

OUTLIER_SD = 3.0
VIF_THRESHOLD = 5.0
SHAPIRO_RANGE = (3, 5000)


def remove_outliers(series, k: float = OUTLIER_SD) -> tuple[np.ndarray, np.ndarray]:
    """Drop values more than ``k`` sample SDs from the mean, in one pass.

    Returns the kept values and the indices that were removed.
    """
    x = np.asarray(series, dtype=float)
    if x.size < 3:
        raise TooShort("outlier filtering needs at least 3 values")
    mean = x.mean()
    sd = x.std(ddof=1)
    far = np.abs(x - mean) > k * sd
    return x[~far], np.flatnonzero(far)


@dataclass(frozen=True)
class DistributionDiagnostics:
    skewness: float
    excess_kurtosis: float
    shapiro_w: float
    shapiro_p: float
    n: int


def diagnostics(series) -> DistributionDiagnostics:
    """Moment skewness, Fisher excess kurtosis and Shapiro-Wilk (Royston)."""
    x = np.asarray(series, dtype=float)
    lo, hi = SHAPIRO_RANGE
    if not lo <= x.size <= hi:
        raise OutOfRange(f"Shapiro-Wilk is valid for {lo} <= n <= {hi}, got n={x.size}")
    dev = x - x.mean()
    m2 = float(np.mean(dev ** 2))
    if m2 == 0:
        raise ConstantInput("distribution diagnostics undefined for constant input")
    skew = float(np.mean(dev ** 3)) / m2 ** 1.5
    kurt = float(np.mean(dev ** 4)) / m2 ** 2 - 3.0
    w, p = sps.shapiro(x)
    return DistributionDiagnostics(skew, kurt, float(w), float(p), int(x.size))


def qq_pairs(series) -> tuple[np.ndarray, np.ndarray]:
    """Normal QQ-plot coordinates: (theoretical quantiles, sorted standardized sample).

    Plotting positions follow Blom, (i - 3/8) / (n + 1/4).
    """
    x = np.sort(np.asarray(series, dtype=float))
    n = x.size
    if n < 2:
        raise TooShort("QQ pairs need at least 2 values")
    sd = x.std(ddof=1)
    z = (x - x.mean()) / sd if sd > 0 else np.zeros(n)
    probs = (np.arange(1, n + 1) - 0.375) / (n + 0.25)
    return sps.norm.ppf(probs), z


# ---------------------------------------------------------------------------

@dataclass
class VifReport:
    names: list[str]
    initial: dict[str, float]
    final: dict[str, float]
    kept: list[str]
    excluded: list[str]
    threshold: float = VIF_THRESHOLD
    history: list[dict[str, float]] = field(default_factory=list)


def vif(design) -> np.ndarray:
    """VIF of every column regressed (with intercept) on the other columns.

    Columns that are exactly explained by the rest, or constant, get ``inf``.
    """
    X = np.asarray(design, dtype=float)
    n, p = X.shape
    out = np.empty(p)
    for j in range(p):
        y = X[:, j]
        tss = float(np.sum((y - y.mean()) ** 2))
        if tss <= 1e-300:
            out[j] = math.inf
            continue
        others = np.column_stack([np.ones(n), np.delete(X, j, axis=1)])
        beta, *_ = np.linalg.lstsq(others, y, rcond=None)
        rss = float(np.sum((y - others @ beta) ** 2))
        r2 = 1.0 - rss / tss
        out[j] = math.inf if r2 >= 1.0 - 1e-10 else 1.0 / (1.0 - r2)
    return out


def vif_filter(design, threshold: float = VIF_THRESHOLD, names=None) -> VifReport:
    """Iteratively drop the highest-VIF column until every VIF is <= threshold."""
    X = np.asarray(design, dtype=float)
    if X.ndim != 2:
        raise ValueError("design must be 2-D")
    n, p = X.shape
    if not n > p >= 2:
        raise TooShort(f"VIF screening needs n > p >= 2, got n={n}, p={p}")
    names = list(names) if names is not None else [f"x{j}" for j in range(p)]
    active = list(range(p))
    history = []
    excluded = []
    while True:
        if len(active) < 2:
            current = {names[active[0]]: 1.0} if active else {}
            history.append(current)
            break
        v = vif(X[:, active])
        current = {names[c]: float(val) for c, val in zip(active, v)}
        history.append(current)
        worst = int(np.argmax(v))
        if not v[worst] > threshold:
            break
        excluded.append(names[active.pop(worst)])
    return VifReport(names=names, initial=history[0], final=history[-1],
                     kept=[names[c] for c in active], excluded=excluded,
                     threshold=threshold, history=history)
