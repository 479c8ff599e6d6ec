"""Feature screening for clustering and per-cluster profiling."""

from __future__ import annotations

import hashlib
import itertools
from dataclasses import dataclass, field

import numpy as np

from ..errors import EmptyGroup, ZeroVariance
from ..stats import mann_whitney_u


def variance_filter(matrix, percentile: float = 50.0) -> np.ndarray:
    """Indices of columns whose sample variance is >= the given percentile of variances.

    Variances within a relative 1e-9 of the cut count as equal to it, so
    columns that differ only by rounding are all kept.
    """
    M = np.asarray(matrix, dtype=float)
    if M.ndim != 2 or M.shape[1] < 2:
        raise ValueError("variance_filter needs a 2-D matrix with >= 2 columns")
    var = M.var(axis=0, ddof=1)
    cut = np.percentile(var, percentile)
    return np.flatnonzero(var >= cut - 1e-9 * abs(cut))


@dataclass(frozen=True)
class Standardizer:
    mean: np.ndarray
    sd: np.ndarray

    def transform(self, M):
        return (np.asarray(M, dtype=float) - self.mean) / self.sd

    def inverse(self, Z):
        return np.asarray(Z, dtype=float) * self.sd + self.mean


def standardize(matrix) -> tuple[np.ndarray, Standardizer]:
    """Column z-scores with sample SD; returns the data and the fitted transform."""
    M = np.asarray(matrix, dtype=float)
    if M.ndim == 1:
        M = M[:, None]
    mean = M.mean(axis=0)
    sd = M.std(axis=0, ddof=1)
    zero = np.flatnonzero(~(sd > 0))
    if zero.size:
        raise ZeroVariance(f"columns {zero.tolist()} have zero variance")
    tr = Standardizer(mean, sd)
    return tr.transform(M), tr


def encode_subject_ids(ids) -> np.ndarray:
    """Stable numeric code per subject ID (SHA-256 prefix mapped into [0, 1)).

    Only meant to let an opaque identifier ride along as a clustering
    column; standardize afterwards.
    """
    out = []
    for s in ids:
        h = hashlib.sha256(str(s).encode("utf-8")).digest()
        out.append(int.from_bytes(h[:6], "big") / float(1 << 48))
    return np.array(out)


@dataclass
class Comparison:
    feature: str
    cluster_a: int
    cluster_b: int
    U: float
    p: float
    method: str
    significant: bool


@dataclass
class ClusterProfile:
    clusters: list[int]
    sizes: dict[int, int]
    summary: dict[str, dict[int, tuple[float, float]]]  # feature -> cluster -> (mean, sd)
    comparisons: list[Comparison] = field(default_factory=list)
    skipped: list[tuple[str, int, int, str]] = field(default_factory=list)
    alpha: float = 0.05

    def table(self) -> list[dict]:
        """One row per feature, one "mean (sd)" column per cluster."""
        rows = []
        for feat, by in self.summary.items():
            row = {"feature": feat}
            for c in self.clusters:
                m, s = by[c]
                row[f"cluster_{c}"] = f"{m:.3g} ({s:.3g})"
            rows.append(row)
        return rows

    def significant(self) -> list[Comparison]:
        return [c for c in self.comparisons if c.significant]


def cluster_profile(labels, feature_table: dict[str, np.ndarray], alpha: float = 0.05) -> ClusterProfile:
    """Per-cluster mean (SD) of every feature and all pairwise Mann-Whitney tests.

    Non-finite values are ignored feature by feature.  Pairs where either
    cluster has fewer than 3 usable values are listed in ``skipped``.
    """
    labels = np.asarray(labels)
    clusters = sorted(int(c) for c in np.unique(labels))
    sizes = {c: int(np.sum(labels == c)) for c in clusters}
    summary, comps, skipped = {}, [], []
    for feat, values in feature_table.items():
        v = np.asarray(values, dtype=float)
        if v.shape[0] != labels.shape[0]:
            raise ValueError(f"feature {feat!r} does not align with labels")
        groups = {c: v[(labels == c) & np.isfinite(v)] for c in clusters}
        summary[feat] = {
            c: (float(g.mean()) if g.size else float("nan"),
                float(g.std(ddof=1)) if g.size > 1 else float("nan"))
            for c, g in groups.items()
        }
        for a, b in itertools.combinations(clusters, 2):
            try:
                r = mann_whitney_u(groups[a], groups[b])
            except EmptyGroup as exc:
                skipped.append((feat, a, b, str(exc)))
                continue
            comps.append(Comparison(feat, a, b, r.statistic, r.p_value, r.method,
                                    r.p_value < alpha))
    return ClusterProfile(clusters=clusters, sizes=sizes, summary=summary, comparisons=comps,
                          skipped=skipped, alpha=alpha)
