"""k-means (k-means++ seeding, Lloyd iterations) and internal quality scores."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist

from ..errors import InvalidClusterCount, KTooLarge, SingletonOnly

INERTIA_TOL = 1e-10


class CoincidentCentroidsWarning(UserWarning):
    pass


@dataclass
class KMeansResult:
    labels: np.ndarray
    centroids: np.ndarray
    inertia: float
    n_iter: int
    inertia_history: list[float] = field(default_factory=list, repr=False)
    restart_inertias: list[float] = field(default_factory=list, repr=False)


def _sq_dists(X, C):
    # direct differences keep full precision far from the origin
    return cdist(X, C, "sqeuclidean")


def _plusplus(X, k, rng):
    n = X.shape[0]
    centers = [X[rng.integers(n)]]
    d2 = np.sum((X - centers[0]) ** 2, axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total > 0:
            j = rng.choice(n, p=d2 / total)
        else:
            j = rng.integers(n)
        centers.append(X[j])
        d2 = np.minimum(d2, np.sum((X - X[j]) ** 2, axis=1))
    return np.array(centers)


def _relabel(labels, k):
    """Renumber clusters by first appearance so output is order-stable."""
    order, seen = [], set()
    for lab in labels:
        if lab not in seen:
            seen.add(lab)
            order.append(lab)
    order += [c for c in range(k) if c not in seen]
    mapping = np.empty(k, dtype=int)
    mapping[order] = np.arange(k)
    return mapping


def _lloyd(X, C, max_iter):
    k = C.shape[0]
    history = []
    prev = math.inf
    labels = None
    it = 0
    for it in range(1, max_iter + 1):
        d2 = _sq_dists(X, C)
        labels = d2.argmin(axis=1)
        counts = np.bincount(labels, minlength=k)
        for c in np.flatnonzero(counts == 0):
            # refill an empty cluster with the point worst served by its centroid
            far = int(d2[np.arange(X.shape[0]), labels].argmax())
            labels[far] = c
            counts = np.bincount(labels, minlength=k)
        C = np.array([X[labels == c].mean(axis=0) for c in range(k)])
        inertia = float(np.sum((X - C[labels]) ** 2))
        history.append(inertia)
        if prev - inertia <= INERTIA_TOL:
            break
        prev = inertia
    return labels, C, history[-1], it, history


def kmeans(points, k: int, restarts: int = 10, seed: int = 0, max_iter: int = 300) -> KMeansResult:
    """Best-of-``restarts`` k-means; inertia is the within-cluster sum of squares."""
    X = np.asarray(points, dtype=float)
    n = X.shape[0]
    if k < 1:
        raise InvalidClusterCount("k must be >= 1")
    if k > n:
        raise KTooLarge(f"k={k} exceeds the number of points n={n}")
    rng = np.random.default_rng(seed)
    best = None
    inertias = []
    for _ in range(restarts):
        labels, C, inertia, it, hist = _lloyd(X, _plusplus(X, k, rng), max_iter)
        inertias.append(inertia)
        if best is None or inertia < best[2]:
            best = (labels, C, inertia, it, hist)
    labels, C, inertia, it, hist = best
    mapping = _relabel(labels, k)
    new_c = np.empty_like(C)
    new_c[mapping] = C
    return KMeansResult(labels=mapping[labels], centroids=new_c, inertia=inertia, n_iter=it,
                        inertia_history=hist, restart_inertias=inertias)


def _check_labels(X, labels):
    labels = np.asarray(labels)
    if labels.shape[0] != X.shape[0]:
        raise ValueError("labels do not align with points")
    uniq = np.unique(labels)
    return labels, uniq


def silhouette_samples(points, labels) -> np.ndarray:
    X = np.asarray(points, dtype=float)
    labels, uniq = _check_labels(X, labels)
    n = X.shape[0]
    k = uniq.size
    if not 2 <= k <= n - 1:
        raise InvalidClusterCount(f"silhouette needs 2 <= k <= n-1, got k={k}, n={n}")
    D = cdist(X, X)
    np.fill_diagonal(D, 0.0)
    onehot = (labels[:, None] == uniq[None, :]).astype(float)
    sizes = onehot.sum(axis=0)
    if np.all(sizes == 1):
        raise SingletonOnly("every cluster has a single member")
    sums = D @ onehot  # distance from each point to each cluster, summed
    own = np.searchsorted(uniq, labels)
    own_size = sizes[own]
    with np.errstate(invalid="ignore", divide="ignore"):
        a = sums[np.arange(n), own] / (own_size - 1)
        mean_to = sums / sizes[None, :]
    mean_to[np.arange(n), own] = np.inf
    b = mean_to.min(axis=1)
    s = np.where(own_size > 1, (b - a) / np.maximum(a, b), 0.0)
    return s


def silhouette(points, labels) -> float:
    """Mean silhouette; points in singleton clusters score 0."""
    return float(np.mean(silhouette_samples(points, labels)))


def davies_bouldin(points, labels) -> float:
    """Mean over clusters of the worst (s_i + s_j) / d(c_i, c_j).

    s_i is the mean distance of cluster i's points to its centroid.  Two
    coincident centroids give an infinite ratio (a warning is emitted).
    """
    X = np.asarray(points, dtype=float)
    labels, uniq = _check_labels(X, labels)
    k = uniq.size
    if k < 2:
        raise InvalidClusterCount("Davies-Bouldin needs at least 2 clusters")
    C = np.array([X[labels == c].mean(axis=0) for c in uniq])
    s = np.array([np.mean(np.linalg.norm(X[labels == c] - C[i], axis=1))
                  for i, c in enumerate(uniq)])
    dc = cdist(C, C)
    np.fill_diagonal(dc, np.nan)
    num = s[:, None] + s[None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(dc == 0, np.where(num > 0, np.inf, 0.0), num / dc)
    if np.any(dc == 0):
        warnings.warn("coincident cluster centroids; Davies-Bouldin is infinite",
                      CoincidentCentroidsWarning, stacklevel=2)
    np.fill_diagonal(ratio, -np.inf)
    return float(np.mean(ratio.max(axis=1)))


@dataclass
class SelectKResult:
    k_best: int
    table: list[dict]  # rows: k, silhouette, davies_bouldin, inertia
    fits: dict[int, KMeansResult] = field(default_factory=dict, repr=False)


def select_k(points, k_range=range(2, 9), seed: int = 0, restarts: int = 10) -> SelectKResult:
    """Pick k by maximal silhouette; ties go to the lower Davies-Bouldin score.

    The full score table is returned whatever the outcome.  On structureless
    data every silhouette is low, which the caller should treat as "no
    cluster structure" rather than trusting ``k_best``.
    """
    X = np.asarray(points, dtype=float)
    n = X.shape[0]
    ks = list(k_range)
    if not ks or min(ks) < 2 or max(ks) > n - 1:
        raise InvalidClusterCount(f"k_range must lie within [2, {n - 1}]")
    table, fits = [], {}
    for k in ks:
        fit = kmeans(X, k, restarts=restarts, seed=seed)
        fits[k] = fit
        table.append({
            "k": k,
            "silhouette": silhouette(X, fit.labels),
            "davies_bouldin": davies_bouldin(X, fit.labels),
            "inertia": fit.inertia,
        })
    best = max(table, key=lambda r: (round(r["silhouette"], 12), -r["davies_bouldin"]))
    return SelectKResult(k_best=best["k"], table=table, fits=fits)
