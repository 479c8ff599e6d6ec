"""Embedding, clustering and cluster validation."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .kmeans import (CoincidentCentroidsWarning, KMeansResult, SelectKResult, davies_bouldin,
                     kmeans, select_k, silhouette, silhouette_samples)
from .profile import (ClusterProfile, Comparison, Standardizer, cluster_profile,
                      encode_subject_ids, standardize, variance_filter)
from .tsne import (EmbeddingConfig, PerplexityCapWarning, TsneResult, kl_divergence,
                   tsne_embed)


@dataclass
class ClusterModel:
    embedding: np.ndarray
    labels: np.ndarray
    k: int
    inertia: float
    silhouette: float
    davies_bouldin: float
    seed: int
    score_table: list[dict] = field(default_factory=list)
    kept_columns: list[int] = field(default_factory=list)
    feature_space_scores: dict | None = None


def cluster_sessions(matrix, cfg: EmbeddingConfig = EmbeddingConfig(), k_range=range(2, 9),
                     restarts: int = 10, variance_percentile: float | None = 50.0,
                     always_keep=(), feature_space_scores: bool = False) -> ClusterModel:
    """Variance filter -> standardize -> t-SNE -> k selection -> final k-means.

    ``always_keep`` lists column indices exempt from the variance filter
    (e.g. age).  Scores are computed on the embedding; with
    ``feature_space_scores`` they are also reported on the standardized
    features for the chosen labels.
    """
    M = np.asarray(matrix, dtype=float)
    if variance_percentile is None:
        kept = list(range(M.shape[1]))
    else:
        kept = sorted(set(variance_filter(M, variance_percentile).tolist()) | set(always_keep))
    Z, _ = standardize(M[:, kept])
    emb = tsne_embed(Z, cfg).embedding
    n = emb.shape[0]
    ks = [k for k in k_range if 2 <= k <= n - 1]
    sel = select_k(emb, ks, seed=cfg.seed, restarts=restarts)
    fit = sel.fits[sel.k_best]
    row = next(r for r in sel.table if r["k"] == sel.k_best)
    extra = None
    if feature_space_scores:
        extra = {"silhouette": silhouette(Z, fit.labels),
                 "davies_bouldin": davies_bouldin(Z, fit.labels)}
    return ClusterModel(embedding=emb, labels=fit.labels, k=sel.k_best, inertia=fit.inertia,
                        silhouette=row["silhouette"], davies_bouldin=row["davies_bouldin"],
                        seed=cfg.seed, score_table=sel.table, kept_columns=kept,
                        feature_space_scores=extra)


__all__ = [
    "ClusterModel", "cluster_sessions",
    "EmbeddingConfig", "TsneResult", "tsne_embed", "kl_divergence", "PerplexityCapWarning",
    "kmeans", "KMeansResult", "silhouette", "silhouette_samples", "davies_bouldin",
    "select_k", "SelectKResult", "CoincidentCentroidsWarning",
    "variance_filter", "standardize", "Standardizer", "encode_subject_ids",
    "cluster_profile", "ClusterProfile", "Comparison",
]
