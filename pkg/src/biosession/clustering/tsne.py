"""Barnes-Hut t-SNE to two dimensions.

Input affinities use the 3*perplexity nearest neighbours of each point with
per-point bandwidths found by bisection on the entropy.  Repulsive forces
are approximated with a quadtree: a cell whose width over its distance to
the point is below ``theta`` is summarized by its centre of mass.  The tree
walk is done for all points at once over arrays of (point, node) pairs.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass, fields

import numpy as np
from scipy import sparse
from scipy.spatial import cKDTree

from ..errors import PerplexityTooLarge, TooShort

N_COMPONENTS = 2
_MAX_DEPTH = 50


class PerplexityCapWarning(UserWarning):
    pass


@dataclass(frozen=True)
class EmbeddingConfig:
    perplexity: float = 30.0
    theta: float = 0.5
    iterations: int = 1000
    early_exaggeration: float = 12.0
    exaggeration_iters: int = 250
    learning_rate: float = 200.0
    seed: int = 0
    auto_cap_perplexity: bool = True

    def __post_init__(self):
        if not 0.0 <= self.theta <= 1.0:
            raise ValueError("theta must lie in [0, 1]")
        if self.perplexity < 1:
            raise ValueError("perplexity must be >= 1")
        if self.iterations <= self.exaggeration_iters:
            raise ValueError("iterations must exceed exaggeration_iters")

    @classmethod
    def from_dict(cls, d: dict | None) -> "EmbeddingConfig":
        d = d or {}
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ValueError(f"unknown embedding keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TsneResult:
    embedding: np.ndarray
    perplexity: float
    kl_after_exaggeration: float
    kl_final: float


# --- input affinities --------------------------------------------------------

def _knn(X: np.ndarray, k: int):
    tree = cKDTree(X)
    dist, idx = tree.query(X, k=k + 1)
    n = X.shape[0]
    own = idx == np.arange(n)[:, None]
    # drop the point itself; with duplicates it may not come first
    drop = np.where(own.any(axis=1), own.argmax(axis=1), k)
    keep = np.ones_like(idx, dtype=bool)
    keep[np.arange(n), drop] = False
    return dist[keep].reshape(n, k) ** 2, idx[keep].reshape(n, k)


def _conditional_p(d2: np.ndarray, perplexity: float, tol: float = 1e-5, steps: int = 200):
    """Row-wise Gaussian kernels matching the target entropy log(perplexity)."""
    n, k = d2.shape
    target = math.log(perplexity)
    P = np.empty_like(d2)
    for i in range(n):
        row = d2[i]
        beta, lo, hi = 1.0, 0.0, math.inf
        for _ in range(steps):
            w = np.exp(-(row - row.min()) * beta)
            s = w.sum()
            p = w / s
            h = -np.sum(p[p > 0] * np.log(p[p > 0]))
            if abs(h - target) < tol:
                break
            if h > target:
                lo = beta
                beta = beta * 2 if hi == math.inf else (beta + hi) / 2
            else:
                hi = beta
                beta = (beta + lo) / 2
        P[i] = p
    return P


def joint_probabilities(X: np.ndarray, perplexity: float) -> sparse.csr_matrix:
    n = X.shape[0]
    k = min(n - 1, int(3 * perplexity))
    d2, nbr = _knn(X, k)
    cond = _conditional_p(d2, perplexity)
    P = sparse.csr_matrix((cond.ravel(), (np.repeat(np.arange(n), k), nbr.ravel())), shape=(n, n))
    P = P + P.T
    P = P / P.sum()
    P.sum_duplicates()
    P.sort_indices()
    return P


# --- quadtree ------------------------------------------------------------------

class _QuadTree:
    """Flat quadtree built level by level.

    Node arrays hold centre of mass, point count, cell width and the four
    child ids (-1 when empty).  Leaf contents live in ``perm`` as contiguous
    runs starting at ``leaf_start``.
    """

    def __init__(self, Y: np.ndarray):
        self.Y = Y
        n = Y.shape[0]
        lo = Y.min(axis=0)
        hi = Y.max(axis=0)
        half0 = max(float(np.max(hi - lo)) / 2, 1e-12) * (1 + 1e-9)

        centers = [((lo + hi) / 2)[None, :]]
        halves = [np.array([half0])]
        coms, counts, children, leaf_flags = [], [], [], []
        node_of = np.zeros(n, dtype=np.int64)  # current node of each point
        pts = np.arange(n)  # points still descending
        base = 0  # id of the first node on the current level
        level_n = 1
        depth = 0
        leaf_of = np.full(n, -1, dtype=np.int64)
        while level_n:
            local = node_of[pts] - base
            cnt = np.bincount(local, minlength=level_n)
            cx = np.bincount(local, Y[pts, 0], minlength=level_n) / cnt
            cy = np.bincount(local, Y[pts, 1], minlength=level_n) / cnt
            mn = np.full((level_n, 2), np.inf)
            mx = np.full((level_n, 2), -np.inf)
            np.minimum.at(mn, local, Y[pts])
            np.maximum.at(mx, local, Y[pts])
            is_leaf = (cnt == 1) | np.all(mn == mx, axis=1) | (depth >= _MAX_DEPTH)
            coms.append(np.column_stack([cx, cy]))
            counts.append(cnt)
            leaf_flags.append(is_leaf)
            kids = np.full((level_n, 4), -1, dtype=np.int64)
            children.append(kids)

            done = is_leaf[local]
            leaf_of[pts[done]] = node_of[pts[done]]
            pts = pts[~done]
            if pts.size == 0:
                break
            local = node_of[pts] - base
            c = centers[-1][local]
            quad = (Y[pts, 0] >= c[:, 0]).astype(np.int64) + 2 * (Y[pts, 1] >= c[:, 1])
            key = local * 4 + quad
            uniq, inv = np.unique(key, return_inverse=True)
            next_base = base + level_n
            parent, q = uniq // 4, uniq % 4
            kids[parent, q] = next_base + np.arange(uniq.size)
            h = halves[-1][parent] / 2
            sign = np.column_stack([np.where(q & 1, 1.0, -1.0), np.where(q & 2, 1.0, -1.0)])
            centers.append(centers[-1][parent] + h[:, None] * sign)
            halves.append(h)
            node_of[pts] = next_base + inv
            base, level_n = next_base, uniq.size
            depth += 1

        self.com = np.vstack(coms)
        self.count = np.concatenate(counts).astype(float)
        self.width = 2 * np.concatenate(halves)[: self.count.size]
        self.children = np.vstack(children)
        self.is_leaf = np.concatenate(leaf_flags)
        order = np.argsort(leaf_of, kind="stable")
        self.perm = order
        n_nodes = self.count.size
        self.leaf_count = np.where(self.is_leaf, np.bincount(leaf_of, minlength=n_nodes), 0)
        first = np.searchsorted(leaf_of[order], np.arange(n_nodes))
        self.leaf_start = np.where(self.is_leaf, first, -1)

    def repulsion(self, theta: float):
        """Per-point sum of q^2 (y_i - y_j) and of q over all j != i (approximated)."""
        Y = self.Y
        n = Y.shape[0]
        force = np.zeros((n, 2))
        zsum = np.zeros(n)
        pts = np.arange(n)
        nodes = np.zeros(n, dtype=np.int64)
        theta2 = theta * theta
        while pts.size:
            diff = Y[pts] - self.com[nodes]
            d2 = np.einsum("ij,ij->i", diff, diff)
            leaf = self.is_leaf[nodes]
            summarize = ~leaf & (self.width[nodes] ** 2 < theta2 * d2)
            if summarize.any():
                q = 1.0 / (1.0 + d2[summarize])
                cnt = self.count[nodes[summarize]]
                p_s = pts[summarize]
                zsum += np.bincount(p_s, cnt * q, minlength=n)
                wq = cnt * q * q
                force[:, 0] += np.bincount(p_s, wq * diff[summarize, 0], minlength=n)
                force[:, 1] += np.bincount(p_s, wq * diff[summarize, 1], minlength=n)
            if leaf.any():
                p_l = pts[leaf]
                n_l = nodes[leaf]
                reps = self.leaf_count[n_l]
                owner = np.repeat(p_l, reps)
                starts = np.repeat(self.leaf_start[n_l], reps)
                offsets = np.arange(reps.sum()) - np.repeat(np.cumsum(reps) - reps, reps)
                other = self.perm[starts + offsets]
                keep = other != owner
                owner, other = owner[keep], other[keep]
                dv = Y[owner] - Y[other]
                q = 1.0 / (1.0 + np.einsum("ij,ij->i", dv, dv))
                zsum += np.bincount(owner, q, minlength=n)
                force[:, 0] += np.bincount(owner, q * q * dv[:, 0], minlength=n)
                force[:, 1] += np.bincount(owner, q * q * dv[:, 1], minlength=n)
            expand = ~leaf & ~summarize
            if not expand.any():
                break
            kids = self.children[nodes[expand]]
            p_e = np.repeat(pts[expand], 4)
            kids = kids.ravel()
            ok = kids >= 0
            pts, nodes = p_e[ok], kids[ok]
        return force, zsum


# --- optimization --------------------------------------------------------------

def _attraction(P: sparse.csr_matrix, Y: np.ndarray) -> np.ndarray:
    rows = np.repeat(np.arange(P.shape[0]), np.diff(P.indptr))
    cols = P.indices
    dv = Y[rows] - Y[cols]
    q = 1.0 / (1.0 + np.einsum("ij,ij->i", dv, dv))
    w = P.data * q
    n = Y.shape[0]
    return np.column_stack([np.bincount(rows, w * dv[:, 0], minlength=n),
                            np.bincount(rows, w * dv[:, 1], minlength=n)])


def kl_divergence(P: sparse.csr_matrix, Y: np.ndarray) -> float:
    """Exact KL(P || Q) for the embedding ``Y``."""
    sq = np.einsum("ij,ij->i", Y, Y)
    d2 = np.maximum(sq[:, None] + sq[None, :] - 2 * Y @ Y.T, 0.0)
    qt = 1.0 / (1.0 + d2)
    np.fill_diagonal(qt, 0.0)
    Z = qt.sum()
    rows = np.repeat(np.arange(P.shape[0]), np.diff(P.indptr))
    q = np.maximum(qt[rows, P.indices] / Z, 1e-300)
    p = P.data
    pos = p > 0
    return float(np.sum(p[pos] * np.log(p[pos] / q[pos])))


def effective_perplexity(n: int, cfg: EmbeddingConfig) -> float:
    cap = (n - 1) / 3.0
    if cfg.perplexity <= cap:
        return cfg.perplexity
    if not cfg.auto_cap_perplexity:
        raise PerplexityTooLarge(f"perplexity {cfg.perplexity} exceeds (n-1)/3 = {cap:.3g}")
    warnings.warn(f"perplexity {cfg.perplexity} capped to {cap:.3g} for n={n}",
                  PerplexityCapWarning, stacklevel=3)
    return cap


def tsne_embed(matrix, cfg: EmbeddingConfig = EmbeddingConfig()) -> TsneResult:
    """Embed the rows of ``matrix`` in 2-D; deterministic given ``cfg.seed``.

    ``cfg.learning_rate`` multiplies the KL gradient with its constant factor
    4 dropped, so the default of 200 corresponds to 50 in implementations
    that keep the factor.
    """
    X = np.asarray(matrix, dtype=float)
    if X.ndim != 2 or X.shape[0] < 5:
        raise TooShort("t-SNE needs a 2-D matrix with at least 5 rows")
    if not np.all(np.isfinite(X)):
        raise ValueError("t-SNE input contains NaN or inf")
    n = X.shape[0]
    perplexity = effective_perplexity(n, cfg)
    P = joint_probabilities(X, perplexity)

    rng = np.random.default_rng(cfg.seed)
    Y = rng.normal(0.0, 1e-4, size=(n, N_COMPONENTS))
    update = np.zeros_like(Y)
    gains = np.ones_like(Y)
    kl_ee = math.nan
    for it in range(cfg.iterations):
        early = it < cfg.exaggeration_iters
        if it == cfg.exaggeration_iters:
            # the second phase starts afresh: no momentum, unit gains
            update[:] = 0.0
            gains[:] = 1.0
        exag = cfg.early_exaggeration if early else 1.0
        momentum = 0.5 if early else 0.8
        attr = _attraction(P, Y)
        rep, zsum = _QuadTree(Y).repulsion(cfg.theta)
        # gradient without the constant factor 4, as in the reference
        # Barnes-Hut code; the learning rate is expressed in that convention
        grad = exag * attr - rep / zsum.sum()
        same = (grad > 0) == (update > 0)
        gains = np.where(same, gains * 0.8, gains + 0.2)
        np.maximum(gains, 0.01, out=gains)
        update = momentum * update - cfg.learning_rate * gains * grad
        Y = Y + update
        Y = Y - Y.mean(axis=0)
        if it == cfg.exaggeration_iters - 1:
            kl_ee = kl_divergence(P, Y)
    return TsneResult(embedding=Y, perplexity=perplexity, kl_after_exaggeration=kl_ee,
                      kl_final=kl_divergence(P, Y))
