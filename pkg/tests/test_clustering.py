import itertools
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from biosession.clustering import (CoincidentCentroidsWarning, EmbeddingConfig,
                                   PerplexityCapWarning, cluster_profile, cluster_sessions,
                                   davies_bouldin, encode_subject_ids, kmeans, select_k,
                                   silhouette, silhouette_samples, standardize, tsne_embed,
                                   variance_filter)
from biosession.errors import KTooLarge, ZeroVariance
from biosession.synth import gen_blobs

FAST = EmbeddingConfig(iterations=500, exaggeration_iters=250)


# --- brute-force oracles --------------------------------------------------------

def silhouette_brute(X, labels):
    n = len(X)
    out = []
    for i in range(n):
        own = [j for j in range(n) if labels[j] == labels[i] and j != i]
        if not own:
            out.append(0.0)
            continue
        a = sum(np.linalg.norm(X[i] - X[j]) for j in own) / len(own)
        b = min(
            sum(np.linalg.norm(X[i] - X[j]) for j in range(n) if labels[j] == c)
            / sum(1 for j in range(n) if labels[j] == c)
            for c in set(labels) if c != labels[i])
        out.append((b - a) / max(a, b))
    return np.array(out)


def davies_bouldin_brute(X, labels):
    cs = sorted(set(labels))
    cent = {c: np.mean([X[i] for i in range(len(X)) if labels[i] == c], axis=0) for c in cs}
    spread = {c: np.mean([np.linalg.norm(X[i] - cent[c]) for i in range(len(X)) if labels[i] == c])
              for c in cs}
    worst = []
    for a in cs:
        worst.append(max((spread[a] + spread[b]) / np.linalg.norm(cent[a] - cent[b])
                         for b in cs if b != a))
    return float(np.mean(worst))


def same_partition(a, b):
    pairs = set(zip(np.asarray(a).tolist(), np.asarray(b).tolist()))
    return len(pairs) == len(set(a)) == len(set(b))


def one_nn_consistency(Y, labels):
    d = np.linalg.norm(Y[:, None] - Y[None], axis=-1)
    np.fill_diagonal(d, np.inf)
    return float(np.mean(labels[d.argmin(1)] == labels))


# --- variance filter and standardization ------------------------------------------

def test_variance_filter_example():
    rng = np.random.default_rng(0)
    cols = [np.zeros(50)] + [rng.normal(size=50) for _ in range(3)]
    M = np.column_stack(cols)
    M[:, 1:] /= M[:, 1:].std(axis=0, ddof=1)
    M[:, 2] *= np.sqrt(2)
    M[:, 3] *= np.sqrt(3)
    assert np.percentile(M.var(axis=0, ddof=1), 50) == pytest.approx(1.5)
    assert variance_filter(M).tolist() == [2, 3]


def test_variance_filter_equal_variances():
    M = np.random.default_rng(1).normal(size=(30, 5))
    M /= M.std(axis=0, ddof=1)
    assert variance_filter(M).tolist() == [0, 1, 2, 3, 4]


def test_variance_filter_twenty_to_ten():
    M = np.random.default_rng(2).normal(size=(64, 20)) * np.arange(1, 21)
    assert variance_filter(M).size == 10


def test_standardize_examples():
    Z, _ = standardize(np.array([[2.0], [4.0], [6.0]]))
    assert Z.ravel().tolist() == [-1.0, 0.0, 1.0]
    M = np.random.default_rng(3).normal(5, 3, (40, 4))
    Z, tr = standardize(M)
    np.testing.assert_allclose(Z.mean(0), 0, atol=1e-12)
    np.testing.assert_allclose(Z.std(0, ddof=1), 1, atol=1e-12)
    Z2, _ = standardize(Z)
    np.testing.assert_allclose(Z2, Z, atol=1e-12)
    np.testing.assert_allclose(tr.inverse(Z), M, atol=1e-12)
    with pytest.raises(ZeroVariance):
        standardize(np.ones((5, 2)))


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), perm=st.permutations(range(6)))
def test_filter_and_standardize_commute_with_permutation(seed, perm):
    rng = np.random.default_rng(seed)
    M = rng.normal(size=(25, 6)) * rng.uniform(0.5, 5, 6)
    perm = np.array(perm)
    kept = variance_filter(M)
    kept_p = variance_filter(M[:, perm])
    assert sorted(perm[kept_p].tolist()) == kept.tolist()
    Z, _ = standardize(M[:, kept])
    Zp, _ = standardize(M[:, perm][:, kept_p])
    order = np.argsort(perm[kept_p])
    np.testing.assert_allclose(Zp[:, order], Z, atol=1e-12)


def test_subject_id_encoding_stable():
    a = encode_subject_ids(["S1", "S2", "S1"])
    assert a[0] == a[2] != a[1]
    assert np.all((0 <= a) & (a < 1))
    np.testing.assert_array_equal(a, encode_subject_ids(["S1", "S2", "S1"]))


# --- t-SNE ----------------------------------------------------------------------

@pytest.fixture(scope="module")
def two_blobs():
    return gen_blobs(2, 50, separation=10.0, dim=5, seed=0)


@pytest.fixture(scope="module")
def two_blob_embeddings(two_blobs):
    X, _ = two_blobs
    return {s: tsne_embed(X, EmbeddingConfig(seed=s)) for s in (0, 1, 2)}


def test_tsne_two_blobs_neighbour_consistency(two_blobs, two_blob_embeddings):
    _, labels = two_blobs
    res = two_blob_embeddings[0]
    assert res.embedding.shape == (100, 2)
    assert one_nn_consistency(res.embedding, labels) >= 0.95


def test_tsne_reproducible_and_seed_stable(two_blobs, two_blob_embeddings):
    X, labels = two_blobs
    again = tsne_embed(X, EmbeddingConfig(seed=0))
    np.testing.assert_array_equal(again.embedding, two_blob_embeddings[0].embedding)
    scores = [one_nn_consistency(r.embedding, labels) for r in two_blob_embeddings.values()]
    assert max(scores) - min(scores) < 0.05


def test_tsne_duplicates_embed_close():
    X, _ = gen_blobs(3, 20, separation=6.0, dim=4, seed=5)
    X = np.vstack([X, X[:5]])
    Y = tsne_embed(X, FAST).embedding
    d = np.linalg.norm(Y[:, None] - Y[None], axis=-1)
    iu = np.triu_indices(len(Y), 1)
    cut = np.percentile(d[iu], 5)
    for i in range(5):
        assert d[i, 60 + i] < cut


def test_tsne_perplexity_cap():
    X = np.random.default_rng(0).normal(size=(10, 3))
    with pytest.warns(PerplexityCapWarning):
        res = tsne_embed(X, FAST)
    assert res.perplexity == 3.0


def test_tsne_kl_decreases_after_exaggeration(two_blob_embeddings):
    r = two_blob_embeddings[0]
    assert r.kl_final <= r.kl_after_exaggeration + 1e-9


# --- k-means --------------------------------------------------------------------

def test_kmeans_k1():
    X = np.random.default_rng(0).normal(size=(30, 3))
    fit = kmeans(X, 1)
    np.testing.assert_allclose(fit.centroids[0], X.mean(0), atol=1e-12)
    assert fit.inertia == pytest.approx(np.sum((X - X.mean(0)) ** 2), rel=1e-12)


def test_kmeans_three_blobs():
    X, labels = gen_blobs(3, 30, separation=10.0, seed=1)
    assert same_partition(kmeans(X, 3).labels, labels)


def test_kmeans_k_equals_n():
    X = np.random.default_rng(0).normal(size=(8, 2))
    assert kmeans(X, 8).inertia == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(KTooLarge):
        kmeans(X, 9)


def test_kmeans_inertia_monotone():
    X, _ = gen_blobs(4, 25, separation=3.0, seed=2)
    fit = kmeans(X, 4, restarts=10, seed=3)
    h = np.array(fit.inertia_history)
    assert np.all(np.diff(h) <= 1e-9)
    assert fit.inertia == pytest.approx(min(fit.restart_inertias))


def test_kmeans_seed_reproducible():
    X, _ = gen_blobs(3, 20, separation=2.0, seed=4)
    a, b = kmeans(X, 3, seed=9), kmeans(X, 3, seed=9)
    np.testing.assert_array_equal(a.labels, b.labels)


# --- silhouette and Davies-Bouldin ------------------------------------------------

def test_silhouette_two_far_blobs():
    X, labels = gen_blobs(2, 30, separation=20.0, seed=0)
    assert silhouette(X, labels) >= 0.8


def test_silhouette_random_labels_near_zero():
    X = np.random.default_rng(0).normal(size=(200, 2))
    labels = np.random.default_rng(1).integers(0, 3, 200)
    assert abs(silhouette(X, labels)) <= 0.1


@pytest.mark.parametrize("seed", range(3))
def test_silhouette_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(50, 3))
    labels = rng.integers(0, 4, 50)
    labels[:4] = [0, 1, 2, 3]
    np.testing.assert_allclose(silhouette_samples(X, labels), silhouette_brute(X, labels),
                               rtol=0, atol=1e-12)


def test_silhouette_singleton_scores_zero():
    X = np.array([[0.0, 0], [0, 1], [5, 5], [10, 10], [10, 11]])
    labels = np.array([0, 0, 1, 2, 2])
    s = silhouette_samples(X, labels)
    assert s[2] == 0.0
    np.testing.assert_allclose(s, silhouette_brute(X, labels), atol=1e-12)


def test_davies_bouldin_point_masses():
    X = np.array([[0.0, 0]] * 5 + [[10.0, 0]] * 5)
    assert davies_bouldin(X, np.repeat([0, 1], 5)) == 0.0


def test_davies_bouldin_decreases_with_separation():
    base = np.random.default_rng(0).normal(size=(40, 2))
    labels = np.repeat([0, 1], 20)
    scores = []
    for sep in (2.0, 4.0, 8.0, 16.0):
        X = base.copy()
        X[20:, 0] += sep
        scores.append(davies_bouldin(X, labels))
    assert all(a > b for a, b in zip(scores, scores[1:]))


@pytest.mark.parametrize("n", [30, 50])
def test_davies_bouldin_matches_brute_force(n):
    rng = np.random.default_rng(n)
    X = rng.normal(size=(n, 2))
    labels = rng.integers(0, 3, n)
    labels[:3] = [0, 1, 2]
    assert davies_bouldin(X, labels) == pytest.approx(davies_bouldin_brute(X, labels),
                                                      rel=0, abs=1e-12)


def test_davies_bouldin_coincident_centroids():
    X = np.array([[-1.0, 0], [1, 0], [0, -1], [0, 1]])
    with pytest.warns(CoincidentCentroidsWarning):
        assert davies_bouldin(X, [0, 0, 1, 1]) == np.inf


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), angle=st.floats(0, 2 * np.pi),
       shift=st.tuples(st.floats(-100, 100), st.floats(-100, 100)))
def test_scores_rigid_motion_invariant(seed, angle, shift):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(30, 2))
    labels = np.arange(30) % 3
    R = np.array([[np.cos(angle), -np.sin(angle)], [np.sin(angle), np.cos(angle)]])
    Y = X @ R.T + np.array(shift)
    assert silhouette(Y, labels) == pytest.approx(silhouette(X, labels), abs=1e-9)
    assert davies_bouldin(Y, labels) == pytest.approx(davies_bouldin(X, labels), abs=1e-9)


# --- select_k -------------------------------------------------------------------

@pytest.mark.parametrize("k", [2, 3])
def test_select_k_planted(k):
    X, labels = gen_blobs(k, 30, separation=10.0, seed=k)
    sel = select_k(X)
    assert sel.k_best == k
    assert [r["k"] for r in sel.table] == list(range(2, 9))
    assert same_partition(sel.fits[k].labels, labels)


def test_select_k_structureless_returns_table():
    X = np.random.default_rng(0).normal(size=(60, 2))
    sel = select_k(X)
    assert len(sel.table) == 7
    assert all(r["silhouette"] < 0.5 for r in sel.table)


def test_cluster_sessions_end_to_end():
    X, labels = gen_blobs(3, 30, separation=10.0, dim=4, seed=7)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", PerplexityCapWarning)
        model = cluster_sessions(X, EmbeddingConfig(seed=0), variance_percentile=None)
    assert model.k == 3
    assert same_partition(model.labels, labels)
    assert model.silhouette >= 0.8


# --- profile --------------------------------------------------------------------

def test_profile_shifted_feature_flagged():
    rng = np.random.default_rng(0)
    labels = np.repeat([0, 1], 20)
    shifted = rng.normal(size=40) + 3 * (labels == 0) * 3
    other = rng.normal(size=40)
    prof = cluster_profile(labels, {"shifted": shifted, "other": other})
    sig = prof.significant()
    assert [c.feature for c in sig] == ["shifted"]
    assert sig[0].U <= 5
    rows = prof.table()
    assert [r["feature"] for r in rows] == ["shifted", "other"]
    assert set(rows[0]) == {"feature", "cluster_0", "cluster_1"}


def test_profile_null_calibration():
    flagged = total = 0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        labels = np.repeat([0, 1], 25)
        feats = {f"f{j}": rng.normal(size=50) for j in range(10)}
        prof = cluster_profile(labels, feats)
        flagged += len(prof.significant())
        total += len(prof.comparisons)
    assert flagged / total <= 0.10


def test_profile_skips_tiny_clusters():
    labels = np.array([0, 0, 0, 0, 1, 1])
    prof = cluster_profile(labels, {"x": np.arange(6.0)})
    assert prof.comparisons == [] and len(prof.skipped) == 1
    assert prof.sizes == {0: 4, 1: 2}
