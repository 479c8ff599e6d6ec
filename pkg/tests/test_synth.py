import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from biosession.clustering import kmeans, silhouette
from biosession.errors import SpecError
from biosession.features import session_features
from biosession.preprocess import missing_ratio, run_preprocess
from biosession.session import parse_session, serialize_session, validate_session
from biosession.stats import fit_glm
from biosession.synth import (SynthSpec, ar1_coefficient, gen_blobs, gen_corpus, gen_glm_dataset,
                              gen_session, session_filename, write_corpus)


def small(**kw):
    base = dict(duration_s=300.0, rate_hz=8.0)
    base.update(kw)
    return SynthSpec(**base)


def test_no_gaps_no_missing():
    s, truth = gen_session(small(seed=1, gap_count=0))
    assert all(missing_ratio(t) == 0.0 for t in s.traces)
    assert truth.gaps == [] and all(v == 0 for v in truth.missing_ratio.values())


def test_session_shape_and_validity():
    s, truth = gen_session(small(seed=2, gap_count=2, session_index=3))
    assert {t.kind.value for t in s.traces} == {"HR", "RR", "BF"}
    assert all(t.rate_hz == 8.0 for t in s.traces)
    assert [p.label.value for p in s.phases] == ["Baseline", "Coin", "Station", "Battle"]
    assert s.phases[0].end_s == 119.0
    assert validate_session(s).passed
    assert s.behavior is not None and s.clinical is not None


def test_gaps_avoid_baseline():
    for seed in range(10):
        _, truth = gen_session(small(seed=seed, gap_count=3))
        assert all(a >= 119.0 for a, _ in truth.gaps)


def test_ar1_coefficient_closed_form():
    phi = ar1_coefficient(50.0, 25.0)
    assert phi == pytest.approx(0.875)
    rng = np.random.default_rng(0)
    x = np.empty(200_000)
    x[0] = 0
    e = rng.normal(0, 50 * np.sqrt(1 - phi ** 2), x.size)
    for k in range(1, x.size):
        x[k] = phi * x[k - 1] + e[k]
    assert np.std(x) == pytest.approx(50, rel=0.02)
    assert np.sqrt(np.mean(np.diff(x) ** 2)) == pytest.approx(25, rel=0.02)


def test_planted_sdnn_is_exact():
    _, truth = gen_session(small(seed=4))
    assert truth.sdnn == pytest.approx(50.0, rel=1e-9)


def test_planted_sdnn_recovered_over_seeds():
    ok = 0
    for seed in range(50):
        s, _ = gen_session(SynthSpec(seed=seed, duration_s=300.0, rate_hz=8.0))
        fv = session_features(run_preprocess(s).physical)[0]
        ok += 45 <= fv.values["rr_sdnn"] <= 55
    assert ok >= 48


def test_planted_breathing_in_raw_bf():
    s, truth = gen_session(small(seed=5, rate_hz=16.0, duration_s=600.0))
    bf = s.trace("BF")
    x = bf.samples - bf.samples.mean()
    f = np.fft.rfftfreq(x.size, 1 / bf.rate_hz)
    peak = f[np.argmax(np.abs(np.fft.rfft(x)))]
    assert peak == pytest.approx(truth.breathing_hz, abs=1 / 600)
    assert truth.breathing_rate_per_min == 15.0


def test_outage_produces_drop():
    s, truth = gen_session(small(seed=6, outages={"HR": 0.6}))
    assert missing_ratio(s.trace("HR")) > 0.5
    assert truth.planted_drop == ["HR"]


@pytest.mark.parametrize("bad", [
    dict(duration_s=100.0),
    dict(rr_sdnn=-1.0),
    dict(rr_rmssd=200.0),
    dict(gap_count=-1),
    dict(outages={"BF": 0.95}),
    dict(session_index=4),
])
def test_invalid_specs(bad):
    with pytest.raises(SpecError):
        gen_session(small(**bad))


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 2 ** 31 - 1), gaps=st.integers(0, 3))
def test_deterministic_bytes(seed, gaps):
    spec = small(seed=seed, gap_count=gaps, duration_s=200.0, rate_hz=4.0)
    a, _ = gen_session(spec)
    b, _ = gen_session(spec)
    assert serialize_session(a) == serialize_session(b)
    assert parse_session(serialize_session(a)) == a


def test_corpus_layout(tmp_path):
    corpus = gen_corpus(7, seed=1, duration_s=400.0, rate_hz=4.0, drop_every=3)
    keys = [(s.meta.subject_id, s.session_index) for s, _ in corpus]
    assert len(set(keys)) == 7
    assert {k[0] for k in keys} == {"SYN001", "SYN002", "SYN003"}
    dropped = [t for _, t in corpus if t.planted_drop]
    assert len(dropped) == 2
    write_corpus(tmp_path, corpus, seed=1)
    names = sorted(p.name for p in tmp_path.iterdir())
    assert "manifest.json" in names
    assert sorted(session_filename(s) for s, _ in corpus) == [n for n in names if n != "manifest.json"]
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["seed"] == 1 and len(manifest["sessions"]) == 7


# --- GLM datasets -----------------------------------------------------------------

def test_glm_dataset_null_truth():
    ds = gen_glm_dataset("poisson", (1.0, 0.0, 0.0), n=300, seed=0)
    fit = fit_glm(ds.y, ds.X, family="poisson")
    assert np.all(np.abs(fit.coef - ds.beta) <= 3 * fit.se)


def test_glm_dataset_standardized_and_checked():
    ds = gen_glm_dataset("gamma", (0.5, 0.3, -0.2), n=500, seed=1)
    np.testing.assert_allclose(ds.X.mean(0), 0, atol=1e-12)
    np.testing.assert_allclose(ds.X.std(0, ddof=1), 1, atol=1e-12)
    assert np.all(ds.y > 0)
    with pytest.raises(SpecError):
        gen_glm_dataset("poisson", (0.5, 0.3, -0.2), n=29, seed=0)


# --- blobs ----------------------------------------------------------------------

def test_blobs_single():
    _, labels = gen_blobs(1, 20, separation=5.0)
    assert np.all(labels == 0)


def test_blobs_recovered_by_kmeans():
    X, labels = gen_blobs(3, 30, separation=10.0, seed=2)
    fit = kmeans(X, 3)
    assert len(set(zip(fit.labels.tolist(), labels.tolist()))) == 3


def test_blobs_centroid_spacing():
    X, labels = gen_blobs(3, 4000, separation=10.0, dim=3, seed=0)
    C = np.array([X[labels == c].mean(0) for c in range(3)])
    d = np.linalg.norm(C[:, None] - C[None], axis=-1)[np.triu_indices(3, 1)]
    np.testing.assert_allclose(d, 10.0, atol=0.2)


def test_blobs_zero_separation():
    X, labels = gen_blobs(3, 50, separation=0.0, seed=3)
    assert abs(silhouette(X, labels)) < 0.05


def test_blobs_bad_input():
    with pytest.raises(SpecError):
        gen_blobs(0, 10, 1.0)


def test_blobs_polygon_layout_in_two_dimensions():
    X, labels = gen_blobs(5, 4000, separation=6.0, dim=2, seed=1)
    C = np.array([X[labels == c].mean(0) for c in range(5)])
    side = np.linalg.norm(C - np.roll(C, 1, axis=0), axis=1)
    np.testing.assert_allclose(side, 6.0, atol=0.15)
    cov = np.cov(C.T, bias=True)
    assert abs(cov[0, 0] - cov[1, 1]) < 0.1 * cov[0, 0]
