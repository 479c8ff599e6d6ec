import numpy as np
import pytest

from biosession.session import (BehavioralRecord, ClinicalProfile, ParticipantMeta,
                                PhaseAnnotation, Session, SignalTrace)
from biosession.synth import SynthSpec, gen_session


def make_session(traces=None, phases=None, duration_s=600.0, behavior=None, clinical=None,
                 subject="S01", index=1, age=150, sex="F"):
    if traces is None:
        traces = [SignalTrace("HR", 1.0, np.full(int(duration_s), 80.0))]
    if phases is None:
        phases = [PhaseAnnotation("Baseline", 0, 119), PhaseAnnotation("Coin", 119, duration_s)]
    return Session(meta=ParticipantMeta(subject, age, sex), session_index=index,
                   duration_s=duration_s, traces=traces, phases=phases,
                   clinical=clinical, behavior=behavior)


@pytest.fixture
def clinical():
    return ClinicalProfile(7, 14, 10, 98.0, 101.0, 104.0, 92.0, 88.0)


@pytest.fixture
def behavior():
    counts = {
        "SO_Peers": {"Spontaneous": 12, "Suggested": 2, "Indicated": 1, "Prompted": 3},
        "SR_Peers": {"Spontaneous": 5, "Suggested": 0, "Indicated": 0, "Prompted": 0},
        "SO_Therapist": {"Spontaneous": 3},
        "SR_Therapist": {"Spontaneous": 4, "Suggested": 1, "Indicated": 2, "Prompted": 3},
    }
    return BehavioralRecord(counts=counts, duration_min=30.0,
                            likert={"Involvement": 5, "VS_Diff": 2})


@pytest.fixture(scope="session")
def short_synthetic():
    """A 300 s synthetic session at 32 Hz, cheap enough for many tests."""
    spec = SynthSpec(seed=3, duration_s=300.0, rate_hz=32.0, gap_count=1, session_index=3)
    return gen_session(spec)


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory):
    """Twelve short sessions on disk; sessions 6 and 12 each lose 60% of one channel."""
    from biosession.synth import gen_corpus, write_corpus
    d = tmp_path_factory.mktemp("corpus")
    corpus = gen_corpus(12, seed=4, duration_s=400.0, rate_hz=8.0, drop_every=6)
    write_corpus(d, corpus, seed=4)
    return d, corpus


# Acceptance outcomes, filled by tests/test_acceptance.py and echoed after the run.
ACCEPTANCE: dict[int, tuple[str, str, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        status, title, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d} {status}: {title} ({detail})")
