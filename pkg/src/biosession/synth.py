"""Synthetic sessions and datasets with known ground truth.

Sessions mimic the device export: HR, RR and BF channels at 128 Hz with
annotated phases, optional sensor gaps and a behavioural record.  The
planted parameters are returned alongside so extractors can be checked
against them.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import SpecError
from .session import (ACTIVITY_PHASES, BEHAVIOR_RATE_KEYS, DEFAULT_LIKERT_MAX, LIKERT_FEATURES,
                      BehavioralRecord, ClinicalProfile, Condition, ParticipantMeta,
                      PhaseAnnotation, PhaseLabel, Session, SignalKind, SignalTrace,
                      serialize_session)


@dataclass(frozen=True)
class SynthSpec:
    seed: int = 0
    duration_s: float = 600.0
    baseline_s: float = 119.0
    rate_hz: float = 128.0
    hr_mean: float = 90.0  # bpm
    hr_sd: float = 4.0
    rr_mean: float = 750.0  # ms
    rr_sdnn: float = 50.0
    rr_rmssd: float = 25.0
    bf_rate: float = 15.0  # breaths/min
    bf_amplitude: float = 1.0
    bf_noise_sd: float = 0.1
    gap_count: int = 0
    gap_mean_s: float = 10.0
    # kind -> fraction of the recording lost in one contiguous outage after baseline
    outages: dict = field(default_factory=dict)
    # (label, start_s, end_s) activity phases; derived from session_index when empty
    scenarios: tuple = ()
    subject_id: str = "SYN001"
    age_months: int = 140
    sex: str = "M"
    session_index: int = 1
    with_behavior: bool = True
    with_clinical: bool = True
    decimals: int = 4

    def validate(self):
        if not self.duration_s > self.baseline_s > 0:
            raise SpecError("need duration_s > baseline_s > 0")
        for name in ("rate_hz", "hr_mean", "rr_mean", "rr_sdnn", "rr_rmssd", "bf_rate"):
            if not getattr(self, name) > 0:
                raise SpecError(f"{name} must be positive")
        if self.hr_sd < 0 or self.bf_noise_sd < 0 or self.bf_amplitude < 0:
            raise SpecError("spreads and amplitudes must be non-negative")
        if not 0 < self.rr_rmssd ** 2 / (2 * self.rr_sdnn ** 2) < 2:
            raise SpecError("rr_rmssd / rr_sdnn must lie in (0, 2) for a stationary AR(1)")
        if self.gap_count < 0 or self.gap_mean_s <= 0:
            raise SpecError("gap_count must be >= 0 and gap_mean_s > 0")
        room = self.duration_s - self.baseline_s
        for kind, frac in self.outages.items():
            SignalKind(kind)
            if not 0 <= frac * self.duration_s <= room:
                raise SpecError(f"outage fraction {frac} for {kind} does not fit after baseline")
        if self.session_index not in (1, 2, 3):
            raise SpecError("session_index must be 1, 2 or 3")


@dataclass
class GroundTruth:
    subject_id: str
    session_index: int
    seed: int
    sdnn: float  # realized SDNN of the activity-window beats, ms
    rmssd: float  # realized RMSSD of the same beats, ms
    ar_phi: float
    breathing_rate_per_min: float
    breathing_hz: float
    hr_mean: float
    gaps: list[tuple[float, float]]
    missing_ratio: dict[str, float]
    planted_drop: list[str]

    def to_dict(self) -> dict:
        return asdict(self)


# ---------------------------------------------------------------------------

def ar1_coefficient(sdnn: float, rmssd: float) -> float:
    """AR(1) weight whose stationary process has the given SDNN and RMSSD.

    For x_k = phi x_{k-1} + e_k with variance s^2, successive differences have
    mean square 2 s^2 (1 - phi), hence phi = 1 - rmssd^2 / (2 sdnn^2).
    """
    return 1.0 - rmssd ** 2 / (2.0 * sdnn ** 2)


def _ar1(rng, n, phi, sd):
    e = rng.normal(0.0, sd * math.sqrt(1 - phi * phi), n)
    x = np.empty(n)
    x[0] = rng.normal(0.0, sd)
    for k in range(1, n):
        x[k] = phi * x[k - 1] + e[k]
    return x


def _rr_beats(rng, spec: SynthSpec):
    """Beat intervals (ms) and onset times (s) covering the recording.

    The AR(1) weight comes from :func:`ar1_coefficient`.  The realized
    deviations of the beats falling in the activity window (after the
    baseline) are then rescaled so their sample SD equals ``rr_sdnn``
    exactly.  Rescaling moves onsets, so the window membership is
    re-evaluated a few times; RMSSD matches only in expectation.
    """
    phi = ar1_coefficient(spec.rr_sdnn, spec.rr_rmssd)
    n_beats = int(spec.duration_s * 1000.0 / spec.rr_mean * 1.3) + 10
    dev = _ar1(rng, n_beats, phi, spec.rr_sdnn)
    rr = spec.rr_mean + dev
    for _ in range(5):
        onsets = np.concatenate([[0.0], np.cumsum(rr) / 1000.0])
        win = (onsets[:-1] >= spec.baseline_s) & (onsets[:-1] < spec.duration_s)
        seg = rr[win]
        if seg.size < 3:
            break
        scale = spec.rr_sdnn / seg.std(ddof=1)
        if abs(scale - 1.0) < 1e-12:
            break
        rr = spec.rr_mean + (rr - spec.rr_mean) * scale
        rr = np.maximum(rr, 200.0)
    onsets = np.concatenate([[0.0], np.cumsum(rr) / 1000.0])
    keep = int(np.searchsorted(onsets, spec.duration_s)) + 1
    return rr[:keep], onsets[:keep], phi


def default_scenarios(spec: SynthSpec):
    """Activity phases after the baseline: Coin, +Station, +Battle by session index."""
    labels = ACTIVITY_PHASES[: spec.session_index]
    edges = np.linspace(spec.baseline_s, spec.duration_s, len(labels) + 1)
    return tuple((lab.value, float(a), float(b)) for lab, a, b in zip(labels, edges[:-1], edges[1:]))


def _gaps(rng, spec: SynthSpec):
    gaps = []
    for _ in range(spec.gap_count):
        length = max(1.0, float(rng.exponential(spec.gap_mean_s)))
        lo, hi = spec.baseline_s, spec.duration_s - length
        if hi <= lo:
            continue
        start = float(rng.uniform(lo, hi))
        gaps.append((start, start + length))
    return sorted(gaps)


def _behavior(rng, duration_min, base_scale):
    counts = {}
    for feature in ("SO_Peers", "SR_Peers", "SR_Therapist"):
        sug = int(rng.poisson(0.15 * base_scale * duration_min))
        ind = int(rng.poisson(0.10 * base_scale * duration_min))
        counts[feature] = {
            Condition.SPONTANEOUS.value: int(rng.poisson(0.4 * base_scale * duration_min)),
            Condition.SUGGESTED.value: sug,
            Condition.INDICATED.value: ind,
            Condition.PROMPTED.value: sug + ind,
        }
    counts["SO_Therapist"] = {Condition.SPONTANEOUS.value: int(rng.poisson(0.1 * base_scale * duration_min))}
    likert = {f: int(rng.integers(0, DEFAULT_LIKERT_MAX[f] + 1)) for f in LIKERT_FEATURES}
    return BehavioralRecord(counts=counts, duration_min=duration_min, likert=likert,
                            likert_max=dict(DEFAULT_LIKERT_MAX))


def _clinical(rng):
    iq = float(np.round(rng.normal(100, 15), 1))
    return ClinicalProfile(
        ados_comparison=float(rng.integers(1, 11)),
        ados_total=float(rng.integers(4, 25)),
        ados_sa=float(rng.integers(3, 20)),
        iq=max(iq, 40.0),
        vci=float(np.round(rng.normal(100, 15), 1)),
        pri=float(np.round(rng.normal(105, 15), 1)),
        wmi=float(np.round(rng.normal(95, 15), 1)),
        psi=float(np.round(rng.normal(90, 15), 1)),
    )


def gen_session(spec: SynthSpec) -> tuple[Session, GroundTruth]:
    """Generate one session at ``spec.rate_hz`` and its ground truth."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    n = int(round(spec.duration_s * spec.rate_hz))
    t = np.arange(n) / spec.rate_hz

    # HR: smooth AR(1) at 1 Hz, linearly interpolated
    n_sec = int(math.ceil(spec.duration_s)) + 2
    hr_1hz = spec.hr_mean + _ar1(rng, n_sec, 0.9, spec.hr_sd) if spec.hr_sd > 0 else np.full(n_sec, spec.hr_mean)
    hr = np.interp(t, np.arange(n_sec), hr_1hz)

    # RR: beat-level AR(1) held constant over each beat
    rr_beats, onsets, phi = _rr_beats(rng, spec)
    beat_idx = np.clip(np.searchsorted(onsets, t, side="right") - 1, 0, rr_beats.size - 1)
    rr = rr_beats[beat_idx]
    in_act = (onsets[:-1] >= spec.baseline_s) & (onsets[:-1] < spec.duration_s)
    used = rr_beats[: onsets.size - 1][in_act]
    d = np.diff(used)

    # BF: breathing oscillation around the breathing rate, plus white noise
    f_b = spec.bf_rate / 60.0
    bf = (spec.bf_rate + spec.bf_amplitude * np.sin(2 * np.pi * f_b * t + rng.uniform(0, 2 * np.pi))
          + rng.normal(0.0, spec.bf_noise_sd, n))

    gaps = _gaps(rng, spec)
    base_valid = np.ones(n, dtype=bool)
    for a, b in gaps:
        base_valid[(t >= a) & (t < b)] = False

    traces, missing = [], {}
    for kind, values in ((SignalKind.HR, hr), (SignalKind.RR, rr), (SignalKind.BF, bf)):
        valid = base_valid.copy()
        frac = spec.outages.get(kind.value, 0.0)
        if frac > 0:
            a = spec.baseline_s
            valid[(t >= a) & (t < a + frac * spec.duration_s)] = False
        traces.append(SignalTrace(kind=kind, rate_hz=spec.rate_hz,
                                  samples=np.round(values, spec.decimals), valid=valid, t0=0.0))
        missing[kind.value] = float(1 - valid.mean())

    scen = spec.scenarios or default_scenarios(spec)
    phases = [PhaseAnnotation(PhaseLabel.BASELINE, 0.0, spec.baseline_s)]
    phases += [PhaseAnnotation(PhaseLabel(lab), a, b) for lab, a, b in scen]
    activity_min = sum(b - a for _, a, b in scen) / 60.0

    behavior = _behavior(rng, round(activity_min, 4), rng.uniform(0.6, 1.6)) if spec.with_behavior else None
    clinical = _clinical(rng) if spec.with_clinical else None
    session = Session(
        meta=ParticipantMeta(spec.subject_id, spec.age_months, spec.sex),
        session_index=spec.session_index, duration_s=float(spec.duration_s),
        traces=traces, phases=phases, clinical=clinical, behavior=behavior)
    truth = GroundTruth(
        subject_id=spec.subject_id, session_index=spec.session_index, seed=spec.seed,
        sdnn=float(np.std(used, ddof=1)), rmssd=float(np.sqrt(np.mean(d * d))), ar_phi=phi,
        breathing_rate_per_min=spec.bf_rate, breathing_hz=f_b, hr_mean=spec.hr_mean,
        gaps=gaps, missing_ratio=missing,
        planted_drop=sorted(k for k, r in missing.items() if r > 0.5))
    return session, truth


def gen_corpus(n_sessions: int = 30, seed: int = 0, duration_s: float = 600.0,
               rate_hz: float = 128.0, drop_every: int = 10, gap_count: int = 1):
    """A corpus of sessions from ceil(n/3) subjects with 1..3 sessions each.

    Every ``drop_every``-th session loses 60% of one channel in a single
    outage, so the missing-data exclusion rule has something to catch.
    """
    rng = np.random.default_rng(seed)
    out = []
    n_subjects = math.ceil(n_sessions / 3)
    subj = []
    for s in range(n_subjects):
        subj.append(dict(
            subject_id=f"SYN{s + 1:03d}",
            age_months=int(rng.integers(96, 216)),
            sex=str(rng.choice(["M", "F"])),
            hr_mean=float(rng.uniform(75, 105)),
            rr_mean=float(rng.uniform(600, 850)),
            rr_sdnn=float(rng.uniform(35, 70)),
            bf_rate=float(rng.uniform(12, 20)),
        ))
    kinds = ("BF", "HR", "RR")
    for i in range(n_sessions):
        base = subj[i % n_subjects]
        idx = i // n_subjects + 1
        outages = {}
        if drop_every and (i + 1) % drop_every == 0:
            outages[kinds[(i // drop_every) % 3]] = 0.6
        spec = SynthSpec(
            seed=int(rng.integers(2 ** 31)), duration_s=duration_s, rate_hz=rate_hz,
            hr_mean=base["hr_mean"], hr_sd=float(rng.uniform(2, 6)),
            rr_mean=base["rr_mean"], rr_sdnn=base["rr_sdnn"], rr_rmssd=0.5 * base["rr_sdnn"],
            bf_rate=base["bf_rate"], gap_count=gap_count, outages=outages,
            subject_id=base["subject_id"], age_months=base["age_months"], sex=base["sex"],
            session_index=min(idx, 3))
        out.append(gen_session(spec))
    return out


def session_filename(s: Session) -> str:
    return f"{s.meta.subject_id}_s{s.session_index}.json"


def write_corpus(directory, corpus, seed: int | None = None) -> Path:
    """Write session files plus ``manifest.json`` with the ground truth."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    entries = []
    for session, truth in corpus:
        name = session_filename(session)
        (d / name).write_text(serialize_session(session), encoding="utf-8")
        entries.append({"file": name, "truth": truth.to_dict()})
    manifest = {"generator": "biosession.synth", "seed": seed, "sessions": entries}
    path = d / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True), encoding="utf-8")
    return path


# ---------------------------------------------------------------------------

@dataclass
class GlmDataset:
    y: np.ndarray
    X: np.ndarray
    beta: np.ndarray
    family: str
    shape: float | None = None


def gen_glm_dataset(family: str, beta, n: int, seed: int, shape: float = 5.0) -> GlmDataset:
    """Standardized normal predictors and a log-link Poisson or Gamma response.

    ``beta[0]`` is the intercept; the remaining entries pair with the columns
    of ``X``.  Gamma responses have the given shape and mean exp(X beta).
    """
    beta = np.asarray(beta, dtype=float)
    family = family.lower()
    if family not in ("poisson", "gamma"):
        raise SpecError(f"unknown family {family!r}")
    if n < 10 * beta.size:
        raise SpecError(f"n={n} is below 10 x {beta.size} coefficients")
    if family == "gamma" and not shape > 0:
        raise SpecError("Gamma shape must be positive")
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, beta.size - 1))
    if X.shape[1]:
        X = (X - X.mean(axis=0)) / X.std(axis=0, ddof=1)
    mu = np.exp(beta[0] + X @ beta[1:])
    if family == "poisson":
        y = rng.poisson(mu).astype(float)
    else:
        y = rng.gamma(shape, mu / shape)
    return GlmDataset(y=y, X=X, beta=beta, family=family,
                      shape=shape if family == "gamma" else None)


def gen_blobs(k: int, n_per: int, separation: float, dim: int = 2, seed: int = 0):
    """Isotropic unit-variance Gaussian blobs.

    With ``dim >= k`` blob ``i`` is centred at ``separation / sqrt(2) * e_i``,
    so every pair of centroids is ``separation`` apart.  With ``2 <= dim < k``
    the centroids are the vertices of a regular k-gon of side ``separation``
    in the first two axes.  Both layouts have isotropic centroid spread, so
    the geometry survives per-column standardization.  In one dimension the
    centroids sit ``separation`` apart along the axis.
    """
    if k < 1 or n_per < 1 or dim < 1:
        raise SpecError("k, n_per and dim must be >= 1")
    if separation < 0:
        raise SpecError("separation must be >= 0")
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(k * n_per, dim))
    labels = np.repeat(np.arange(k), n_per)
    if dim >= k:
        X[np.arange(X.shape[0]), labels] += separation / np.sqrt(2.0)
    elif dim >= 2:
        radius = separation / (2.0 * np.sin(np.pi / k))
        angle = 2.0 * np.pi * labels / k
        X[:, 0] += radius * np.cos(angle)
        X[:, 1] += radius * np.sin(angle)
    else:
        X[:, 0] += labels * separation
    return X, labels


def with_seed(spec: SynthSpec, seed: int) -> SynthSpec:
    return replace(spec, seed=seed)
