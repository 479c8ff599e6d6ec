"""Session data model, JSON schema (``biosession/1``) and validation.

A session file holds one VR sitting of one participant::

    {
      "schema": "biosession/1",
      "meta": {"subject_id": "S01", "age_months": 150, "sex": "F",
               "session_index": 1, "duration_s": 1800.0},
      "clinical": {"ados_comparison": 7, ..., "psi": 88},       # optional
      "phases": [{"label": "Baseline", "start_s": 0, "end_s": 119}, ...],
      "signals": [{"kind": "HR", "rate_hz": 128, "t0": 0.0,
                   "samples": [...], "valid": [...]}],            # valid optional
      "behavior": {"duration_min": 29.5,                          # optional
                   "counts": {"SO_Peers": {"Spontaneous": 4, ...}, ...},
                   "likert": {"Involvement": 5, ...},
                   "likert_max": {"Involvement": 5}}
    }

Unknown keys are ignored.  Invalid samples are flagged through ``valid``
instead of sentinel values; their numeric value is carried but never used.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field
from typing import Any, Mapping

import numpy as np

from .errors import InvariantError, NotFound, SchemaError, ZeroDuration

SCHEMA_TAG = "biosession/1"
ADOLESCENT_MONTHS = 156
MISSING_EXCLUSION_RATIO = 0.5


class SignalKind(str, enum.Enum):
    HR = "HR"  # beats/min
    RR = "RR"  # ms
    BF = "BF"  # breaths/min


class PhaseLabel(str, enum.Enum):
    BASELINE = "Baseline"
    COIN = "Coin"
    STATION = "Station"
    BATTLE = "Battle"


ACTIVITY_PHASES = (PhaseLabel.COIN, PhaseLabel.STATION, PhaseLabel.BATTLE)


class Sex(str, enum.Enum):
    M = "M"
    F = "F"


class AgeGroup(str, enum.Enum):
    PRE_ADOLESCENT = "PreAdolescent"
    ADOLESCENT = "Adolescent"


class Condition(str, enum.Enum):
    SPONTANEOUS = "Spontaneous"
    SUGGESTED = "Suggested"
    INDICATED = "Indicated"
    PROMPTED = "Prompted"


SOCIAL_FEATURES = ("SO_Peers", "SR_Peers", "SO_Therapist", "SR_Therapist")
SPONTANEOUS_ONLY = ("SO_Therapist",)
LIKERT_FEATURES = ("Adaptation_Diff", "VS_Diff", "Involvement", "Relation_PP", "Instructions")
DEFAULT_LIKERT_MAX = {
    "Adaptation_Diff": 4,
    "VS_Diff": 4,
    "Involvement": 5,
    "Relation_PP": 5,
    "Instructions": 5,
}
LIKERT_CEILING = 5


def _conditions_for(feature: str) -> tuple[Condition, ...]:
    if feature in SPONTANEOUS_ONLY:
        return (Condition.SPONTANEOUS,)
    return tuple(Condition)


#: The 13 social-interaction rates, in export order.
BEHAVIOR_RATE_KEYS: tuple[tuple[str, Condition], ...] = tuple(
    (f, c) for f in SOCIAL_FEATURES for c in _conditions_for(f)
)


def rate_column(feature: str, condition: Condition | str) -> str:
    return f"{feature}_{Condition(condition).value}"


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------

def _frozen_array(values, dtype) -> np.ndarray:
    arr = np.array(values, dtype=dtype, copy=True).reshape(-1)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class SignalTrace:
    """Uniform-rate series with a per-sample validity mask.

    ``t0`` is the session time (s) of the first sample; sample ``i`` sits at
    ``t0 + i / rate_hz``.
    """

    kind: SignalKind
    rate_hz: float
    samples: np.ndarray
    valid: np.ndarray = None
    t0: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "kind", SignalKind(self.kind))
        object.__setattr__(self, "rate_hz", float(self.rate_hz))
        object.__setattr__(self, "t0", float(self.t0))
        samples = _frozen_array(self.samples, float)
        object.__setattr__(self, "samples", samples)
        if self.valid is None:
            valid = np.ones(samples.size, dtype=bool)
        else:
            valid = np.array(self.valid, dtype=bool).reshape(-1)
        valid.flags.writeable = False
        object.__setattr__(self, "valid", valid)

    def __len__(self):
        return self.samples.size

    def __eq__(self, other):
        if not isinstance(other, SignalTrace):
            return NotImplemented
        return (
            self.kind == other.kind
            and self.rate_hz == other.rate_hz
            and self.t0 == other.t0
            and np.array_equal(self.samples, other.samples)
            and np.array_equal(self.valid, other.valid)
        )

    __hash__ = None

    @property
    def duration_s(self) -> float:
        return self.samples.size / self.rate_hz

    @property
    def times(self) -> np.ndarray:
        return self.t0 + np.arange(self.samples.size) / self.rate_hz

    @property
    def n_invalid(self) -> int:
        return int(self.samples.size - np.count_nonzero(self.valid))

    def replace(self, **changes) -> "SignalTrace":
        kw = dict(kind=self.kind, rate_hz=self.rate_hz, samples=self.samples,
                  valid=self.valid, t0=self.t0)
        kw.update(changes)
        return SignalTrace(**kw)


@dataclass(frozen=True)
class PhaseAnnotation:
    label: PhaseLabel
    start_s: float
    end_s: float

    def __post_init__(self):
        object.__setattr__(self, "label", PhaseLabel(self.label))
        object.__setattr__(self, "start_s", float(self.start_s))
        object.__setattr__(self, "end_s", float(self.end_s))

    @property
    def duration_s(self) -> float:
        return self.end_s - self.start_s


def age_group(age_months: int) -> AgeGroup:
    return AgeGroup.ADOLESCENT if age_months >= ADOLESCENT_MONTHS else AgeGroup.PRE_ADOLESCENT


@dataclass(frozen=True)
class ParticipantMeta:
    subject_id: str
    age_months: int
    sex: Sex

    def __post_init__(self):
        object.__setattr__(self, "sex", Sex(self.sex))

    @property
    def age_group(self) -> AgeGroup:
        return age_group(self.age_months)


CLINICAL_FIELDS = ("ados_comparison", "ados_total", "ados_sa", "iq", "vci", "pri", "wmi", "psi")


@dataclass(frozen=True)
class ClinicalProfile:
    ados_comparison: float
    ados_total: float
    ados_sa: float
    iq: float
    vci: float
    pri: float
    wmi: float
    psi: float

    def as_dict(self) -> dict[str, float]:
        return {f: getattr(self, f) for f in CLINICAL_FIELDS}


@dataclass(frozen=True)
class BehavioralRecord:
    """Observation-form counts, Likert ratings and activity duration.

    ``counts[feature][condition]`` are raw occurrence counts; Prompted is the
    sum of Suggested and Indicated.
    """

    counts: Mapping[str, Mapping[str, int]]
    duration_min: float
    likert: Mapping[str, int] = field(default_factory=dict)
    likert_max: Mapping[str, int] = field(default_factory=lambda: dict(DEFAULT_LIKERT_MAX))

    def count(self, feature: str, condition: Condition | str) -> int:
        return int(self.counts.get(feature, {}).get(Condition(condition).value, 0))


@dataclass(frozen=True)
class Session:
    meta: ParticipantMeta
    session_index: int
    duration_s: float
    traces: tuple[SignalTrace, ...] = ()
    phases: tuple[PhaseAnnotation, ...] = ()
    clinical: ClinicalProfile | None = None
    behavior: BehavioralRecord | None = None

    def __post_init__(self):
        object.__setattr__(self, "traces", tuple(self.traces))
        object.__setattr__(self, "phases", tuple(self.phases))

    @property
    def key(self) -> tuple[str, int]:
        return (self.meta.subject_id, self.session_index)

    def has_trace(self, kind) -> bool:
        kind = SignalKind(kind)
        return any(t.kind == kind for t in self.traces)

    def trace(self, kind) -> SignalTrace:
        kind = SignalKind(kind)
        for t in self.traces:
            if t.kind == kind:
                return t
        raise NotFound(f"session {self.key}: no {kind.value} trace")

    def phase(self, label) -> PhaseAnnotation:
        label = PhaseLabel(label)
        for p in self.phases:
            if p.label == label:
                return p
        raise NotFound(f"session {self.key}: no {label.value} phase")

    def activity_phases(self) -> list[PhaseAnnotation]:
        return sorted((p for p in self.phases if p.label != PhaseLabel.BASELINE),
                      key=lambda p: p.start_s)

    def with_traces(self, traces) -> "Session":
        return Session(meta=self.meta, session_index=self.session_index,
                       duration_s=self.duration_s, traces=tuple(traces),
                       phases=self.phases, clinical=self.clinical, behavior=self.behavior)


# ---------------------------------------------------------------------------
# Invariants
# ---------------------------------------------------------------------------

def session_problems(s: Session) -> list[str]:
    """Return every hard-invariant violation of ``s`` (empty when valid)."""
    out = []
    if s.session_index not in (1, 2, 3):
        out.append(f"meta.session_index: {s.session_index} not in 1..3")
    if not (math.isfinite(s.duration_s) and s.duration_s > 0):
        out.append(f"meta.duration_s: must be > 0, got {s.duration_s}")
    if s.meta.age_months < 0:
        out.append(f"meta.age_months: negative ({s.meta.age_months})")

    seen = set()
    for i, t in enumerate(s.traces):
        path = f"signals[{i}]"
        if t.kind in seen:
            out.append(f"{path}.kind: duplicate {t.kind.value} trace")
        seen.add(t.kind)
        if t.samples.size < 1:
            out.append(f"{path}.samples: empty")
        if t.valid.size != t.samples.size:
            out.append(f"{path}.valid: length {t.valid.size} != samples length {t.samples.size}")
        elif not np.all(np.isfinite(t.samples[t.valid])):
            out.append(f"{path}.samples: non-finite value at a valid position")
        if not (math.isfinite(t.rate_hz) and t.rate_hz > 0):
            out.append(f"{path}.rate_hz: must be > 0, got {t.rate_hz}")
        if not math.isfinite(t.t0):
            out.append(f"{path}.t0: not finite")

    phases = sorted(s.phases, key=lambda p: p.start_s)
    for i, p in enumerate(s.phases):
        if not (0 <= p.start_s < p.end_s <= s.duration_s):
            out.append(f"phases[{i}]: need 0 <= start_s < end_s <= duration_s, "
                       f"got [{p.start_s}, {p.end_s}] with duration {s.duration_s}")
    for a, b in zip(phases, phases[1:]):
        if b.start_s < a.end_s:
            out.append(f"phases: {a.label.value} [{a.start_s}, {a.end_s}] overlaps "
                       f"{b.label.value} [{b.start_s}, {b.end_s}]")
    if sum(p.label == PhaseLabel.BASELINE for p in s.phases) > 1:
        out.append("phases: more than one Baseline phase")

    if s.clinical is not None:
        for name, v in s.clinical.as_dict().items():
            if not math.isfinite(v):
                out.append(f"clinical.{name}: not finite")
        if s.clinical.iq < 0:
            out.append("clinical.iq: negative")

    if s.behavior is not None:
        out.extend(_behavior_problems(s.behavior))
    return out


def _behavior_problems(b: BehavioralRecord) -> list[str]:
    out = []
    if not (math.isfinite(b.duration_min) and b.duration_min > 0):
        out.append(f"behavior.duration_min: must be > 0, got {b.duration_min}")
    for feature, by_cond in b.counts.items():
        path = f"behavior.counts.{feature}"
        if feature not in SOCIAL_FEATURES:
            out.append(f"{path}: unknown feature")
            continue
        allowed = {c.value for c in _conditions_for(feature)}
        for cond, n in by_cond.items():
            if cond not in allowed:
                out.append(f"{path}.{cond}: condition not allowed for {feature}")
            elif n < 0:
                out.append(f"{path}.{cond}: negative count")
        if feature not in SPONTANEOUS_ONLY:
            sug, ind, pro = (by_cond.get(c.value) for c in
                             (Condition.SUGGESTED, Condition.INDICATED, Condition.PROMPTED))
            if None not in (sug, ind, pro) and pro != sug + ind:
                out.append(f"{path}.Prompted: {pro} != Suggested {sug} + Indicated {ind}")
    for name, v in b.likert.items():
        top = b.likert_max.get(name, LIKERT_CEILING)
        if not 0 <= top <= LIKERT_CEILING:
            out.append(f"behavior.likert_max.{name}: {top} outside 0..{LIKERT_CEILING}")
        if not 0 <= v <= top:
            out.append(f"behavior.likert.{name}: {v} outside 0..{top}")
    return out


# ---------------------------------------------------------------------------
# Parsing / serialization
# ---------------------------------------------------------------------------

_MISSING = object()


def _get(obj: Mapping, key: str, path: str, kind, required=True, default=None):
    if not isinstance(obj, Mapping):
        raise SchemaError(f"{path}: expected object")
    if key not in obj or obj[key] is None:
        if required:
            raise SchemaError(f"{path}.{key}: required field missing")
        return default
    value = obj[key]
    where = f"{path}.{key}" if path else key
    if kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise SchemaError(f"{where}: expected number, got {type(value).__name__}")
        return float(value)
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, (int, float)) or value != int(value):
            raise SchemaError(f"{where}: expected integer, got {value!r}")
        return int(value)
    if kind is str:
        if not isinstance(value, str):
            raise SchemaError(f"{where}: expected string, got {type(value).__name__}")
        return value
    if kind is list:
        if not isinstance(value, list):
            raise SchemaError(f"{where}: expected array")
        return value
    if kind is dict:
        if not isinstance(value, Mapping):
            raise SchemaError(f"{where}: expected object")
        return value
    raise TypeError(kind)


def _enum(enum_cls, value, where):
    try:
        return enum_cls(value)
    except ValueError:
        allowed = ", ".join(e.value for e in enum_cls)
        raise SchemaError(f"{where}: {value!r} not one of {allowed}") from None


def _parse_trace(obj, path) -> SignalTrace:
    kind = _enum(SignalKind, _get(obj, "kind", path, str), f"{path}.kind")
    rate = _get(obj, "rate_hz", path, float)
    t0 = _get(obj, "t0", path, float, required=False, default=0.0)
    raw = _get(obj, "samples", path, list)
    samples = np.empty(len(raw))
    null_mask = np.zeros(len(raw), dtype=bool)
    for i, v in enumerate(raw):
        if v is None:
            null_mask[i] = True
            samples[i] = 0.0
        elif isinstance(v, bool) or not isinstance(v, (int, float)):
            raise SchemaError(f"{path}.samples[{i}]: expected number")
        else:
            samples[i] = v
    valid_raw = _get(obj, "valid", path, list, required=False)
    if valid_raw is None:
        valid = ~null_mask
    else:
        if any(not isinstance(v, bool) for v in valid_raw):
            raise SchemaError(f"{path}.valid: expected array of booleans")
        if len(valid_raw) != len(raw):
            raise InvariantError(f"{path}.valid: length {len(valid_raw)} != samples length {len(raw)}")
        valid = np.array(valid_raw, dtype=bool) & ~null_mask
    if samples.size == 0:
        raise InvariantError(f"{path}.samples: empty")
    return SignalTrace(kind=kind, rate_hz=rate, samples=samples, valid=valid, t0=t0)


def _parse_behavior(obj, path) -> BehavioralRecord:
    duration = _get(obj, "duration_min", path, float)
    counts_raw = _get(obj, "counts", path, dict, required=False, default={})
    counts: dict[str, dict[str, int]] = {}
    for feature, by_cond in counts_raw.items():
        fpath = f"{path}.counts.{feature}"
        if not isinstance(by_cond, Mapping):
            raise SchemaError(f"{fpath}: expected object")
        entry = {}
        for cond in by_cond:
            _enum(Condition, cond, f"{fpath}.{cond}")
            entry[cond] = _get(by_cond, cond, fpath, int)
        if feature not in SPONTANEOUS_ONLY and Condition.PROMPTED.value not in entry:
            s, i = entry.get(Condition.SUGGESTED.value), entry.get(Condition.INDICATED.value)
            if s is not None and i is not None:
                entry[Condition.PROMPTED.value] = s + i
        counts[feature] = entry
    likert_raw = _get(obj, "likert", path, dict, required=False, default={})
    likert = {k: _get(likert_raw, k, f"{path}.likert", int) for k in likert_raw}
    max_raw = _get(obj, "likert_max", path, dict, required=False, default={})
    likert_max = dict(DEFAULT_LIKERT_MAX)
    likert_max.update({k: _get(max_raw, k, f"{path}.likert_max", int) for k in max_raw})
    return BehavioralRecord(counts=counts, duration_min=duration, likert=likert,
                            likert_max=likert_max)


def session_from_dict(doc: Mapping[str, Any]) -> Session:
    if not isinstance(doc, Mapping):
        raise SchemaError("document: expected a JSON object")
    tag = _get(doc, "schema", "", str)
    if tag != SCHEMA_TAG:
        raise SchemaError(f"schema: unsupported tag {tag!r}, expected {SCHEMA_TAG!r}")
    m = _get(doc, "meta", "", dict)
    meta = ParticipantMeta(
        subject_id=_get(m, "subject_id", "meta", str),
        age_months=_get(m, "age_months", "meta", int),
        sex=_enum(Sex, _get(m, "sex", "meta", str), "meta.sex"),
    )
    session_index = _get(m, "session_index", "meta", int)
    duration_s = _get(m, "duration_s", "meta", float)

    clinical = None
    c = _get(doc, "clinical", "", dict, required=False)
    if c is not None:
        clinical = ClinicalProfile(**{f: _get(c, f, "clinical", float) for f in CLINICAL_FIELDS})

    phases = []
    for i, p in enumerate(_get(doc, "phases", "", list, required=False, default=[])):
        path = f"phases[{i}]"
        phases.append(PhaseAnnotation(
            label=_enum(PhaseLabel, _get(p, "label", path, str), f"{path}.label"),
            start_s=_get(p, "start_s", path, float),
            end_s=_get(p, "end_s", path, float),
        ))
    traces = [_parse_trace(t, f"signals[{i}]")
              for i, t in enumerate(_get(doc, "signals", "", list))]
    behavior = None
    b = _get(doc, "behavior", "", dict, required=False)
    if b is not None:
        behavior = _parse_behavior(b, "behavior")

    s = Session(meta=meta, session_index=session_index, duration_s=duration_s,
                traces=traces, phases=phases, clinical=clinical, behavior=behavior)
    problems = session_problems(s)
    if problems:
        raise InvariantError("; ".join(problems))
    return s


def parse_session(data: bytes | str) -> Session:
    """Parse and validate one UTF-8 JSON session document."""
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    try:
        doc = json.loads(data)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"document: invalid JSON ({exc})") from None
    return session_from_dict(doc)


def load_session(path) -> Session:
    with open(path, "rb") as fh:
        return parse_session(fh.read())


def session_to_dict(s: Session) -> dict[str, Any]:
    doc: dict[str, Any] = {
        "schema": SCHEMA_TAG,
        "meta": {
            "subject_id": s.meta.subject_id,
            "age_months": s.meta.age_months,
            "sex": s.meta.sex.value,
            "session_index": s.session_index,
            "duration_s": s.duration_s,
        },
    }
    if s.clinical is not None:
        doc["clinical"] = s.clinical.as_dict()
    doc["phases"] = [{"label": p.label.value, "start_s": p.start_s, "end_s": p.end_s}
                     for p in s.phases]
    signals = []
    for t in s.traces:
        entry = {"kind": t.kind.value, "rate_hz": t.rate_hz, "t0": t.t0,
                 "samples": t.samples.tolist()}
        if not t.valid.all():
            entry["valid"] = t.valid.tolist()
        signals.append(entry)
    doc["signals"] = signals
    if s.behavior is not None:
        b = s.behavior
        doc["behavior"] = {
            "duration_min": b.duration_min,
            "counts": {f: dict(c) for f, c in b.counts.items()},
            "likert": dict(b.likert),
            "likert_max": dict(b.likert_max),
        }
    return doc


def serialize_session(s: Session) -> str:
    return json.dumps(session_to_dict(s), separators=(",", ":"))


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------

@dataclass
class ValidationReport:
    passed: bool
    errors: list[str] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)


def validate_session(s: Session, missing_threshold: float = MISSING_EXCLUSION_RATIO) -> ValidationReport:
    """Check hard invariants and flag conditions that will hurt the pipeline."""
    errors = session_problems(s)
    warnings = []
    if not any(p.label == PhaseLabel.BASELINE for p in s.phases):
        warnings.append("no baseline: Baseline phase absent, baseline normalization impossible")
    for t in s.traces:
        if t.samples.size == 0 or t.valid.size != t.samples.size:
            continue
        ratio = t.n_invalid / t.samples.size
        if ratio > missing_threshold:
            warnings.append(
                f"{t.kind.value} trace: {ratio:.1%} of samples missing exceeds the "
                f"{missing_threshold:.0%} exclusion rule; trace will be dropped")
    return ValidationReport(passed=not errors, errors=errors, warnings=warnings)


def _index_at(trace: SignalTrace, t: float) -> int:
    # first sample index whose time is >= t
    pos = (t - trace.t0) * trace.rate_hz
    return int(math.ceil(pos - 1e-9))


def slice_phase(s: Session, kind, label) -> SignalTrace:
    """Samples of ``kind`` whose time falls in the phase window ``[start, end)``."""
    trace = s.trace(kind)
    phase = s.phase(label)
    n = len(trace)
    i0 = min(max(_index_at(trace, phase.start_s), 0), n)
    i1 = min(max(_index_at(trace, phase.end_s), 0), n)
    if i1 <= i0:
        raise NotFound(f"{phase.label.value} [{phase.start_s}, {phase.end_s}] does not "
                       f"intersect the {trace.kind.value} trace")
    return trace.replace(samples=trace.samples[i0:i1], valid=trace.valid[i0:i1],
                         t0=trace.t0 + i0 / trace.rate_hz)


def behavior_rates(b: BehavioralRecord) -> dict[tuple[str, Condition], float]:
    """Per-minute rate for each of the 13 (feature, condition) pairs."""
    if not b.duration_min > 0:
        raise ZeroDuration(f"behavior.duration_min must be > 0, got {b.duration_min}")
    return {(f, c): b.count(f, c) / b.duration_min for f, c in BEHAVIOR_RATE_KEYS}
