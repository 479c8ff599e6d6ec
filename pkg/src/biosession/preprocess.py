"""Signal conditioning: low-pass, 1 Hz resampling, gap filling, baseline z-scoring.

The chain applied by :func:`run_preprocess` to every trace is fixed::

    lowpass -> resample_to_1hz -> missing check -> rf_interpolate
            -> baseline_stats (winsorized) -> normalize

A trace whose missing ratio exceeds ``missing_exclusion_ratio`` is dropped
and logged rather than raising.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np
from scipy import signal
from sklearn.ensemble import RandomForestRegressor

from .errors import (CutoffTooHigh, DegenerateBaseline, DegeneratePipeline, EmptyTrace,
                     NotFound, TooShort, TooSparse)
from .session import PhaseLabel, Session, SignalTrace, slice_phase

ACQUISITION_RATE_HZ = 128.0


@dataclass(frozen=True)
class PreprocessConfig:
    lp_cutoff_hz: float = 0.45
    lp_order: int = 4
    target_rate_hz: float = 1.0
    missing_exclusion_ratio: float = 0.5
    winsor_fraction: float = 0.05
    rf_trees: int = 100
    rf_max_depth: int | None = None
    rf_max_features: float = 1.0 / 3.0  # fraction of features tried per split
    rf_seed: int = 0

    def __post_init__(self):
        if self.target_rate_hz != 1.0:
            raise ValueError("target_rate_hz is fixed at 1 Hz")
        if not 0 < self.winsor_fraction < 0.5:
            raise ValueError("winsor_fraction must lie in (0, 0.5)")
        if self.lp_cutoff_hz <= 0 or self.lp_order < 1:
            raise ValueError("lp_cutoff_hz must be > 0 and lp_order >= 1")

    @classmethod
    def from_dict(cls, d: dict | None) -> "PreprocessConfig":
        d = d or {}
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown preprocess keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class BaselineStats:
    mean: float
    sd: float
    lower: float = math.nan  # winsorizing bounds, for the log
    upper: float = math.nan


@dataclass
class PreprocessLogRecord:
    subject_id: str
    session_index: int
    kind: str
    missing_ratio: float
    dropped: bool
    reason: str = ""
    baseline_mean: float | None = None
    baseline_sd: float | None = None

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


@dataclass
class PreprocessResult:
    """Output of :func:`run_preprocess`.

    ``session`` carries the z-normalized 1 Hz traces; ``physical`` the same
    traces after gap filling but before normalization, in original units.
    """

    session: Session
    physical: Session
    log: list[PreprocessLogRecord] = field(default_factory=list)
    baseline: dict[str, BaselineStats] = field(default_factory=dict)


# ---------------------------------------------------------------------------

def _fill_invalid_linear(x: np.ndarray, valid: np.ndarray) -> np.ndarray:
    if valid.all():
        return x.copy()
    idx = np.arange(x.size)
    return np.interp(idx, idx[valid], x[valid])


def lowpass(trace: SignalTrace, cfg: PreprocessConfig = PreprocessConfig()) -> SignalTrace:
    """Zero-phase Butterworth low-pass; invalid samples are left untouched."""
    nyquist = trace.rate_hz / 2
    if cfg.lp_cutoff_hz >= nyquist:
        raise CutoffTooHigh(f"cutoff {cfg.lp_cutoff_hz} Hz is not below the Nyquist "
                            f"frequency {nyquist} Hz of a {trace.rate_hz} Hz trace")
    if len(trace) == 0:
        raise EmptyTrace("cannot filter an empty trace")
    if not trace.valid.any():
        return trace
    # gaps are bridged linearly only so the filter sees a contiguous input
    x = _fill_invalid_linear(trace.samples, trace.valid)
    sos = signal.butter(cfg.lp_order, cfg.lp_cutoff_hz, btype="low", fs=trace.rate_hz,
                        output="sos")
    padlen = min(3 * (2 * len(sos) + 1), x.size - 1)
    y = signal.sosfiltfilt(sos, x, padlen=padlen) if x.size > 1 else x
    y = np.where(trace.valid, y, trace.samples)
    return trace.replace(samples=y)


def resample_to_1hz(trace: SignalTrace) -> SignalTrace:
    """Linear interpolation onto the integer-second grid.

    An output sample is invalid whenever one of its bracketing input samples is.
    """
    n = len(trace)
    if n == 0:
        raise EmptyTrace("cannot resample an empty trace")
    t_first = trace.t0
    t_last = trace.t0 + (n - 1) / trace.rate_hz
    start = math.ceil(t_first - 1e-9)
    stop = math.floor(t_last + 1e-9)
    if stop < start:
        raise EmptyTrace(f"{trace.kind.value} trace spans no integer second")
    grid = np.arange(start, stop + 1, dtype=float)
    pos = (grid - trace.t0) * trace.rate_hz
    near = np.rint(pos)
    exact = np.abs(pos - near) < 1e-9
    lo = np.where(exact, near, np.floor(pos)).astype(int)
    lo = np.clip(lo, 0, n - 1)
    hi = np.where(exact, lo, np.minimum(lo + 1, n - 1))
    frac = np.where(exact, 0.0, pos - lo)
    x = trace.samples
    values = x[lo] + frac * (x[hi] - x[lo])
    valid = trace.valid[lo] & trace.valid[hi]
    return SignalTrace(kind=trace.kind, rate_hz=1.0, samples=values, valid=valid,
                       t0=float(start))


def missing_ratio(trace: SignalTrace) -> float:
    if len(trace) == 0:
        raise EmptyTrace("missing ratio of an empty trace")
    return trace.n_invalid / len(trace)


# --- random-forest gap filling ---------------------------------------------

_NEIGHBORS = 5


def _side_stats(values: np.ndarray, valid_idx: np.ndarray, n: int):
    """Mean/SD of the nearest valid neighbours left and right of every index.

    The sample itself is never included, so training rows see the same kind
    of context as the rows being predicted.
    """
    k = _NEIGHBORS
    vv = values[valid_idx]
    m = valid_idx.size
    csum = np.concatenate([[0.0], np.cumsum(vv)])
    csq = np.concatenate([[0.0], np.cumsum(vv * vv)])

    def window(lo, hi):
        cnt = hi - lo
        s = csum[hi] - csum[lo]
        q = csq[hi] - csq[lo]
        with np.errstate(invalid="ignore", divide="ignore"):
            mean = s / cnt
            var = np.maximum(q / cnt - mean * mean, 0.0)
        return mean, np.sqrt(var), cnt

    idx = np.arange(n)
    # valid positions strictly left of i: valid_idx[:left_end]
    left_end = np.searchsorted(valid_idx, idx, side="left")
    right_start = np.searchsorted(valid_idx, idx, side="right")
    lmean, lsd, lcnt = window(np.maximum(left_end - k, 0), left_end)
    rmean, rsd, rcnt = window(right_start, np.minimum(right_start + k, m))
    lmean = np.where(lcnt > 0, lmean, rmean)
    lsd = np.where(lcnt > 0, lsd, rsd)
    rmean = np.where(rcnt > 0, rmean, lmean)
    rsd = np.where(rcnt > 0, rsd, lsd)
    return np.column_stack([lmean, lsd, rmean, rsd])


def _rf_features(values: np.ndarray, valid: np.ndarray) -> np.ndarray:
    n = values.size
    t = np.arange(n, dtype=float)
    cols = [t / max(n - 1, 1)]
    for period in (60.0, 300.0, float(max(n, 1))):
        w = 2 * np.pi * t / period
        cols += [np.sin(w), np.cos(w)]
    base = np.column_stack(cols)
    return np.hstack([base, _side_stats(values, np.flatnonzero(valid), n)])


def rf_interpolate(trace: SignalTrace, cfg: PreprocessConfig = PreprocessConfig()) -> SignalTrace:
    """Fill invalid samples with random-forest predictions; mask becomes all-true."""
    if trace.valid.all():
        return trace
    ratio = missing_ratio(trace)
    if ratio > cfg.missing_exclusion_ratio:
        raise TooSparse(f"missing ratio {ratio:.3f} exceeds {cfg.missing_exclusion_ratio}")
    n_valid = int(np.count_nonzero(trace.valid))
    if n_valid < 10:
        raise TooSparse(f"only {n_valid} valid samples; need at least 10")
    X = _rf_features(trace.samples, trace.valid)
    model = RandomForestRegressor(n_estimators=cfg.rf_trees, max_depth=cfg.rf_max_depth,
                                  max_features=cfg.rf_max_features, random_state=cfg.rf_seed, n_jobs=1)
    model.fit(X[trace.valid], trace.samples[trace.valid])
    filled = trace.samples.copy()
    gaps = ~trace.valid
    filled[gaps] = model.predict(X[gaps])
    return trace.replace(samples=filled, valid=np.ones(len(trace), dtype=bool))


# --- normalization -----------------------------------------------------------

def winsorize(x: np.ndarray, fraction: float) -> tuple[np.ndarray, float, float]:
    lo, hi = np.percentile(x, [100 * fraction, 100 * (1 - fraction)])
    return np.clip(x, lo, hi), float(lo), float(hi)


def baseline_stats(segment: SignalTrace, winsor_fraction: float = 0.05) -> BaselineStats:
    """Mean and sample SD of the winsorized baseline segment."""
    if not segment.valid.all():
        raise DegenerateBaseline("baseline segment contains invalid samples")
    if len(segment) < 20:
        raise TooShort(f"baseline segment has {len(segment)} samples; need at least 20")
    w, lo, hi = winsorize(segment.samples, winsor_fraction)
    sd = float(np.std(w, ddof=1))
    if sd == 0.0:
        raise DegenerateBaseline(f"{segment.kind.value} baseline has zero spread after winsorizing")
    return BaselineStats(mean=float(np.mean(w)), sd=sd, lower=lo, upper=hi)


def normalize(trace: SignalTrace, stats: BaselineStats) -> SignalTrace:
    if not stats.sd > 0:
        raise DegenerateBaseline("baseline SD must be positive")
    return trace.replace(samples=(trace.samples - stats.mean) / stats.sd)


# ---------------------------------------------------------------------------

def run_preprocess(session: Session, cfg: PreprocessConfig = PreprocessConfig()) -> PreprocessResult:
    try:
        session.phase(PhaseLabel.BASELINE)
    except NotFound:
        raise DegeneratePipeline(
            f"session {session.key}: Baseline phase missing; normalization impossible") from None

    log: list[PreprocessLogRecord] = []
    physical, normalized, baselines = [], [], {}
    sid, idx = session.key
    for trace in session.traces:
        t = lowpass(trace, cfg) if trace.rate_hz > 2 * cfg.lp_cutoff_hz else trace
        t = resample_to_1hz(t)
        ratio = missing_ratio(t)
        if ratio > cfg.missing_exclusion_ratio:
            log.append(PreprocessLogRecord(sid, idx, t.kind.value, ratio, True,
                                           f"missing ratio {ratio:.3f} > {cfg.missing_exclusion_ratio}"))
            continue
        try:
            t = rf_interpolate(t, cfg)
        except TooSparse as exc:
            log.append(PreprocessLogRecord(sid, idx, t.kind.value, ratio, True, str(exc)))
            continue
        phys = session.with_traces([t])
        stats = baseline_stats(slice_phase(phys, t.kind, PhaseLabel.BASELINE), cfg.winsor_fraction)
        physical.append(t)
        normalized.append(normalize(t, stats))
        baselines[t.kind.value] = stats
        log.append(PreprocessLogRecord(sid, idx, t.kind.value, ratio, False, "",
                                       stats.mean, stats.sd))
    return PreprocessResult(session=session.with_traces(normalized),
                            physical=session.with_traces(physical),
                            log=log, baseline=baselines)
